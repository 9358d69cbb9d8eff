"""Angular-margin loss semantics and cosine scoring."""

import math

import numpy as np
import pytest

from avfuse.autodiff import Tape, Tensor, numeric_gradient, relative_error
from avfuse.fusion import ConfigError
from avfuse.objective import AamHead, NormalizationError, aam_loss, cosine_score


def reference_scaled_softmax_ce(weights, embedding, label, scale):
    """Independent reference: cross-entropy over scale * cosines, no margin."""
    w = weights / np.linalg.norm(weights, axis=1, keepdims=True)
    x = embedding / np.linalg.norm(embedding)
    logits = scale * (w @ x)
    m = logits.max()
    return float(m + np.log(np.exp(logits - m).sum()) - logits[label])


def random_head(rng, n_classes=5, dim=6, scale=30.0, margin=0.2):
    return AamHead(weights=Tensor(rng.uniform(-1, 1, size=(n_classes, dim))),
                   scale=scale, margin=margin)


class TestAamLoss:
    def test_zero_margin_equals_scaled_softmax_ce(self):
        rng = np.random.default_rng(11)
        for _ in range(20):
            head = random_head(rng, margin=0.0)
            emb = rng.uniform(-1, 1, size=(6,))
            label = int(rng.integers(0, 5))
            got = aam_loss(Tensor(emb.reshape(-1, 1)), label, head).item()
            want = reference_scaled_softmax_ce(head.weights.data, emb, label, 30.0)
            assert abs(got - want) < 1e-12

    def test_single_class_gives_exact_zero(self):
        rng = np.random.default_rng(12)
        head = random_head(rng, n_classes=1)
        emb = Tensor(rng.uniform(-1, 1, size=(6, 1)))
        assert aam_loss(emb, 0, head).item() == 0.0

    def test_aligned_target_orthogonal_other_closed_form(self):
        # Embedding colinear with the target row, the other row orthogonal:
        # loss = -log(exp(s*cos(m)) / (exp(s*cos(m)) + exp(0))).
        head = AamHead(weights=Tensor([[2.0, 0.0], [0.0, 3.0]]), scale=30.0, margin=0.2)
        emb = Tensor([[0.5], [0.0]])
        expected = math.log1p(math.exp(-30.0 * math.cos(0.2)))
        assert aam_loss(emb, 0, head).item() == pytest.approx(expected, abs=1e-14)

    def test_invariant_to_embedding_rescaling(self):
        rng = np.random.default_rng(13)
        head = random_head(rng)
        emb = rng.uniform(-1, 1, size=(6, 1))
        base = aam_loss(Tensor(emb), 2, head).item()
        for factor in (1e-3, 0.5, 7.0, 1e4):
            scaled = aam_loss(Tensor(emb * factor), 2, head).item()
            assert scaled == pytest.approx(base, rel=1e-12, abs=1e-12)

    def test_margin_monotonicity(self):
        # Holds while target angle + margin stays within [0, pi]; random
        # samples where the target cosine is too negative are skipped.
        rng = np.random.default_rng(14)
        margins = [0.0, 0.1, 0.2, 0.35, 0.5]
        checked = 0
        while checked < 25:
            weights = rng.uniform(-1, 1, size=(4, 5))
            emb = rng.uniform(-1, 1, size=(5, 1))
            label = int(rng.integers(0, 4))
            w = weights[label] / np.linalg.norm(weights[label])
            cos_t = float(w @ (emb[:, 0] / np.linalg.norm(emb)))
            if math.acos(np.clip(cos_t, -1, 1)) + margins[-1] > math.pi:
                continue
            losses = [
                aam_loss(Tensor(emb), label,
                         AamHead(weights=Tensor(weights), scale=30.0, margin=m)).item()
                for m in margins
            ]
            assert all(b >= a - 1e-12 for a, b in zip(losses, losses[1:])), losses
            checked += 1

    def test_gradients_through_normalization_and_margin(self):
        rng = np.random.default_rng(15)
        head = random_head(rng, n_classes=4, dim=5)
        emb = Tensor(rng.uniform(0.2, 1.0, size=(5, 1)))

        def loss_value():
            return aam_loss(emb, 1, head)

        with Tape() as tape:
            loss = loss_value()
        tape.backward(loss)
        for name, t in {"embedding": emb, "weights": head.weights}.items():
            saved = t.data
            def f(pt, t=t):
                t.data = pt.data
                try:
                    return loss_value().item()
                finally:
                    t.data = saved
            err = relative_error(t.grad, numeric_gradient(f, t))
            assert err < 1e-4, f"{name}: relative error {err}"

    def test_input_validation(self):
        rng = np.random.default_rng(16)
        head = random_head(rng)
        with pytest.raises(ConfigError):
            aam_loss(Tensor(np.ones((6, 1))), 9, head)
        with pytest.raises(NormalizationError):
            aam_loss(Tensor(np.zeros((6, 1))), 0, head)
        bad = AamHead(weights=Tensor(np.zeros((3, 6))), scale=30.0, margin=0.2)
        with pytest.raises(NormalizationError):
            aam_loss(Tensor(np.ones((6, 1))), 0, bad)

    def test_hyperparameter_validation(self):
        with pytest.raises(ConfigError):
            AamHead(weights=Tensor(np.ones((2, 2))), scale=0.0)
        with pytest.raises(ConfigError):
            AamHead(weights=Tensor(np.ones((2, 2))), margin=2.0)


class TestCosineScore:
    def test_identical_vectors(self):
        v = np.array([0.3, -0.2, 0.9])
        assert cosine_score(v, v) == pytest.approx(1.0)

    def test_orthogonal_vectors(self):
        assert cosine_score([1.0, 0.0], [0.0, 2.0]) == pytest.approx(0.0)

    def test_negated_vectors(self):
        v = np.array([0.5, 1.5, -0.7])
        assert cosine_score(v, -v) == pytest.approx(-1.0)

    def test_symmetry(self):
        rng = np.random.default_rng(17)
        for _ in range(10):
            a, b = rng.uniform(-1, 1, size=(2, 8))
            assert cosine_score(a, b) == cosine_score(b, a)

    def test_zero_vector_rejected(self):
        with pytest.raises(NormalizationError):
            cosine_score([0.0, 0.0], [1.0, 0.0])
