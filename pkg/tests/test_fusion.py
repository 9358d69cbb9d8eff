"""Fusion-step semantics: residual identity, shape closure, recursion, gradients."""

import math

import numpy as np
import pytest

from avfuse import autodiff as ad
from avfuse.autodiff import Tape, Tensor, numeric_gradient, relative_error
from avfuse.fusion import (
    ConfigError,
    CrossAttentionParams,
    FusedFeatures,
    JcaStepParams,
    RjcaConfig,
    baseline_fuse,
    correlation_maps,
    cross_attention_step,
    jca_step,
    joint_representation,
    rjca_forward,
)

RNG = np.random.default_rng(2024)


def random_inputs(config, rng=RNG):
    audio = Tensor(rng.uniform(-1, 1, size=(config.audio_dim, config.segments)))
    visual = Tensor(rng.uniform(-1, 1, size=(config.visual_dim, config.segments)))
    return audio, visual


class TestJointRepresentation:
    def test_shape(self):
        a = Tensor(np.ones((2, 4)))
        v = Tensor(np.ones((3, 4)))
        assert joint_representation(a, v).shape == (5, 4)

    def test_zero_visual_block(self):
        a = Tensor(np.ones((2, 4)))
        v = Tensor(np.zeros((3, 4)))
        j = joint_representation(a, v).data
        assert np.array_equal(j[2:], np.zeros((3, 4)))

    def test_scalar_case(self):
        j = joint_representation(Tensor([[1.0]]), Tensor([[1.0]]))
        assert np.array_equal(j.data, [[1.0], [1.0]])

    def test_segment_mismatch(self):
        with pytest.raises(ad.ShapeError):
            joint_representation(Tensor(np.ones((2, 4))), Tensor(np.ones((3, 5))))


class TestJcaStep:
    def test_zero_weights_are_exact_identity(self):
        config = RjcaConfig(audio_dim=3, visual_dim=2, segments=5)
        audio, visual = random_inputs(config)
        fused = jca_step(audio, visual, JcaStepParams.zeros(config))
        assert np.array_equal(fused.audio.data, audio.data)
        assert np.array_equal(fused.visual.data, visual.data)
        assert np.array_equal(fused.joint.data, np.concatenate([audio.data, visual.data]))

    def test_shape_contract(self):
        config = RjcaConfig(audio_dim=2, visual_dim=3, segments=4)
        audio, visual = random_inputs(config)
        params = JcaStepParams.init(config, np.random.default_rng(0))
        corr_a, corr_v = correlation_maps(audio, visual, params)
        assert corr_a.shape == (4, 4) and corr_v.shape == (4, 4)
        fused = jca_step(audio, visual, params)
        assert fused.audio.shape == (2, 4)
        assert fused.visual.shape == (3, 4)
        assert fused.joint.shape == (5, 4)

    def test_scalar_hand_value(self):
        # All-ones scalar case evaluated by hand: correlation tanh(2/sqrt(2)),
        # gated recombination equals the correlation, plus the residual input.
        ones = Tensor([[1.0]])
        params = JcaStepParams(Tensor([[1.0, 1.0]]), Tensor([[1.0, 1.0]]),
                               *[Tensor([[1.0]]) for _ in range(4)])
        expected_corr = math.tanh(2.0 / math.sqrt(2.0))
        fused = jca_step(ones, Tensor([[1.0]]), params)
        assert fused.audio.data[0, 0] == pytest.approx(1.0 + expected_corr, abs=1e-12)
        assert fused.visual.data[0, 0] == pytest.approx(1.0 + expected_corr, abs=1e-12)
        assert fused.audio.data[0, 0] == pytest.approx(1.88839, abs=5e-6)

    def test_correlation_entries_inside_open_unit_interval(self):
        config = RjcaConfig(audio_dim=4, visual_dim=3, segments=6)
        audio, visual = random_inputs(config)
        params = JcaStepParams.init(config, np.random.default_rng(1))
        corr_a, corr_v = correlation_maps(audio, visual, params)
        for corr in (corr_a, corr_v):
            assert (corr > -1.0).all() and (corr < 1.0).all()

    def test_shape_error_names_offending_weight(self):
        config = RjcaConfig(audio_dim=2, visual_dim=2, segments=3)
        params = JcaStepParams.zeros(config)
        params.attn_mix_audio = Tensor(np.zeros((4, 4)))
        audio, visual = random_inputs(config)
        with pytest.raises(ad.ShapeError, match="attn_mix_audio"):
            jca_step(audio, visual, params)


class TestRecursion:
    def test_single_step_matches_jca_step_bitwise(self):
        config = RjcaConfig(audio_dim=3, visual_dim=2, segments=4, iterations=1)
        audio, visual = random_inputs(config)
        params = JcaStepParams.init(config, np.random.default_rng(2))
        direct = jca_step(audio, visual, params)
        recursive = rjca_forward(audio, visual, [params])
        assert direct.joint.data.tobytes() == recursive.joint.data.tobytes()

    @pytest.mark.parametrize("steps", [1, 2, 3, 4, 5])
    def test_zero_weights_identity_telescopes(self, steps):
        config = RjcaConfig(audio_dim=2, visual_dim=3, segments=4)
        audio, visual = random_inputs(config)
        chain = [JcaStepParams.zeros(config) for _ in range(steps)]
        fused = rjca_forward(audio, visual, chain)
        assert np.array_equal(fused.audio.data, audio.data)
        assert np.array_equal(fused.visual.data, visual.data)

    def test_shape_closure_over_depth(self):
        config = RjcaConfig(audio_dim=3, visual_dim=5, segments=4)
        audio, visual = random_inputs(config)
        rng = np.random.default_rng(3)
        chain = [JcaStepParams.init(config, rng) for _ in range(4)]
        fused = rjca_forward(audio, visual, chain)
        assert fused.audio.shape == audio.shape
        assert fused.visual.shape == visual.shape

    def test_empty_params_rejected(self):
        config = RjcaConfig(audio_dim=2, visual_dim=2, segments=2)
        audio, visual = random_inputs(config)
        with pytest.raises(ConfigError):
            rjca_forward(audio, visual, [])

    @pytest.mark.parametrize("steps", [1, 3, 4])
    def test_gradients_match_finite_differences(self, steps):
        config = RjcaConfig(audio_dim=3, visual_dim=2, segments=3)
        rng = np.random.default_rng(40 + steps)
        audio = Tensor(rng.uniform(-1, 1, size=(3, 3)))
        visual = Tensor(rng.uniform(-1, 1, size=(2, 3)))
        chain = [JcaStepParams.init(config, rng) for _ in range(steps)]
        probe = Tensor(rng.uniform(-1, 1, size=(5, 3)))

        def loss_value():
            fused = rjca_forward(audio, visual, chain)
            return ad.sum_all(ad.mul(fused.joint, probe))

        with Tape() as tape:
            loss = loss_value()
        tape.backward(loss)

        checked = {"audio": audio, "visual": visual}
        for i, p in enumerate(chain):
            checked.update({f"step{i}.{k}": t for k, t in p.tensors().items()})
        for name, t in checked.items():
            saved = t.data
            def f(probe_tensor, t=t):
                t.data = probe_tensor.data
                try:
                    return loss_value().item()
                finally:
                    t.data = saved
            analytic = t.grad if t.grad is not None else np.zeros_like(t.data)
            err = relative_error(analytic, numeric_gradient(f, t))
            assert err < 1e-4, f"{name}: relative error {err}"


class TestBaselines:
    def test_score_level_weight_one_returns_audio_score(self):
        assert baseline_fuse("score_level", audio_score=0.73, visual_score=-0.4, weight=1.0) == 0.73

    def test_score_level_weight_bounds(self):
        with pytest.raises(ConfigError):
            baseline_fuse("score_level", audio_score=0.0, visual_score=0.0, weight=1.5)

    def test_concat_shapes(self):
        fused = baseline_fuse("concat", audio=Tensor(np.ones((2, 4))), visual=Tensor(np.ones((3, 4))))
        assert isinstance(fused, FusedFeatures)
        assert fused.joint.shape == (5, 4)

    def test_cross_attention_zero_weights_identity(self):
        config = RjcaConfig(audio_dim=3, visual_dim=2, segments=4)
        audio, visual = random_inputs(config)
        zeros = CrossAttentionParams(
            cross_proj_audio=Tensor(np.zeros((3, 2))),
            cross_proj_visual=Tensor(np.zeros((2, 3))),
            attn_mix_audio=Tensor(np.zeros((4, 4))),
            attn_mix_visual=Tensor(np.zeros((4, 4))),
            out_mix_audio=Tensor(np.zeros((4, 4))),
            out_mix_visual=Tensor(np.zeros((4, 4))),
        )
        fused = baseline_fuse("cross_attention", audio=audio, visual=visual, params=zeros)
        assert np.array_equal(fused.audio.data, audio.data)
        assert np.array_equal(fused.visual.data, visual.data)

    def test_cross_attention_gradients(self):
        rng = np.random.default_rng(9)
        config = RjcaConfig(audio_dim=2, visual_dim=3, segments=3)
        audio = Tensor(rng.uniform(-1, 1, size=(2, 3)))
        visual = Tensor(rng.uniform(-1, 1, size=(3, 3)))
        params = CrossAttentionParams.init(config, rng)
        probe = Tensor(rng.uniform(-1, 1, size=(5, 3)))

        def loss_value():
            fused = cross_attention_step(audio, visual, params)
            return ad.sum_all(ad.mul(fused.joint, probe))

        with Tape() as tape:
            loss = loss_value()
        tape.backward(loss)
        for name, t in {"audio": audio, "visual": visual, **params.tensors()}.items():
            saved = t.data
            def f(pt, t=t):
                t.data = pt.data
                try:
                    return loss_value().item()
                finally:
                    t.data = saved
            analytic = t.grad if t.grad is not None else np.zeros_like(t.data)
            assert relative_error(analytic, numeric_gradient(f, t)) < 1e-4, name

    def test_unknown_mode(self):
        with pytest.raises(ConfigError):
            baseline_fuse("gated")
