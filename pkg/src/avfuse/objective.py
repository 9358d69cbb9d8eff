"""Angular-margin classification objective and cosine trial scoring.

The loss places both the embedding and every class weight row on the unit
sphere, adds a fixed angular margin to the target class angle, scales all
cosines, and applies softmax cross-entropy.  Margin zero reduces exactly to
scaled-softmax cross-entropy.  Trial scoring is the cosine between two
utterance embeddings taken before this head.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from avfuse import autodiff as ad
from avfuse.autodiff import Tensor
from avfuse.fusion import ConfigError, init_weight

# Keep the target cosine strictly inside (-1, 1) so sin = sqrt(1 - cos^2)
# has a finite derivative at the poles.
COS_BOUND = 1.0 - 1e-7


class NormalizationError(ValueError):
    """A vector that must be normalized has zero length."""


@dataclass
class AamHead:
    """Class weights and margin hyperparameters of the angular-margin loss.

    Weight rows are used in unit-normalized form; ``scale`` sharpens the
    softmax and ``margin`` (radians) penalizes the target angle.
    """

    weights: Tensor  # n_classes x embed_dim
    scale: float = 30.0
    margin: float = 0.2

    def __post_init__(self):
        if self.scale <= 0:
            raise ConfigError("scale must be positive")
        if not 0.0 <= self.margin < math.pi / 2:
            raise ConfigError("margin must lie in [0, pi/2)")

    @classmethod
    def init(cls, n_classes: int, embed_dim: int, rng: np.random.Generator,
             scale: float = 30.0, margin: float = 0.2) -> "AamHead":
        return cls(weights=init_weight(rng, n_classes, embed_dim), scale=scale, margin=margin)

    @property
    def n_classes(self) -> int:
        return self.weights.shape[0]

    def tensors(self) -> dict[str, Tensor]:
        return {"weights": self.weights}


def aam_loss(embedding: Tensor, label: int, head: AamHead) -> Tensor:
    """Margin-penalized softmax cross-entropy for one embedding, as (1, 1).

    The target logit is scale * cos(angle + margin), expanded as
    cos*cos(margin) - sin*sin(margin) with sin from the clamped cosine;
    non-target logits are scale * cos.  Gradients flow through both
    normalizations and the margin path.
    """
    n = head.n_classes
    if not 0 <= label < n:
        raise ConfigError(f"label {label} out of range for {n} classes")
    if embedding.ndim != 2 or embedding.shape[1] != 1:
        raise ad.ShapeError(f"aam_loss: expected (embed_dim, 1) embedding, got {embedding.shape}")
    if not np.linalg.norm(embedding.data):
        raise NormalizationError("aam_loss: zero-norm embedding")
    if (np.linalg.norm(head.weights.data, axis=1) == 0.0).any():
        raise NormalizationError("aam_loss: zero-norm class weight row")

    unit_emb = ad.l2_normalize_columns(embedding)
    unit_classes = ad.l2_normalize_columns(ad.transpose(head.weights))   # embed_dim x n
    cosines = ad.matmul(ad.transpose(unit_classes), unit_emb)            # n x 1

    target_cos = ad.rows(cosines, label, label + 1)                      # 1 x 1
    bounded = ad.clamp(target_cos, -COS_BOUND, COS_BOUND)
    target_sin = ad.sqrt(ad.scale_shift(ad.mul(bounded, bounded), -1.0, 1.0))
    margined = ad.sub(ad.scale(target_cos, math.cos(head.margin)),
                      ad.scale(target_sin, math.sin(head.margin)))
    delta = ad.sub(margined, target_cos)

    one_hot = np.zeros((n, 1))
    one_hot[label] = 1.0
    logits = ad.scale(ad.add(cosines, ad.matmul(Tensor(one_hot), delta)), head.scale)
    return ad.cross_entropy_index(logits, label)


def cosine_score(enroll: np.ndarray, test: np.ndarray) -> float:
    """Cosine similarity of two embedding vectors, in [-1, 1]."""
    a = np.asarray(enroll, dtype=np.float64).reshape(-1)
    b = np.asarray(test, dtype=np.float64).reshape(-1)
    if a.shape != b.shape:
        raise ad.ShapeError(f"cosine_score: dimension mismatch {a.shape} vs {b.shape}")
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        raise NormalizationError("cosine_score: zero-norm embedding")
    return float(np.dot(a / na, b / nb))
