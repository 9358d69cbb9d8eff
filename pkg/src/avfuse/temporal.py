"""Temporal modeling of fused segment features.

A single bidirectional LSTM layer runs over the segment axis (full
backpropagation through time via the tape), and attentive statistics pooling
collapses the sequence into one utterance-level vector: an attention-weighted
mean concatenated with the attention-weighted standard deviation.  A final
affine projection produces the fixed-size embedding used for scoring.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from avfuse import autodiff as ad
from avfuse.autodiff import ShapeError, Tensor
from avfuse.fusion import init_weight

# Floor inside the pooled-variance square root; keeps backward finite when a
# dimension has (near-)zero variance, e.g. single-segment inputs.
VARIANCE_FLOOR = 1e-8

FORGET_GATE_BIAS = 1.0  # positive init avoids early vanishing memory


@dataclass
class LstmDirectionParams:
    """One direction's gate weights, rows ordered input/forget/cell/output."""

    w_input: Tensor      # 4h x input_dim
    w_recurrent: Tensor  # 4h x h
    bias: Tensor         # 4h x 1

    @classmethod
    def init(cls, input_dim: int, hidden: int, rng: np.random.Generator) -> "LstmDirectionParams":
        bias = np.zeros((4 * hidden, 1))
        bias[hidden:2 * hidden] = FORGET_GATE_BIAS
        return cls(
            w_input=init_weight(rng, 4 * hidden, input_dim),
            w_recurrent=init_weight(rng, 4 * hidden, hidden),
            bias=Tensor(bias),
        )


@dataclass
class BlstmParams:
    """Independent forward and backward direction parameters, shared hidden size."""

    fw: LstmDirectionParams
    bw: LstmDirectionParams
    hidden: int

    @classmethod
    def init(cls, input_dim: int, hidden: int, rng: np.random.Generator) -> "BlstmParams":
        return cls(
            fw=LstmDirectionParams.init(input_dim, hidden, rng),
            bw=LstmDirectionParams.init(input_dim, hidden, rng),
            hidden=hidden,
        )

    def tensors(self) -> dict[str, Tensor]:
        return {
            "fw.w_input": self.fw.w_input,
            "fw.w_recurrent": self.fw.w_recurrent,
            "fw.bias": self.fw.bias,
            "bw.w_input": self.bw.w_input,
            "bw.w_recurrent": self.bw.w_recurrent,
            "bw.bias": self.bw.bias,
        }


def _lstm_direction(x: Tensor, params: LstmDirectionParams, hidden: int, reverse: bool) -> list[Tensor]:
    """Run one direction over the columns of x; outputs are in input-time order."""
    length = x.shape[1]
    h_prev = Tensor(np.zeros((hidden, 1)))
    c_prev = Tensor(np.zeros((hidden, 1)))
    order = range(length - 1, -1, -1) if reverse else range(length)
    outputs: list[Tensor | None] = [None] * length
    for t in order:
        x_t = ad.column(x, t)
        pre = ad.add(ad.add(ad.matmul(params.w_input, x_t), ad.matmul(params.w_recurrent, h_prev)), params.bias)
        gate_in = ad.sigmoid(ad.rows(pre, 0, hidden))
        gate_forget = ad.sigmoid(ad.rows(pre, hidden, 2 * hidden))
        cell_cand = ad.tanh(ad.rows(pre, 2 * hidden, 3 * hidden))
        gate_out = ad.sigmoid(ad.rows(pre, 3 * hidden, 4 * hidden))
        c_prev = ad.add(ad.mul(gate_forget, c_prev), ad.mul(gate_in, cell_cand))
        h_prev = ad.mul(gate_out, ad.tanh(c_prev))
        outputs[t] = h_prev
    return outputs  # type: ignore[return-value]


def blstm_forward(x: Tensor, params: BlstmParams) -> Tensor:
    """Bidirectional pass over a (input_dim, segments) tensor -> (2h, segments).

    Forward-direction outputs occupy the top h rows, backward the bottom h;
    initial states are zero in both directions.
    """
    if x.ndim != 2:
        raise ShapeError(f"blstm_forward: rank-2 input required, got {x.shape}")
    h = params.hidden
    fw = _lstm_direction(x, params.fw, h, reverse=False)
    bw = _lstm_direction(x, params.bw, h, reverse=True)
    return ad.concat_rows(ad.hstack_columns(fw), ad.hstack_columns(bw))


@dataclass
class AspParams:
    """Attention scorer of the statistics pooling: e_t = score . tanh(proj h_t + bias)."""

    proj: Tensor   # bottleneck x input_dim
    bias: Tensor   # bottleneck x 1
    score: Tensor  # bottleneck x 1

    @classmethod
    def init(cls, input_dim: int, bottleneck: int, rng: np.random.Generator) -> "AspParams":
        return cls(
            proj=init_weight(rng, bottleneck, input_dim),
            bias=Tensor(np.zeros((bottleneck, 1))),
            score=init_weight(rng, bottleneck, 1),
        )

    def tensors(self) -> dict[str, Tensor]:
        return {"proj": self.proj, "bias": self.bias, "score": self.score}


def asp(features: Tensor, params: AspParams) -> Tensor:
    """Attentive statistics pooling of (dim, segments) -> (2*dim, 1).

    Attention weights are a softmax over segments of a scored tanh bottleneck;
    the output stacks the weighted mean over the weighted standard deviation,
    whose variance is floored at VARIANCE_FLOOR.
    """
    if features.ndim != 2:
        raise ShapeError(f"asp: rank-2 input required, got {features.shape}")
    hidden = ad.tanh(ad.add_bias(ad.matmul(params.proj, features), params.bias))
    scores = ad.matmul(ad.transpose(params.score), hidden)       # 1 x segments
    weights = ad.softmax_columns(ad.transpose(scores))           # segments x 1
    mean = ad.matmul(features, weights)
    second_moment = ad.matmul(ad.mul(features, features), weights)
    variance = ad.clamp_min(ad.sub(second_moment, ad.mul(mean, mean)), VARIANCE_FLOOR)
    return ad.concat_rows(mean, ad.sqrt(variance))


def attention_weights(features: Tensor, params: AspParams) -> np.ndarray:
    """Forward-only per-segment attention weights (for inspection/demos)."""
    hidden = ad.tanh(ad.add_bias(ad.matmul(params.proj, features), params.bias))
    scores = ad.matmul(ad.transpose(params.score), hidden)
    return ad.softmax_columns(ad.transpose(scores)).data[:, 0].copy()


@dataclass
class EmbeddingProjection:
    """Affine map from pooled statistics to the final embedding."""

    weight: Tensor  # embed_dim x input_dim
    bias: Tensor    # embed_dim x 1

    @classmethod
    def init(cls, input_dim: int, embed_dim: int, rng: np.random.Generator) -> "EmbeddingProjection":
        return cls(
            weight=init_weight(rng, embed_dim, input_dim),
            bias=Tensor(np.zeros((embed_dim, 1))),
        )

    def tensors(self) -> dict[str, Tensor]:
        return {"weight": self.weight, "bias": self.bias}


def project_embedding(pooled: Tensor, params: EmbeddingProjection) -> Tensor:
    """pooled (input_dim, 1) -> embedding (embed_dim, 1)."""
    return ad.add(ad.matmul(params.weight, pooled), params.bias)
