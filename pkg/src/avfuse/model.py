"""Full verification model: fusion -> optional BLSTM -> pooling -> embedding -> margin head.

Parameters are built deterministically from a config and seed, exposed as a
flat name -> tensor mapping for checkpointing, and can be quantized through
the on-disk single precision so in-memory state matches a reloaded checkpoint
bit for bit.
"""

from __future__ import annotations

import numpy as np

from avfuse import autodiff as ad
from avfuse.autodiff import Tensor
from avfuse.checkpoint import load_checkpoint, quantize_like_checkpoint, save_checkpoint
from avfuse.config import TrainConfig, config_to_text, parse_config_text
from avfuse.fusion import (
    ConfigError,
    CrossAttentionParams,
    JcaStepParams,
    RjcaConfig,
    cross_attention_step,
    joint_representation,
    rjca_forward,
)
from avfuse.objective import AamHead, aam_loss
from avfuse.temporal import AspParams, BlstmParams, EmbeddingProjection, asp, blstm_forward, project_embedding


class VerificationModel:
    """Trainable stack mapping a two-modality utterance to an embedding and a loss."""

    def __init__(self, config: TrainConfig, n_speakers: int, seed: int | None = None):
        if n_speakers < 1:
            raise ConfigError("n_speakers must be >= 1")
        self.config = config
        self.n_speakers = n_speakers
        rng = np.random.default_rng(config.seed if seed is None else seed)
        rjca = RjcaConfig(
            audio_dim=config.audio_dim,
            visual_dim=config.visual_dim,
            segments=config.segments,
            iterations=config.iterations,
            use_blstm=config.use_blstm,
            share_weights=config.share_fusion_weights,
        )
        self.rjca_config = rjca

        self.fusion_steps: list[JcaStepParams] = []
        self.cross_params: CrossAttentionParams | None = None
        if config.fusion == "rjca":
            n_steps = 1 if config.share_fusion_weights else config.iterations
            self.fusion_steps = [JcaStepParams.init(rjca, rng) for _ in range(n_steps)]
        elif config.fusion == "cross_attention":
            self.cross_params = CrossAttentionParams.init(rjca, rng)
        # "concat" has no fusion parameters.

        fused_dim = rjca.joint_dim
        self.blstm: BlstmParams | None = None
        head_in = fused_dim
        if config.use_blstm:
            self.blstm = BlstmParams.init(fused_dim, config.blstm_hidden, rng)
            head_in = 2 * config.blstm_hidden
        self.asp = AspParams.init(head_in, config.asp_hidden, rng)
        self.projection = EmbeddingProjection.init(2 * head_in, config.embed_dim, rng)
        self.aam = AamHead.init(n_speakers, config.embed_dim, rng,
                                scale=config.aam_scale, margin=config.aam_margin)

    # -- forward ----------------------------------------------------------

    def fuse(self, audio: Tensor, visual: Tensor) -> Tensor:
        if self.config.fusion == "rjca":
            steps = self.fusion_steps
            if self.config.share_fusion_weights:
                steps = steps * self.config.iterations
            return rjca_forward(audio, visual, steps).joint
        if self.config.fusion == "cross_attention":
            return cross_attention_step(audio, visual, self.cross_params).joint
        return joint_representation(audio, visual)

    def embed_tensors(self, audio: Tensor, visual: Tensor) -> Tensor:
        fused = self.fuse(audio, visual)
        if self.blstm is not None:
            fused = blstm_forward(fused, self.blstm)
        pooled = asp(fused, self.asp)
        return project_embedding(pooled, self.projection)

    def embed(self, audio: np.ndarray, visual: np.ndarray) -> np.ndarray:
        """Inference-path embedding as a flat float64 vector (no tape required)."""
        out = self.embed_tensors(Tensor(audio), Tensor(visual))
        return out.data[:, 0].copy()

    def loss(self, audio: np.ndarray, visual: np.ndarray, speaker_index: int) -> Tensor:
        return aam_loss(self.embed_tensors(Tensor(audio), Tensor(visual)), speaker_index, self.aam)

    # -- parameter plumbing -------------------------------------------------

    def named_parameters(self) -> dict[str, Tensor]:
        params: dict[str, Tensor] = {}
        for i, step in enumerate(self.fusion_steps):
            for key, tensor in step.tensors().items():
                params[f"fusion.step{i}.{key}"] = tensor
        if self.cross_params is not None:
            for key, tensor in self.cross_params.tensors().items():
                params[f"fusion.cross.{key}"] = tensor
        if self.blstm is not None:
            for key, tensor in self.blstm.tensors().items():
                params[f"blstm.{key}"] = tensor
        for key, tensor in self.asp.tensors().items():
            params[f"asp.{key}"] = tensor
        for key, tensor in self.projection.tensors().items():
            params[f"projection.{key}"] = tensor
        for key, tensor in self.aam.tensors().items():
            params[f"aam.{key}"] = tensor
        return params

    def zero_grads(self) -> None:
        for tensor in self.named_parameters().values():
            tensor.grad = None

    def quantize_single_precision(self) -> None:
        """Force parameters through storage precision (see checkpoint module)."""
        for tensor in self.named_parameters().values():
            tensor.data = quantize_like_checkpoint(tensor.data)

    # -- persistence ---------------------------------------------------------

    def _config_snapshot(self) -> str:
        return config_to_text(self.config) + f"n_speakers = {self.n_speakers}\n"

    def save(self, path) -> None:
        arrays = {name: t.data for name, t in self.named_parameters().items()}
        save_checkpoint(path, arrays, self._config_snapshot())

    def load_state(self, arrays: dict[str, np.ndarray]) -> None:
        params = self.named_parameters()
        missing = sorted(set(params) - set(arrays))
        extra = sorted(set(arrays) - set(params))
        if missing or extra:
            raise ConfigError(f"checkpoint/model mismatch: missing {missing}, unexpected {extra}")
        for name, tensor in params.items():
            arr = np.asarray(arrays[name], dtype=np.float64)
            if arr.shape != tensor.shape:
                raise ConfigError(f"parameter {name}: shape {arr.shape} != expected {tensor.shape}")
            tensor.data = arr
            tensor.grad = None

    @classmethod
    def from_checkpoint(cls, path) -> "VerificationModel":
        arrays, config_text = load_checkpoint(path)
        raw = parse_config_snapshot(config_text)
        model = cls(raw[0], raw[1])
        model.load_state(arrays)
        return model


def parse_config_snapshot(text: str) -> tuple[TrainConfig, int]:
    """Split a checkpoint config snapshot into the TrainConfig and speaker count."""
    lines = []
    n_speakers = None
    for raw in text.splitlines():
        stripped = raw.strip()
        if stripped.startswith("n_speakers"):
            n_speakers = int(stripped.partition("=")[2])
        elif stripped:
            lines.append(raw)
    if n_speakers is None:
        raise ConfigError("checkpoint config snapshot lacks n_speakers")
    values = parse_config_text("\n".join(lines))
    return TrainConfig(**values), n_speakers
