"""Mini-batch training of the verification model on the margin objective.

One tape per sample; per-sample backward seeds 1/batch so parameter gradients
accumulate to the batch-mean gradient before each optimizer step.  Everything
is driven by one seeded generator, so a fixed config reproduces the loss log
and checkpoints exactly.  Parameters pass through checkpoint precision at
every epoch boundary, keeping the in-memory model identical to its last
saved checkpoint.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from avfuse.autodiff import Tape, Tensor
from avfuse.config import TrainConfig
from avfuse.featio import Utterance
from avfuse.fusion import ConfigError
from avfuse.model import VerificationModel


class DivergenceError(RuntimeError):
    """Training produced a non-finite loss."""


class Optimizer:
    """Adaptive-moment or classical-momentum gradient descent."""

    def __init__(self, params: list[Tensor], config: TrainConfig):
        self.params = params
        self.kind = config.optimizer
        self.lr = config.learning_rate
        self.momentum = config.momentum
        self.beta1, self.beta2, self.eps = 0.9, 0.999, 1e-8
        self.step_count = 0
        self._m = [np.zeros_like(p.data) for p in params]
        self._v = [np.zeros_like(p.data) for p in params]

    def step(self) -> None:
        self.step_count += 1
        for i, p in enumerate(self.params):
            grad = p.grad
            if grad is None:
                continue
            if self.kind == "adam":
                self._m[i] = self.beta1 * self._m[i] + (1 - self.beta1) * grad
                self._v[i] = self.beta2 * self._v[i] + (1 - self.beta2) * grad * grad
                m_hat = self._m[i] / (1 - self.beta1 ** self.step_count)
                v_hat = self._v[i] / (1 - self.beta2 ** self.step_count)
                p.data = p.data - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)
            else:
                self._m[i] = self.momentum * self._m[i] + grad
                p.data = p.data - self.lr * self._m[i]


@dataclass
class TrainResult:
    """Per-epoch mean losses and where the final checkpoint landed."""

    epoch_losses: list[float]
    checkpoint_path: Path
    log_path: Path
    model: VerificationModel = field(repr=False, default=None)


def speaker_index_map(utterances: list[Utterance]) -> dict[str, int]:
    """Stable speaker indexing: sorted speaker ids -> 0..n-1."""
    return {spk: i for i, spk in enumerate(sorted({u.speaker_id for u in utterances}))}


def train(config: TrainConfig, train_utts: list[Utterance], out_dir,
          keep_epoch_checkpoints: bool = True) -> TrainResult:
    """Optimize the full stack on the given utterances; see module docstring."""
    if not train_utts:
        raise ConfigError("no training utterances")
    for u in train_utts:
        if u.audio.shape != (config.audio_dim, config.segments) or \
           u.visual.shape != (config.visual_dim, config.segments):
            raise ConfigError(
                f"utterance {u.utt_id}: feature shapes {u.audio.shape}/{u.visual.shape} "
                f"do not match config dims"
            )
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    speakers = speaker_index_map(train_utts)
    model = VerificationModel(config, n_speakers=len(speakers))
    params = list(model.named_parameters().values())
    optimizer = Optimizer(params, config)
    shuffle_rng = np.random.default_rng(config.seed + 1)

    order = sorted(range(len(train_utts)), key=lambda i: train_utts[i].utt_id)
    epoch_losses: list[float] = []
    log_lines: list[str] = []
    final_path = out_dir / "final.ckpt"
    for epoch in range(config.epochs):
        perm = shuffle_rng.permutation(len(order))
        sample_losses: list[float] = []
        for start in range(0, len(perm), config.batch_size):
            batch = [train_utts[order[i]] for i in perm[start:start + config.batch_size]]
            model.zero_grads()
            for utt in batch:
                with Tape() as tape:
                    loss = model.loss(utt.audio, utt.visual, speakers[utt.speaker_id])
                value = loss.item()
                if not np.isfinite(value):
                    raise DivergenceError(
                        f"non-finite loss at epoch {epoch}, utterance {utt.utt_id}"
                    )
                tape.backward(loss, seed=1.0 / len(batch))
                sample_losses.append(value)
            optimizer.step()
        mean_loss = float(np.mean(sample_losses))
        epoch_losses.append(mean_loss)
        log_lines.append(f"epoch {epoch} loss {mean_loss!r}")
        model.quantize_single_precision()
        if keep_epoch_checkpoints:
            model.save(out_dir / f"epoch_{epoch:03d}.ckpt")
    model.save(final_path)
    log_path = out_dir / "train_log.txt"
    log_path.write_text("\n".join(log_lines) + "\n", encoding="utf-8")
    return TrainResult(epoch_losses, final_path, log_path, model)
