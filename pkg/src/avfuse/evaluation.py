"""Trial evaluation harness: embed utterances, score pairs, report metrics.

Besides the trained fusion systems (recursive joint cross-attention, plain
concatenation, two-way cross-attention), the harness scores the untrained
reference systems: single-modality statistics of the raw features, and
score-level fusion of the two single-modality cosines.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from avfuse.config import TrainConfig
from avfuse.featio import TrialPair, Utterance
from avfuse.fusion import ConfigError, score_level_fusion
from avfuse.metrics import DcfParams, MetricsReport, ScoreSet, compute_report, write_scores
from avfuse.model import VerificationModel
from avfuse.objective import cosine_score

TRAINED_SYSTEMS = ("rjca", "concat", "cross_attention")
RAW_SYSTEMS = ("audio", "visual", "score_level")


class ResolutionError(KeyError):
    """Trial references utterance ids absent from the evaluation set."""


def pooled_raw_embedding(features: np.ndarray) -> np.ndarray:
    """Untrained utterance vector: per-dimension mean and std over segments."""
    return np.concatenate([features.mean(axis=1), features.std(axis=1)])


def _check_ids(trials: list[TrialPair], utterances: dict[str, Utterance]) -> None:
    missing = sorted(
        {t.enroll_id for t in trials if t.enroll_id not in utterances}
        | {t.test_id for t in trials if t.test_id not in utterances}
    )
    if missing:
        raise ResolutionError(f"trial utterances not found: {missing}")


def _model_scores(model: VerificationModel, trials: list[TrialPair],
                  utterances: dict[str, Utterance], use_cache: bool) -> np.ndarray:
    cache: dict[str, np.ndarray] = {}

    def embed(utt_id: str) -> np.ndarray:
        if use_cache and utt_id in cache:
            return cache[utt_id]
        utt = utterances[utt_id]
        emb = model.embed(utt.audio, utt.visual)
        if use_cache:
            cache[utt_id] = emb
        return emb

    return np.array([cosine_score(embed(t.enroll_id), embed(t.test_id)) for t in trials])


def _raw_scores(system: str, trials: list[TrialPair], utterances: dict[str, Utterance],
                weight: float, use_cache: bool) -> np.ndarray:
    cache: dict[tuple[str, str], np.ndarray] = {}

    def pooled(utt_id: str, modality: str) -> np.ndarray:
        key = (utt_id, modality)
        if use_cache and key in cache:
            return cache[key]
        utt = utterances[utt_id]
        emb = pooled_raw_embedding(utt.audio if modality == "audio" else utt.visual)
        if use_cache:
            cache[key] = emb
        return emb

    scores = []
    for t in trials:
        if system == "score_level":
            s_audio = cosine_score(pooled(t.enroll_id, "audio"), pooled(t.test_id, "audio"))
            s_visual = cosine_score(pooled(t.enroll_id, "visual"), pooled(t.test_id, "visual"))
            scores.append(score_level_fusion(s_audio, s_visual, weight))
        else:
            scores.append(cosine_score(pooled(t.enroll_id, system), pooled(t.test_id, system)))
    return np.array(scores)


def score_trials(system: str, trials: list[TrialPair], utterances: dict[str, Utterance],
                 model: VerificationModel | None = None, weight: float = 0.5,
                 use_cache: bool = True) -> ScoreSet:
    """Score every trial with the chosen system, preserving trial order."""
    if not trials:
        raise ConfigError("empty trial list")
    _check_ids(trials, utterances)
    if system in TRAINED_SYSTEMS:
        if model is None:
            raise ConfigError(f"system {system!r} needs a trained model")
        if model.config.fusion != system:
            raise ConfigError(
                f"checkpoint was trained with fusion {model.config.fusion!r}, not {system!r}"
            )
        scores = _model_scores(model, trials, utterances, use_cache)
    elif system in RAW_SYSTEMS:
        scores = _raw_scores(system, trials, utterances, weight, use_cache)
    else:
        raise ConfigError(f"unknown evaluation system {system!r}")
    labels = np.array([int(t.is_target) for t in trials])
    return ScoreSet(scores, labels)


def evaluate(system: str, trials: list[TrialPair], utterances: dict[str, Utterance],
             model: VerificationModel | None = None,
             dcf_params: DcfParams = DcfParams(),
             weight: float = 0.5, use_cache: bool = True,
             scores_path=None) -> tuple[MetricsReport, ScoreSet]:
    """Score trials, optionally persist the scores file, and compute metrics."""
    score_set = score_trials(system, trials, utterances, model=model,
                             weight=weight, use_cache=use_cache)
    if scores_path is not None:
        write_scores(scores_path, score_set)
    return compute_report(score_set, dcf_params), score_set


# ---------------------------------------------------------------------------
# Recursion-depth ablation harness
# ---------------------------------------------------------------------------


@dataclass
class AblationRow:
    iterations: int
    eer: float
    min_dcf: float
    final_loss: float


def iteration_ablation(base_config: TrainConfig, train_utts: list[Utterance],
                       trials: list[TrialPair], utterances: dict[str, Utterance],
                       out_dir, t_values=(1, 2, 3, 4, 5),
                       dcf_params: DcfParams = DcfParams()) -> list[AblationRow]:
    """Retrain at each recursion depth and evaluate on the same trials.

    Rows come back in ascending depth for a directly comparable report.
    """
    from avfuse.training import train  # local import to avoid a cycle

    out_dir = Path(out_dir)
    rows = []
    for t in sorted(t_values):
        config = dataclasses.replace(base_config, iterations=t, fusion="rjca")
        result = train(config, train_utts, out_dir / f"t{t}", keep_epoch_checkpoints=False)
        report, _ = evaluate("rjca", trials, utterances, model=result.model,
                             dcf_params=dcf_params)
        rows.append(AblationRow(t, report.eer, report.min_dcf, result.epoch_losses[-1]))
    return rows


def format_ablation_table(rows: list[AblationRow]) -> str:
    lines = [
        "iterations   EER (%)   minDCF    final loss",
        "----------   -------   -------   ----------",
    ]
    for row in rows:
        lines.append(
            f"{row.iterations:10d}   {100.0 * row.eer:7.3f}   {row.min_dcf:7.4f}   {row.final_loss:10.5f}"
        )
    return "\n".join(lines)
