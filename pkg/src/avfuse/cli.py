"""Command-line entry points: synth, train, evaluate, embed, gradcheck.

Every command reads an optional flat `key = value` config file; any flag given
on the command line overrides the file.  The effective seed is always echoed
so runs can be reproduced.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from avfuse.config import TrainConfig, load_config
from avfuse.evaluation import RAW_SYSTEMS, TRAINED_SYSTEMS, evaluate
from avfuse.featio import load_dataset, manifest_entries, parse_trial_list, save_features
from avfuse.fusion import ConfigError
from avfuse.gradcheck import format_suite_report, run_suite
from avfuse.metrics import DcfParams, format_report
from avfuse.model import VerificationModel
from avfuse.synthetic import SyntheticSpec, generate_dataset
from avfuse.training import train

_CONFIG_FLAGS = {
    "audio_dim": int, "visual_dim": int, "segments": int, "iterations": int,
    "use_blstm": str, "share_fusion_weights": str, "fusion": str,
    "blstm_hidden": int, "asp_hidden": int, "embed_dim": int,
    "aam_scale": float, "aam_margin": float, "optimizer": str,
    "learning_rate": float, "momentum": float, "batch_size": int,
    "epochs": int, "seed": int, "score_fusion_weight": float,
}


def _add_config_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", type=Path, help="flat `key = value` config file")
    for name, kind in _CONFIG_FLAGS.items():
        parser.add_argument(f"--{name.replace('_', '-')}", dest=name, type=kind, default=None)


def _resolve_config(args: argparse.Namespace) -> TrainConfig:
    overrides = {name: getattr(args, name) for name in _CONFIG_FLAGS
                 if getattr(args, name, None) is not None}
    return load_config(args.config, overrides)


def _cmd_synth(args) -> int:
    spec = SyntheticSpec(
        n_speakers=args.speakers,
        utts_per_speaker=args.utts_per_speaker,
        audio_dim=args.audio_dim,
        visual_dim=args.visual_dim,
        segments=args.segments,
        latent_dim=args.latent_dim,
        audio_noise=args.audio_noise,
        visual_noise=args.visual_noise,
        eval_utts_per_speaker=args.eval_utts_per_speaker,
        nontargets_per_target=args.nontargets_per_target,
        seed=args.seed,
    )
    entries = generate_dataset(spec, args.out)
    print(f"seed = {spec.seed}")
    print(f"wrote {len(entries)} utterances "
          f"({sum(e.split == 'eval' for e in entries)} held out) to {args.out}")
    return 0


def _cmd_train(args) -> int:
    config = _resolve_config(args)
    print(f"seed = {config.seed}")
    utterances = load_dataset(args.data)
    splits = {e.utt_id: e.split for e in manifest_entries(args.data)}
    train_utts = [u for uid, u in sorted(utterances.items())
                  if args.include_eval or splits[uid] == "train"]
    result = train(config, train_utts, args.out,
                   keep_epoch_checkpoints=not args.final_only)
    for epoch, loss in enumerate(result.epoch_losses):
        print(f"epoch {epoch} loss {loss!r}")
    print(f"checkpoint: {result.checkpoint_path}")
    return 0


def _cmd_evaluate(args) -> int:
    utterances = load_dataset(args.data)
    trials = parse_trial_list(args.trials)
    model = None
    weight = 0.5
    if args.system in TRAINED_SYSTEMS:
        if args.checkpoint is None:
            raise ConfigError(f"system {args.system!r} requires --checkpoint")
        model = VerificationModel.from_checkpoint(args.checkpoint)
        print(f"seed = {model.config.seed}")
        weight = model.config.score_fusion_weight
    else:
        config = _resolve_config(args)
        print(f"seed = {config.seed}")
        weight = config.score_fusion_weight
    dcf = DcfParams(p_target=args.p_target, c_miss=args.c_miss, c_fa=args.c_fa)
    report, _ = evaluate(args.system, trials, utterances, model=model,
                         dcf_params=dcf, weight=weight, scores_path=args.scores_out)
    print(format_report(report))
    if args.scores_out:
        print(f"scores written to {args.scores_out}")
    return 0


def _cmd_embed(args) -> int:
    model = VerificationModel.from_checkpoint(args.checkpoint)
    print(f"seed = {model.config.seed}")
    utterances = load_dataset(args.data)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    for utt_id, utt in sorted(utterances.items()):
        emb = model.embed(utt.audio, utt.visual)
        save_features(out_dir / f"{utt_id}.emb.avf", emb.reshape(-1, 1))
    print(f"embedded {len(utterances)} utterances to {out_dir}")
    return 0


def _cmd_gradcheck(args) -> int:
    print(f"seed = {args.seed}")
    results = run_suite(seed=args.seed, tolerance=args.tolerance)
    print(format_suite_report(results))
    return 0 if all(r.passed for r in results) else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="avfuse",
        description="Audio-visual person verification: synthesis, training, evaluation.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic dataset")
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--speakers", type=int, default=50)
    p.add_argument("--utts-per-speaker", type=int, default=10)
    p.add_argument("--audio-dim", type=int, default=16)
    p.add_argument("--visual-dim", type=int, default=16)
    p.add_argument("--segments", type=int, default=8)
    p.add_argument("--latent-dim", type=int, default=8)
    p.add_argument("--audio-noise", type=float, default=0.8)
    p.add_argument("--visual-noise", type=float, default=0.8)
    p.add_argument("--eval-utts-per-speaker", type=int, default=2)
    p.add_argument("--nontargets-per-target", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_cmd_synth)

    p = sub.add_parser("train", help="train a fusion model")
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--include-eval", action="store_true",
                   help="train on held-out utterances too")
    p.add_argument("--final-only", action="store_true",
                   help="skip per-epoch checkpoints")
    _add_config_flags(p)
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("evaluate", help="score a trial list and report metrics")
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--trials", type=Path, required=True)
    p.add_argument("--system", choices=TRAINED_SYSTEMS + RAW_SYSTEMS, default="rjca")
    p.add_argument("--checkpoint", type=Path)
    p.add_argument("--scores-out", type=Path)
    p.add_argument("--p-target", type=float, default=0.05)
    p.add_argument("--c-miss", type=float, default=1.0)
    p.add_argument("--c-fa", type=float, default=1.0)
    _add_config_flags(p)
    p.set_defaults(func=_cmd_evaluate)

    p = sub.add_parser("embed", help="write per-utterance embeddings")
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.set_defaults(func=_cmd_embed)

    p = sub.add_parser("gradcheck", help="finite-difference check of every layer")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--tolerance", type=float, default=1e-4)
    p.set_defaults(func=_cmd_gradcheck)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, OSError, KeyError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
