"""
Command-line interface.

Subcommands: gen-synth, featurize, train-base, run-incremental, evaluate,
report and run-protocol. Global flags (--config, --seed, --mode,
--eval-mode, --out) are accepted after any subcommand.

Exit codes: 0 success, 2 configuration or manifest error, 3 runtime failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import fields
from pathlib import Path
from typing import List, Optional

from ..checkpoint import load_checkpoint, save_checkpoint
from ..errors import ConfigError, FcacError, ManifestError
from ..store import PrototypeStore
from .config import ProtocolConfig, apply_overrides, load_config
from .manifest import BaseSplit
from .metrics import partition_accuracies, partition_counts
from .protocol import BaseState, eval_modes, evaluate, featurize_clip, prepare, run_sessions, train_base
from .report import dumps_report, load_report, render_csv, render_markdown, report_dict, write_report
from .synth import SynthSpec, gen_synthetic

log = logging.getLogger("fcac")

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 2, 3


def _global_flags() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--config", type=Path, help="JSON protocol config")
    p.add_argument("--seed", type=int, help="root seed (unsigned 64-bit); overrides the config")
    p.add_argument("--mode", choices=("pan", "naive"), help="store update: PAN adaptation or plain support means")
    p.add_argument("--eval-mode", choices=("plain", "pqam"), help="scoring used for reported accuracies")
    p.add_argument("--out", type=Path, default=Path("out"), help="output directory (default: ./out)")
    p.add_argument("--manifest", type=Path, help="manifest path; overrides the config")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def build_parser() -> argparse.ArgumentParser:
    common = _global_flags()
    parser = argparse.ArgumentParser(prog="fcac", description="Few-shot class-incremental audio classification")
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-synth", parents=[common], help="write a synthetic dataset and manifest")
    g.add_argument("--kind", choices=("gaussian_embeddings", "audio_tones"), default="gaussian_embeddings")
    g.add_argument("--spec", type=Path, help="JSON object of SynthSpec fields")
    for f in fields(SynthSpec):
        if f.name != "kind":
            g.add_argument(f"--{f.name.replace('_', '-')}", dest=f"synth_{f.name}", type=type(f.default))

    sub.add_parser("featurize", parents=[common], help="compute log-mel feature caches for an audio manifest")
    sub.add_parser("train-base", parents=[common], help="base-session training; writes base.ckpt")

    r = sub.add_parser("run-incremental", parents=[common], help="expand a checkpoint through later sessions")
    r.add_argument("--checkpoint", type=Path, help="starting checkpoint (default: OUT/base.ckpt)")
    r.add_argument("--until", type=int, help="last session index to run")

    e = sub.add_parser("evaluate", parents=[common], help="accuracy of a checkpoint on the cumulative eval set")
    e.add_argument("--checkpoint", type=Path, help="checkpoint to evaluate (default: OUT/final.ckpt)")

    rp = sub.add_parser("report", parents=[common], help="re-render CSV and markdown from a report.json")
    rp.add_argument("--report", type=Path, help="report.json (default: OUT/report.json)")

    sub.add_parser("run-protocol", parents=[common], help="base session plus every incremental session")
    return parser


def _config(args) -> ProtocolConfig:
    cfg = load_config(args.config) if args.config else ProtocolConfig()
    return apply_overrides(cfg, seed=args.seed, mode=args.mode, eval_mode=args.eval_mode,
                           manifest=str(args.manifest) if args.manifest else None)


def _meta(cfg: ProtocolConfig, split: BaseSplit, pan_losses=()) -> dict:
    return {"config": cfg.to_dict(), "split": {"pseudo_base": split.pseudo_base, "pseudo_novel": split.pseudo_novel},
            "pan_epoch_losses": list(pan_losses)}


def cmd_gen_synth(args) -> int:
    raw = json.loads(args.spec.read_text(encoding="utf-8")) if args.spec else {}
    raw.setdefault("kind", args.kind)
    for f in fields(SynthSpec):
        value = getattr(args, f"synth_{f.name}", None)
        if value is not None:
            raw[f.name] = value
    try:
        spec = SynthSpec(**raw)
    except TypeError as exc:
        raise ConfigError(f"bad synthetic spec: {exc}") from None
    path = gen_synthetic(spec, args.out, args.seed if args.seed is not None else 0)
    print(path)
    return EXIT_OK


def cmd_featurize(args) -> int:
    cfg = _config(args)
    manifest, embedder, _ = prepare(cfg)
    if manifest.kind != "audio":
        raise ConfigError("featurize needs an audio manifest")
    count = 0
    for ref in embedder.refs.values():
        featurize_clip(ref, embedder.dsp, str(args.out))
        count += 1
    print(f"{count} feature files in {args.out}")
    return EXIT_OK


def cmd_train_base(args) -> int:
    cfg = _config(args)
    manifest, embedder, seeds = prepare(cfg)
    state = train_base(manifest, embedder, cfg, seeds)
    args.out.mkdir(parents=True, exist_ok=True)
    save_checkpoint(args.out / "base.ckpt", state.store, state.ee, state.pan,
                    _meta(cfg, state.split, state.pan_epoch_losses))
    print(args.out / "base.ckpt")
    return EXIT_OK


def _state_from_checkpoint(path: Path, cfg: ProtocolConfig, embedder) -> BaseState:
    ckpt = load_checkpoint(path)
    if cfg.mode == "pan" and ckpt.pan is None:
        raise ConfigError(f"{path} holds no PAN; run with --mode naive or retrain")
    embedder.ee = ckpt.ee
    meta = ckpt.meta or {}
    split = meta.get("split") or {"pseudo_base": [], "pseudo_novel": []}
    return BaseState(ckpt.store, ckpt.pan, ckpt.ee, BaseSplit(split["pseudo_base"], split["pseudo_novel"]),
                     pan_epoch_losses=list(meta.get("pan_epoch_losses", [])))


def _finish(result, cfg, embedder, out: Path) -> int:
    write_report(result, out, embedder)
    save_checkpoint(out / "final.ckpt", result.store, result.ee, result.pan,
                    _meta(cfg, result.split, result.pan_epoch_losses))
    print(render_markdown(report_dict(result)), end="")
    if result.error:
        log.error("protocol stopped: %s", result.error)
        return EXIT_RUNTIME
    return EXIT_OK


def cmd_run_incremental(args) -> int:
    cfg = _config(args)
    manifest, embedder, seeds = prepare(cfg)
    state = _state_from_checkpoint(args.checkpoint or args.out / "base.ckpt", cfg, embedder)
    args.out.mkdir(parents=True, exist_ok=True)

    def keep(store: PrototypeStore) -> None:
        save_checkpoint(args.out / f"session_{store.session_index}.ckpt", store, state.ee, state.pan,
                        _meta(cfg, state.split, state.pan_epoch_losses))

    result = run_sessions(manifest, embedder, cfg, seeds, state, args.until, on_session=keep)
    return _finish(result, cfg, embedder, args.out)


def cmd_evaluate(args) -> int:
    cfg = _config(args)
    manifest, embedder, _ = prepare(cfg)
    state = _state_from_checkpoint(args.checkpoint or args.out / "final.ckpt", cfg, embedder)
    mode = eval_modes(cfg)[0]
    store = state.store
    preds, labels = evaluate(store, state.pan, manifest, embedder, mode)
    base = sorted(manifest.base.labels)
    novel = sorted(c for s in manifest.sessions[1:store.session_index + 1] for c in s.labels)
    doc = {"session": store.session_index, "eval_mode": mode,
           "accuracy": partition_accuracies(preds, labels, base, novel),
           "counts": partition_counts(labels, base, novel)}
    args.out.mkdir(parents=True, exist_ok=True)
    (args.out / "evaluation.json").write_text(dumps_report(doc), encoding="utf-8")
    print(json.dumps(doc, sort_keys=True))
    return EXIT_OK


def cmd_report(args) -> int:
    path = args.report or args.out / "report.json"
    try:
        doc = load_report(path)
    except FileNotFoundError:
        raise ConfigError(f"report not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from None
    args.out.mkdir(parents=True, exist_ok=True)
    (args.out / "report.csv").write_text(render_csv(doc), encoding="utf-8")
    (args.out / "report.md").write_text(render_markdown(doc), encoding="utf-8")
    print(render_markdown(doc), end="")
    return EXIT_OK


def cmd_run_protocol(args) -> int:
    cfg = _config(args)
    manifest, embedder, seeds = prepare(cfg)
    state = train_base(manifest, embedder, cfg, seeds)
    result = run_sessions(manifest, embedder, cfg, seeds, state)
    return _finish(result, cfg, embedder, args.out)


COMMANDS = {
    "gen-synth": cmd_gen_synth,
    "featurize": cmd_featurize,
    "train-base": cmd_train_base,
    "run-incremental": cmd_run_incremental,
    "evaluate": cmd_evaluate,
    "report": cmd_report,
    "run-protocol": cmd_run_protocol,
}


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (ConfigError, ManifestError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (FcacError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
