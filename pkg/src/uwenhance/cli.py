"""Command-line surface.

Subcommands: train-qa, train-uie, enhance, gen-negatives, evaluate,
report. Exit codes: 0 success, 1 usage or configuration problem, 2 data
problem, 3 numeric failure. All outputs are written atomically, so a
failing command leaves no partial files behind.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import __version__
from .config import load_config
from .data import MANIFEST_NAME, ingest_dataset, load_manifest, save_manifest
from .enhancer import enhance, load_enhancer
from .errors import ConfigError, DataError, NumericError, UwenhanceError
from .imageops import list_image_files, load_image, save_image
from .metrics import evaluate_dataset
from .negatives import build_negative_set
from .perception import (MosSample, evaluate_perception_model, load_perception_model,
                         save_perception_model, train_perception_model)
from .report import image_grid, plot_loss_curves
from .trainer import TrainPair, train_enhancer


class _Parser(argparse.ArgumentParser):
    """argparse exits 2 on usage errors; this project reserves 2 for data
    problems, so usage failures are remapped to exit 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"error: {message}", file=sys.stderr)
        raise SystemExit(1)


def _build_parser() -> _Parser:
    parser = _Parser(prog="uwenhance",
                     description="Perception-guided underwater image enhancement")
    parser.add_argument("--version", action="version", version=f"uwenhance {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train-qa", help="fit the prompt pair to an opinion-scored dataset")
    p.add_argument("--config", help="YAML config file (defaults used when omitted)")
    p.add_argument("--data", help="dataset root or manifest file")
    p.add_argument("--out", required=True, help="output directory")

    p = sub.add_parser("train-uie", help="train the enhancement network")
    p.add_argument("--config")
    p.add_argument("--data", help="paired dataset root or manifest file")
    p.add_argument("--negatives", help="negatives cache directory")
    p.add_argument("--perception", help="perception-model checkpoint")
    p.add_argument("--out", required=True)

    p = sub.add_parser("enhance", help="run a trained enhancer on an image or directory")
    p.add_argument("--input", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", required=True)

    p = sub.add_parser("gen-negatives", help="populate the negatives cache for a dataset")
    p.add_argument("--config")
    p.add_argument("--data", help="dataset root or manifest file")
    p.add_argument("--cache", required=True, help="cache directory to fill")

    p = sub.add_parser("evaluate", help="score a directory of enhanced images")
    p.add_argument("--enhanced", required=True)
    p.add_argument("--reference")
    p.add_argument("--perception")
    p.add_argument("--config")
    p.add_argument("--out", required=True, help="CSV report path")

    p = sub.add_parser("report", help="render loss curves and comparison grids")
    p.add_argument("--log", help="training log (line-delimited records)")
    p.add_argument("--out", help="loss-curve PNG path")
    p.add_argument("--grid", nargs="+", help="directories to compare side by side")
    p.add_argument("--grid-labels", nargs="+")
    p.add_argument("--grid-out", help="grid PNG path")
    return parser


def _resolve_data(arg_value, cfg, expected_kind: str):
    """Find the dataset: explicit flag beats config paths. A persisted
    manifest is reused so the split stays frozen across commands."""
    source = arg_value or cfg.paths.get("data")
    if not source:
        raise ConfigError("paths.data", "no dataset given (use --data or paths.data)")
    source = Path(source)
    if source.is_file():
        manifest = load_manifest(source)
    elif (source / MANIFEST_NAME).exists():
        manifest = load_manifest(source / MANIFEST_NAME)
    else:
        manifest = ingest_dataset(source, expected_kind, seed=cfg.seed,
                                  train_fraction=cfg.data.train_fraction,
                                  train_count=cfg.data.train_count,
                                  mos_scale=cfg.data.mos_scale)
        save_manifest(manifest)
    if manifest.kind != expected_kind:
        raise DataError(f"dataset kind {manifest.kind!r} but this command needs {expected_kind!r}")
    return manifest


def _cmd_train_qa(args) -> int:
    cfg = load_config(args.config)
    manifest = _resolve_data(args.data, cfg, "mos")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    def samples(which):
        return [MosSample(image=load_image(manifest.resolve(e.input_path)), s_mos=e.mos)
                for e in manifest.subset(which)]

    state = train_perception_model(samples("train"), cfg.qa, log_path=out / "qa_log.jsonl")
    state.mos_scale = manifest.mos_scale
    ckpt = out / "perception.ckpt"
    save_perception_model(state, ckpt)
    print(f"trained prompts for {state.iteration} iterations -> {ckpt}")

    test = manifest.subset("test")
    if len(test) >= 3:
        plcc_v, srocc_v = evaluate_perception_model(state, samples("test"))
        with open(out / "qa_eval.json", "w") as fh:
            json.dump({"plcc": plcc_v, "srocc": srocc_v, "n_test": len(test)}, fh, indent=2)
            fh.write("\n")
        print(f"held-out correlation: plcc={plcc_v:.4f} srocc={srocc_v:.4f} (n={len(test)})")
    else:
        print(f"skipping held-out correlation: only {len(test)} test images")
    return 0


def _cmd_train_uie(args) -> int:
    cfg = load_config(args.config)
    manifest = _resolve_data(args.data, cfg, "paired")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    lw = cfg.uie.loss_weights

    perception_state = None
    if lw.lambda1 > 0 or lw.lambda2 > 0:
        ckpt = args.perception or cfg.paths.get("perception")
        if not ckpt:
            raise ConfigError(
                "paths.perception",
                "a perception checkpoint is required when lambda1 or lambda2 is nonzero")
        perception_state = load_perception_model(ckpt)

    pairs = [TrainPair(e.id, load_image(manifest.resolve(e.input_path)),
                       load_image(manifest.resolve(e.reference_path)))
             for e in manifest.subset("train")]

    negative_sets = None
    if lw.lambda2 > 0:
        cache = args.negatives or cfg.paths.get("negatives_cache")
        if not cache:
            raise ConfigError(
                "negatives",
                "contrastive loss is enabled (lambda2 > 0) but no negatives cache was given")
        specs = cfg.negatives.specs(cache_dir=cache)
        if len(specs) != cfg.uie.cr.z:
            raise ConfigError(
                "negatives.methods",
                f"{len(specs)} methods configured but uie.cr.z = {cfg.uie.cr.z}")
        negative_sets = {p.image_id: build_negative_set(p.degraded, specs, p.image_id)
                         for p in pairs}

    handle, record = train_enhancer(pairs, negative_sets, perception_state, cfg.uie,
                                    out_dir=out, log_path=out / "train_log.jsonl")
    final = record.epoch_aggregates[-1] if record.epoch_aggregates else {}
    print(f"trained {cfg.uie.epochs} epochs on {len(pairs)} pairs "
          f"({record.wall_clock_seconds:.1f}s); final mean l_total="
          f"{final.get('l_total', float('nan')):.6f}")
    print(f"checkpoint: {record.checkpoint_paths[-1]}")
    return 0


def _cmd_enhance(args) -> int:
    handle, _ = load_enhancer(args.checkpoint)
    source = Path(args.input)
    if source.is_dir():
        out_dir = Path(args.out)
        out_dir.mkdir(parents=True, exist_ok=True)
        images = list_image_files(source)
        for path in images:
            save_image(enhance(load_image(path), handle), out_dir / f"{path.stem}.png")
        print(f"enhanced {len(images)} images -> {out_dir}")
    else:
        save_image(enhance(load_image(source), handle), args.out)
        print(f"enhanced {source} -> {args.out}")
    return 0


def _cmd_gen_negatives(args) -> int:
    cfg = load_config(args.config)
    try:
        manifest = _resolve_data(args.data, cfg, "paired")
    except DataError:
        manifest = _resolve_data(args.data, cfg, "noref")
    specs = cfg.negatives.specs(cache_dir=args.cache)
    for entry in manifest.entries:
        build_negative_set(load_image(manifest.resolve(entry.input_path)), specs, entry.id)
    print(f"cached {len(specs)} negatives for each of {len(manifest.entries)} images "
          f"under {args.cache}")
    return 0


def _cmd_evaluate(args) -> int:
    cfg = load_config(args.config)
    perception_state = None
    if cfg.eval.clip_score:
        ckpt = args.perception or cfg.paths.get("perception")
        if not ckpt:
            raise ConfigError(
                "paths.perception",
                "clip_score is enabled; give --perception or disable eval.clip_score")
        perception_state = load_perception_model(ckpt)
    report = evaluate_dataset(args.enhanced, args.reference, perception_state)
    out = Path(args.out)
    report.to_csv(out)
    report.to_json(out.with_suffix(".json"))
    parts = " ".join(f"{key}={value:.4f}" for key, value in report.aggregates.items())
    print(f"{len(report.rows)} images: {parts}")
    print(f"report: {out} (+ {out.with_suffix('.json').name})")
    return 0


def _cmd_report(args) -> int:
    did_something = False
    if args.log or args.out:
        if not (args.log and args.out):
            raise ConfigError("report", "--log and --out must be given together")
        plot_loss_curves(args.log, args.out)
        print(f"loss curves: {args.out}")
        did_something = True
    if args.grid or args.grid_out:
        if not (args.grid and args.grid_out):
            raise ConfigError("report", "--grid and --grid-out must be given together")
        image_grid(args.grid, args.grid_out, labels=args.grid_labels)
        print(f"comparison grid: {args.grid_out}")
        did_something = True
    if not did_something:
        raise ConfigError("report", "nothing to do (give --log/--out or --grid/--grid-out)")
    return 0


_COMMANDS = {
    "train-qa": _cmd_train_qa,
    "train-uie": _cmd_train_uie,
    "enhance": _cmd_enhance,
    "gen-negatives": _cmd_gen_negatives,
    "evaluate": _cmd_evaluate,
    "report": _cmd_report,
}


def run_cli(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return _COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except DataError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except NumericError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except UwenhanceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


def main():
    sys.exit(run_cli())


if __name__ == "__main__":
    main()
