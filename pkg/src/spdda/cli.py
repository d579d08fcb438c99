"""Command-line entry point: ``spdda {synthesize,train,augment,evaluate,bench}``.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numeric failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import replace
from pathlib import Path
from typing import Optional

import numpy as np

from . import bench as bench_mod
from .augment import augment_scene, realism_report
from .checkpoint import CheckpointError
from .config import RunConfig, load_config
from .data import CubeFormatError, read_cube, synthesize_scene, write_cube, extract_patches
from .errors import ConfigError, DataError, NumericError
from .metrics import EvalReport, append_eval_row, confusion, pseudo_color, scaled_bands, write_ppm
from .tensor import ShapeError
from .training import apply_ablation, latest_checkpoint, restore_state, run_training

log = logging.getLogger("spdda")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4


def _parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON run configuration")
    common.add_argument("--run-dir", help="directory that receives every artifact of the command")
    common.add_argument("--seed", type=int, help="seed for the scene and the training run")
    common.add_argument("--overwrite", action="store_true", help="replace existing artifacts in the run directory")
    common.add_argument("-q", "--quiet", action="store_true", help="only print errors")

    p = argparse.ArgumentParser(prog="spdda", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    sub.add_parser("synthesize", parents=[common], help="write a synthetic source/target cube pair")

    t = sub.add_parser("train", parents=[common], help="train a generator and classifier")
    t.add_argument("--source", help="labeled source cube (HSC1)")
    t.add_argument("--target", help="labeled target cube for the final evaluation")
    t.add_argument("--seeds", help="comma-separated seeds trained in parallel, one subdirectory each")
    t.add_argument("--ablation", help="named configuration: table2-row1..8, fix-0.1..fix-2.0, var-e, var-s, adaptive, erm")
    t.add_argument("--lambda", dest="lambda_mode", help="adaptive, fixed:v, staged_epoch:a,b,split or staged_loss:a,b,thr")
    t.add_argument("--epochs", type=int, help="override train.epochs")
    t.add_argument("--resume", action="store_true", help="continue from the newest checkpoint in the run directory")

    a = sub.add_parser("augment", parents=[common], help="generate an extended-domain scene")
    a.add_argument("--checkpoint", help="checkpoint file (default: newest in the run directory)")
    a.add_argument("--source", help="cube to augment")

    e = sub.add_parser("evaluate", parents=[common], help="classify a labeled cube and append scores")
    e.add_argument("--checkpoint", help="checkpoint file (default: newest in the run directory)")
    e.add_argument("--cube", help="labeled cube to evaluate on")

    b = sub.add_parser("bench", parents=[common], help="paired multi-seed method comparison")
    b.add_argument("--seeds", help="comma-separated seeds (overrides bench.seeds)")
    return p


def _seed_list(text: str) -> list[int]:
    try:
        seeds = [int(s) for s in text.split(",") if s.strip()]
    except ValueError:
        raise ConfigError("--seeds", f"expected comma-separated integers, got {text!r}") from None
    if not seeds or min(seeds) < 0:
        raise ConfigError("--seeds", "need at least one non-negative seed")
    return seeds


def _resolve(args) -> RunConfig:
    cfg = load_config(args.config)
    if args.seed is not None:
        if args.seed < 0:
            raise ConfigError("--seed", "must be non-negative")
        cfg.seed = args.seed
        cfg.train = replace(cfg.train, seed=args.seed)
    paths = cfg.paths
    for attr in ("run_dir", "source", "target", "checkpoint", "cube"):
        val = getattr(args, attr, None)
        if val is not None:
            setattr(paths, attr, val)
    if getattr(args, "epochs", None) is not None:
        cfg.train = replace(cfg.train, epochs=args.epochs)
    if getattr(args, "ablation", None):
        cfg.train = apply_ablation(cfg.train, args.ablation)
    if getattr(args, "lambda_mode", None):
        cfg.train = replace(cfg.train, lambda_mode=args.lambda_mode)
    cfg.train.validate()
    return cfg


def _run_dir(cfg: RunConfig) -> Path:
    if not cfg.paths.run_dir:
        raise ConfigError("paths.run_dir", "no run directory given (use --run-dir)")
    return Path(cfg.paths.run_dir)


def _claim(paths: list[Path], overwrite: bool) -> None:
    """Refuse to replace existing artifacts unless ``overwrite``."""
    existing = [p for p in paths if p.exists()]
    if existing and not overwrite:
        raise ConfigError("--overwrite", f"{existing[0]} already exists; pass --overwrite to replace it")


def _checkpoint(cfg: RunConfig) -> Path:
    if cfg.paths.checkpoint:
        return Path(cfg.paths.checkpoint)
    found = latest_checkpoint(_run_dir(cfg)) if _run_dir(cfg).exists() else None
    if found is None:
        raise DataError(f"no checkpoint found in {_run_dir(cfg)} (use --checkpoint)")
    return found


def _load_cube(path: Optional[str], key: str):
    if not path:
        raise ConfigError(key, "no cube given")
    return read_cube(path)


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_synthesize(cfg: RunConfig, overwrite: bool) -> None:
    out = _run_dir(cfg)
    files = [out / "source.hsc", out / "target.hsc", out / "manifest.json"]
    _claim(files, overwrite)
    out.mkdir(parents=True, exist_ok=True)
    source, target = synthesize_scene(cfg.scene, np.random.default_rng(cfg.seed))
    write_cube(source, files[0])
    write_cube(target, files[1])
    # the manifest is itself a valid config that reproduces the pair
    files[2].write_text(json.dumps({"seed": cfg.seed, "scene": cfg.scene.to_dict()}, indent=2, sort_keys=True) + "\n")
    log.info("source %s -> %s", source.values.shape, files[0])
    log.info("target %s -> %s", target.values.shape, files[1])


def _train_one(cfg: RunConfig, run_dir: Path, resume: bool, overwrite: bool) -> dict:
    if not resume:
        _claim([run_dir / "steps.csv", run_dir / "config.json"], overwrite)
    source = _load_cube(cfg.paths.source, "paths.source")
    target = read_cube(cfg.paths.target) if cfg.paths.target else None
    echo = replace(cfg, paths=replace(cfg.paths, run_dir=str(run_dir))).dumps()
    res = run_training(cfg.train, source, target, run_dir, resume=resume, echo=echo)
    return {k: v.as_dict() for k, v in res.reports.items()}


def cmd_train(cfg: RunConfig, args) -> None:
    run_dir = _run_dir(cfg)
    if not args.seeds:
        reports = _train_one(cfg, run_dir, args.resume, args.overwrite)
        print(json.dumps(reports, indent=2, sort_keys=True))
        return
    seeds = _seed_list(args.seeds)
    configs = [replace(cfg, seed=s, train=replace(cfg.train, seed=s)) for s in seeds]
    dirs = [run_dir / f"seed_{s}" for s in seeds]
    if not args.resume:
        for d in dirs:
            _claim([d / "steps.csv", d / "config.json"], args.overwrite)
    n = bench_mod.worker_count(0, len(seeds))
    with ThreadPoolExecutor(max_workers=n) as pool:
        futures = [pool.submit(_train_one, c, d, args.resume, args.overwrite) for c, d in zip(configs, dirs)]
        reports = {f"seed_{s}": f.result() for s, f in zip(seeds, futures)}
    print(json.dumps(reports, indent=2, sort_keys=True))


def cmd_augment(cfg: RunConfig, overwrite: bool) -> None:
    ck = _checkpoint(cfg)
    state = restore_state(ck)
    if state.generator is None:
        raise DataError(f"{ck}: checkpoint holds no generator (trained with method {state.config.method!r})")
    source = _load_cube(cfg.paths.source, "paths.source")
    if source.channels != state.channels:
        raise DataError(f"{cfg.paths.source}: cube has {source.channels} channels, checkpoint {ck} expects {state.channels}")
    bands = cfg.eval.bands
    if max(bands) >= source.channels:
        raise ConfigError("eval.bands", f"band {max(bands)} out of range for a {source.channels}-channel cube")
    out = _run_dir(cfg) / "augment"
    files = {n: out / n for n in ("ed.hsc", "mixer.json", "report.json", "source.ppm", "ed.ppm")}
    _claim(list(files.values()), overwrite)
    out.mkdir(parents=True, exist_ok=True)
    res = augment_scene(state.generator, source, np.random.default_rng([cfg.seed, 4]),
                        state.config.patch_size, cfg.eval.batch_size)
    report = realism_report(source, res.cube)
    if not cfg.eval.sam:
        report.pop("sam_mean"), report.pop("sam_std"), report.pop("sam_skipped")
    if not cfg.eval.psnr:
        report.pop("psnr")
    if not cfg.eval.ssim:
        report.pop("ssim")
    write_cube(res.cube, files["ed.hsc"])
    files["mixer.json"].write_text(json.dumps(res.mixer_json(), indent=1) + "\n")
    files["report.json"].write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    write_ppm(files["source.ppm"], pseudo_color(source.values, bands))
    write_ppm(files["ed.ppm"], pseudo_color(res.cube.values, scaled_bands(bands, source.channels, res.cube.channels)))
    print(json.dumps(report, indent=2, sort_keys=True))


def cmd_evaluate(cfg: RunConfig) -> None:
    ck = _checkpoint(cfg)
    state = restore_state(ck)
    cube = _load_cube(cfg.paths.cube, "paths.cube")
    if cube.labels is None or not np.any(cube.labels > 0):
        raise DataError(f"{cfg.paths.cube}: cube has no labels to evaluate against")
    if cube.num_classes > state.num_classes:
        raise DataError(f"{cfg.paths.cube}: label {cube.num_classes} exceeds the classifier's {state.num_classes} classes")
    x, y, _ = extract_patches(cube, state.config.patch_size)
    preds = state.classifier.predict(x, cfg.eval.batch_size)
    report = EvalReport.from_confusion(confusion(preds, y - 1, state.num_classes))
    out = _run_dir(cfg)
    out.mkdir(parents=True, exist_ok=True)
    append_eval_row(out / "eval.csv", report, split=Path(cfg.paths.cube).stem, epoch=state.epoch)
    print(json.dumps(report.as_dict(), indent=2, sort_keys=True))


def cmd_bench(cfg: RunConfig, args) -> None:
    if args.seeds:
        cfg.bench = replace(cfg.bench, seeds=_seed_list(args.seeds))
    run_dir = _run_dir(cfg) if cfg.paths.run_dir else None
    if run_dir is not None:
        _claim([run_dir / "bench.md", run_dir / "bench.json"], args.overwrite)
    rows = bench_mod.run_bench(cfg, run_dir)
    summary = bench_mod.summarize(rows)
    if run_dir is not None:
        run_dir.mkdir(parents=True, exist_ok=True)
        (run_dir / "bench.md").write_text(summary)
        (run_dir / "bench.json").write_text(json.dumps(bench_mod.rows_as_dicts(rows), indent=2) + "\n")
        (run_dir / "config.json").write_text(cfg.dumps())
    print(summary, end="")


def main(argv: Optional[list[str]] = None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        cfg = _resolve(args)
        if args.command == "synthesize":
            cmd_synthesize(cfg, args.overwrite)
        elif args.command == "train":
            cmd_train(cfg, args)
        elif args.command == "augment":
            cmd_augment(cfg, args.overwrite)
        elif args.command == "evaluate":
            cmd_evaluate(cfg)
        else:
            cmd_bench(cfg, args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, CubeFormatError, CheckpointError, ShapeError, FileNotFoundError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except OSError as exc:
        print(f"data error: {exc.filename or ''}: {exc.strerror or exc}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
