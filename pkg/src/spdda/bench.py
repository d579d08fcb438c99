"""Paired multi-seed comparison of training methods on synthetic scenes.

Each seed synthesizes its own source/target pair; every method trains on
that same pair with that same seed, so differences between methods are
paired. Training contexts are independent and run in a thread pool.
"""

from __future__ import annotations

import os
import statistics
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, replace
from pathlib import Path
from typing import Optional

import numpy as np

from .config import RunConfig
from .data import synthesize_scene
from .training import TrainConfig, apply_ablation, run_training

THREADS_ENV = "SPDDA_THREADS"


def worker_count(requested: int, jobs: int) -> int:
    """Workers for ``jobs`` contexts: ``requested`` (0 = CPU count), capped by SPDDA_THREADS."""
    n = requested or os.cpu_count() or 1
    env = os.environ.get(THREADS_ENV)
    if env:
        try:
            cap = int(env)
        except ValueError:
            raise ValueError(f"{THREADS_ENV} must be a positive integer, got {env!r}") from None
        if cap < 1:
            raise ValueError(f"{THREADS_ENV} must be a positive integer, got {env!r}")
        n = min(n, cap)
    return max(1, min(n, jobs))


@dataclass
class BenchRow:
    seed: int
    method: str
    target_oa: float
    target_f1: float
    target_kappa: float
    source_oa: float
    seconds: float


def method_config(base: TrainConfig, method: str, seed: int) -> TrainConfig:
    cfg = replace(base, seed=seed)
    return replace(cfg, method="spdda") if method == "spdda" else apply_ablation(cfg, method)


def bench_base(cfg: RunConfig) -> TrainConfig:
    b = cfg.bench
    return replace(cfg.train, epochs=b.epochs, max_per_class=b.max_per_class, lr=b.lr, checkpoint_every=0)


def _run_one(cfg: RunConfig, seed: int, method: str, run_dir: Optional[Path]) -> BenchRow:
    source, target = synthesize_scene(cfg.scene, np.random.default_rng(seed))
    tcfg = method_config(bench_base(cfg), method, seed)
    sub = run_dir / f"seed_{seed}" / method if run_dir is not None else None
    t0 = time.perf_counter()
    res = run_training(tcfg, source, target, sub)
    tgt, src = res.reports["target"], res.reports["source"]
    return BenchRow(seed, method, tgt.oa, tgt.f1_weighted, tgt.kappa, src.oa, time.perf_counter() - t0)


def run_bench(cfg: RunConfig, run_dir=None, threads: Optional[int] = None) -> list[BenchRow]:
    jobs = [(s, m) for s in cfg.bench.seeds for m in cfg.bench.methods]
    run_dir = Path(run_dir) if run_dir is not None else None
    n = worker_count(cfg.bench.threads if threads is None else threads, len(jobs))
    if n == 1:
        return [_run_one(cfg, s, m, run_dir) for s, m in jobs]
    with ThreadPoolExecutor(max_workers=n) as pool:
        futures = [pool.submit(_run_one, cfg, s, m, run_dir) for s, m in jobs]
        return [f.result() for f in futures]


def method_means(rows: list[BenchRow]) -> dict:
    out: dict = {}
    for r in rows:
        out.setdefault(r.method, []).append(r.target_oa)
    return {m: statistics.fmean(v) for m, v in out.items()}


def summarize(rows: list[BenchRow], reference: str = "spdda") -> str:
    """Markdown table of per-method target OA plus paired differences to ``reference``."""
    methods = list(dict.fromkeys(r.method for r in rows))
    seeds = list(dict.fromkeys(r.seed for r in rows))
    oa = {(r.seed, r.method): r.target_oa for r in rows}
    lines = ["| method | mean target OA | std | mean source OA | " + " | ".join(f"seed {s}" for s in seeds) + " |",
             "|---" * (4 + len(seeds)) + "|"]
    for m in methods:
        vals = [oa[(s, m)] for s in seeds]
        src = statistics.fmean(r.source_oa for r in rows if r.method == m)
        std = statistics.pstdev(vals) if len(vals) > 1 else 0.0
        lines.append(f"| {m} | {statistics.fmean(vals):.4f} | {std:.4f} | {src:.4f} | "
                     + " | ".join(f"{v:.4f}" for v in vals) + " |")
    if reference in methods:
        lines.append("")
        for m in methods:
            if m == reference:
                continue
            diffs = [oa[(s, reference)] - oa[(s, m)] for s in seeds]
            wins = sum(d >= 0 for d in diffs)
            lines.append(f"- {reference} vs {m}: mean paired difference {statistics.fmean(diffs):+.4f}, "
                         f"{reference} >= {m} on {wins}/{len(seeds)} seeds")
    total = sum(r.seconds for r in rows)
    lines.append("")
    lines.append(f"Training time summed over {len(rows)} runs: {total:.1f} s")
    return "\n".join(lines) + "\n"


def rows_as_dicts(rows: list[BenchRow]) -> list[dict]:
    return [asdict(r) for r in rows]
