"""Run configuration: one JSON document with scene, train, eval, paths and bench sections.

Every section is optional in the input file; the resolved document (all
defaults filled in) is what gets echoed into a run directory.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

from .data import SceneSpec
from .errors import ConfigError
from .schema import strict_kwargs
from .training import TrainConfig, ablation_names

SECTIONS = ("seed", "scene", "train", "eval", "paths", "bench")


@dataclass
class EvalConfig:
    bands: list[int] = field(default_factory=lambda: [47, 28, 12])
    sam: bool = True
    psnr: bool = True
    ssim: bool = True
    batch_size: int = 256

    def validate(self, prefix: str = "eval") -> None:
        if len(self.bands) != 3 or min(self.bands) < 0:
            raise ConfigError(f"{prefix}.bands", f"need three non-negative band indices, got {self.bands}")
        if self.batch_size < 1:
            raise ConfigError(f"{prefix}.batch_size", "must be >= 1")


@dataclass
class PathsConfig:
    source: Optional[str] = None
    target: Optional[str] = None
    run_dir: Optional[str] = None
    checkpoint: Optional[str] = None
    cube: Optional[str] = None


@dataclass
class BenchConfig:
    """Multi-seed comparison: each entry of ``methods`` is ``spdda`` or an ablation name."""

    seeds: list[int] = field(default_factory=lambda: [0, 1, 2, 3, 4])
    methods: list[str] = field(default_factory=lambda: ["spdda", "erm", "table2-row2"])
    epochs: int = 12
    max_per_class: int = 60
    lr: float = 1e-3
    threads: int = 0

    def validate(self, prefix: str = "bench") -> None:
        if not self.seeds or min(self.seeds) < 0:
            raise ConfigError(f"{prefix}.seeds", "need at least one non-negative seed")
        allowed = set(ablation_names()) | {"spdda"}
        for i, m in enumerate(self.methods):
            if m not in allowed:
                raise ConfigError(f"{prefix}.methods.{i}", f"unknown method {m!r}")
        if self.epochs < 1:
            raise ConfigError(f"{prefix}.epochs", "must be >= 1")
        if self.max_per_class < 0:
            raise ConfigError(f"{prefix}.max_per_class", "must be >= 0")
        if not self.lr > 0:
            raise ConfigError(f"{prefix}.lr", "must be > 0")
        if self.threads < 0:
            raise ConfigError(f"{prefix}.threads", "must be >= 0 (0 = automatic)")


@dataclass
class RunConfig:
    seed: int = 0
    scene: SceneSpec = field(default_factory=SceneSpec)
    train: TrainConfig = field(default_factory=TrainConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    paths: PathsConfig = field(default_factory=PathsConfig)
    bench: BenchConfig = field(default_factory=BenchConfig)

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "scene": self.scene.to_dict(),
            "train": self.train.to_dict(),
            "eval": asdict(self.eval),
            "paths": asdict(self.paths),
            "bench": asdict(self.bench),
        }

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        if not isinstance(d, dict):
            raise ConfigError("<root>", "config must be a JSON object")
        for key in d:
            if key not in SECTIONS:
                raise ConfigError(key, f"unknown key (known: {', '.join(SECTIONS)})")
        seed = d.get("seed", 0)
        if isinstance(seed, bool) or not isinstance(seed, int) or seed < 0:
            raise ConfigError("seed", f"expected a non-negative integer, got {seed!r}")
        try:
            scene = SceneSpec(**strict_kwargs(SceneSpec, d.get("scene", {}), "scene"))
        except (ValueError, TypeError) as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError("scene", str(exc)) from None
        train = TrainConfig.from_dict(d.get("train", {}))
        ev = EvalConfig(**strict_kwargs(EvalConfig, d.get("eval", {}), "eval"))
        ev.validate()
        paths = PathsConfig(**strict_kwargs(PathsConfig, d.get("paths", {}), "paths"))
        bench = BenchConfig(**strict_kwargs(BenchConfig, d.get("bench", {}), "bench"))
        bench.validate()
        return cls(seed, scene, train, ev, paths, bench)


def load_config(path=None) -> RunConfig:
    """Read a JSON config file (``None`` gives all defaults)."""
    if path is None:
        return RunConfig()
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError("--config", f"cannot read {path}: {exc.strerror}") from None
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError("--config", f"{path} is not valid JSON ({exc.msg}, line {exc.lineno})") from None
    return RunConfig.from_dict(raw)
