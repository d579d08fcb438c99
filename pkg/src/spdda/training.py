"""Joint generator/classifier training, ablation presets and run-directory logs.

One step: the generator turns a source batch X_SD into an extended-domain
batch X_ED; X_ED is resampled back to C channels and blended with X_SD into
an intermediate batch X_ID; the classifier sees all three. The objective is
L_SS + CE(X_ED) + CE(X_ID) + a supervised contrastive term over the three
sets of embeddings, minimised by a single Adam over both networks.
"""

from __future__ import annotations

import csv
import json
import logging
import math
import re
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from . import ops
from .checkpoint import load_checkpoint, save_checkpoint
from .classifier import AdaptiveLeNet, cross_entropy, spectral_resample
from .data import HyperCube, cap_per_class, extract_patches, split_dataset
from .errors import ConfigError, DataError, NumericError
from .metrics import EvalReport, append_eval_row, confusion, psnr, sam_stats, image_ssim
from .optim import Adam
from .schema import strict_kwargs
from .sdm import CASM_MODES, THRESHOLD_DIRECTIONS, SpectralDiversityModule
from .sscom import lambda_schedule, sscom_loss
from .tensor import Tensor, as_tensor, backward, no_grad, tape_scope

METHODS = ("spdda", "erm")
log = logging.getLogger(__name__)
STEP_FIELDS = ["step", "epoch", "k", "l_sf", "l_sc", "lambda", "l_ss", "l_ce", "l_con", "l_total"]


# ---------------------------------------------------------------------------
# lambda modes
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class LambdaMode:
    kind: str = "adaptive"
    early: float = 1.0
    late: float = 1.0
    switch: float = 0.0

    def __str__(self) -> str:
        if self.kind == "adaptive":
            return "adaptive"
        if self.kind == "fixed":
            return f"fixed:{self.early!r}"
        switch = int(self.switch) if self.kind == "staged_epoch" else self.switch
        return f"{self.kind}:{self.early!r},{self.late!r},{switch!r}"


_NAMED_LAMBDA = {
    "fix-0.1": "fixed:0.1", "fix-0.5": "fixed:0.5", "fix-1.0": "fixed:1.0",
    "fix-1.5": "fixed:1.5", "fix-2.0": "fixed:2.0",
    "var-s": "staged_loss:0.1,2.0,0.08",
}


def parse_lambda_mode(text: str, epochs: Optional[int] = None) -> LambdaMode:
    """Parse ``adaptive``, ``fixed:v``, ``staged_epoch:a,b,split``, ``staged_loss:a,b,thr``.

    The named rows ``fix-0.1`` .. ``fix-2.0``, ``var-e`` and ``var-s`` are
    accepted too; ``var-e`` switches at half of ``epochs``.
    """
    raw = text.strip().lower()
    if raw.startswith(("var", "fix")):
        raw = raw.replace("_", "-")
    if raw == "var-e":
        if epochs is None:
            raise ValueError("var-e needs the epoch count to place its switch")
        raw = f"staged_epoch:0.1,2.0,{max(1, epochs // 2)}"
    raw = _NAMED_LAMBDA.get(raw, raw)
    kind, _, args = raw.partition(":")
    try:
        nums = [float(a) for a in args.split(",")] if args else []
    except ValueError:
        raise ValueError(f"bad lambda mode {text!r}: arguments must be numbers") from None
    arity = {"adaptive": 0, "fixed": 1, "staged_epoch": 3, "staged_loss": 3}
    if kind not in arity:
        raise ValueError(f"unknown lambda mode {text!r}; expected one of {sorted(arity)} or a named row")
    if len(nums) != arity[kind]:
        raise ValueError(f"lambda mode {kind!r} takes {arity[kind]} argument(s), got {len(nums)}")
    if kind == "adaptive":
        return LambdaMode()
    if kind == "fixed":
        return LambdaMode("fixed", nums[0], nums[0])
    return LambdaMode(kind, nums[0], nums[1], nums[2])


def lambda_variant(mode: LambdaMode, epoch: int, l_sf_norm: float, l_sc_norm: float, s: float = 15.0) -> float:
    if mode.kind == "fixed":
        return mode.early
    if mode.kind == "staged_epoch":
        return mode.early if epoch < mode.switch else mode.late
    if mode.kind == "staged_loss":
        return mode.early if l_sf_norm > mode.switch else mode.late
    return lambda_schedule(l_sf_norm, l_sc_norm, s)


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------

@dataclass
class TrainConfig:
    method: str = "spdda"
    epochs: int = 60
    batch_size: int = 32
    lr: float = 1e-4
    seed: int = 0
    m: float = -5.0
    eps: float = 0.5
    p: int = 10
    s: float = 15.0
    k_min_fraction: float = 0.5
    sigma_min: float = 1e-3
    threshold_direction: str = "le"
    lambda_mode: str = "adaptive"
    casm_mode: str = "adaptive"
    use_sf: bool = True
    use_sc: bool = True
    use_id: bool = True
    ce_on_sd: bool = False
    contrastive_weight: float = 1.0
    temperature: float = 0.07
    patch_size: int = 13
    encoder_depth: int = 2
    zero_residual: bool = True
    hidden: int = 128
    train_fraction: float = 0.8
    max_per_class: int = 0
    checkpoint_every: int = 10

    def __post_init__(self):
        self.validate()

    def validate(self, prefix: str = "train") -> None:
        def bad(key, msg):
            raise ConfigError(f"{prefix}.{key}", msg)

        if self.method not in METHODS:
            bad("method", f"must be one of {METHODS}, got {self.method!r}")
        if not isinstance(self.epochs, int) or self.epochs < 1:
            bad("epochs", f"must be an integer >= 1, got {self.epochs!r}")
        if not isinstance(self.batch_size, int) or self.batch_size < 2:
            bad("batch_size", f"must be an integer >= 2, got {self.batch_size!r}")
        if not self.lr > 0:
            bad("lr", f"must be > 0, got {self.lr!r}")
        if not 0 < self.k_min_fraction <= 1:
            bad("k_min_fraction", f"must be in (0, 1], got {self.k_min_fraction!r}")
        if self.p < 0:
            bad("p", f"must be >= 0, got {self.p!r}")
        if not self.s > 0:
            bad("s", f"must be > 0, got {self.s!r}")
        if not self.sigma_min > 0:
            bad("sigma_min", f"must be > 0, got {self.sigma_min!r}")
        if self.threshold_direction not in THRESHOLD_DIRECTIONS:
            bad("threshold_direction", f"must be one of {THRESHOLD_DIRECTIONS}")
        if self.casm_mode not in CASM_MODES:
            bad("casm_mode", f"must be one of {CASM_MODES}, got {self.casm_mode!r}")
        try:
            self.lambda_mode = str(parse_lambda_mode(self.lambda_mode, self.epochs))
        except ValueError as exc:
            bad("lambda_mode", str(exc))
        if not self.temperature > 0:
            bad("temperature", f"must be > 0, got {self.temperature!r}")
        if self.contrastive_weight < 0:
            bad("contrastive_weight", "must be >= 0")
        if self.patch_size < 9 or self.patch_size % 2 == 0:
            bad("patch_size", f"must be odd and >= 9, got {self.patch_size!r}")
        if not 0 < self.train_fraction < 1:
            bad("train_fraction", f"must be in (0, 1), got {self.train_fraction!r}")
        if self.max_per_class < 0:
            bad("max_per_class", "must be >= 0 (0 keeps every patch)")
        if self.checkpoint_every < 0:
            bad("checkpoint_every", "must be >= 0 (0 writes only the final checkpoint)")
        if self.seed < 0:
            bad("seed", "must be a non-negative integer")

    @property
    def lam(self) -> LambdaMode:
        return parse_lambda_mode(self.lambda_mode, self.epochs)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict, prefix: str = "train") -> "TrainConfig":
        cfg = cls.__new__(cls)
        for f in fields(cls):
            setattr(cfg, f.name, f.default)
        for key, val in strict_kwargs(cls, d, prefix).items():
            setattr(cfg, key, val)
        cfg.validate(prefix)
        return cfg


def ablation_names() -> list[str]:
    return [f"table2-row{i}" for i in range(1, 9)] + [
        "fix-0.1", "fix-0.5", "fix-1.0", "fix-1.5", "fix-2.0", "var-e", "var-s", "adaptive", "erm"]


# (CASM, L_SF, L_SC) per row, in the order of the module ablation table
_TABLE2 = [
    (False, False, False), (True, False, False), (False, True, False), (False, False, True),
    (True, True, False), (True, False, True), (False, True, True), (True, True, True),
]


def apply_ablation(cfg: TrainConfig, name: str) -> TrainConfig:
    """Return ``cfg`` reconfigured as one named ablation row."""
    key = name.strip().lower()
    if key == "erm":
        return replace(cfg, method="erm")
    m = re.fullmatch(r"table2-row([1-8])", key)
    if m:
        casm, sf, sc = _TABLE2[int(m.group(1)) - 1]
        return replace(cfg, method="spdda", casm_mode="adaptive" if casm else "fixed",
                       use_sf=sf, use_sc=sc, lambda_mode="adaptive")
    try:
        mode = parse_lambda_mode(key, cfg.epochs)
    except ValueError:
        raise ConfigError("ablation", f"unknown ablation {name!r}; choose from {ablation_names()}") from None
    return replace(cfg, method="spdda", casm_mode="adaptive", use_sf=True, use_sc=True, lambda_mode=str(mode))


# ---------------------------------------------------------------------------
# losses
# ---------------------------------------------------------------------------

def intermediate_mix(x_sd, x_ed, rng: np.random.Generator, alpha: Optional[np.ndarray] = None):
    """(X_ID, alpha): per-sample convex blend of X_SD with X_ED resampled to C channels."""
    x_sd, x_ed = as_tensor(x_sd), as_tensor(x_ed)
    if x_sd.shape[0] != x_ed.shape[0] or x_sd.shape[2:] != x_ed.shape[2:]:
        raise ValueError(f"intermediate_mix: incompatible batches {x_sd.shape} and {x_ed.shape}")
    x_ed = spectral_resample(x_ed, x_sd.shape[1])
    if alpha is None:
        alpha = rng.uniform(0.0, 1.0, size=x_sd.shape[0])
    a = np.asarray(alpha, dtype=np.float64).reshape(-1, 1, 1, 1)
    return ops.add(ops.mul(x_sd, a), ops.mul(x_ed, 1.0 - a)), np.asarray(alpha)


def supervised_contrastive_loss(embeddings, labels, temperature: float = 0.07) -> Tensor:
    """Supervised contrastive loss of unit-norm (N, D) embeddings.

    Anchors without a positive are skipped; with no positive anywhere the
    loss is 0.
    """
    z = as_tensor(embeddings)
    labels = np.asarray(labels).reshape(-1)
    n = z.shape[0]
    others = ~np.eye(n, dtype=bool)
    positives = (labels[:, None] == labels[None, :]) & others
    counts = positives.sum(axis=1)
    anchors = counts > 0
    if n < 2 or not anchors.any():
        return Tensor(0.0)
    logits = ops.scale(ops.matmul(z, ops.transpose(z)), 1.0 / temperature)
    shift = np.where(others, logits.data, -np.inf).max(axis=1, keepdims=True)
    denom = ops.sum(ops.mul(ops.exp(ops.sub(logits, shift)), others.astype(np.float64)), axis=1, keepdims=True)
    log_prob = ops.sub(ops.sub(logits, shift), ops.log(denom))
    per_anchor = ops.sum(ops.mul(log_prob, positives.astype(np.float64)), axis=1)
    weights = np.where(anchors, 1.0 / np.maximum(counts, 1), 0.0) / anchors.sum()
    return ops.neg(ops.sum(ops.mul(per_anchor, weights)))


# ---------------------------------------------------------------------------
# state
# ---------------------------------------------------------------------------

@dataclass
class TrainState:
    config: TrainConfig
    classifier: AdaptiveLeNet
    generator: Optional[SpectralDiversityModule]
    optimizer: Adam
    rng: np.random.Generator
    channels: int
    num_classes: int
    epoch: int = 0
    step: int = 0
    history: list = field(default_factory=list)

    def arrays(self) -> dict:
        out = {name: p.data for name, p in self.optimizer.params.items()}
        st = self.optimizer.state
        out.update({f"adam.m.{k}": v for k, v in st.m.items()})
        out.update({f"adam.v.{k}": v for k, v in st.v.items()})
        return out

    def meta(self) -> dict:
        return {
            "epoch": self.epoch,
            "step": self.step,
            "adam_t": self.optimizer.state.t,
            "rng": self.rng.bit_generator.state,
            "channels": self.channels,
            "num_classes": self.num_classes,
            "config": self.config.to_dict(),
        }

    def save(self, path) -> None:
        save_checkpoint(path, self.arrays(), self.meta())


def init_state(cfg: TrainConfig, channels: int, num_classes: int) -> TrainState:
    init_rng = np.random.default_rng([cfg.seed, 1])
    clf = AdaptiveLeNet(channels, num_classes, init_rng, cfg.patch_size, cfg.hidden)
    gen = None
    params = {f"clf.{k}": v for k, v in clf.named_parameters()}
    if cfg.method == "spdda":
        gen = SpectralDiversityModule(
            channels, init_rng, cfg.encoder_depth, cfg.zero_residual, cfg.m, cfg.eps, cfg.p,
            cfg.k_min_fraction, cfg.sigma_min, cfg.threshold_direction, cfg.casm_mode)
        params.update({f"gen.{k}": v for k, v in gen.named_parameters()})
    return TrainState(cfg, clf, gen, Adam(params, cfg.lr), np.random.default_rng([cfg.seed, 2]),
                      channels, num_classes)


def restore_state(path, cfg: Optional[TrainConfig] = None) -> TrainState:
    """Rebuild a TrainState from a checkpoint (config taken from it unless given)."""
    arrays, meta = load_checkpoint(path)
    if cfg is None:
        cfg = TrainConfig.from_dict(meta["config"])
    state = init_state(cfg, int(meta["channels"]), int(meta["num_classes"]))
    for name, p in state.optimizer.params.items():
        if name not in arrays:
            raise DataError(f"{path}: checkpoint lacks parameter {name}; it was written by a different configuration")
        if arrays[name].shape != p.shape:
            raise DataError(f"{path}: parameter {name} has shape {arrays[name].shape}, expected {p.shape}")
        p.data[...] = arrays[name]
    st = state.optimizer.state
    st.t = int(meta["adam_t"])
    st.m = {k[len("adam.m."):]: v.copy() for k, v in arrays.items() if k.startswith("adam.m.")}
    st.v = {k[len("adam.v."):]: v.copy() for k, v in arrays.items() if k.startswith("adam.v.")}
    state.rng.bit_generator.state = meta["rng"]
    state.epoch, state.step = int(meta["epoch"]), int(meta["step"])
    return state


# ---------------------------------------------------------------------------
# one step
# ---------------------------------------------------------------------------

def _check_finite(state: TrainState, row: dict) -> None:
    if not all(math.isfinite(v) for v in row.values() if isinstance(v, float)):
        raise NumericError(f"non-finite loss at step {state.step}: {row}")


def train_step(state: TrainState, x_sd: np.ndarray, y: np.ndarray) -> dict:
    """One joint update on a source batch; returns the logged row."""
    cfg = state.config
    y = np.asarray(y, dtype=np.int64)
    with tape_scope():
        xs = Tensor(np.asarray(x_sd, dtype=np.float64))
        if cfg.method == "erm":
            logits, _ = state.classifier(xs)
            l_ce = cross_entropy(logits, y)
            zero = Tensor(0.0)
            l_ss = l_con = zero
            rep = {"l_sf": 0.0, "l_sc": 0.0, "lambda": 0.0, "k": xs.shape[1]}
        else:
            out = state.generator(xs, state.rng)
            mode = cfg.lam
            epoch = state.epoch
            l_ss, report = sscom_loss(
                xs, out.x_ed, cfg.s, cfg.use_sf, cfg.use_sc,
                lambda_fn=None if mode.kind == "adaptive" else
                (lambda sf, sc: lambda_variant(mode, epoch, sf, sc, cfg.s)))
            rep = {"l_sf": report.l_sf, "l_sc": report.l_sc, "lambda": report.lam, "k": out.mask.k}
            B = xs.shape[0]
            x_ed = spectral_resample(out.x_ed, state.channels)
            views = [x_ed]
            if cfg.use_id:
                x_id, _ = intermediate_mix(xs, x_ed, state.rng)
                views.append(x_id)
            views.append(xs)
            logits, emb = state.classifier(ops.concat(views, axis=0))
            n_ce = len(views) if cfg.ce_on_sd else len(views) - 1
            l_ce = cross_entropy(ops.index(logits, slice(0, B)), y)
            for v in range(1, n_ce):
                l_ce = ops.add(l_ce, cross_entropy(ops.index(logits, slice(v * B, (v + 1) * B)), y))
            l_con = ops.scale(supervised_contrastive_loss(emb, np.tile(y, len(views)), cfg.temperature),
                              cfg.contrastive_weight)
        l_total = ops.add(ops.add(l_ss, l_ce), l_con)
        row = {"step": state.step, "epoch": state.epoch, "k": int(rep["k"]),
               "l_sf": float(rep["l_sf"]), "l_sc": float(rep["l_sc"]), "lambda": float(rep["lambda"]),
               "l_ss": l_ss.item(), "l_ce": l_ce.item(), "l_con": l_con.item(), "l_total": l_total.item()}
        _check_finite(state, row)
        state.optimizer.zero_grad()
        backward(l_total)
    state.optimizer.step()
    state.optimizer.zero_grad()
    for name, p in state.optimizer.params.items():
        if not np.all(np.isfinite(p.data)):
            raise NumericError(f"parameter {name} became non-finite at step {state.step}: {row}")
    state.step += 1
    state.history.append(row)
    return row


# ---------------------------------------------------------------------------
# data and evaluation
# ---------------------------------------------------------------------------

@dataclass
class Dataset:
    train_x: np.ndarray
    train_y: np.ndarray
    held_x: np.ndarray
    held_y: np.ndarray
    num_classes: int
    target_x: Optional[np.ndarray] = None
    target_y: Optional[np.ndarray] = None


def prepare_dataset(cfg: TrainConfig, source: HyperCube, target: Optional[HyperCube] = None) -> Dataset:
    """Labeled source patches split into train/held-out (0-based labels), plus target patches."""
    if source.labels is None or not np.any(source.labels > 0):
        raise DataError(f"source cube {source.name!r} has no labeled pixels")
    patches, labels, _ = extract_patches(source, cfg.patch_size)
    labels = labels - 1
    rng = np.random.default_rng([cfg.seed, 0])
    try:
        tr, held = split_dataset(labels, cfg.train_fraction, rng)
    except ValueError as exc:
        raise DataError(f"source cube {source.name!r}: {exc}") from None
    if cfg.max_per_class:
        tr = tr[cap_per_class(labels[tr], cfg.max_per_class, rng)]
    ds = Dataset(patches[tr], labels[tr], patches[held], labels[held], source.num_classes)
    if target is not None:
        if target.labels is None:
            raise DataError(f"target cube {target.name!r} has no labels to evaluate against")
        if target.num_classes > ds.num_classes:
            raise DataError(f"target cube has class {target.num_classes} but source only {ds.num_classes}")
        tx, ty, _ = extract_patches(target, cfg.patch_size)
        ds.target_x, ds.target_y = tx, ty - 1
    return ds


def evaluate_classifier(model: AdaptiveLeNet, x: np.ndarray, y: np.ndarray) -> EvalReport:
    if len(x) == 0:
        raise DataError("nothing to evaluate: no labeled patches")
    return EvalReport.from_confusion(confusion(model.predict(x), y, model.num_classes))


def generator_realism(gen: SpectralDiversityModule, x: np.ndarray, rng: np.random.Generator) -> dict:
    """SAM/PSNR/SSIM between a source batch and one generated version of it.

    SAM uses the centre spectra; PSNR and SSIM use grayscale renderings.
    """
    with no_grad():
        out = gen(Tensor(x), rng)
    ed = out.x_ed.data
    c = x.shape[-1] // 2
    centre_sd, centre_ed = x[:, :, c, c].T[:, :, None], ed[:, :, c, c].T[:, :, None]
    sam_mean, sam_std, _ = sam_stats(centre_sd, centre_ed)
    g_sd, g_ed = x.mean(axis=1), ed.mean(axis=1)
    return {"sam_mean": sam_mean, "sam_std": sam_std, "psnr": psnr(g_sd, g_ed),
            "ssim": float(np.mean([image_ssim(a, b) for a, b in zip(g_sd, g_ed)]))}


# ---------------------------------------------------------------------------
# epoch loop
# ---------------------------------------------------------------------------

def _write_rows(path: Path, rows: list[dict], header: bool) -> None:
    with open(path, "a", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=STEP_FIELDS, lineterminator="\n")
        if header:
            w.writeheader()
        for r in rows:
            w.writerow({k: repr(v) if isinstance(v, float) else v for k, v in r.items()})


def _truncate_steps(path: Path, upto: int) -> None:
    """Keep the header and the rows with step < ``upto``."""
    if not path.exists():
        return
    lines = path.read_text().splitlines(keepends=True)
    kept = lines[:1] + [ln for ln in lines[1:] if int(ln.split(",", 1)[0]) < upto]
    path.write_text("".join(kept))


def checkpoint_path(run_dir, epoch: int) -> Path:
    return Path(run_dir) / f"checkpoint_{epoch:04d}.bin"


def latest_checkpoint(run_dir) -> Optional[Path]:
    found = sorted(Path(run_dir).glob("checkpoint_*.bin"))
    return found[-1] if found else None


@dataclass
class TrainResult:
    state: TrainState
    reports: dict


def run_training(cfg: TrainConfig, source: HyperCube, target: Optional[HyperCube] = None,
                 run_dir=None, resume: bool = False, stop_after_epoch: Optional[int] = None,
                 progress: Optional[Callable[[dict], None]] = None, echo: Optional[str] = None) -> TrainResult:
    """Train for ``cfg.epochs`` epochs and evaluate on held-out source and target patches.

    With ``run_dir`` the step log, checkpoints, echoed config and final
    evaluation rows are written there; ``resume`` continues from the newest
    checkpoint in it. ``stop_after_epoch`` ends early (to simulate an
    interruption) without the final evaluation. ``echo`` replaces the
    default config.json text (the train section alone).
    """
    ds = prepare_dataset(cfg, source, target)
    run_dir = Path(run_dir) if run_dir is not None else None
    steps_csv = run_dir / "steps.csv" if run_dir else None
    state = None
    if run_dir is not None:
        run_dir.mkdir(parents=True, exist_ok=True)
        if resume and (ck := latest_checkpoint(run_dir)) is not None:
            state = restore_state(ck, cfg)
            _truncate_steps(steps_csv, state.step)
        else:
            for stale in [steps_csv, run_dir / "eval.csv", *run_dir.glob("checkpoint_*.bin")]:
                if stale.exists():
                    stale.unlink()
        if echo is None:
            echo = json.dumps({"train": cfg.to_dict()}, indent=2, sort_keys=True) + "\n"
        (run_dir / "config.json").write_text(echo)
    if state is None:
        state = init_state(cfg, source.channels, ds.num_classes)
    if ds.train_x[0].shape[0] != state.channels:
        raise DataError(f"source has {ds.train_x.shape[1]} channels, checkpoint expects {state.channels}")

    n = len(ds.train_x)
    while state.epoch < cfg.epochs:
        order = state.rng.permutation(n)
        rows = []
        for start in range(0, n, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            if idx.size < 2:
                continue
            row = train_step(state, ds.train_x[idx], ds.train_y[idx])
            rows.append(row)
            if progress:
                progress(row)
        state.epoch += 1
        if rows:
            log.info("epoch %d/%d  steps %d  mean l_total %.4f", state.epoch, cfg.epochs, len(rows),
                     float(np.mean([r["l_total"] for r in rows])))
        if steps_csv is not None:
            _write_rows(steps_csv, rows, header=not steps_csv.exists())
            final = state.epoch == cfg.epochs
            if final or (cfg.checkpoint_every and state.epoch % cfg.checkpoint_every == 0):
                state.save(checkpoint_path(run_dir, state.epoch))
        if stop_after_epoch is not None and state.epoch >= stop_after_epoch and state.epoch < cfg.epochs:
            return TrainResult(state, {})

    reports = {"source": evaluate_classifier(state.classifier, ds.held_x, ds.held_y)}
    if state.generator is not None and len(ds.held_x) >= 2:
        extra = generator_realism(state.generator, ds.held_x[:64], np.random.default_rng([cfg.seed, 3]))
        for k, v in extra.items():
            setattr(reports["source"], k, v)
    if ds.target_x is not None:
        reports["target"] = evaluate_classifier(state.classifier, ds.target_x, ds.target_y)
    if run_dir is not None:
        eval_csv = run_dir / "eval.csv"
        if eval_csv.exists():
            eval_csv.unlink()
        for split, rep in reports.items():
            append_eval_row(eval_csv, rep, split=split, epoch=state.epoch)
    return TrainResult(state, reports)
