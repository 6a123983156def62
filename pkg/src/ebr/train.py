"""End-to-end training of an energy model (and corrector) through the
unrolled interpolator, using observed data only."""
from __future__ import annotations

import csv
import io
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .core import ops
from .core.optim import AdamState, adam_step
from .core.tensor import NonFiniteError, rng
from .data.sample import ObservedSample
from .evaluation import explained_variance
from .interp import DivergenceError, InterpolatorConfig, interpolate, interpolate_array
from .models import EnergyModel, save_checkpoint

__all__ = ["Stage", "TrainConfig", "TrainReport", "EpochRecord", "loss_observed", "train",
           "default_schedule"]

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class Stage:
    n_iters: int
    lr: float
    epochs: int


@dataclass
class TrainConfig:
    """Progressive schedule: ``n_iters`` non-decreasing, ``lr`` non-increasing."""

    stages: list
    batch_size: int = 32
    seed: int = 0
    loss_domain: str = "observed"
    val_fraction: float = 0.1
    reinit_corrector: bool = False

    def __post_init__(self):
        self.stages = [s if isinstance(s, Stage) else Stage(*s) for s in self.stages]
        if not self.stages:
            raise ValueError("schedule needs at least one stage")
        for s in self.stages:
            if s.n_iters < 1 or s.epochs < 0 or s.lr <= 0:
                raise ValueError(f"invalid stage {s}")
        for a, b in zip(self.stages, self.stages[1:]):
            if b.n_iters < a.n_iters:
                raise ValueError(f"n_iters must not decrease across stages ({a.n_iters} -> {b.n_iters})")
            if b.lr > a.lr:
                raise ValueError(f"learning rate must not increase across stages ({a.lr} -> {b.lr})")
        if self.loss_domain not in ("observed", "truth"):
            raise ValueError(f"unknown loss domain {self.loss_domain!r}")
        if self.batch_size < 1 or not 0.0 <= self.val_fraction < 1.0:
            raise ValueError("invalid batch size or validation fraction")


def default_schedule(kind: str) -> TrainConfig:
    if kind == "lorenz":
        return TrainConfig([Stage(5, 1e-3, 50), Stage(10, 1e-4, 50), Stage(15, 1e-5, 50),
                            Stage(15, 1e-6, 50)])
    if kind == "mnist":
        return TrainConfig([Stage(5, 1e-3, 10), Stage(10, 1e-4, 10), Stage(15, 1e-5, 10)])
    raise ValueError(f"no default schedule for {kind!r}")


@dataclass
class EpochRecord:
    epoch: int
    stage: int
    loss: float
    val_i: float = float("nan")
    val_r: float = float("nan")


@dataclass
class TrainReport:
    records: list = field(default_factory=list)
    stage_scores: list = field(default_factory=list)
    aborted_stages: list = field(default_factory=list)
    wall_time: float = 0.0
    checkpoint: Path | None = None

    @property
    def losses(self) -> np.ndarray:
        return np.array([r.loss for r in self.records])

    def to_csv(self, path=None) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["epoch", "stage", "loss", "val_I", "val_R"])
        for r in self.records:
            w.writerow([r.epoch, r.stage, f"{r.loss:.16e}", f"{r.val_i:.16e}", f"{r.val_r:.16e}"])
        text = buf.getvalue()
        if path is not None:
            Path(path).write_text(text, encoding="utf-8")
        return text


def loss_observed(x_hat, sample: ObservedSample):
    """Mean squared error of ``x_hat`` against ``y`` over observed sites."""
    if not np.any(sample.omega):
        raise ValueError("no observed sites")
    return ops.mse_masked(x_hat, sample.zero_filled(np.float64), sample.omega)


def _split(n: int, frac: float, seed: int):
    order = rng(seed, 0x5A1).permutation(n)
    n_val = int(round(frac * n)) if n > 1 else 0
    return np.sort(order[n_val:]), np.sort(order[:n_val])


def _snapshot(nets):
    return [{k: p.data.copy() for k, p in net.params.items()} for net in nets]


def _restore(nets, snap):
    for net, s in zip(nets, snap):
        for k, p in net.params.items():
            p.data[...] = s[k]


def _val_scores(model, icfg, val: ObservedSample, truth, n_iters, normalizer):
    if len(val) == 0:
        return float("nan"), float("nan")
    try:
        _, xp = interpolate_array(model, val, icfg, n_iters)
    except DivergenceError:
        return float("nan"), float("nan")
    y = val.zero_filled(np.float64)
    if normalizer is not None:
        xp, y = normalizer.denormalize(xp), normalizer.denormalize(y)
    obs = val.omega > 0
    try:
        vr = explained_variance(xp, y, obs)
    except ValueError:
        vr = float("nan")
    vi = float("nan")
    if truth is not None and np.any(~obs):
        t = normalizer.denormalize(truth) if normalizer is not None else truth
        try:
            vi = explained_variance(xp, t, ~obs)
        except ValueError:
            pass
    return vi, vr


def train(model: EnergyModel, interp_config: InterpolatorConfig, data: ObservedSample,
          cfg: TrainConfig, truth: np.ndarray | None = None, normalizer=None,
          checkpoint_dir=None, progress: bool = False) -> TrainReport:
    """Fit ``model`` (and the corrector, for the gradient scheme).

    ``data`` is a batched, already-normalized :class:`ObservedSample`. Hidden
    entries of ``y`` are discarded before training starts. ``truth`` (same
    normalized units) is only read for validation I-scores and, with
    ``loss_domain="truth"``, as a diagnostic target.
    """
    if len(data) == 0:
        raise ValueError("empty training set")
    if cfg.loss_domain == "truth" and truth is None:
        raise ValueError("loss_domain='truth' needs ground truth")
    t0 = time.perf_counter()
    data = ObservedSample(data.zero_filled(model.dtype), data.omega)
    tr_idx, val_idx = _split(len(data), cfg.val_fraction, cfg.seed)
    train_set, val_set = data[tr_idx], data[val_idx]
    tr_truth = None if truth is None else np.asarray(truth)[tr_idx]
    val_truth = None if truth is None else np.asarray(truth)[val_idx]

    corrector = interp_config.corrector if interp_config.scheme == "learned-gradient" else None
    nets = [model] + ([corrector] if corrector is not None and corrector.params else [])
    params = [p for net in nets for p in net.parameters()]
    corr_init = _snapshot([corrector]) if corrector is not None else None
    state = AdamState()
    report = TrainReport()
    epoch = 0
    last_good = _snapshot(nets)

    for si, stage in enumerate(cfg.stages):
        if si > 0 and cfg.reinit_corrector and corrector is not None and corr_init is not None:
            _restore([corrector], corr_init)
        state.lr = stage.lr
        aborted = False
        for e in range(stage.epochs):
            order = rng(cfg.seed, 0xE9, epoch).permutation(len(train_set))
            batch_losses = []
            try:
                for b in range(0, len(order), cfg.batch_size):
                    idx = order[b:b + cfg.batch_size]
                    batch = train_set[idx]
                    _, xp = interpolate(model, batch, interp_config, stage.n_iters, return_pre=True)
                    if cfg.loss_domain == "observed":
                        loss = loss_observed(xp, batch)
                    else:
                        loss = ops.mse_masked(xp, tr_truth[idx], np.ones(batch.shape))
                    value = float(loss.data[0])
                    if not np.isfinite(value):
                        raise NonFiniteError("non-finite loss")
                    for p in params:
                        p.zero_grad()
                    loss.backward()
                    adam_step([p.data for p in params],
                              [np.zeros_like(p.data) if p.grad is None else p.grad for p in params],
                              state)
                    for net in nets:
                        net.project_constraints()
                    batch_losses.append(value)
            except (NonFiniteError, DivergenceError) as exc:
                log.warning("stage %d aborted at epoch %d: %s", si, epoch, exc)
                _restore(nets, last_good)
                report.aborted_stages.append(si)
                aborted = True
                break
            vi, vr = _val_scores(model, interp_config, val_set, val_truth, stage.n_iters, normalizer)
            rec = EpochRecord(epoch, si, float(np.mean(batch_losses)), vi, vr)
            report.records.append(rec)
            last_good = _snapshot(nets)
            if progress:
                log.info("epoch %d stage %d N_I=%d loss=%.4e val_I=%.2f val_R=%.2f",
                         epoch, si, stage.n_iters, rec.loss, vi, vr)
            epoch += 1
        stage_recs = [r for r in report.records if r.stage == si]
        report.stage_scores.append({
            "stage": si, "n_iters": stage.n_iters, "lr": stage.lr, "aborted": aborted,
            "val_I": stage_recs[-1].val_i if stage_recs else float("nan"),
            "val_R": stage_recs[-1].val_r if stage_recs else float("nan"),
        })
    report.wall_time = time.perf_counter() - t0
    if checkpoint_dir is not None:
        report.checkpoint = save_checkpoint(
            checkpoint_dir, model, corrector,
            extra={"scheme": interp_config.scheme, "n_iters": cfg.stages[-1].n_iters,
                   "train_seed": cfg.seed})
    return report
