"""End-to-end experiment pipelines for the Lorenz-63 and MNIST benchmarks.

Each pipeline simulates or loads data, draws masks, trains the learned
interpolators and runs the reference methods on a common test set. Scores
are computed in the original data units.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .baselines import EnKSConfig, dineof_interpolate, enks_smooth, pca_fit
from .data import (LorenzParams, MaskSpec, ObservedSample, gen_masks, load_mnist, lorenz_dataset,
                   normalize_fit)
from .evaluation import (ScoreReport, c_score, score_autoencoding, score_interpolation,
                         write_scores_csv)
from .interp import InterpolatorConfig, interpolate_array
from .models import build_convae_mnist, build_genn_lorenz, psi_apply
from .train import Stage, TrainConfig, TrainReport, default_schedule, train

log = logging.getLogger(__name__)

__all__ = ["LorenzConfig", "LorenzResult", "run_lorenz", "MnistConfig", "MnistResult", "run_mnist",
           "data_seeds", "write_table"]


def data_seeds(seed: int) -> dict[str, int]:
    """Independent integer seeds for the data pieces of one experiment."""
    ss = np.random.SeedSequence([seed, 0xDA7A])
    keys = ("train_series", "test_series", "train_mask", "test_mask", "model")
    return dict(zip(keys, (int(v) for v in ss.generate_state(len(keys)))))


@dataclass
class LorenzConfig:
    dt_sub: float = 0.02
    n_train: int = 240
    n_test: int = 100
    n_steps: int = 200
    missing_rate: float = 0.75
    seed: int = 0
    n_iters: int = 15
    pca_dim: int = 20
    dineof_iters: int = 15
    schedule: TrainConfig | None = None
    enks: EnKSConfig | None = field(default_factory=EnKSConfig)
    n_test_enks: int | None = None  # EnKS on the first n test series (None = all)


@dataclass
class LorenzResult:
    config: LorenzConfig
    scores: dict[str, ScoreReport]
    report: TrainReport
    model: object = None
    predictions: dict[str, np.ndarray] = field(default_factory=dict)

    def table(self) -> list[dict]:
        return [{"method": k, **v.row()} for k, v in self.scores.items()]


def run_lorenz(cfg: LorenzConfig, checkpoint_dir=None, progress: bool = False) -> LorenzResult:
    """Train FP(N_I)-GE-NN and compare it with DINEOF and EnKS at one sampling step."""
    seeds = data_seeds(cfg.seed)
    params = LorenzParams(dt_sub=cfg.dt_sub, n_steps=cfg.n_steps)
    shape = (cfg.n_steps, 3)
    tr_truth = lorenz_dataset(cfg.n_train, params, seeds["train_series"])
    te_truth = lorenz_dataset(cfg.n_test, params, seeds["test_series"])
    tr_mask = gen_masks(cfg.n_train, shape, MaskSpec(rate=cfg.missing_rate, seed=seeds["train_mask"]))
    te_mask = gen_masks(cfg.n_test, shape, MaskSpec(rate=cfg.missing_rate, seed=seeds["test_mask"]))
    train_obs = ObservedSample(tr_truth, tr_mask)
    test_obs = ObservedSample(te_truth, te_mask)
    nz = normalize_fit(train_obs)

    schedule = cfg.schedule or default_schedule("lorenz")
    model = build_genn_lorenz(seeds["model"] % 2**31, n_steps=cfg.n_steps)
    icfg = InterpolatorConfig("fixed-point", cfg.n_iters)
    report = train(model, icfg, nz.apply_sample(train_obs), schedule, truth=nz.apply(tr_truth),
                   normalizer=nz, checkpoint_dir=checkpoint_dir, progress=progress)

    preds, scores = {}, {}
    _, xp = interpolate_array(model, nz.apply_sample(test_obs), icfg, n_iters=cfg.n_iters)
    preds["fp-genn"] = nz.denormalize(xp)

    # DINEOF learns its PCA from the gap-free training series
    pca = pca_fit(tr_truth, cfg.pca_dim)
    _, preds["dineof"] = dineof_interpolate(pca, test_obs, cfg.dineof_iters, return_pre=True)

    if cfg.enks is not None:
        n = cfg.n_test if cfg.n_test_enks is None else min(cfg.n_test_enks, cfg.n_test)
        preds["enks"] = enks_smooth(test_obs[:n], params, cfg.enks)

    for name, pred in preds.items():
        n = len(pred)
        scores[name] = score_interpolation(pred, te_truth[:n], te_mask[:n])
        if progress:
            log.info("%s: mse_observed=%.3e mse_masked=%.3e", name, scores[name].mse_observed,
                     scores[name].mse_masked)
    return LorenzResult(cfg, scores, report, model, preds)


# ---------------------------------------------------------------------------
# MNIST


@dataclass
class MnistConfig:
    n_train: int | None = 5000
    n_test: int | None = 1000
    n_squares: int = 6
    width: int = 9
    n_iters: int = 15
    seed: int = 0
    epochs_per_stage: int = 10
    dtype: str = "float32"
    compute_c_score: bool = False
    data_dir: str | None = None


@dataclass
class MnistResult:
    config: MnistConfig
    scores: dict[str, ScoreReport]
    reports: dict[str, TrainReport]
    models: dict = field(default_factory=dict)

    def table(self) -> list[dict]:
        cols = ("r_score", "i_score", "ae_score", "c_score", "r_score_full")
        return [{"method": k, **v.row(cols)} for k, v in self.scores.items()]


def _single_block(epochs: int) -> TrainConfig:
    return TrainConfig([Stage(1, 1e-3, epochs), Stage(1, 1e-4, epochs), Stage(1, 1e-5, epochs)])


def run_mnist(cfg: MnistConfig, progress: bool = False) -> MnistResult:
    """FP(N_I)-ConvAE against Zero-ConvAE and a ConvAE trained on gap-free images.

    Zero-ConvAE applies the auto-encoder once to the zero-filled image with the
    loss on observed pixels. Every model is scored with the interpolator it was
    trained with; AE-scores use gap-free test images.
    """
    seeds = data_seeds(cfg.seed)
    dtype = np.dtype(cfg.dtype)
    xtr, ytr, xte, yte = load_mnist(cfg.data_dir, cfg.n_train, cfg.n_test)
    xtr = xtr.astype(np.float64) / 255.0
    xte = xte.astype(np.float64) / 255.0
    spec_tr = MaskSpec("squares", n_squares=cfg.n_squares, width=cfg.width, seed=seeds["train_mask"])
    spec_te = MaskSpec("squares", n_squares=cfg.n_squares, width=cfg.width, seed=seeds["test_mask"])
    train_obs = ObservedSample(xtr, gen_masks(len(xtr), xtr.shape[1:], spec_tr))
    test_obs = ObservedSample(xte, gen_masks(len(xte), xte.shape[1:], spec_te))
    full_tr = ObservedSample(xtr, np.ones(xtr.shape, dtype=np.uint8))
    nz = normalize_fit(full_tr)

    e = cfg.epochs_per_stage
    fp_sched = default_schedule("mnist")
    fp_sched = TrainConfig([Stage(s.n_iters, s.lr, e) for s in fp_sched.stages],
                           batch_size=fp_sched.batch_size, seed=cfg.seed)
    single = _single_block(e)
    single = TrainConfig(single.stages, seed=cfg.seed)
    runs = {
        "fp-convae": (train_obs, fp_sched, cfg.n_iters),
        "zero-convae": (train_obs, single, 1),
        "convae-gapfree": (full_tr, single, 1),
    }
    scores, reports, models = {}, {}, {}
    model_seed = seeds["model"] % 2**31
    for name, (data, sched, n_iters) in runs.items():
        if progress:
            log.info("training %s", name)
        model = build_convae_mnist(model_seed, dtype=dtype)
        icfg = InterpolatorConfig("fixed-point", n_iters)
        reports[name] = train(model, icfg, _cast(nz.apply_sample(data), dtype), sched,
                              truth=nz.apply(xtr).astype(dtype), normalizer=nz, progress=progress)
        _, xp = interpolate_array(model, _cast(nz.apply_sample(test_obs), dtype), icfg)
        rep = score_interpolation(nz.denormalize(xp), xte, test_obs.omega)
        rep.ae_score = score_autoencoding(lambda b: nz.denormalize(_psi(model, nz.apply(b), dtype)), xte)
        if cfg.compute_c_score:
            rep.c_score = c_score(model, _cast_array(nz.apply(xtr), dtype), ytr,
                                  _cast_array(nz.apply(xte), dtype), yte, seed=cfg.seed)
        scores[name], models[name] = rep, model
        if progress:
            log.info("%s: I=%.2f R=%.2f AE=%.2f", name, rep.i_score, rep.r_score, rep.ae_score)
    return MnistResult(cfg, scores, reports, models)


def _cast_array(x, dtype):
    return np.asarray(x).astype(dtype)


def _cast(s: ObservedSample, dtype) -> ObservedSample:
    return ObservedSample(s.y.astype(dtype), s.omega)


def _psi(model, x, dtype, batch_size: int = 100):
    return np.concatenate([psi_apply(model, x[i:i + batch_size].astype(dtype))
                           for i in range(0, len(x), batch_size)])


def write_table(rows: list[dict], path) -> str:
    """Method-labelled score table as CSV (``%.6e`` numbers)."""
    return write_scores_csv(rows, Path(path) if path else None)
