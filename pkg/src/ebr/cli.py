"""Command-line interface.

Every command writes ``<output>.manifest.txt`` (plain ``key=value`` lines)
next to its main output. Exit codes: 0 success, 2 configuration error or
bad usage, 3 numerical abort.
"""
from __future__ import annotations

import argparse
import logging
import platform
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .baselines import EnKSConfig, OIConfig, dineof_interpolate, enks_smooth, oi_interpolate, pca_fit
from .data import (LorenzParams, MaskSpec, Normalizer, ObservedSample, attractor_states, gen_masks,
                   normalize_fit, simulate_lorenz, tensor_io_read, tensor_io_write)
from .evaluation import SCORE_COLUMNS, score_interpolation, write_scores_csv
from .interp import InterpolatorConfig, interpolate_array
from .models import (build_convae_mnist, build_genn_lorenz, default_corrector, load_checkpoint,
                     save_checkpoint)
from .train import Stage, TrainConfig, default_schedule, train

log = logging.getLogger("ebr")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3


class ConfigError(ValueError):
    pass


# ---------------------------------------------------------------------------
# helpers


def parse_shape(text: str) -> tuple[int, ...]:
    try:
        dims = tuple(int(t) for t in text.lower().split("x"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad shape {text!r}, expected e.g. 200x3") from None
    if not dims or any(d < 1 for d in dims):
        raise argparse.ArgumentTypeError(f"bad shape {text!r}")
    return dims


def parse_floats(text: str) -> tuple[float, ...]:
    try:
        return tuple(float(t) for t in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def parse_stages(text: str) -> list[Stage]:
    """``"5:1e-3:50,10:1e-4:50"`` -> stages of (N_I, lr, epochs)."""
    out = []
    for part in text.split(","):
        bits = part.split(":")
        if len(bits) != 3:
            raise argparse.ArgumentTypeError(f"stage {part!r} is not N_I:lr:epochs")
        try:
            out.append(Stage(int(bits[0]), float(bits[1]), int(bits[2])))
        except ValueError:
            raise argparse.ArgumentTypeError(f"stage {part!r} is not N_I:lr:epochs") from None
    return out


def write_manifest(out_path, args: argparse.Namespace, extra: dict | None = None) -> Path:
    path = Path(str(out_path) + ".manifest.txt")
    lines = [f"command={args.command}", f"argv={' '.join(sys.argv[1:])}",
             f"ebr_version={__version__}", f"numpy_version={np.__version__}",
             f"python_version={platform.python_version()}",
             f"written_at={time.strftime('%Y-%m-%dT%H:%M:%S')}"]
    for k, v in sorted(vars(args).items()):
        if k not in ("func", "command"):
            lines.append(f"arg.{k}={v}")
    for k, v in (extra or {}).items():
        lines.append(f"{k}={v}")
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


def _read(path, what: str) -> np.ndarray:
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"{what} file {p} does not exist")
    return tensor_io_read(p)


def _load_observed(data_path, mask_path) -> ObservedSample:
    y = _read(data_path, "data")
    omega = _read(mask_path, "mask")
    if omega.shape != y.shape:
        raise ConfigError(f"mask shape {omega.shape} does not match data shape {y.shape}")
    return ObservedSample(y.astype(np.float64), omega)


def _batched(s: ObservedSample, sample_ndim: int) -> tuple[ObservedSample, bool]:
    if s.y.ndim == sample_ndim:
        return ObservedSample(s.y[None], s.omega[None]), True
    return s, False


def _floats_str(a) -> str:
    return ",".join(repr(float(v)) for v in np.ravel(a))


# ---------------------------------------------------------------------------
# commands


def cmd_simulate_lorenz(args) -> int:
    if args.subsample < 1:
        raise ConfigError("--subsample must be >= 1")
    p = LorenzParams(dt_int=args.dt_int, dt_sub=args.dt_int * args.subsample, n_steps=args.steps)
    start = attractor_states(args.n_series, args.seed, p)
    series = simulate_lorenz(p, start if args.n_series > 1 else start[0])
    tensor_io_write(args.out, series)
    write_manifest(args.out, args, {"dt_sub": p.dt_sub, "shape": "x".join(map(str, series.shape))})
    return EXIT_OK


def cmd_gen_mask(args) -> int:
    spec = MaskSpec(args.kind, rate=args.rate, n_squares=args.n_squares, width=args.width,
                    seed=args.seed, joint_last_axis=args.joint)
    masks = gen_masks(args.count, args.shape, spec)
    out = masks[0] if args.count == 1 else masks
    tensor_io_write(args.out, out)
    write_manifest(args.out, args, {"missing": int(out.size - out.sum())})
    return EXIT_OK


def _model_for(kind: str, sample_shape, seed: int, dtype):
    if kind == "genn":
        if len(sample_shape) != 2 or sample_shape[1] != 3:
            raise ConfigError(f"genn expects (T, 3) samples, got {sample_shape}")
        return build_genn_lorenz(seed, n_steps=sample_shape[0], dtype=dtype)
    if tuple(sample_shape) != (28, 28, 1):
        raise ConfigError(f"convae expects 28x28x1 samples, got {sample_shape}")
    return build_convae_mnist(seed, dtype=dtype)


def cmd_train(args) -> int:
    obs = _load_observed(args.data, args.mask)
    if args.model == "convae" and obs.y.ndim == 3:
        obs = ObservedSample(obs.y[..., None], obs.omega[..., None])
    sample_ndim = 2 if args.model == "genn" else 3
    obs, _ = _batched(obs, sample_ndim)
    dtype = np.dtype(args.dtype)
    nz = Normalizer(np.zeros(1), np.ones(1)) if args.no_normalize else normalize_fit(obs)
    data = nz.apply_sample(obs)
    data = ObservedSample(data.y.astype(dtype), data.omega)
    truth = None
    if args.truth:
        truth = nz.apply(_read(args.truth, "truth").reshape(obs.shape)).astype(dtype)

    base = default_schedule("lorenz" if args.model == "genn" else "mnist")
    stages = args.stages or base.stages
    cfg = TrainConfig(stages, batch_size=args.batch_size, seed=args.seed,
                      val_fraction=args.val_fraction)
    model = _model_for(args.model, obs.shape[1:], args.seed, dtype)
    corr = None
    if args.scheme == "grad":
        corr = default_corrector("lorenz" if args.model == "genn" else "mnist", obs.shape[1:],
                                 args.seed, dtype)
    icfg = InterpolatorConfig("fixed-point" if args.scheme == "fp" else "learned-gradient",
                              cfg.stages[-1].n_iters, corr)
    report = train(model, icfg, data, cfg, truth=truth, normalizer=nz if truth is not None else None,
                   progress=args.verbose)
    save_checkpoint(args.out, model, corr,
                    extra={"scheme": icfg.scheme, "n_iters": icfg.n_iters, "train_seed": args.seed,
                           "norm_mean": _floats_str(nz.mean), "norm_std": _floats_str(nz.std)})
    report_path = args.report or Path(args.out) / "report.csv"
    report.to_csv(report_path)
    write_manifest(Path(args.out) / "run", args,
                   {"stages": ";".join(f"{s.n_iters}:{s.lr!r}:{s.epochs}" for s in cfg.stages),
                    "aborted_stages": ",".join(map(str, report.aborted_stages)),
                    "wall_time": f"{report.wall_time:.3f}", "report": report_path})
    if report.aborted_stages and not report.records:
        log.error("every stage aborted")
        return EXIT_NUMERIC
    return EXIT_OK


def cmd_interpolate(args) -> int:
    ck = Path(args.checkpoint)
    if not (ck / "manifest.txt").exists():
        raise ConfigError(f"{ck} is not a checkpoint directory")
    model, corr, meta = load_checkpoint(ck)
    obs = _load_observed(args.data, args.mask)
    if model.kind == "conv-ae" and obs.y.ndim in (2, 3) and obs.y.shape[-1] != 1:
        obs = ObservedSample(obs.y[..., None], obs.omega[..., None])
    obs, single = _batched(obs, len(model.input_shape))
    nz = Normalizer(np.array(parse_floats(meta.get("norm_mean", "0"))),
                    np.array(parse_floats(meta.get("norm_std", "1"))))
    n_iters = args.n_iters or int(meta.get("n_iters", 15))
    icfg = InterpolatorConfig(meta.get("scheme", "fixed-point"), n_iters, corr)
    norm = nz.apply_sample(obs)
    x, xp = interpolate_array(model, ObservedSample(norm.y.astype(model.dtype), norm.omega), icfg)
    out = nz.denormalize(xp if args.pre else x)
    out = out.reshape(_read(args.data, "data").shape) if single else out.reshape(obs.shape)
    tensor_io_write(args.out, out)
    write_manifest(args.out, args, {"scheme": icfg.scheme, "n_iters": n_iters})
    return EXIT_OK


def cmd_baseline(args) -> int:
    obs = _load_observed(args.data, args.mask)
    extra = {}
    if args.method == "dineof":
        if not args.train:
            raise ConfigError("dineof needs --train (gap-free training samples)")
        train_set = _read(args.train, "training")
        pca = pca_fit(train_set, args.dim)
        single = obs.shape == train_set.shape[1:]
        x, xp = dineof_interpolate(pca, obs, args.iters, return_pre=True)
        out = xp if args.pre else x
        extra = {"pca_dim": args.dim, "iters": args.iters, "single": single}
    elif args.method == "enks":
        p = LorenzParams(dt_int=args.dt_int, dt_sub=args.dt_int * args.subsample, n_steps=obs.shape[-2])
        cfg = EnKSConfig(n_members=args.members, obs_var=args.obs_var, inflation=args.inflation,
                         seed=args.seed)
        out = enks_smooth(obs, p, cfg)
        extra = {"dt_sub": p.dt_sub}
    else:
        scales = args.length_scales or tuple([2.0] + [0.0] * (obs.y.ndim - 1))
        cfg = OIConfig(scales, signal_var=args.signal_var, lam=args.lam)
        if obs.y.ndim == len(scales):
            out = oi_interpolate(obs, cfg)
        else:
            out = np.stack([oi_interpolate(obs[i], cfg) for i in range(len(obs))])
        extra = {"length_scales": _floats_str(cfg.length_scales)}
    tensor_io_write(args.out, np.asarray(out, dtype=np.float64))
    write_manifest(args.out, args, extra)
    return EXIT_OK


def cmd_evaluate(args) -> int:
    pred = _read(args.pred, "prediction").astype(np.float64)
    truth = _read(args.truth, "truth").astype(np.float64)
    mask = _read(args.mask, "mask")
    if not (pred.shape == truth.shape == mask.shape):
        raise ConfigError(f"shape mismatch: pred {pred.shape}, truth {truth.shape}, mask {mask.shape}")
    rep = score_interpolation(pred, truth, mask)
    columns = list(SCORE_COLUMNS[:4]) + (["r_score_full"] if args.full_domain else [])
    write_scores_csv([rep], args.out, columns=columns)
    write_manifest(args.out, args, {"n_observed": rep.n_observed, "n_masked": rep.n_masked,
                                    "r_score_full": rep.r_score_full})
    return EXIT_OK


def cmd_export_csv(args) -> int:
    arr = _read(args.input, "input")
    mat = arr.reshape(-1, arr.shape[-1]) if arr.ndim > 1 else arr[:, None]
    fmt = "%d" if arr.dtype == np.uint8 else "%.6e"
    header = ",".join(f"c{i}" for i in range(mat.shape[1]))
    np.savetxt(args.out, mat, fmt=fmt, delimiter=",", header=header, comments="")
    write_manifest(args.out, args, {"source_shape": "x".join(map(str, arr.shape))})
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="ebr", description="Energy-based interpolation of gappy data.")
    ap.add_argument("--version", action="version", version=f"ebr {__version__}")
    ap.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate-lorenz", help="simulate Lorenz-63 series to an EBR1 file")
    p.add_argument("--steps", type=int, default=200, help="number of stored time steps")
    p.add_argument("--dt-int", type=float, default=0.01, help="RK4 integration step")
    p.add_argument("--subsample", type=int, default=1, help="store every k-th integration step")
    p.add_argument("--n-series", type=int, default=1, help="independent series (stacked on axis 0)")
    p.add_argument("--seed", type=int, default=0, help="seed of the attractor spin-up")
    p.add_argument("--out", required=True, help="output EBR1 path")
    p.set_defaults(func=cmd_simulate_lorenz)

    p = sub.add_parser("gen-mask", help="generate an observation mask (1 = observed)")
    p.add_argument("--kind", choices=["uniform", "squares"], default="uniform", help="mask family")
    p.add_argument("--rate", type=float, default=0.75, help="missing rate for uniform masks")
    p.add_argument("--shape", type=parse_shape, required=True, help="sample shape, e.g. 200x3")
    p.add_argument("--n-squares", type=int, default=6, help="squares per image (kind=squares)")
    p.add_argument("--width", type=int, default=9, help="square side (kind=squares)")
    p.add_argument("--count", type=int, default=1, help="number of masks (stacked on axis 0)")
    p.add_argument("--joint", action="store_true", help="drop whole sites across the last axis")
    p.add_argument("--seed", type=int, default=0, help="mask seed")
    p.add_argument("--out", required=True, help="output EBR1 path (uint8)")
    p.set_defaults(func=cmd_gen_mask)

    p = sub.add_parser("train", help="train an energy model through the unrolled interpolator")
    p.add_argument("--data", required=True, help="observations (hidden entries are never read)")
    p.add_argument("--mask", required=True, help="observation mask")
    p.add_argument("--truth", help="optional ground truth for validation scores")
    p.add_argument("--model", choices=["genn", "convae"], default="genn", help="energy model")
    p.add_argument("--scheme", choices=["fp", "grad"], default="fp", help="interpolator")
    p.add_argument("--stages", type=parse_stages, help="N_I:lr:epochs list, e.g. 5:1e-3:50,10:1e-4:50")
    p.add_argument("--batch-size", type=int, default=32, help="minibatch size")
    p.add_argument("--val-fraction", type=float, default=0.1, help="validation holdout fraction")
    p.add_argument("--dtype", choices=["float64", "float32"], default="float64", help="model precision")
    p.add_argument("--no-normalize", action="store_true", help="skip per-channel standardization")
    p.add_argument("--seed", type=int, default=0, help="initialization and shuffling seed")
    p.add_argument("--report", help="TrainReport CSV path (default <out>/report.csv)")
    p.add_argument("--out", required=True, help="checkpoint directory")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("interpolate", help="fill gaps with a trained checkpoint")
    p.add_argument("--checkpoint", required=True, help="checkpoint directory")
    p.add_argument("--data", required=True, help="observations")
    p.add_argument("--mask", required=True, help="observation mask")
    p.add_argument("--n-iters", type=int, help="override the trained iteration count")
    p.add_argument("--pre", action="store_true", help="write the pre-projection iterate")
    p.add_argument("--out", required=True, help="output EBR1 path")
    p.set_defaults(func=cmd_interpolate)

    p = sub.add_parser("baseline", help="run a reference interpolator")
    p.add_argument("method", choices=["dineof", "enks", "oi"], help="baseline method")
    p.add_argument("--data", required=True, help="observations")
    p.add_argument("--mask", required=True, help="observation mask")
    p.add_argument("--out", required=True, help="output EBR1 path")
    p.add_argument("--train", help="dineof: gap-free training samples")
    p.add_argument("--dim", type=int, default=20, help="dineof: retained PCA dimension")
    p.add_argument("--iters", type=int, default=15, help="dineof: fixed-point iterations")
    p.add_argument("--pre", action="store_true", help="dineof: write the pre-projection iterate")
    p.add_argument("--dt-int", type=float, default=0.01, help="enks: RK4 integration step")
    p.add_argument("--subsample", type=int, default=1, help="enks: integration steps per sample")
    p.add_argument("--members", type=int, default=200, help="enks: ensemble size")
    p.add_argument("--obs-var", type=float, default=0.1, help="enks: observation noise variance")
    p.add_argument("--inflation", type=float, default=1.02, help="enks: multiplicative inflation")
    p.add_argument("--seed", type=int, default=0, help="enks: seed")
    p.add_argument("--length-scales", type=parse_floats, help="oi: one scale per axis (0 = uncorrelated)")
    p.add_argument("--signal-var", type=float, default=1.0, help="oi: prior signal variance")
    p.add_argument("--lam", type=float, default=100.0, help="oi: observation weight")
    p.set_defaults(func=cmd_baseline)

    p = sub.add_parser("evaluate", help="score a prediction against the truth")
    p.add_argument("--pred", required=True, help="prediction EBR1 file")
    p.add_argument("--truth", required=True, help="ground-truth EBR1 file")
    p.add_argument("--mask", required=True, help="observation mask EBR1 file")
    p.add_argument("--full-domain", action="store_true", help="add the whole-domain r_score_full column")
    p.add_argument("--out", required=True, help="scores CSV path")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("export-csv", help="write an EBR1 tensor as CSV rows")
    p.add_argument("--in", dest="input", required=True, help="EBR1 file")
    p.add_argument("--out", required=True, help="CSV path")
    p.set_defaults(func=cmd_export_csv)
    return ap


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse: usage errors exit 2, --help exits 0
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except FloatingPointError as exc:  # divergence, non-finite values, ensemble collapse
        log.error("numerical abort: %s", exc)
        return EXIT_NUMERIC
    except (ValueError, TypeError, OSError) as exc:
        log.error("configuration error: %s", exc)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
