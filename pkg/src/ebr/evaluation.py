"""Interpolation scores: explained variance on missing / observed sites,
auto-encoding score on gap-free data, and latent-space classification."""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .core import ops
from .core.optim import AdamState, adam_step, init_params
from .core.tensor import Tensor, no_grad, rng

__all__ = ["explained_variance", "ScoreReport", "score_interpolation", "score_autoencoding",
           "c_score", "MLPClassifier", "write_scores_csv", "read_scores_csv", "SCORE_COLUMNS"]

SCORE_COLUMNS = ("i_score", "r_score", "mse_observed", "mse_masked", "r_score_full")


def explained_variance(pred, truth, domain=None) -> float:
    """``100 * (1 - MSE / Var)`` over the sites where ``domain`` is true.

    The variance is taken about the mean of ``truth`` on the domain.
    """
    pred = np.asarray(pred, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    if pred.shape != truth.shape:
        raise ValueError(f"pred shape {pred.shape} != truth shape {truth.shape}")
    if domain is None:
        sel = np.ones(truth.shape, dtype=bool)
    else:
        sel = np.asarray(domain).astype(bool)
        if sel.shape != truth.shape:
            raise ValueError(f"domain shape {sel.shape} != truth shape {truth.shape}")
    n = int(sel.sum())
    if n < 2:
        raise ValueError(f"domain has {n} sites, need at least 2")
    t = truth[sel]
    var = float(np.mean((t - t.mean()) ** 2))
    if var == 0.0:
        raise ValueError("truth has zero variance on the domain")
    mse = float(np.mean((pred[sel] - t) ** 2))
    return 100.0 * (1.0 - mse / var)


@dataclass
class ScoreReport:
    """Percent scores (``None`` when the domain is empty) and raw MSEs."""

    i_score: float | None = None
    r_score: float | None = None
    mse_observed: float | None = None
    mse_masked: float | None = None
    r_score_full: float | None = None
    ae_score: float | None = None
    c_score: float | None = None
    n_observed: int = 0
    n_masked: int = 0

    def row(self, columns=SCORE_COLUMNS) -> dict:
        return {c: getattr(self, c) for c in columns}


def _ev_or_none(pred, truth, domain):
    try:
        return explained_variance(pred, truth, domain)
    except ValueError:
        return None


def score_interpolation(pred, truth, omega) -> ScoreReport:
    """I-score on ``omega == 0``, R-score on ``omega == 1``, plus a whole-domain R-score."""
    pred = np.asarray(pred, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    obs = np.asarray(omega) > 0
    if pred.shape != truth.shape or obs.shape != truth.shape:
        raise ValueError(f"shape mismatch: pred {pred.shape}, truth {truth.shape}, mask {obs.shape}")
    err = (pred - truth) ** 2
    n_obs, n_mis = int(obs.sum()), int((~obs).sum())
    return ScoreReport(
        i_score=_ev_or_none(pred, truth, ~obs),
        r_score=_ev_or_none(pred, truth, obs),
        mse_observed=float(err[obs].mean()) if n_obs else None,
        mse_masked=float(err[~obs].mean()) if n_mis else None,
        r_score_full=_ev_or_none(pred, truth, None),
        n_observed=n_obs,
        n_masked=n_mis,
    )


def score_autoencoding(model, gap_free, batch_size: int = 64) -> float:
    """Per-sample explained variance of ``psi(x)`` against ``x``, averaged.

    ``model`` is an energy model or any callable returning ``psi(x)`` arrays
    for a batch.
    """
    x = np.asarray(gap_free)
    if hasattr(model, "psi"):
        out = []
        with no_grad():
            for i in range(0, len(x), batch_size):
                out.append(model.psi(x[i:i + batch_size].astype(model.dtype)).data)
        pred = np.concatenate(out)
    else:
        pred = np.asarray(model(x))
    scores = [explained_variance(p, t) for p, t in zip(pred, x)]
    return float(np.mean(scores))


# ---------------------------------------------------------------------------
# latent-space classifier


class MLPClassifier:
    """Dense 64-32 ReLU network with a softmax output, trained with Adam."""

    def __init__(self, n_in: int, n_classes: int, hidden=(64, 32), seed: int = 0):
        sizes = (n_in, *hidden, n_classes)
        self.params = []
        for k, (a, b) in enumerate(zip(sizes, sizes[1:])):
            self.params.append(Tensor(init_params((a, b), a, seed, 0xC1, k), requires_grad=True))
            self.params.append(Tensor(np.zeros(b), requires_grad=True))

    def logits(self, x):
        h = x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float64))
        n_layers = len(self.params) // 2
        for k in range(n_layers):
            h = ops.dense(h, self.params[2 * k], self.params[2 * k + 1])
            if k < n_layers - 1:
                h = ops.relu(h)
        return h

    def fit(self, x, labels, epochs: int = 30, lr: float = 1e-3, batch_size: int = 32,
            seed: int = 0):
        x = np.asarray(x, dtype=np.float64)
        labels = np.asarray(labels, dtype=np.int64)
        state = AdamState(lr=lr)
        for epoch in range(epochs):
            order = rng(seed, 0xC2, epoch).permutation(len(x))
            for b in range(0, len(x), batch_size):
                idx = order[b:b + batch_size]
                loss = ops.softmax_xent(self.logits(x[idx]), labels[idx])
                for p in self.params:
                    p.zero_grad()
                loss.backward()
                adam_step([p.data for p in self.params], [p.grad for p in self.params], state)
        return self

    def predict(self, x) -> np.ndarray:
        with no_grad():
            return np.argmax(self.logits(x).data, axis=1)


def _standardize(train, test):
    mu, sd = train.mean(axis=0), train.std(axis=0)
    sd = np.where(sd > 0, sd, 1.0)
    return (train - mu) / sd, (test - mu) / sd


def c_score(encoder, train_x, train_labels, test_x, test_labels, seed: int = 0,
            epochs: int = 30, batch_size: int = 32) -> float:
    """Test accuracy (percent) of an MLP trained on encoder codes.

    ``encoder`` is a conv-ae energy model, or a callable mapping inputs to
    codes (pass ``lambda z: z`` to classify precomputed features).
    """
    if hasattr(encoder, "kind"):
        if encoder.kind != "conv-ae":
            raise TypeError(f"{encoder.kind} models have no code space")
        model = encoder

        def encode(x):
            out = []
            with no_grad():
                for i in range(0, len(x), 256):
                    out.append(model.encode(np.asarray(x[i:i + 256], dtype=model.dtype)).data)
            return np.concatenate(out)
    else:
        encode = encoder
    ztr = np.asarray(encode(train_x), dtype=np.float64).reshape(len(train_x), -1)
    zte = np.asarray(encode(test_x), dtype=np.float64).reshape(len(test_x), -1)
    ztr, zte = _standardize(ztr, zte)
    n_classes = int(max(np.max(train_labels), np.max(test_labels))) + 1
    clf = MLPClassifier(ztr.shape[1], n_classes, seed=seed)
    clf.fit(ztr, train_labels, epochs=epochs, batch_size=batch_size, seed=seed)
    return 100.0 * float(np.mean(clf.predict(zte) == np.asarray(test_labels)))


# ---------------------------------------------------------------------------
# CSV


def _fmt(v) -> str:
    if v is None:
        return "nan"
    if isinstance(v, (int, np.integer)) and not isinstance(v, bool):
        return str(int(v))
    return f"{float(v):.6e}"


def write_scores_csv(rows, path=None, columns=None) -> str:
    """Write dict rows (or ScoreReports) with ``%.6e`` numbers; absent scores are ``nan``."""
    rows = [r.row() if isinstance(r, ScoreReport) else dict(r) for r in rows]
    if columns is None:
        columns = list(rows[0]) if rows else list(SCORE_COLUMNS)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([v if isinstance(v, str) else _fmt(v) for v in (r.get(c) for c in columns)])
    text = buf.getvalue()
    if path is not None:
        Path(path).write_text(text, encoding="utf-8")
    return text


def read_scores_csv(path_or_text) -> list[dict]:
    text = path_or_text
    if isinstance(path_or_text, Path) or (isinstance(path_or_text, str) and "\n" not in path_or_text):
        text = Path(path_or_text).read_text(encoding="utf-8")
    out = []
    for r in csv.DictReader(io.StringIO(text)):
        row = {}
        for k, v in r.items():
            try:
                row[k] = float(v)
            except ValueError:
                row[k] = v
        out.append(row)
    return out
