"""Reference temperature extractors: Lorentzian curve fitting by
Levenberg-Marquardt, and a one-vs-one linear SVC."""

from __future__ import annotations

import itertools
from pathlib import Path
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import smo
from .spectra import (
    FrequencyGrid,
    GainSpectrum,
    LorentzianParams,
    TemperatureCalibration,
    TrainingSet,
    bfs_to_temp,
)

LAMBDA0 = 1e-3
MAX_ITER = 200
REL_TOL = 1e-10


@dataclass
class LmaFitResult:
    params: LorentzianParams
    residual_norm: float
    iterations: int
    converged: bool

    @property
    def bfs(self) -> float:
        return self.params.v_B

    def temperature(self, cal: TemperatureCalibration = TemperatureCalibration()) -> float:
        return bfs_to_temp(self.params.v_B, cal)


def initial_guess(s: GainSpectrum) -> LorentzianParams:
    """Peak for gain, argmax bin for BFS, half-maximum crossings for width."""
    a = s.amplitudes
    freqs = s.grid.frequencies()
    k = int(np.argmax(a))
    peak = float(a[k])
    if not peak > 0:
        return LorentzianParams(1.0, float(freqs[k]), 50.0)
    above = np.flatnonzero(a >= peak / 2.0)
    width_mhz = (above[-1] - above[0] + 1) * s.grid.step
    return LorentzianParams(peak, float(freqs[k]), float(max(width_mhz, s.grid.step)))


def _model_and_jacobian(x, theta):
    g, v, w = theta
    h = w / 2.0
    u = (x - v) / h
    d = 1.0 + u * u
    model = g / d
    J = np.empty((x.size, 3))
    J[:, 0] = 1.0 / d
    J[:, 1] = g * 2.0 * u / (d * d * h)
    J[:, 2] = g * 2.0 * u * u / (w * d * d)
    return model, J


def _plausible(theta, span):
    # keep the centre within one grid span of the window and the width finite
    g, v, w = theta
    return g > 0 and 0 < w <= 20.0 * span and -span <= v <= 2.0 * span


def lma_fit(
    s: GainSpectrum,
    init: Optional[LorentzianParams] = None,
    max_iter: int = MAX_ITER,
    rel_tol: float = REL_TOL,
    threshold: float = np.inf,
) -> LmaFitResult:
    """Least-squares Lorentzian fit by damped Gauss-Newton.

    Damping is Marquardt-scaled, multiplied by 10 after a rejected step and
    divided by 10 after an accepted one.  Frequencies are handled in MHz
    relative to the grid start.  A degenerate problem (singular normal
    matrix, runaway damping) returns the best parameters found so far with
    ``converged=False``.
    """
    if s.amplitudes.size == 0:
        raise ValueError("empty spectrum")
    init = init or initial_guess(s)
    x = np.arange(s.grid.count) * s.grid.step
    y = s.amplitudes
    theta = np.array([init.g_B, (init.v_B - s.grid.start) * 1e3, init.dv_B], dtype=float)
    span = max(float(x[-1]), s.grid.step)

    model, J = _model_and_jacobian(x, theta)
    r = y - model
    sse = float(r @ r)
    lam = LAMBDA0
    converged = False
    it = 0
    while it < max_iter:
        it += 1
        if sse == 0.0:
            converged = True
            break
        A = J.T @ J
        grad = J.T @ r
        improved = False
        while lam < 1e16:
            try:
                step = np.linalg.solve(A + lam * np.diag(np.diag(A)), grad)
            except np.linalg.LinAlgError:
                step = None
            if step is None or not np.all(np.isfinite(step)):
                lam *= 10.0
                continue
            cand = theta + step
            if not _plausible(cand, span):
                lam *= 10.0
                continue
            m_new, J_new = _model_and_jacobian(x, cand)
            r_new = y - m_new
            sse_new = float(r_new @ r_new)
            if sse_new < sse:
                lam = max(lam / 10.0, 1e-20)
                rel = (sse - sse_new) / sse
                theta, J, r, sse = cand, J_new, r_new, sse_new
                improved = True
                if rel < rel_tol:
                    converged = True
                break
            if sse_new == sse:
                converged = True
                break
            lam *= 10.0
        if converged:
            break
        if not improved:
            # no descent direction left: optimal to working precision unless the
            # normal matrix is singular
            converged = bool(np.isfinite(np.linalg.cond(A))) and np.linalg.cond(A) < 1e14
            break

    norm = float(np.sqrt(sse))
    params = LorentzianParams(float(theta[0]), float(s.grid.start + theta[1] * 1e-3), float(theta[2]))
    return LmaFitResult(params, norm, it, converged and norm <= threshold)


def lma_temperatures(X, grid: FrequencyGrid, cal: TemperatureCalibration = TemperatureCalibration()) -> np.ndarray:
    X = np.atleast_2d(X)
    out = np.empty(X.shape[0])
    for k, row in enumerate(X):
        out[k] = lma_fit(GainSpectrum(grid, row)).temperature(cal)
    return out


# ---------------------------------------------------------------------------
# one-vs-one linear SVC
# ---------------------------------------------------------------------------


class SingleClassError(ValueError):
    pass


@dataclass
class SvcModel:
    """``weights[p] @ x + biases[p] > 0`` votes for ``classes[pairs[p][0]]``,
    otherwise for ``classes[pairs[p][1]]``.  Vote ties go to the lower label."""

    classes: np.ndarray
    pairs: list
    weights: np.ndarray
    biases: np.ndarray
    n_support: np.ndarray
    voting: str = "majority; ties to lowest label"

    @property
    def n_classifiers(self) -> int:
        return len(self.pairs)


def svc_fit(X, labels, C: float = 0.1, tol: float = 1e-3, max_iter: int = 100_000) -> SvcModel:
    X = np.atleast_2d(np.asarray(X, dtype=float))
    labels = np.asarray(labels, dtype=float).reshape(-1)
    classes = np.unique(labels)
    if len(classes) < 2:
        raise SingleClassError(f"need at least 2 classes, got {len(classes)}")
    by_class = [np.flatnonzero(labels == c) for c in classes]
    pairs = list(itertools.combinations(range(len(classes)), 2))
    W = np.empty((len(pairs), X.shape[1]))
    b = np.empty(len(pairs))
    nsv = np.empty(len(pairs), dtype=int)
    for p, (a, c) in enumerate(pairs):
        rows = np.concatenate([by_class[a], by_class[c]])
        Xp = X[rows]
        y = np.concatenate([np.ones(len(by_class[a])), -np.ones(len(by_class[c]))])
        res = smo.solve(Xp @ Xp.T, np.arange(len(y)), y, -np.ones(len(y)), C, tol=tol, max_iter=max_iter)
        coef = res.alpha * y
        W[p] = coef @ Xp
        b[p] = -res.rho
        nsv[p] = int(np.count_nonzero(res.alpha))
    return SvcModel(classes, pairs, W, b, nsv)


DESK_LABEL_STEP = 2.0


def svc_train(ts: TrainingSet, C: float = 0.1, tol: float = 1e-3, label_step: Optional[float] = DESK_LABEL_STEP) -> SvcModel:
    """One-vs-one SVC on the training set.

    With ``label_step`` only rows whose label is a multiple of it are kept
    (2 degC gives 36 classes and 630 classifiers); ``None`` uses every
    label (141 classes, 9870 classifiers).
    """
    X, y = ts.samples, ts.labels
    if label_step is not None:
        keep = np.isclose(np.mod(y + label_step / 2, label_step), label_step / 2)
        X, y = X[keep], y[keep]
    return svc_fit(X, y, C, tol)


def svc_predict(m: SvcModel, x) -> float | np.ndarray:
    """Majority vote over all pairwise classifiers; always returns a training label."""
    a = np.asarray(x.amplitudes if isinstance(x, GainSpectrum) else x, dtype=float)
    single = a.ndim == 1
    A = np.atleast_2d(a)
    dec = A @ m.weights.T + m.biases
    first = np.array([p[0] for p in m.pairs])
    second = np.array([p[1] for p in m.pairs])
    votes = np.zeros((A.shape[0], len(m.classes)), dtype=np.int64)
    wins = dec > 0
    for p in range(len(m.pairs)):
        votes[:, first[p]] += wins[:, p]
        votes[:, second[p]] += ~wins[:, p]
    out = m.classes[np.argmax(votes, axis=1)]
    return float(out[0]) if single else out


def svc_save(m: SvcModel, path) -> Path:
    path = Path(path)
    with open(path, "wb") as fh:
        np.savez(
            fh,
            classes=m.classes,
            pairs=np.asarray(m.pairs, dtype=np.int64).reshape(-1, 2),
            weights=m.weights,
            biases=m.biases,
            n_support=m.n_support,
        )
    return path


def svc_load(path) -> SvcModel:
    with np.load(path) as z:
        pairs = [tuple(int(v) for v in p) for p in z["pairs"]]
        return SvcModel(z["classes"], pairs, z["weights"], z["biases"], z["n_support"])
