"""Linear epsilon-SVR: training through the dual, the decision function and
model persistence.

The dual is solved with :mod:`botdasvr.smo` over 2l variables
``(alpha, alpha*)``; the model keeps only rows with a nonzero coefficient
``beta = alpha - alpha*``.

Binary model layout (little-endian, version 1)::

    offset  size          field
    0       4             magic  b"BSVR"
    4       2   uint16    format version
    6       2   uint16    flags (bit 0: collapsed weights present,
                          bit 1: second-order working-set selection)
    8       4   uint32    n_sv
    12      4   uint32    n_feat
    16      8   float64   grid start (GHz)
    24      8   float64   grid step (MHz); start and step are NaN for a
                          model trained on raw features
    32      8   float64   C
    40      8   float64   epsilon (degC)
    48      8   float64   solver tolerance
    56      8   uint64    max iterations
    64      8   float64   bias (degC)
    72      8*n_sv        betas
    ...     8*n_sv*n_feat support vectors, row-major
    ...     8*n_feat      collapsed weights (only if flag bit 0)

The JSON form carries the same fields under the keys written by
:func:`to_dict`.
"""

from __future__ import annotations

import json
import struct
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import smo
from .spectra import FrequencyGrid, GainSpectrum, TrainingSet

FORMAT_VERSION = 1
MAGIC = b"BSVR"
_HEADER = struct.Struct("<4sHHII5dQd")


class ConvergenceError(RuntimeError):
    """The solver hit ``max_iter``; carries the best-so-far model."""

    def __init__(self, message, model=None, violation=float("nan")):
        super().__init__(message)
        self.model = model
        self.violation = violation


class ModelFormatError(ValueError):
    def __init__(self, message, offset: int):
        super().__init__(f"{message} (at byte offset {offset})")
        self.offset = offset


class UnsupportedVersionError(ValueError):
    pass


class DimensionError(ValueError):
    pass


@dataclass(frozen=True)
class SvrHyperparams:
    C: float = 0.1
    epsilon: float = 1.5
    tol: float = 1e-3
    max_iter: int = 1_000_000
    selection: str = "max-violating"

    def __post_init__(self):
        if not self.C > 0:
            raise ValueError(f"C must be > 0, got {self.C}")
        if not self.epsilon >= 0:
            raise ValueError(f"epsilon must be >= 0, got {self.epsilon}")
        if not self.tol > 0:
            raise ValueError(f"tolerance must be > 0, got {self.tol}")
        if self.max_iter < 1:
            raise ValueError(f"max_iter must be >= 1, got {self.max_iter}")
        if self.selection not in smo.SELECTIONS:
            raise ValueError(f"unknown selection {self.selection!r}")


@dataclass
class SvrModel:
    support_vectors: np.ndarray
    betas: np.ndarray
    bias: float
    grid: Optional[FrequencyGrid] = None
    hyperparams: SvrHyperparams = field(default_factory=SvrHyperparams)
    collapsed_weights: Optional[np.ndarray] = None

    def __post_init__(self):
        sv = np.asarray(self.support_vectors, dtype=float)
        width = self.grid.count if self.grid is not None else sv.shape[-1]
        self.support_vectors = sv.reshape(-1, width)
        self.betas = np.asarray(self.betas, dtype=float).reshape(-1)
        self.bias = float(self.bias)
        if self.support_vectors.shape[0] != self.betas.shape[0]:
            raise DimensionError(
                f"{self.support_vectors.shape[0]} support vectors but {self.betas.shape[0]} betas"
            )
        if self.collapsed_weights is not None:
            self.collapsed_weights = np.asarray(self.collapsed_weights, dtype=float).reshape(-1)

    @property
    def n_sv(self) -> int:
        return self.betas.shape[0]

    @property
    def n_feat(self) -> int:
        return self.support_vectors.shape[1]

    def collapse(self) -> np.ndarray:
        """w = sum_i beta_i SV_i."""
        return self.betas @ self.support_vectors

    def with_weights(self) -> "SvrModel":
        return SvrModel(self.support_vectors, self.betas, self.bias, self.grid, self.hyperparams, self.collapse())


@dataclass
class TrainedModelReport:
    num_support_vectors: int
    duration_s: float
    dual_objective: float
    iterations: int
    violation: float


def dual_objective(betas: np.ndarray, X: np.ndarray, y: np.ndarray, epsilon: float) -> float:
    """Epsilon-SVR dual objective in minimization form, written in beta:

        1/2 beta^T K beta - y^T beta + epsilon * ||beta||_1
    """
    Xb = betas @ X
    return 0.5 * float(Xb @ Xb) - float(y @ betas) + epsilon * float(np.abs(betas).sum())


def train(ts: TrainingSet, hp: SvrHyperparams = SvrHyperparams()):
    """Fit a linear epsilon-SVR on a spectra training set; returns ``(model, report)``.

    Raises :class:`ConvergenceError` if the KKT gap is still above
    ``hp.tol`` after ``hp.max_iter`` pair updates.
    """
    return fit(ts.samples, ts.labels, hp, grid=ts.grid)


def fit(X, z, hp: SvrHyperparams = SvrHyperparams(), grid: Optional[FrequencyGrid] = None):
    """Same as :func:`train` on raw arrays (``X`` is l x n, ``z`` has length l)."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    z = np.asarray(z, dtype=float).reshape(-1)
    l = len(z)
    if l == 0:
        raise ValueError("empty training set")
    if X.shape[0] != l:
        raise DimensionError(f"{X.shape[0]} samples but {l} labels")
    t0 = time.perf_counter()
    K = X @ X.T
    idx = np.concatenate([np.arange(l), np.arange(l)])
    y = np.concatenate([np.ones(l), -np.ones(l)])
    p = np.concatenate([hp.epsilon - z, hp.epsilon + z])
    res = smo.solve(K, idx, y, p, hp.C, tol=hp.tol, max_iter=hp.max_iter, selection=hp.selection)
    del K

    beta_all = res.alpha[:l] - res.alpha[l:]
    keep = beta_all != 0.0
    model = SvrModel(X[keep].copy(), beta_all[keep], -res.rho, grid, hp)
    model.collapsed_weights = model.collapse()
    report = TrainedModelReport(
        num_support_vectors=model.n_sv,
        duration_s=time.perf_counter() - t0,
        dual_objective=res.objective,
        iterations=res.iterations,
        violation=res.violation,
    )
    if not res.converged:
        raise ConvergenceError(
            f"SMO did not converge in {hp.max_iter} iterations (KKT violation {res.violation:.3g})",
            model=model,
            violation=res.violation,
        )
    return model, report


def _features(m: SvrModel, x) -> np.ndarray:
    a = x.amplitudes if isinstance(x, GainSpectrum) else np.asarray(x, dtype=float)
    if isinstance(x, GainSpectrum) and m.grid is not None and x.grid != m.grid:
        raise DimensionError(f"spectrum grid {x.grid} does not match model grid {m.grid}")
    if a.shape[-1] != m.n_feat:
        raise DimensionError(f"expected {m.n_feat} features, got {a.shape[-1]}")
    return a


def decide(m: SvrModel, x) -> float | np.ndarray:
    """sum_i beta_i <SV_i, x> + b, evaluated in support-vector form.

    ``x`` may be a :class:`GainSpectrum`, a feature vector or a 2-D stack.
    """
    a = _features(m, x)
    return (a @ m.support_vectors.T) @ m.betas + m.bias if a.ndim == 2 else float(
        m.betas @ (m.support_vectors @ a) + m.bias
    )


def decide_collapsed(m: SvrModel, x) -> float | np.ndarray:
    """<w, x> + b with the collapsed weight vector."""
    a = _features(m, x)
    w = m.collapsed_weights if m.collapsed_weights is not None else m.collapse()
    out = a @ w + m.bias
    return out if a.ndim == 2 else float(out)


# ---------------------------------------------------------------------------
# persistence
# ---------------------------------------------------------------------------


def to_dict(m: SvrModel) -> dict:
    return {
        "format": "botdasvr-model",
        "version": FORMAT_VERSION,
        "n_sv": m.n_sv,
        "n_feat": m.n_feat,
        "grid": None if m.grid is None else {"start": m.grid.start, "step": m.grid.step, "count": m.grid.count},
        "hyperparams": asdict(m.hyperparams),
        "bias": m.bias,
        "betas": m.betas.tolist(),
        "support_vectors": m.support_vectors.tolist(),
        "collapsed_weights": None if m.collapsed_weights is None else m.collapsed_weights.tolist(),
    }


def from_dict(d: dict) -> SvrModel:
    if d.get("version") != FORMAT_VERSION:
        raise UnsupportedVersionError(f"model format version {d.get('version')!r} is not supported")
    g = d["grid"]
    grid = None if g is None else FrequencyGrid(float(g["start"]), float(g["step"]), int(g["count"]))
    n_sv, n_feat = int(d["n_sv"]), int(d["n_feat"])
    sv = np.array(d["support_vectors"], dtype=float).reshape(n_sv, n_feat)
    w = d.get("collapsed_weights")
    return SvrModel(
        sv,
        np.array(d["betas"], dtype=float),
        float(d["bias"]),
        grid,
        SvrHyperparams(**d["hyperparams"]),
        None if w is None else np.array(w, dtype=float),
    )


def _to_bytes(m: SvrModel) -> bytes:
    hp = m.hyperparams
    flags = (1 if m.collapsed_weights is not None else 0) | (2 if hp.selection == "second-order" else 0)
    head = _HEADER.pack(
        MAGIC, FORMAT_VERSION, flags, m.n_sv, m.n_feat,
        *((m.grid.start, m.grid.step) if m.grid is not None else (np.nan, np.nan)), hp.C, hp.epsilon, hp.tol, hp.max_iter, m.bias,
    )
    parts = [head, m.betas.astype("<f8").tobytes(), m.support_vectors.astype("<f8").tobytes()]
    if flags & 1:
        parts.append(m.collapsed_weights.astype("<f8").tobytes())
    return b"".join(parts)


def _from_bytes(buf: bytes) -> SvrModel:
    if len(buf) < _HEADER.size:
        raise ModelFormatError(f"truncated header: {len(buf)} of {_HEADER.size} bytes", len(buf))
    magic, version, flags, n_sv, n_feat, start, step, C, eps, tol, max_iter, bias = _HEADER.unpack_from(buf)
    if magic != MAGIC:
        raise ModelFormatError(f"bad magic {magic!r}", 0)
    if version != FORMAT_VERSION:
        raise UnsupportedVersionError(f"model format version {version} is not supported")
    off = _HEADER.size
    sizes = [("betas", n_sv), ("support vectors", n_sv * n_feat)]
    if flags & 1:
        sizes.append(("collapsed weights", n_feat))
    arrays = []
    for name, count in sizes:
        need = 8 * count
        if off + need > len(buf):
            raise ModelFormatError(f"truncated {name}: need {need} bytes, {len(buf) - off} left", len(buf))
        arrays.append(np.frombuffer(buf, dtype="<f8", count=count, offset=off).astype(float))
        off += need
    if off != len(buf):
        raise ModelFormatError(f"{len(buf) - off} trailing bytes", off)
    grid = None if np.isnan(start) else FrequencyGrid(start, step, n_feat)
    hp = SvrHyperparams(C, eps, tol, int(max_iter), "second-order" if flags & 2 else "max-violating")
    return SvrModel(arrays[1].reshape(n_sv, n_feat), arrays[0], bias, grid, hp, arrays[2] if flags & 1 else None)


def save(m: SvrModel, path) -> Path:
    """Write ``.json`` as text, anything else in the binary layout."""
    path = Path(path)
    if path.suffix == ".json":
        path.write_text(json.dumps(to_dict(m)))
    else:
        path.write_bytes(_to_bytes(m))
    return path


def load(path) -> SvrModel:
    path = Path(path)
    raw = path.read_bytes()
    if raw[:4] == MAGIC:
        return _from_bytes(raw)
    try:
        d = json.loads(raw.decode("utf-8"))
    except json.JSONDecodeError as exc:
        raise ModelFormatError(f"malformed JSON model: {exc.msg}", exc.pos) from None
    except UnicodeDecodeError as exc:
        raise ModelFormatError("not a model file", exc.start) from None
    if not isinstance(d, dict) or d.get("format") != "botdasvr-model":
        raise ModelFormatError("not a botdasvr model document", 0)
    return from_dict(d)
