"""Synthetic Brillouin gain spectra.

Ideal Lorentzian spectra, the SVR training grid, temperature <-> BFS
conversion, additive noise at a requested SNR and SNR estimation.

SNR convention used throughout the package::

    snr_db = 10 * log10(mean peak amplitude / noise std)

i.e. an amplitude ratio expressed with a factor of 10, so averaging N
traces raises the SNR by 10*log10(sqrt(N)) dB.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

__all__ = [
    "FrequencyGrid",
    "LorentzianParams",
    "TemperatureCalibration",
    "GainSpectrum",
    "TrainingSet",
    "InvalidCalibrationError",
    "InsufficientDataError",
    "GridRangeWarning",
    "lorentzian_gain",
    "temp_to_bfs",
    "bfs_to_temp",
    "inclusive_range",
    "generate_training_set",
    "normalize",
    "add_noise",
    "noise_sigma",
    "estimate_snr",
    "save_training_set",
    "load_training_set",
]

NOISELESS = math.inf
"""Sentinel SNR meaning "no noise"."""


class InvalidCalibrationError(ValueError):
    pass


class InsufficientDataError(ValueError):
    pass


class GridRangeWarning(UserWarning):
    """A generated BFS falls outside the frequency grid (spectrum truncated)."""


@dataclass(frozen=True)
class FrequencyGrid:
    """Uniform scan grid: ``count`` points from ``start`` GHz in ``step`` MHz."""

    start: float = 10.78
    step: float = 1.0
    count: int = 220
    max_end: Optional[float] = None

    def __post_init__(self):
        if not self.step > 0:
            raise ValueError(f"grid step must be > 0, got {self.step}")
        if int(self.count) != self.count or self.count < 2:
            raise ValueError(f"grid count must be an integer >= 2, got {self.count}")
        if self.max_end is not None and self.end > self.max_end + 1e-12:
            raise ValueError(f"grid end {self.end} GHz exceeds cap {self.max_end} GHz")

    @property
    def step_ghz(self) -> float:
        return self.step * 1e-3

    @property
    def end(self) -> float:
        return self.start + (self.count - 1) * self.step_ghz

    @property
    def span(self) -> float:
        return self.end - self.start

    def frequencies(self) -> np.ndarray:
        return self.start + np.arange(self.count) * self.step_ghz

    def contains(self, v: float) -> bool:
        return self.start <= v <= self.end


@dataclass(frozen=True)
class LorentzianParams:
    g_B: float = 1.0
    v_B: float = 10.89
    dv_B: float = 50.0  # MHz

    def __post_init__(self):
        if not self.g_B > 0:
            raise ValueError(f"peak gain must be > 0, got {self.g_B}")
        if not self.dv_B > 0:
            raise ValueError(f"linewidth must be > 0, got {self.dv_B}")

    def within(self, grid: FrequencyGrid) -> bool:
        return grid.start - grid.span <= self.v_B <= grid.end + grid.span


@dataclass(frozen=True)
class TemperatureCalibration:
    bfs_at_0C: float = 10.855  # GHz
    coeff: float = 1.0  # MHz / degC

    def __post_init__(self):
        if not self.coeff > 0:
            raise InvalidCalibrationError(f"temperature coefficient must be > 0, got {self.coeff}")


@dataclass
class GainSpectrum:
    grid: FrequencyGrid
    amplitudes: np.ndarray
    position: Optional[float] = None
    temperature: Optional[float] = None

    def __post_init__(self):
        self.amplitudes = np.asarray(self.amplitudes, dtype=float)
        if self.amplitudes.shape != (self.grid.count,):
            raise ValueError(
                f"expected {self.grid.count} amplitudes, got shape {self.amplitudes.shape}"
            )

    @property
    def peak(self) -> float:
        return float(self.amplitudes.max())


@dataclass
class TrainingSet:
    """Rows are spectra (temperature-major, linewidth-minor); labels in degC."""

    samples: np.ndarray
    labels: np.ndarray
    grid: FrequencyGrid
    linewidths: Optional[np.ndarray] = field(default=None, repr=False)

    def __post_init__(self):
        self.samples = np.atleast_2d(np.asarray(self.samples, dtype=float))
        self.labels = np.asarray(self.labels, dtype=float).reshape(-1)
        if self.samples.shape[0] != self.labels.shape[0]:
            raise ValueError(
                f"{self.samples.shape[0]} samples but {self.labels.shape[0]} labels"
            )
        if self.samples.shape[1] != self.grid.count:
            raise ValueError(
                f"samples have {self.samples.shape[1]} features, grid has {self.grid.count}"
            )

    def __len__(self) -> int:
        return self.samples.shape[0]


def lorentzian_gain(v, p: LorentzianParams):
    """Lorentzian gain at frequency ``v`` (GHz); works on scalars and arrays."""
    half_width = p.dv_B * 1e-3 / 2.0
    u = (np.asarray(v, dtype=float) - p.v_B) / half_width
    g = p.g_B / (1.0 + u * u)
    return float(g) if np.ndim(g) == 0 else g


def temp_to_bfs(t, cal: TemperatureCalibration = TemperatureCalibration()):
    """BFS in GHz for temperature ``t`` in degC (scalar or array)."""
    if isinstance(t, (list, tuple)):
        t = np.asarray(t, dtype=float)
    return cal.bfs_at_0C + cal.coeff * 1e-3 * t


def bfs_to_temp(v, cal: TemperatureCalibration = TemperatureCalibration()):
    if cal.coeff == 0:
        raise InvalidCalibrationError("temperature coefficient is zero")
    if isinstance(v, (list, tuple)):
        v = np.asarray(v, dtype=float)
    return (v - cal.bfs_at_0C) / (cal.coeff * 1e-3)


def inclusive_range(lo: float, hi: float, step: float) -> np.ndarray:
    """``lo, lo+step, ..., hi`` with the end point included when it lands on the grid."""
    if not step > 0:
        raise ValueError(f"range step must be > 0, got {step}")
    if hi < lo:
        raise ValueError(f"empty range ({lo}, {hi})")
    n = int(math.floor((hi - lo) / step + 1e-9)) + 1
    return lo + step * np.arange(n)


def generate_training_set(
    grid: FrequencyGrid = FrequencyGrid(),
    cal: TemperatureCalibration = TemperatureCalibration(),
    t_range: Sequence[float] = (0.0, 70.0, 0.5),
    lw_range: Sequence[float] = (30.0, 100.0, 2.0),
) -> TrainingSet:
    """Ideal unit-peak spectra for every (temperature, linewidth) pair.

    Row ``i * n_lw + j`` holds temperature ``i`` and linewidth ``j``.
    Rows are *not* renormalized: a BFS between grid points gives a
    sampled maximum slightly below 1, exactly as the measurement would.
    """
    temps = inclusive_range(*t_range)
    widths = inclusive_range(*lw_range)
    freqs = grid.frequencies()

    bfs = temp_to_bfs(temps, cal)
    outside = (bfs < grid.start) | (bfs > grid.end)
    if outside.any():
        warnings.warn(
            f"{int(outside.sum())} BFS values fall outside the grid "
            f"[{grid.start}, {grid.end}] GHz; those spectra are truncated",
            GridRangeWarning,
            stacklevel=2,
        )

    half = widths * 1e-3 / 2.0
    u = (freqs[None, None, :] - bfs[:, None, None]) / half[None, :, None]
    samples = (1.0 / (1.0 + u * u)).reshape(len(temps) * len(widths), grid.count)
    labels = np.repeat(temps, len(widths))
    lw = np.tile(widths, len(temps))
    return TrainingSet(samples=samples, labels=labels, grid=grid, linewidths=lw)


def normalize(amplitudes: np.ndarray) -> np.ndarray:
    """Peak-normalize one spectrum (1-D) or each row of a stack (2-D).

    Values are clipped to [-1, 1]: strong noise can drive a sample below
    minus the (noisy) peak, which carries no information for the
    regressors and would break the normalized-gain invariant.
    """
    a = np.asarray(amplitudes, dtype=float)
    peak = a.max(axis=-1, keepdims=True)
    if np.any(peak <= 0):
        raise ValueError("cannot peak-normalize a spectrum whose maximum is <= 0")
    return np.clip(a / peak, -1.0, 1.0)


def noise_sigma(snr_db: float, peak: float = 1.0) -> float:
    if math.isinf(snr_db) and snr_db > 0:
        return 0.0
    return peak / 10.0 ** (snr_db / 10.0)


def add_noise(s: GainSpectrum, snr_db: float, rng_seed: int) -> GainSpectrum:
    """Add white Gaussian noise so that peak / sigma matches ``snr_db``."""
    sigma = noise_sigma(snr_db, s.peak)
    if sigma == 0.0:
        return GainSpectrum(s.grid, s.amplitudes.copy(), s.position, s.temperature)
    rng = np.random.default_rng(rng_seed)
    noisy = s.amplitudes + rng.normal(0.0, sigma, size=s.amplitudes.shape)
    return GainSpectrum(s.grid, noisy, s.position, s.temperature)


def estimate_snr(replicas: Sequence[GainSpectrum]) -> float:
    """SNR in dB from repeated measurements of the same spectrum.

    The peak bin is located on the replica mean; the SNR is the mean
    amplitude there over the sample std of that bin across replicas.
    Returns ``math.inf`` for noiseless replicas.
    """
    if len(replicas) < 2:
        raise InsufficientDataError(f"need at least 2 replicas, got {len(replicas)}")
    grid = replicas[0].grid
    if any(r.grid != grid for r in replicas):
        raise ValueError("replicas are on different grids")
    stack = np.stack([r.amplitudes for r in replicas])
    mean = stack.mean(axis=0)
    k = int(np.argmax(mean))
    std = float(stack[:, k].std(ddof=1))
    if std == 0.0:
        return NOISELESS
    return 10.0 * math.log10(mean[k] / std)


# ---------------------------------------------------------------------------
# persistence
#
# CSV layout (one file):
#   line 1:  "label_degC,linewidth_MHz,<f_0>,<f_1>,...,<f_{M-1}>"   f in GHz
#   line k:  "<label>,<linewidth>,<a_0>,...,<a_{M-1}>"              one spectrum
# Floats are written with repr() so a CSV round trip is lossless.
#
# NPZ layout: arrays ``samples`` (N x M), ``labels`` (N), ``linewidths`` (N)
# and ``grid`` = [start_GHz, step_MHz, count].
# ---------------------------------------------------------------------------


def save_training_set(ts: TrainingSet, path) -> Path:
    path = Path(path)
    lw = ts.linewidths if ts.linewidths is not None else np.full(len(ts), np.nan)
    if path.suffix == ".npz":
        np.savez(
            path,
            samples=ts.samples,
            labels=ts.labels,
            linewidths=lw,
            grid=np.array([ts.grid.start, ts.grid.step, ts.grid.count], dtype=float),
        )
        return path
    with open(path, "w") as fh:
        fh.write(",".join(["label_degC", "linewidth_MHz"] + [repr(float(f)) for f in ts.grid.frequencies()]))
        fh.write("\n")
        for y, w, row in zip(ts.labels, lw, ts.samples):
            fh.write(",".join([repr(float(y)), repr(float(w))] + [repr(float(a)) for a in row]))
            fh.write("\n")
    return path


def load_training_set(path) -> TrainingSet:
    path = Path(path)
    if path.suffix == ".npz":
        with np.load(path) as z:
            start, step, count = z["grid"]
            grid = FrequencyGrid(float(start), float(step), int(count))
            lw = z["linewidths"]
            return TrainingSet(z["samples"], z["labels"], grid, None if np.isnan(lw).all() else lw)
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    with open(path) as fh:
        header = fh.readline().strip().split(",")
    freqs = np.array([float(h) for h in header[2:]])
    grid = FrequencyGrid(freqs[0], round((freqs[1] - freqs[0]) * 1e3, 9), len(freqs))
    lw = data[:, 1]
    return TrainingSet(data[:, 2:], data[:, 0], grid, None if np.isnan(lw).all() else lw)
