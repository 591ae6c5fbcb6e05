"""Experiment orchestration: synthetic fibers, end-to-end temperature
extraction, uncertainty statistics, the acquisition-time model and report
writers.

All report files are written with fixed column order and ``repr`` floats,
so a rerun with the same configuration and seed is byte-identical.
"""

from __future__ import annotations

import csv
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import baselines, datapath, engine, spectra, svr
from .spectra import FrequencyGrid, GainSpectrum, LorentzianParams, TemperatureCalibration

SPEED_OF_LIGHT = 2.998e8
METHODS = ("svr", "svc", "lma")
SNR_SWEEP_DB = (4.5, 6.0, 7.5, 9.0, 10.5, 12.0)
REFERENCE_AVERAGES = 32
REFERENCE_SNR_DB = 4.5
CPU_BASELINE = {"name": "i7-5960x", "latency_s": 19.41, "power_w": 140.0}


class EmptyProfileError(ValueError):
    pass


class ModelMismatchError(ValueError):
    pass


# ---------------------------------------------------------------------------
# fiber profile
# ---------------------------------------------------------------------------


@dataclass
class FiberProfile:
    """Ground-truth temperature along the fiber.

    ``segments`` are half-open ``[start, end)`` intervals in metres with a
    fixed temperature; everything else sits at ``ambient_c``.  The
    linewidth is either one value or one value per sampling position.
    """

    length_m: float = 38440.0
    spacing_m: float = 0.4
    segments: tuple = ((38040.0, 38440.0, 50.0),)
    ambient_c: float = 25.0
    linewidth_mhz: float | Sequence[float] = 60.0

    def __post_init__(self):
        self.segments = tuple(tuple(float(v) for v in s) for s in self.segments)
        if not self.spacing_m > 0:
            raise ValueError(f"sample spacing must be > 0, got {self.spacing_m}")
        if not self.length_m > 0 or self.n_points == 0:
            raise EmptyProfileError(f"fiber of length {self.length_m} m has no sampling points")
        ordered = sorted(self.segments)
        for lo, hi, _ in ordered:
            if lo < 0 or hi > self.length_m or hi < lo:
                raise ValueError(f"segment [{lo}, {hi}) lies outside [0, {self.length_m}]")
        for (_, hi, _), (lo, _, _) in zip(ordered, ordered[1:]):
            if lo < hi:
                raise ValueError("segments overlap")
        lw = np.asarray(self.linewidth_mhz, dtype=float)
        if lw.ndim and lw.shape != (self.n_points,):
            raise ValueError(f"per-position linewidth needs {self.n_points} values, got {lw.shape}")

    @property
    def n_points(self) -> int:
        return int(round(self.length_m / self.spacing_m))

    def positions(self) -> np.ndarray:
        return np.arange(self.n_points) * self.spacing_m

    def temperatures(self) -> np.ndarray:
        x = self.positions()
        t = np.full(x.shape, float(self.ambient_c))
        for lo, hi, temp in self.segments:
            t[(x >= lo) & (x < hi)] = temp
        return t

    def linewidths(self) -> np.ndarray:
        return np.broadcast_to(np.asarray(self.linewidth_mhz, dtype=float), (self.n_points,)).copy()

    def section_mask(self, lo: float, hi: float) -> np.ndarray:
        x = self.positions()
        return (x >= lo) & (x < hi)

    def thinned(self, factor: int) -> "FiberProfile":
        """Same fiber sampled every ``factor``-th point (desk-scale runs)."""
        lw = self.linewidth_mhz
        if np.ndim(lw):
            lw = tuple(np.asarray(lw)[::factor])
        return FiberProfile(self.length_m, self.spacing_m * factor, self.segments, self.ambient_c, lw)


def sample_spacing(rate_msps: float = 250.0, n: float = 1.5) -> float:
    """Spatial sampling interval c / (2 n rate)."""
    return SPEED_OF_LIGHT / (2.0 * n * rate_msps * 1e6)


def synthesize_array(
    fp: FiberProfile,
    grid: FrequencyGrid = FrequencyGrid(),
    cal: TemperatureCalibration = TemperatureCalibration(),
    snr_db: float = spectra.NOISELESS,
    seed: int = 0,
) -> np.ndarray:
    """Raw (unnormalized) noisy spectra, one row per sampling position."""
    freqs = grid.frequencies()
    bfs = spectra.temp_to_bfs(fp.temperatures(), cal)
    half = fp.linewidths()[:, None] / 2.0
    u = (freqs[None, :] - bfs[:, None]) * 1e3 / half
    X = 1.0 / (1.0 + u * u)
    if math.isfinite(snr_db):
        rng = np.random.default_rng(seed)
        X += rng.normal(0.0, spectra.noise_sigma(snr_db), X.shape)
    return X


def synthesize_fiber(
    fp: FiberProfile,
    grid: FrequencyGrid = FrequencyGrid(),
    cal: TemperatureCalibration = TemperatureCalibration(),
    snr_db: float = spectra.NOISELESS,
    seed: int = 0,
) -> list[GainSpectrum]:
    X = synthesize_array(fp, grid, cal, snr_db, seed)
    temps = fp.temperatures()
    pos = fp.positions()
    return [GainSpectrum(grid, X[k], float(pos[k]), float(temps[k])) for k in range(X.shape[0])]


# ---------------------------------------------------------------------------
# acquisition model
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class AcquisitionConfig:
    length_m: float = 38440.0
    n: float = 1.5
    n_avg: int = 32
    t_switch_s: float = 0.0
    n_freq: int = 221
    sample_rate_msps: float = 250.0

    def __post_init__(self):
        if self.n_avg < 1 or int(self.n_avg) != self.n_avg:
            raise ValueError(f"N_avg must be a positive integer, got {self.n_avg}")
        if self.n_freq < 1:
            raise ValueError(f"N_freq must be >= 1, got {self.n_freq}")
        if not (self.length_m > 0 and self.n > 0 and self.sample_rate_msps > 0):
            raise ValueError("length, refractive index and sample rate must be positive")
        if self.t_switch_s < 0:
            raise ValueError("switching time must be >= 0")

    @property
    def spacing_m(self) -> float:
        return sample_spacing(self.sample_rate_msps, self.n)


def acquisition_time(ac: AcquisitionConfig) -> tuple[float, float]:
    """``(T_acq, T_c)`` with ``T_c = 2 n L / c`` and
    ``T_acq = (T_c * N_avg + T_s) * N_freq``."""
    t_c = 2.0 * ac.n * ac.length_m / SPEED_OF_LIGHT
    return (t_c * ac.n_avg + ac.t_switch_s) * ac.n_freq, t_c


def snr_for_averages(n_avg: int, ref_avg: int = REFERENCE_AVERAGES, ref_snr_db: float = REFERENCE_SNR_DB) -> float:
    """Averaging N traces cuts the noise std by sqrt(N); the amplitude SNR in dB
    therefore gains 5 log10(N / N_ref)."""
    if n_avg < 1:
        raise ValueError("N_avg must be >= 1")
    return ref_snr_db + 5.0 * math.log10(n_avg / ref_avg)


def averages_for_snr(snr_db: float, ref_avg: int = REFERENCE_AVERAGES, ref_snr_db: float = REFERENCE_SNR_DB) -> float:
    return ref_avg * 10.0 ** ((snr_db - ref_snr_db) / 5.0)


# ---------------------------------------------------------------------------
# experiments
# ---------------------------------------------------------------------------


@dataclass
class SectionStats:
    start_m: float
    end_m: float
    true_c: float
    n: int
    mean_c: float
    std_c: float
    max_abs_err_c: float


@dataclass
class UncertaintyReport:
    method: str
    snr_db: float
    sections: list = field(default_factory=list)

    @property
    def heated(self) -> SectionStats:
        return self.sections[0]

    @property
    def uncertainty(self) -> float:
        """Standard deviation over the first (heated) section."""
        return self.heated.std_c


@dataclass
class ExperimentResult:
    report: UncertaintyReport
    positions: np.ndarray
    truth: np.ndarray
    predicted: np.ndarray

    @property
    def abs_error(self) -> np.ndarray:
        return np.abs(self.predicted - self.truth)


def section_stats(pred: np.ndarray, truth: np.ndarray, mask: np.ndarray, lo: float, hi: float) -> SectionStats:
    p = pred[mask]
    if p.size == 0:
        return SectionStats(lo, hi, math.nan, 0, math.nan, math.nan, math.nan)
    t = truth[mask]
    # sort before reducing so the statistics never depend on evaluation order
    p_sorted = np.sort(p)
    std = float(np.std(p_sorted, ddof=1)) if p.size > 1 else 0.0
    return SectionStats(lo, hi, float(t[0]), int(p.size), float(np.mean(p_sorted)), std, float(np.max(np.abs(p - t))))


def _check_model(method, model, grid):
    if method not in METHODS:
        raise ValueError(f"unknown method {method!r}; expected one of {METHODS}")
    if method == "lma":
        return
    if model is None:
        raise ModelMismatchError(f"method {method!r} needs a trained model")
    if method == "svr":
        if not isinstance(model, svr.SvrModel):
            raise ModelMismatchError("svr method needs an SvrModel")
        n_feat = model.n_feat
    else:
        if not isinstance(model, baselines.SvcModel):
            raise ModelMismatchError("svc method needs an SvcModel")
        n_feat = model.weights.shape[1]
    if n_feat != grid.count:
        raise ModelMismatchError(f"model expects {n_feat} features, grid has {grid.count}")


def _lma_parallel(X, grid, cal, workers):
    if workers <= 1:
        return baselines.lma_temperatures(X, grid, cal)
    chunks = np.array_split(np.arange(X.shape[0]), workers)
    with ThreadPoolExecutor(max_workers=workers) as pool:
        parts = pool.map(lambda c: baselines.lma_temperatures(X[c], grid, cal), chunks)
    return np.concatenate(list(parts))


def infer(
    method: str,
    model,
    X: np.ndarray,
    grid: FrequencyGrid = FrequencyGrid(),
    cal: TemperatureCalibration = TemperatureCalibration(),
    tile: engine.TileSpec = engine.TileSpec(),
    batch: int = 40,
    workers: int = 1,
) -> np.ndarray:
    """Temperature per row of raw spectra ``X`` (normalized here for SVR/SVC)."""
    _check_model(method, model, grid)
    if method == "lma":
        return _lma_parallel(np.atleast_2d(X), grid, cal, workers)
    Xn = spectra.normalize(np.atleast_2d(X))
    if method == "svr":
        tile = engine.TileSpec(min(tile.unroll, model.n_sv), tile.reduction) if model.n_sv else tile
        if model.n_sv == 0:
            return np.full(Xn.shape[0], float(model.bias))
        return engine.decide_stream(model, Xn, tile, batch=batch, workers=workers)
    return np.asarray(baselines.svc_predict(model, Xn), dtype=float)


def run_experiment(
    profile: FiberProfile,
    model,
    method: str = "svr",
    snr_db: float = 12.0,
    seed: int = 0,
    grid: FrequencyGrid = FrequencyGrid(),
    cal: TemperatureCalibration = TemperatureCalibration(),
    tile: engine.TileSpec = engine.TileSpec(),
    batch: int = 40,
    workers: int = 1,
) -> ExperimentResult:
    """synthesize -> normalize -> infer -> per-section statistics.

    The first reported section is the first profile segment (the heated
    section); an ambient section covering the rest of the fiber follows.
    """
    _check_model(method, model, grid)
    X = synthesize_array(profile, grid, cal, snr_db, seed)
    pred = infer(method, model, X, grid, cal, tile, batch, workers)
    truth = profile.temperatures()
    sections = []
    for lo, hi, _ in profile.segments:
        sections.append(section_stats(pred, truth, profile.section_mask(lo, hi), lo, hi))
    ambient = np.ones(profile.n_points, dtype=bool)
    for lo, hi, _ in profile.segments:
        ambient &= ~profile.section_mask(lo, hi)
    if ambient.any():
        sections.append(section_stats(pred, truth, ambient, 0.0, profile.length_m))
    report = UncertaintyReport(method, float(snr_db), sections)
    return ExperimentResult(report, profile.positions(), truth, pred)


def snr_sweep(
    profile: FiberProfile,
    models: dict,
    snrs: Sequence[float] = SNR_SWEEP_DB,
    seed: int = 0,
    grid: FrequencyGrid = FrequencyGrid(),
    cal: TemperatureCalibration = TemperatureCalibration(),
    workers: int = 1,
) -> list[UncertaintyReport]:
    """Uncertainty of every method in ``models`` (``{"svr": m, "svc": m, "lma": None}``)
    at every SNR.  All methods and SNRs share the same noise seed, so the
    comparison uses common random numbers."""
    out = []
    for s in snrs:
        for method, model in models.items():
            out.append(run_experiment(profile, model, method, s, seed, grid, cal, workers=workers).report)
    return out


def count_inversions(values: Sequence[float]) -> int:
    """Number of adjacent increases in a sequence expected to be non-increasing."""
    return int(sum(1 for a, b in zip(values, values[1:]) if b > a))


# ---------------------------------------------------------------------------
# reports
# ---------------------------------------------------------------------------

TRACE_COLUMNS = ["position_m", "true_degC", "pred_degC", "abs_err_degC"]
SNR_COLUMNS = ["snr_db", "n_avg", "method", "n", "mean_degC", "std_degC", "max_abs_err_degC"]
PLATFORM_COLUMNS = ["platform", "clock_mhz", "power_w", "latency_s", "gflops", "energy_ratio", "tpp_min_pct", "tpp_max_pct"]
TPP_COLUMNS = ["n_avg", "t_acq_s", "platform", "t_pp_s", "tpp_pct"]


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (np.integer,)):
        return str(int(v))
    return str(v)


def write_rows(rows: Sequence[dict], path, columns: Sequence[str]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for r in rows:
            w.writerow([_fmt(r[c]) for c in columns])
    return path


def read_rows(path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def write_json(obj, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True, default=_json_default) + "\n")
    return path


def _json_default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    raise TypeError(f"cannot serialize {type(o).__name__}")


def trace_rows(res: ExperimentResult) -> list[dict]:
    return [
        {"position_m": p, "true_degC": t, "pred_degC": y, "abs_err_degC": abs(y - t)}
        for p, t, y in zip(res.positions.tolist(), res.truth.tolist(), res.predicted.tolist())
    ]


def snr_rows(reports: Sequence[UncertaintyReport]) -> list[dict]:
    rows = []
    for r in reports:
        h = r.heated
        rows.append({
            "snr_db": r.snr_db,
            "n_avg": averages_for_snr(r.snr_db),
            "method": r.method,
            "n": h.n,
            "mean_degC": h.mean_c,
            "std_degC": h.std_c,
            "max_abs_err_degC": h.max_abs_err_c,
        })
    return rows


def tpp_rows(platforms: Sequence[dict], n_avgs=(32, 1024), ac: AcquisitionConfig = AcquisitionConfig()) -> list[dict]:
    rows = []
    for n_avg in n_avgs:
        t_acq, _ = acquisition_time(AcquisitionConfig(ac.length_m, ac.n, n_avg, ac.t_switch_s, ac.n_freq, ac.sample_rate_msps))
        for p in platforms:
            rows.append({
                "n_avg": n_avg,
                "t_acq_s": t_acq,
                "platform": p["platform"],
                "t_pp_s": p["latency_s"],
                "tpp_pct": 100.0 * datapath.tpp_fraction(p["latency_s"], t_acq),
            })
    return rows


def platform_rows(
    n_bgs: int = 96100,
    ac: AcquisitionConfig = AcquisitionConfig(),
    overheads: Optional[dict] = None,
    baseline: dict = CPU_BASELINE,
) -> list[dict]:
    """Table-II style comparison: the CPU reference plus both boards at their
    default accelerator configuration (modeled latency)."""
    overheads = overheads or {}
    t_lo, _ = acquisition_time(AcquisitionConfig(ac.length_m, ac.n, 32, ac.t_switch_s, ac.n_freq, ac.sample_rate_msps))
    t_hi, _ = acquisition_time(AcquisitionConfig(ac.length_m, ac.n, 1024, ac.t_switch_s, ac.n_freq, ac.sample_rate_msps))

    def span(lat):
        return 100.0 * datapath.tpp_fraction(lat, t_hi), 100.0 * datapath.tpp_fraction(lat, t_lo)

    lo, hi = span(baseline["latency_s"])
    rows = [{
        "platform": baseline["name"],
        "clock_mhz": 3000.0,
        "power_w": baseline["power_w"],
        "latency_s": baseline["latency_s"],
        "gflops": datapath.gflops_from(baseline["latency_s"], n_bgs),
        "energy_ratio": 1.0,
        "tpp_min_pct": lo,
        "tpp_max_pct": hi,
    }]
    for board in ("zc706", "zcu104"):
        cfg = datapath.DatapathConfig.for_board(board, batch_overhead_cycles=overheads.get(board, 0))
        power = datapath.BOARDS[board].power_w
        gflops, ratio, wall = datapath.throughput_and_energy(cfg, n_bgs, power, baseline)
        lo, hi = span(wall)
        rows.append({
            "platform": board,
            "clock_mhz": cfg.clock_mhz,
            "power_w": power,
            "latency_s": wall,
            "gflops": gflops,
            "energy_ratio": ratio,
            "tpp_min_pct": lo,
            "tpp_max_pct": hi,
        })
    return rows


def report_to_dict(r: UncertaintyReport) -> dict:
    return {"method": r.method, "snr_db": r.snr_db, "sections": [asdict(s) for s in r.sections]}
