"""Latency, resource and throughput models of the SVR accelerator.

Two independent routes to cycle counts:

* closed-form latency formulas (:func:`latency_unbatched`,
  :func:`latency_batched`), and
* a cycle-level schedule simulator (:func:`simulate_schedule`) of the
  partial-sum MAC array and the cascaded final-sum MAC chain.

Cycle conventions used by the simulator:

* Phase 1 issues one ``(k, i, t)`` step per cycle in batch, feature, tile
  order.  MAC ``u`` reads SV bank ``u`` and partial-sum bank ``u`` and
  writes the updated partial sum back ``accumulate_latency - 1`` cycles
  later.  Each partial-sum bank is dual-ported: at most one read and one
  write per cycle.
* Phase 2 with ``f > 1`` issues one ``(k, t)`` group per cycle into an
  ``f``-deep adder chain; the group's sum is written to the auxiliary
  matrix ``f * Ta`` cycles after issue.  With ``f == 1`` there is no chain:
  a single accumulator adds one term every ``Ta`` cycles.
* The adder tree reduces a row's ``ceil(Ns / f)`` auxiliary values with
  ``f`` adders, one level at a time; rows enter the tree as soon as their
  last group has been written.
"""

from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Iterable, Optional

import numpy as np

from .engine import flops_per_decision

REFERENCE_N_SV = 1136
REFERENCE_N_FEAT = 220
DEFAULT_ADDER_LATENCY = 7
DSP_PER_MAC = 5
BRAM18_DEPTH_32B = 512
IO_BRAM = 2.0

# LUT / FF = a + b * f, exact through the two post-implementation points
# (f=142 on ZC706, f=284 on ZCU104, both at B=40).  Descriptive only.
_LUT_POINTS = ((142, 111415), (284, 149623))
_FF_POINTS = ((142, 73213), (284, 199529))
CALIBRATION_BATCH = 40
LUT_BITS = 64


class ConfigError(ValueError):
    pass


class SimulationError(RuntimeError):
    def __init__(self, message, cycle: int, resource: str):
        super().__init__(f"{message} at cycle {cycle} on {resource}")
        self.cycle = cycle
        self.resource = resource


class PortConflictError(SimulationError):
    pass


@dataclass(frozen=True)
class Board:
    name: str
    dsp: int
    bram: float
    lut: int
    ff: int
    clock_mhz: float = 200.0
    power_w: Optional[float] = None


BOARDS = {
    "zc706": Board("zc706", dsp=900, bram=545, lut=218600, ff=437200, clock_mhz=100.0, power_w=14.43),
    "zcu104": Board("zcu104", dsp=1728, bram=312, lut=230400, ff=460800, clock_mhz=200.0, power_w=26.5),
}


@dataclass(frozen=True)
class DatapathConfig:
    n_sv: int = REFERENCE_N_SV
    n_feat: int = REFERENCE_N_FEAT
    unroll: int = 1
    batch: int = 1
    adder_latency: int = DEFAULT_ADDER_LATENCY
    clock_mhz: float = 200.0
    board: str = "zcu104"
    budget: Optional[Board] = None
    batch_overhead_cycles: float = 0.0

    def __post_init__(self):
        if self.n_sv < 1 or self.n_feat < 1:
            raise ConfigError("n_sv and n_feat must be >= 1")
        if not 1 <= self.unroll <= self.n_sv:
            raise ConfigError(f"unroll factor must be in [1, {self.n_sv}], got {self.unroll}")
        if self.batch < 1:
            raise ConfigError(f"batch size must be >= 1, got {self.batch}")
        if self.adder_latency < 1:
            raise ConfigError(f"adder latency must be >= 1 cycle, got {self.adder_latency}")
        if not self.clock_mhz > 0:
            raise ConfigError(f"clock must be > 0 MHz, got {self.clock_mhz}")
        if self.board == "custom" and self.budget is None:
            raise ConfigError("a custom board needs a resource budget")
        if self.board not in BOARDS and self.board != "custom":
            raise ConfigError(f"unknown board {self.board!r}")
        if self.batch_overhead_cycles < 0:
            raise ConfigError("batch overhead must be >= 0")

    @property
    def n_tiles(self) -> int:
        return -(-self.n_sv // self.unroll)

    @property
    def resource_budget(self) -> Board:
        return self.budget if self.board == "custom" else BOARDS[self.board]

    @classmethod
    def for_board(cls, board: str, **kw) -> "DatapathConfig":
        presets = {
            "zc706": dict(unroll=142, batch=40, clock_mhz=100.0),
            "zcu104": dict(unroll=284, batch=40, clock_mhz=200.0),
        }
        return cls(board=board, **{**presets[board], **kw})


@dataclass
class LatencyReport:
    partial_sum_cycles: int
    final_sum_cycles: int
    tree_cycles: int
    total_cycles: int
    batch: int
    clock_mhz: float
    speedup_vs_f1: float
    source: str
    n_sv: int = REFERENCE_N_SV
    n_feat: int = REFERENCE_N_FEAT
    batch_overhead_cycles: float = 0.0
    stall_cycles: int = 0
    trace: Optional[list] = field(default=None, repr=False)

    @property
    def avg_cycles_per_regression(self) -> float:
        return self.total_cycles / self.batch

    def wall_seconds(self, n_bgs: int) -> float:
        """Time for ``n_bgs`` regressions, one batch at a time (last batch padded)."""
        batches = -(-n_bgs // self.batch)
        return batches * (self.total_cycles + self.batch_overhead_cycles) / (self.clock_mhz * 1e6)

    def gflops(self, n_bgs: int) -> float:
        return flops_per_decision(self.n_sv, self.n_feat) * n_bgs / self.wall_seconds(n_bgs) / 1e9


def _ceil_log2_ratio(n_sv: int, f: int) -> int:
    """ceil(log2(n_sv / f)) in exact integer arithmetic (0 when f >= n_sv)."""
    k = 0
    while (f << k) < n_sv:
        k += 1
    return k


def tree_latency(n_sv: int, f: int, ta: int) -> int:
    """Adder-tree latency after an ``f``-wide final-sum chain.

    Large ``f`` (``2 f^2 >= Ns``): ``Ta * ceil(log2(Ns/f))``; small ``f``
    adds ``2 * ceil(Ns / (2 f^2)) - 2`` cycles of serialization.
    """
    if f <= 1:
        return 0
    levels = _ceil_log2_ratio(n_sv, f)
    if 2 * f * f >= n_sv:
        return ta * levels
    return ta * levels + 2 * (-(-n_sv // (2 * f * f))) - 2


def _f1_total(cfg: DatapathConfig) -> int:
    return cfg.n_sv * cfg.n_feat + cfg.n_sv * cfg.adder_latency


def latency_unbatched(cfg: DatapathConfig) -> LatencyReport:
    if cfg.batch != 1:
        raise ConfigError(f"latency_unbatched needs batch == 1, got {cfg.batch}")
    ns, m, f, ta = cfg.n_sv, cfg.n_feat, cfg.unroll, cfg.adder_latency
    if f == 1:
        partial, final, tree = ns * m, ns * ta, 0
    else:
        nt = cfg.n_tiles
        partial = nt * m
        final = f * ta + nt
        tree = tree_latency(ns, f, ta)
    total = partial + final + tree
    return LatencyReport(
        partial, final, tree, total, 1, cfg.clock_mhz, _f1_total(cfg) / total, "analytic",
        ns, m, cfg.batch_overhead_cycles,
    )


def latency_batched(cfg: DatapathConfig) -> LatencyReport:
    """Batch latency ``B*Ns*M/f + f*Ta + B*Ns/f`` (tree dropped).

    ``f == 1`` has no chain to amortize: every input pays ``Ns*M + Ns*Ta``.
    """
    ns, m, f, ta, B = cfg.n_sv, cfg.n_feat, cfg.unroll, cfg.adder_latency, cfg.batch
    if f == 1:
        partial, final = B * ns * m, B * ns * ta
    else:
        nt = cfg.n_tiles
        partial = B * nt * m
        final = f * ta + B * nt
    total = partial + final
    return LatencyReport(
        partial, final, 0, total, B, cfg.clock_mhz, _f1_total(cfg) / (total / B), "analytic",
        ns, m, cfg.batch_overhead_cycles,
    )


def asymptotic_latency(cfg: DatapathConfig) -> float:
    """Per-regression latency as the batch grows without bound: Ns (M + 1) / f."""
    return cfg.n_sv * (cfg.n_feat + 1) / cfg.unroll


def fit_batch_overhead(cfg: DatapathConfig, n_bgs: int, target_seconds: float) -> float:
    """Per-batch overhead (cycles) that makes the modeled wall time hit ``target_seconds``."""
    rep = latency_batched(replace(cfg, batch_overhead_cycles=0.0))
    batches = -(-n_bgs // cfg.batch)
    extra = target_seconds * cfg.clock_mhz * 1e6 / batches - rep.total_cycles
    return max(extra, 0.0)


# ---------------------------------------------------------------------------
# cycle-level simulator
# ---------------------------------------------------------------------------


class _Ports:
    """Per-cycle, per-bank port usage of the banked partial-sum memory."""

    def __init__(self, n_cycles: int, n_banks: int):
        self.reads = np.zeros((n_cycles, n_banks), dtype=np.int16)
        self.writes = np.zeros((n_cycles, n_banks), dtype=np.int16)

    def check(self, name: str):
        for kind, arr in (("read", self.reads), ("write", self.writes)):
            bad = np.argwhere(arr > 1)
            if len(bad):
                c, b = bad[0]
                raise PortConflictError(
                    f"{arr[c, b]} {kind}s on a single-{kind}-port memory", int(c), f"{name} bank {b} {kind} port"
                )


def simulate_schedule(
    cfg: DatapathConfig,
    accumulate_latency: int = 1,
    tiles_per_cycle: int = 1,
    trace: bool = False,
) -> LatencyReport:
    """Cycle-level simulation of one batch through both phases.

    ``accumulate_latency`` is the issue-to-readable delay of a partial-sum
    update; a step that would read a value still in flight stalls.
    ``tiles_per_cycle > 1`` issues several tiles per cycle through the same
    MAC array, which oversubscribes the memory ports and raises
    :class:`PortConflictError` (kept to exercise the hazard checker).
    """
    if accumulate_latency < 1:
        raise ConfigError("accumulate latency must be >= 1")
    ns, m, f, ta, B = cfg.n_sv, cfg.n_feat, cfg.unroll, cfg.adder_latency, cfg.batch
    nt = cfg.n_tiles
    events: dict[int, list[str]] = {} if trace else None

    def log(c, text):
        if events is not None:
            events.setdefault(c, []).append(text)

    # lanes active in each tile (the last tile may be ragged)
    active = np.zeros((nt, f), dtype=np.int16)
    for t in range(nt):
        active[t, : min(f, ns - t * f)] = 1

    # ---- phase 1: partial sums -------------------------------------------------
    horizon = B * m * nt * max(1, accumulate_latency) + accumulate_latency + 1
    ports = _Ports(horizon, f)
    issued_c, issued_t = [], []  # (cycle, tile) of every MAC step, scattered into ports below
    c = 0
    stalls = 0
    last_ready = 0
    for k in range(B):
        ready = [0] * nt  # cycle a partial-sum word becomes readable
        for i in range(m):
            for t in range(0, nt, tiles_per_cycle):
                group = range(t, min(t + tiles_per_cycle, nt))
                need = max(ready[tt] for tt in group)
                if need > c:
                    stalls += need - c
                    c = need
                for tt in group:
                    issued_c.append(c)
                    issued_t.append(tt)
                    ready[tt] = c + accumulate_latency
                    if events is not None:
                        log(c, f"P1 mac k={k} i={i} t={tt}")
                        log(c + accumulate_latency - 1, f"P1 wb k={k} t={tt}")
                c += 1
        last_ready = max(last_ready, max(ready))
    cs = np.asarray(issued_c, dtype=np.int64)
    lanes = active[np.asarray(issued_t, dtype=np.int64)]
    np.add.at(ports.reads, cs, lanes)
    np.add.at(ports.writes, cs + accumulate_latency - 1, lanes)
    p1_end = max(c, last_ready)
    ports.check("partial-sum")
    partial = p1_end

    # ---- phase 2: final sums ---------------------------------------------------
    if f == 1:
        # single accumulator, one dependent add every Ta cycles, rows in turn
        c = p1_end
        if events is not None:
            for k in range(B):
                for i in range(ns):
                    log(c + (k * ns + i) * ta, f"P2 acc k={k} i={i}")
        p2_end = c + B * ns * ta
        final = p2_end - p1_end
        total = p2_end
        tree = 0
    else:
        chain = f * ta
        aux_ports = _Ports(B * nt + chain + 1, 1)
        row_ready = np.zeros(B, dtype=np.int64)
        c = p1_end
        for k in range(B):
            for t in range(nt):
                log(c, f"P2 chain-in k={k} t={t}")
                w = c + chain
                aux_ports.writes[w - p1_end, 0] += 1
                log(w, f"P2 aux-wr k={k} t={t}")
                row_ready[k] = w + 1
                c += 1
        aux_ports.check("auxiliary")
        p2_end = p1_end + B * nt + chain
        final = p2_end - p1_end

        # adder tree with f adders, level by level
        level_costs = []
        n = nt
        while n > 1:
            pairs = n // 2
            level_costs.append(-(-pairs // f))
            n = -(-n // 2)
        latency = sum(ta + cost - 1 for cost in level_costs)
        occupancy = sum(level_costs)
        end = p2_end
        prev_start = None
        for k in range(B):
            if not level_costs:
                continue
            start = int(row_ready[k]) if prev_start is None else max(int(row_ready[k]), prev_start + occupancy)
            log(start, f"TREE start k={k}")
            log(start + latency - 1, f"TREE out k={k}")
            end = max(end, start + latency)
            prev_start = start
        total = end
        tree = total - p2_end

    f1 = _f1_total(cfg)
    rep = LatencyReport(
        partial, final, tree, total, B, cfg.clock_mhz, f1 / (total / B), "simulated",
        ns, m, cfg.batch_overhead_cycles, stalls,
    )
    if events is not None:
        rep.trace = format_trace(events, total)
    return rep


def format_trace(events: dict, n_cycles: int) -> list[str]:
    """One line per cycle: ``<cycle> <event>; <event>...`` (``-`` when idle)."""
    lines = []
    for c in range(n_cycles):
        ev = events.get(c)
        lines.append(f"{c} " + ("; ".join(ev) if ev else "-"))
    return lines


# ---------------------------------------------------------------------------
# resources, throughput, energy
# ---------------------------------------------------------------------------


def _affine(points):
    (x0, y0), (x1, y1) = points
    slope = (y1 - y0) / (x1 - x0)
    return y0 - slope * x0, slope


@dataclass
class ResourceEstimate:
    dsp: int
    bram: float
    lut: int
    ff: int
    budget: Board

    @property
    def feasible(self) -> bool:
        b = self.budget
        return self.dsp <= b.dsp and self.bram <= b.bram and self.lut <= b.lut and self.ff <= b.ff

    def utilization(self) -> dict:
        b = self.budget
        return {
            "dsp": self.dsp / b.dsp,
            "bram": self.bram / b.bram,
            "lut": self.lut / b.lut,
            "ff": self.ff / b.ff,
        }


def resources(cfg: DatapathConfig, psum_in_bram: bool = False) -> ResourceEstimate:
    """DSP = 5 per MAC lane; BRAM from SV bank depth in BRAM18 units;
    LUT/FF affine in ``f`` plus LUTRAM for the per-batch partial sums."""
    f, ns, m, B = cfg.unroll, cfg.n_sv, cfg.n_feat, cfg.batch
    nt = cfg.n_tiles
    dsp = DSP_PER_MAC * f
    bram18_per_bank = -(-nt * m // BRAM18_DEPTH_32B)
    bram = f * bram18_per_bank / 2.0 + IO_BRAM
    if psum_in_bram:
        bram += f * (-(-B * nt // BRAM18_DEPTH_32B)) / 2.0

    a, b = _affine(_LUT_POINTS)
    lut_psum_per_row = ns * 32 / LUT_BITS
    lut = a + b * f
    if not psum_in_bram:
        lut += lut_psum_per_row * (B - CALIBRATION_BATCH)
    a, b = _affine(_FF_POINTS)
    ff = a + b * f
    return ResourceEstimate(dsp, bram, max(int(round(lut)), 0), max(int(round(ff)), 0), cfg.resource_budget)


@dataclass
class PlatformResult:
    name: str
    clock_hz: float
    power_w: float
    latency_s: float
    gflops: float
    energy_ratio: float
    tpp_fraction: tuple

    def row(self) -> dict:
        d = asdict(self)
        d["tpp_fraction_min"], d["tpp_fraction_max"] = d.pop("tpp_fraction")
        return d


def throughput_and_energy(cfg: DatapathConfig, n_bgs: int, power_w: float, baseline: dict):
    """Returns ``(gflops, energy_efficiency_ratio, wall_seconds)`` for ``n_bgs``
    regressions against ``baseline = {"latency_s": ..., "power_w": ...}``."""
    if n_bgs < 1 or not power_w > 0:
        raise ConfigError("n_bgs and power must be positive")
    if not (baseline["latency_s"] > 0 and baseline["power_w"] > 0):
        raise ConfigError("baseline latency and power must be positive")
    rep = latency_batched(cfg)
    wall = rep.wall_seconds(n_bgs)
    return rep.gflops(n_bgs), energy_ratio(baseline["power_w"], baseline["latency_s"], power_w, wall), wall


def energy_ratio(base_power, base_latency, power, latency) -> float:
    return (base_power * base_latency) / (power * latency)


def tpp_fraction(t_pp: float, t_acq: float) -> float:
    """Share of the total measurement time spent post-processing."""
    return t_pp / (t_acq + t_pp)


# ---------------------------------------------------------------------------
# sweeps
# ---------------------------------------------------------------------------

SWEEP_COLUMNS = ["f", "B", "Ta", "clock", "cycles_analytic", "cycles_sim", "speedup", "dsp", "bram", "lut", "ff", "gflops"]


def sweep(configs: Iterable[DatapathConfig], n_bgs: int = 96100, simulate: bool = True) -> list[dict]:
    rows = []
    for cfg in configs:
        ana = latency_unbatched(cfg) if cfg.batch == 1 else latency_batched(cfg)
        sim = simulate_schedule(cfg) if simulate else None
        res = resources(cfg)
        rows.append({
            "f": cfg.unroll,
            "B": cfg.batch,
            "Ta": cfg.adder_latency,
            "clock": cfg.clock_mhz,
            "cycles_analytic": ana.total_cycles,
            "cycles_sim": sim.total_cycles if sim else "",
            "speedup": round(ana.speedup_vs_f1, 4),
            "dsp": res.dsp,
            "bram": res.bram,
            "lut": res.lut,
            "ff": res.ff,
            "gflops": round(latency_batched(cfg).gflops(n_bgs), 4),
        })
    return rows


def write_csv(rows: list[dict], path, columns=None) -> Path:
    path = Path(path)
    columns = columns or list(rows[0].keys())
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=columns, lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: r[k] for k in columns})
    return path


def divisors(n: int) -> list[int]:
    return [d for d in range(1, n + 1) if n % d == 0]


def unroll_sweep(base: DatapathConfig = DatapathConfig(), unrolls=None) -> list[DatapathConfig]:
    unrolls = unrolls or [f for f in divisors(base.n_sv)]
    return [replace(base, unroll=f, batch=1) for f in unrolls]


def batch_sweep(base: DatapathConfig = DatapathConfig(unroll=284), batches=None) -> list[DatapathConfig]:
    batches = batches or list(range(1, 41))
    return [replace(base, batch=b) for b in batches]


def gflops_from(latency_s: float, n_bgs: int, n_sv: int = REFERENCE_N_SV, n_feat: int = REFERENCE_N_FEAT) -> float:
    return flops_per_decision(n_sv, n_feat) * n_bgs / latency_s / 1e9


def parallel_efficiency(cfg: DatapathConfig) -> float:
    """Parallel efficiency speedup(f) / f of the unbatched design."""
    return latency_unbatched(replace(cfg, batch=1)).speedup_vs_f1 / cfg.unroll
