"""Accelerator tables: speedup vs unroll and batch, resource use, and the
platform comparison (CPU / ZC706 / ZCU104).

    python scripts/reproduce_tables.py --out-dir results/tables
"""

import argparse
from dataclasses import replace
from pathlib import Path

from botdasvr import datapath, harness

MEASURED = {"zc706": 1.98, "zcu104": 0.46}


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out-dir", default="results/tables")
    ap.add_argument("--simulate", action="store_true", help="add cycle-simulated columns (slower)")
    args = ap.parse_args()
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)

    base = datapath.DatapathConfig()
    unroll = datapath.sweep(datapath.unroll_sweep(base), simulate=args.simulate)
    batch = datapath.sweep(datapath.batch_sweep(replace(base, unroll=284)), simulate=args.simulate)
    datapath.write_csv(unroll, out / "speedup_vs_unroll.csv", datapath.SWEEP_COLUMNS)
    datapath.write_csv(batch, out / "speedup_vs_batch.csv", datapath.SWEEP_COLUMNS)

    print("speedup vs unroll (B = 1, Ta = 7)")
    for r in unroll:
        print(f"  f={r['f']:5d}  {r['cycles_analytic']:8d} cycles  x{r['speedup']:8.2f}  DSP {r['dsp']}")
    print(f"f = 284, B = 40: x{batch[-1]['speedup']:.2f}, asymptote {datapath.asymptotic_latency(replace(base, unroll=284)):.0f} cycles")

    print("\nresources")
    for board in ("zc706", "zcu104"):
        r = datapath.resources(datapath.DatapathConfig.for_board(board))
        print(f"  {board:>6}: DSP {r.dsp}  BRAM {r.bram:g}  LUT {r.lut}  FF {r.ff}  feasible={r.feasible}")

    overheads = {b: datapath.fit_batch_overhead(datapath.DatapathConfig.for_board(b), 96100, t) for b, t in MEASURED.items()}
    for name, ov in (("platforms.csv", None), ("platforms_fitted_overhead.csv", overheads)):
        rows = harness.platform_rows(overheads=ov)
        harness.write_rows(rows, out / name, harness.PLATFORM_COLUMNS)
        print(f"\n{name}")
        for r in rows:
            print(
                f"  {r['platform']:>9}: {r['latency_s']:.3f} s  {r['gflops']:6.2f} GFLOPS  x{r['energy_ratio']:6.1f}  "
                f"T_pp {r['tpp_min_pct']:.2f}-{r['tpp_max_pct']:.1f}%"
            )
    print(f"\nfitted per-batch overhead: " + ", ".join(f"{b} {k:.0f} cycles" for b, k in overheads.items()))


if __name__ == "__main__":
    main()
