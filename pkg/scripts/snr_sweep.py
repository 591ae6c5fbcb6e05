"""Uncertainty of SVR, SVC (and optionally LMA) on the synthetic 38.44 km fiber
across the 4.5-12 dB sweep.

    python scripts/snr_sweep.py --thin 10 --out results/snr.csv
"""

import argparse
import time

from botdasvr import baselines, harness, spectra, svr


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--thin", type=int, default=10, help="keep every n-th sampling point (1 = all 96,100)")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--svc-desk", action="store_true", help="36-class SVC instead of all 141 labels")
    ap.add_argument("--lma", action="store_true", help="include the curve-fitting baseline")
    ap.add_argument("--workers", type=int, default=1)
    ap.add_argument("--out", default="results/uncertainty_vs_snr.csv")
    args = ap.parse_args()

    ts = spectra.generate_training_set()
    t0 = time.perf_counter()
    model, rep = svr.train(ts)
    print(f"SVR: {rep.num_support_vectors} support vectors, {rep.duration_s:.1f} s")
    svc = baselines.svc_train(ts, label_step=baselines.DESK_LABEL_STEP if args.svc_desk else None)
    print(f"SVC: {svc.n_classifiers} classifiers, {time.perf_counter() - t0:.1f} s total training")

    models = {"svr": model, "svc": svc}
    if args.lma:
        models["lma"] = None
    fp = harness.FiberProfile()
    fp = fp.thinned(args.thin) if args.thin > 1 else fp
    reports = harness.snr_sweep(fp, models, seed=args.seed, workers=args.workers)
    harness.write_rows(harness.snr_rows(reports), args.out, harness.SNR_COLUMNS)

    print(f"\nheated-section std (degC), {fp.n_points} spectra")
    print("  SNR   " + "".join(f"{m:>8}" for m in models))
    for s in harness.SNR_SWEEP_DB:
        row = {r.method: r.uncertainty for r in reports if r.snr_db == s}
        print(f"  {s:4.1f}  " + "".join(f"{row[m]:8.3f}" for m in models))


if __name__ == "__main__":
    main()
