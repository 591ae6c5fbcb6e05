"""Validation sweep over (C, epsilon): support-vector count, training error,
heated-section spread at two SNRs and the mean at a cold section.

Validation seeds are disjoint from the seed used by the acceptance run.

    python scripts/grid_search.py --C 0.01,0.1,1 --eps 0.5,1.5
"""

import argparse

import numpy as np

from botdasvr import harness, spectra, svr


def floats(text):
    return [float(v) for v in text.split(",")]


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--C", type=floats, default=[0.01, 0.03, 0.1, 0.3, 1.0])
    ap.add_argument("--eps", type=floats, default=[0.5, 1.0, 1.5])
    ap.add_argument("--seeds", type=int, nargs="+", default=[11, 12, 13])
    ap.add_argument("--out", default="results/grid_search.csv")
    args = ap.parse_args()

    ts = spectra.generate_training_set()
    hot = harness.FiberProfile(400.0, 0.4, ((0.0, 400.0, 50.0),), ambient_c=50.0)
    cold = harness.FiberProfile(400.0, 0.4, ((0.0, 400.0, 10.0),), ambient_c=10.0)
    rows = []
    for C in args.C:
        for eps in args.eps:
            m, rep = svr.train(ts, svr.SvrHyperparams(C=C, epsilon=eps, max_iter=5_000_000))
            rms = float(np.sqrt(np.mean((svr.decide(m, ts.samples) - ts.labels) ** 2)))
            std = {
                s: float(np.mean([harness.run_experiment(hot, m, "svr", s, seed=k).report.uncertainty for k in args.seeds]))
                for s in (4.5, 12.0)
            }
            cold_mean = harness.run_experiment(cold, m, "svr", 12.0, seed=args.seeds[0]).report.heated.mean_c
            rows.append({
                "C": C, "epsilon": eps, "n_sv": m.n_sv, "iterations": rep.iterations, "train_rms_degC": rms,
                "std_4p5_degC": std[4.5], "std_12_degC": std[12.0], "mean_at_10C": cold_mean,
            })
            print(
                f"C={C:<6g} eps={eps:<4g} Ns={m.n_sv:5d} rms={rms:.3f}  std(4.5 dB)={std[4.5]:.3f}  "
                f"std(12 dB)={std[12.0]:.3f}  mean at 10 degC={cold_mean:.2f}",
                flush=True,
            )
    harness.write_rows(rows, args.out, list(rows[0]))


if __name__ == "__main__":
    main()
