"""Command-line entry point (``botdasvr``).

Exit codes: 0 success, 1 usage error, 2 numeric/convergence failure,
3 I/O failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import asdict, replace
from pathlib import Path

import numpy as np

from . import baselines, config, datapath, engine, harness, spectra, svr

log = logging.getLogger("botdasvr")

EXIT_OK, EXIT_USAGE, EXIT_NUMERIC, EXIT_IO = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def _csv_floats(text):
    return [float(v) for v in text.split(",") if v.strip()]


def _csv_ints(text):
    return [int(v) for v in text.split(",") if v.strip()]


def _csv_strs(text):
    return [v.strip() for v in text.split(",") if v.strip()]


# (flag, config key, type, help) for flags shared by several subcommands
_FLAGS = {
    "grid": [
        ("--grid-start", "grid.start_ghz", float, "first grid frequency, GHz"),
        ("--grid-step", "grid.step_mhz", float, "grid step, MHz"),
        ("--grid-count", "grid.count", int, "number of grid points"),
        ("--bfs0", "calibration.bfs_at_0c_ghz", float, "BFS at 0 degC, GHz"),
        ("--coeff", "calibration.coeff_mhz_per_c", float, "BFS temperature coefficient, MHz/degC"),
    ],
    "training": [
        ("--t-min", "training.t_min", float, None),
        ("--t-max", "training.t_max", float, None),
        ("--t-step", "training.t_step", float, None),
        ("--lw-min", "training.lw_min", float, None),
        ("--lw-max", "training.lw_max", float, None),
        ("--lw-step", "training.lw_step", float, None),
    ],
    "svr": [
        ("--C", "svr.C", float, "SVR penalty"),
        ("--epsilon", "svr.epsilon", float, "SVR tube half-width, degC"),
        ("--tol", "svr.tol", float, "solver KKT tolerance"),
        ("--max-iter", "svr.max_iter", int, "solver iteration cap"),
        ("--selection", "svr.selection", str, "working-set selection: max-violating | second-order"),
    ],
    "svc": [
        ("--svc-C", "svc.C", float, "SVC penalty"),
        ("--svc-full-scale", "svc.full_scale", "flag", "train on all 141 labels instead of the 2 degC subset"),
    ],
    "inference": [
        ("--unroll", "inference.unroll", int, "tile width f of the batched kernel"),
        ("--batch", "inference.batch", int, "spectra per batch"),
        ("--reduction", "inference.reduction", str, "sequential | pairwise-tree"),
        ("--workers", "inference.workers", int, "worker threads"),
    ],
    "datapath": [
        ("--n-sv", "datapath.n_sv", int, "number of support vectors"),
        ("--n-feat", "datapath.n_feat", int, "features per spectrum"),
        ("--f", "datapath.unroll", int, "unroll factor"),
        ("--B", "datapath.batch", int, "batch size"),
        ("--ta", "datapath.adder_latency", int, "adder pipeline latency, cycles"),
        ("--clock", "datapath.clock_mhz", float, "clock, MHz"),
        ("--board", "datapath.board", str, "zc706 | zcu104 | custom"),
        ("--overhead", "datapath.batch_overhead_cycles", float, "fixed cycles added per batch"),
        ("--n-bgs", "datapath.n_bgs", int, "spectra per fiber"),
    ],
    "fiber": [
        ("--length", "fiber.length_m", float, "fiber length, m"),
        ("--spacing", "fiber.spacing_m", float, "sampling interval, m"),
        ("--heated-start", "fiber.heated_start_m", float, None),
        ("--heated-end", "fiber.heated_end_m", float, None),
        ("--heated-temp", "fiber.heated_c", float, None),
        ("--ambient", "fiber.ambient_c", float, None),
        ("--linewidth", "fiber.linewidth_mhz", float, "fiber BGS linewidth, MHz"),
        ("--thin", "fiber.thin", int, "keep every n-th sampling point (1 = full scale)"),
    ],
    "acquisition": [
        ("--n-index", "acquisition.n", float, "group refractive index"),
        ("--n-avg", "acquisition.n_avg", int, "traces averaged per frequency"),
        ("--switching-time", "acquisition.t_switch_s", float, "frequency switching time T_s, s"),
        ("--n-freq", "acquisition.n_freq", int, "scanned frequencies"),
    ],
    "experiment": [
        ("--snrs", "experiment.snrs", _csv_floats, "comma-separated SNR values, dB"),
        ("--seed", "experiment.seed", int, "noise seed"),
        ("--methods", "experiment.methods", _csv_strs, "comma-separated subset of svr,svc,lma"),
    ],
}


def _add_flags(p, *groups):
    for g in groups:
        for flag, key, typ, help_ in _FLAGS[g]:
            if typ == "flag":
                p.add_argument(flag, dest=key, action="store_const", const=True, default=argparse.SUPPRESS, help=help_)
            else:
                p.add_argument(flag, dest=key, type=typ, default=argparse.SUPPRESS, help=help_)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="botdasvr", description="SVR temperature extraction for BOTDA spectra and accelerator models.")
    p.add_argument("--config", help="YAML config file; flags override it")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("gen-train", help="write the synthetic training set (.csv or .npz)")
    s.add_argument("--out", required=True)
    _add_flags(s, "grid", "training")

    s = sub.add_parser("train", help="train the SVR (and optionally the SVC) model")
    s.add_argument("--train-data", help="training set file; generated from the config when omitted")
    s.add_argument("--out", required=True, help="model path (.json text, anything else binary)")
    s.add_argument("--svc-out", help="also train the SVC and save it here (.npz)")
    s.add_argument("--grid-search", action="store_true", help="sweep --C-values x --eps-values instead of training one model")
    s.add_argument("--C-values", type=_csv_floats, default=[0.01, 0.1, 1.0, 10.0])
    s.add_argument("--eps-values", type=_csv_floats, default=[0.25, 1.0])
    s.add_argument("--val-snr", type=float, default=12.0, help="validation SNR for the grid search, dB")
    _add_flags(s, "grid", "training", "svr", "svc", "experiment")

    s = sub.add_parser("infer", help="temperatures for a file of raw spectra")
    s.add_argument("--model", help="SVR model (svr) or SVC model (svc)")
    s.add_argument("--input", required=True, help=".npz with 'spectra' or a CSV with one spectrum per row")
    s.add_argument("--method", choices=harness.METHODS, default="svr")
    s.add_argument("--out", required=True, help="output CSV")
    _add_flags(s, "grid", "inference")

    s = sub.add_parser("sweep-unroll", help="latency/speedup/resources over unroll factors (B = 1)")
    s.add_argument("--unrolls", type=_csv_ints, help="default: every divisor of n_sv")
    s.add_argument("--no-simulate", action="store_true")
    s.add_argument("--out", required=True)
    _add_flags(s, "datapath")

    s = sub.add_parser("sweep-batch", help="latency/speedup over batch sizes at a fixed unroll")
    s.add_argument("--batches", type=_csv_ints, default=list(range(1, 41)))
    s.add_argument("--no-simulate", action="store_true")
    s.add_argument("--out", required=True)
    _add_flags(s, "datapath")

    s = sub.add_parser("simulate", help="cycle-level simulation of one configuration")
    s.add_argument("--trace", help="write the per-cycle event trace here")
    s.add_argument("--accumulate-latency", type=int, default=1)
    _add_flags(s, "datapath")

    s = sub.add_parser("experiment-snr", help="uncertainty vs SNR on the synthetic fiber")
    s.add_argument("--model", help="SVR model; trained from the config when omitted")
    s.add_argument("--svc-model", help="SVC model; trained from the config when omitted")
    s.add_argument("--out-dir", required=True)
    _add_flags(s, "grid", "training", "svr", "svc", "fiber", "experiment", "inference")

    s = sub.add_parser("compare-platforms", help="CPU / ZC706 / ZCU104 comparison table")
    s.add_argument("--fit-overhead", action="store_true", help="fit the per-batch overhead to the measured board latencies")
    s.add_argument("--out", required=True)
    _add_flags(s, "datapath", "fiber", "acquisition")

    s = sub.add_parser("report", help="write every reproduction table into one directory")
    s.add_argument("--model", help="SVR model; trained from the config when omitted")
    s.add_argument("--svc-model", help="SVC model; trained from the config when omitted")
    s.add_argument("--out-dir", required=True)
    s.add_argument("--no-simulate", action="store_true", help="skip simulated columns in the sweeps")
    _add_flags(s, "grid", "training", "svr", "svc", "fiber", "acquisition", "experiment", "inference", "datapath")
    return p


# ---------------------------------------------------------------------------
# helpers
# ---------------------------------------------------------------------------

MEASURED_LATENCY_S = {"zc706": 1.98, "zcu104": 0.46}


def _overrides(ns) -> dict:
    return {k: v for k, v in vars(ns).items() if "." in k}


def _training_set(cfg, path=None):
    if path:
        return spectra.load_training_set(path)
    return cfg.training_set()


def _train_svr(cfg, ts):
    model, rep = svr.train(ts, cfg.svr_hyperparams())
    log.info("SVR: %d support vectors, %d iterations, %.2f s", rep.num_support_vectors, rep.iterations, rep.duration_s)
    return model


def _train_svc(cfg, ts):
    return baselines.svc_train(ts, cfg.svc.C, cfg.svc.tol, cfg.svc_label_step())


def _models(cfg, args, methods):
    ts = None
    out = {}
    for m in methods:
        if m == "svr":
            if args.model:
                out[m] = svr.load(args.model)
            else:
                ts = ts or cfg.training_set()
                out[m] = _train_svr(cfg, ts)
        elif m == "svc":
            if args.svc_model:
                out[m] = baselines.svc_load(args.svc_model)
            else:
                ts = ts or cfg.training_set()
                out[m] = _train_svc(cfg, ts)
        elif m == "lma":
            out[m] = None
        else:
            raise UsageError(f"unknown method {m!r}")
    return out


def _read_spectra(path):
    path = Path(path)
    if path.suffix == ".npz":
        with np.load(path) as z:
            for key in ("spectra", "samples"):
                if key in z.files:
                    return np.atleast_2d(z[key])
        raise svr.ModelFormatError(f"{path}: no 'spectra' array in archive", 0)
    return np.loadtxt(path, delimiter=",", ndmin=2)


def _overhead_fits(cfg, n_bgs):
    return {
        b: datapath.fit_batch_overhead(datapath.DatapathConfig.for_board(b), n_bgs, MEASURED_LATENCY_S[b])
        for b in ("zc706", "zcu104")
    }


def _sweep_rows(configs, n_bgs, simulate):
    return datapath.sweep(configs, n_bgs=n_bgs, simulate=simulate)


def _snr_experiment(cfg, models, out_dir, workers):
    fp = cfg.fiber_profile()
    grid, cal = cfg.frequency_grid(), cfg.temperature_calibration()
    seed = cfg.experiment.seed
    reports = []
    for s in cfg.experiment.snrs:
        for method, model in models.items():
            tile = cfg.tile()
            res = harness.run_experiment(fp, model, method, s, seed, grid, cal, tile, cfg.inference.batch, workers)
            reports.append(res.report)
            if s == max(cfg.experiment.snrs):
                harness.write_rows(harness.trace_rows(res), out_dir / f"trace_{method}.csv", harness.TRACE_COLUMNS)
    harness.write_rows(harness.snr_rows(reports), out_dir / "uncertainty_vs_snr.csv", harness.SNR_COLUMNS)
    return reports


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def cmd_gen_train(cfg, args):
    ts = cfg.training_set()
    spectra.save_training_set(ts, args.out)
    print(f"wrote {len(ts)} spectra x {ts.grid.count} features to {args.out}")


def cmd_train(cfg, args):
    ts = _training_set(cfg, args.train_data)
    if args.grid_search:
        return _grid_search(cfg, args, ts)
    model = _train_svr(cfg, ts)
    svr.save(model, args.out)
    print(f"wrote SVR model ({model.n_sv} support vectors) to {args.out}")
    if args.svc_out:
        m = _train_svc(cfg, ts)
        baselines.svc_save(m, args.svc_out)
        print(f"wrote SVC model ({m.n_classifiers} classifiers) to {args.svc_out}")


def _grid_search(cfg, args, ts):
    """Nₛ and validation uncertainty for every (C, epsilon) pair."""
    fp = harness.FiberProfile(400.0, cfg.fiber.spacing_m, ((0.0, 400.0, cfg.fiber.heated_c),), cfg.fiber.ambient_c, cfg.fiber.linewidth_mhz)
    rows = []
    for C in args.C_values:
        for eps in args.eps_values:
            hp = replace(cfg.svr_hyperparams(), C=C, epsilon=eps)
            model, rep = svr.train(ts, hp)
            res = harness.run_experiment(fp, model, "svr", args.val_snr, cfg.experiment.seed, ts.grid, cfg.temperature_calibration())
            rows.append({
                "C": C,
                "epsilon": eps,
                "n_sv": model.n_sv,
                "iterations": rep.iterations,
                "val_snr_db": args.val_snr,
                "val_mean_degC": res.report.heated.mean_c,
                "val_std_degC": res.report.uncertainty,
            })
            print(f"C={C:g} eps={eps:g}: Ns={model.n_sv} std={res.report.uncertainty:.4f} degC")
    harness.write_rows(rows, args.out, list(rows[0].keys()))


def cmd_infer(cfg, args):
    X = _read_spectra(args.input)
    grid = cfg.frequency_grid()
    model = None
    if args.method == "svr":
        if not args.model:
            raise UsageError("--model is required for svr")
        model = svr.load(args.model)
    elif args.method == "svc":
        if not args.model:
            raise UsageError("--model is required for svc")
        model = baselines.svc_load(args.model)
    pred = harness.infer(args.method, model, X, grid, cfg.temperature_calibration(), cfg.tile(), cfg.inference.batch, cfg.inference.workers)
    rows = [{"index": k, "pred_degC": float(v)} for k, v in enumerate(pred)]
    harness.write_rows(rows, args.out, ["index", "pred_degC"])
    print(f"wrote {len(rows)} temperatures to {args.out}")


def cmd_sweep_unroll(cfg, args):
    base = cfg.datapath_config()
    confs = datapath.unroll_sweep(base, args.unrolls)
    rows = _sweep_rows(confs, cfg.datapath.n_bgs, not args.no_simulate)
    datapath.write_csv(rows, args.out, datapath.SWEEP_COLUMNS)
    print(f"wrote {len(rows)} rows to {args.out}")


def cmd_sweep_batch(cfg, args):
    base = cfg.datapath_config()
    rows = _sweep_rows(datapath.batch_sweep(base, args.batches), cfg.datapath.n_bgs, not args.no_simulate)
    datapath.write_csv(rows, args.out, datapath.SWEEP_COLUMNS)
    print(f"wrote {len(rows)} rows to {args.out}")


def cmd_simulate(cfg, args):
    c = cfg.datapath_config()
    sim = datapath.simulate_schedule(c, accumulate_latency=args.accumulate_latency, trace=bool(args.trace))
    ana = datapath.latency_unbatched(c) if c.batch == 1 else datapath.latency_batched(c)
    print(json.dumps({
        "f": c.unroll,
        "B": c.batch,
        "cycles_sim": sim.total_cycles,
        "cycles_analytic": ana.total_cycles,
        "stall_cycles": sim.stall_cycles,
        "avg_cycles_per_regression": sim.avg_cycles_per_regression,
        "speedup_vs_f1": sim.speedup_vs_f1,
    }, indent=2))
    if args.trace:
        Path(args.trace).write_text("\n".join(sim.trace) + "\n")


def cmd_experiment_snr(cfg, args):
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    models = _models(cfg, args, cfg.experiment.methods)
    reports = _snr_experiment(cfg, models, out_dir, cfg.inference.workers)
    for r in reports:
        print(f"{r.snr_db:5.1f} dB  {r.method}: std {r.uncertainty:.4f} degC  mean {r.heated.mean_c:.3f} degC")


def cmd_compare_platforms(cfg, args):
    overheads = _overhead_fits(cfg, cfg.datapath.n_bgs) if args.fit_overhead else None
    rows = harness.platform_rows(cfg.datapath.n_bgs, cfg.acquisition_config(), overheads)
    harness.write_rows(rows, args.out, harness.PLATFORM_COLUMNS)
    for r in rows:
        print(f"{r['platform']:>9}: {r['latency_s']:.4f} s  {r['gflops']:.2f} GFLOPS  x{r['energy_ratio']:.1f} energy")


def cmd_report(cfg, args):
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    sim = not args.no_simulate
    n_bgs = cfg.datapath.n_bgs
    base = cfg.datapath_config()

    unroll = datapath.sweep(datapath.unroll_sweep(replace(base, unroll=1, batch=1)), n_bgs, sim)
    datapath.write_csv(unroll, out / "speedup_vs_unroll.csv", datapath.SWEEP_COLUMNS)
    batch = datapath.sweep(datapath.batch_sweep(replace(base, batch=1)), n_bgs, sim)
    datapath.write_csv(batch, out / "speedup_vs_batch.csv", datapath.SWEEP_COLUMNS)

    ac = cfg.acquisition_config()
    plat = harness.platform_rows(n_bgs, ac)
    harness.write_rows(plat, out / "platforms.csv", harness.PLATFORM_COLUMNS)
    fitted = harness.platform_rows(n_bgs, ac, _overhead_fits(cfg, n_bgs))
    harness.write_rows(fitted, out / "platforms_fitted_overhead.csv", harness.PLATFORM_COLUMNS)
    measured = [{"platform": p, "latency_s": t} for p, t in [("i7-5960x", 19.41), *MEASURED_LATENCY_S.items()]]
    harness.write_rows(harness.tpp_rows(measured, ac=ac), out / "tpp_fraction.csv", harness.TPP_COLUMNS)

    models = _models(cfg, args, cfg.experiment.methods)
    reports = _snr_experiment(cfg, models, out, cfg.inference.workers)

    acq = {}
    for n_avg in (32, 1024):
        t_acq, t_c = harness.acquisition_time(cfg.acquisition_config(n_avg))
        acq[str(n_avg)] = {"t_acq_s": t_acq, "t_c_s": t_c}
    summary = {
        "config": asdict(cfg),
        "acquisition": acq,
        "uncertainty": [harness.report_to_dict(r) for r in reports],
        "platforms": plat,
    }
    harness.write_json(summary, out / "summary.json")
    print(f"wrote report to {out}")


COMMANDS = {
    "gen-train": cmd_gen_train,
    "train": cmd_train,
    "infer": cmd_infer,
    "sweep-unroll": cmd_sweep_unroll,
    "sweep-batch": cmd_sweep_batch,
    "simulate": cmd_simulate,
    "experiment-snr": cmd_experiment_snr,
    "compare-platforms": cmd_compare_platforms,
    "report": cmd_report,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_OK if e.code in (0, None) else EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        cfg = config.load(args.config, _overrides(args))
        COMMANDS[args.command](cfg, args)
    except (config.ConfigFileError, UsageError, datapath.ConfigError, engine.TileError, harness.ModelMismatchError, svr.DimensionError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (svr.ModelFormatError, svr.UnsupportedVersionError, OSError) as e:
        print(f"I/O error: {e}", file=sys.stderr)
        return EXIT_IO
    except (svr.ConvergenceError, FloatingPointError, ArithmeticError, datapath.SimulationError, np.linalg.LinAlgError) as e:
        print(f"numeric error: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
