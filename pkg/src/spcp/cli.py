"""Command line interface.

Subcommands: fit, predict, diagnose, simulate, study, heatmap. Exit codes:
0 on success, 1 on validation/configuration errors, 2 on numerical
failures during sampling or post-processing.
"""

import argparse
import csv
import json
import os
import sys

import numpy as np

from . import DataError, NumericError, SpcpError, __version__
from . import dataio, diagnostics, simulation
from .sampler import McmcConfig
from .variants import VARIANTS, ModelSpec, fit as fit_model


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise DataError(message)


def _mcmc_args(p):
    p.add_argument("--iters", type=int, default=20_000, help="total MCMC sweeps")
    p.add_argument("--burn", type=int, default=2_000, help="burn-in sweeps")
    p.add_argument("--thin", type=int, default=10, help="thinning interval")
    p.add_argument("--full-scale", action="store_true",
                   help="use the headline chain length (260k/10k/25)")
    p.add_argument("--seed", type=int, default=0)


def _mcmc_from(args, seed=None):
    if args.full_scale:
        cfg = simulation.full_mcmc(seed=args.seed if seed is None else seed)
    else:
        cfg = McmcConfig(n_iter=args.iters, n_burn=args.burn, n_thin=args.thin,
                         seed=args.seed if seed is None else seed)
    return cfg


def build_parser():
    ap = _Parser(prog="spcp", description=__doc__)
    ap.add_argument("--version", action="version", version=f"spcp {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fit", help="fit a model to visual field data")
    p.add_argument("--model", choices=VARIANTS, default="spatial-cp")
    p.add_argument("--data", required=True, help="visual field CSV")
    p.add_argument("--angles", default=None,
                   help="angle CSV (default: packaged synthetic 54-point map)")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--y-scale", type=float, default=10.0,
                   help="divide sensitivities by this on ingestion")
    p.add_argument("--days-per-year", type=float, default=365.25)
    p.add_argument("--dissim-scale", type=float, default=100.0)
    p.add_argument("--kappa2", type=float, default=1000.0)
    p.add_argument("--rho", type=float, default=0.99)
    p.add_argument("--holdout-final", action="store_true",
                   help="fit on all but the final visit and score its prediction")
    _mcmc_args(p)

    p = sub.add_parser("predict", help="posterior predictive summaries from a fit")
    p.add_argument("--samples", required=True, help="directory written by fit")
    p.add_argument("--times", required=True,
                   help="comma-separated evaluation times in years after baseline")
    p.add_argument("--out", required=True, help="output CSV path")

    p = sub.add_parser("diagnose", help="progression metrics and the logistic report")
    p.add_argument("--samples-root", required=True,
                   help="directory of per-eye sample directories")
    p.add_argument("--labels", required=True,
                   help="CSV with header eye_id,progressing")
    p.add_argument("--out", required=True, help="output JSON path")

    p = sub.add_parser("simulate", help="generate one replicate of a study setting")
    p.add_argument("--setting", type=int, choices=(1, 2, 3, 4, 5), required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--visits", type=int, default=21)

    p = sub.add_parser("study", help="replicated simulation study with model comparison")
    p.add_argument("--settings", default="5", help="comma-separated setting ids")
    p.add_argument("--models", default="all",
                   help="comma-separated model names, or 'all'")
    p.add_argument("--replicates", type=int, default=50)
    p.add_argument("--fit-visits", type=int, default=14)
    p.add_argument("--fixed-phi", action="store_true",
                   help="run the fixed-effects study instead of the settings grid")
    p.add_argument("--jobs", type=int, default=None)
    p.add_argument("--out", required=True)
    _mcmc_args(p)

    p = sub.add_parser("heatmap", help="change-point probability frames from a fit")
    p.add_argument("--samples", required=True)
    p.add_argument("--angles", default=None)
    p.add_argument("--dissim-scale", type=float, default=100.0)
    p.add_argument("--step", type=float, default=0.1, help="frame spacing in years")
    p.add_argument("--extend", type=float, default=1.0,
                   help="years to extend past the end of follow-up")
    p.add_argument("--out", required=True)
    return ap


def _load_graph(args):
    path = args.angles or dataio.default_angle_file()
    scale = getattr(args, "dissim_scale", 100.0)
    return dataio.load_angle_csv(path, dissim_scale=scale), path


def _cmd_fit(args):
    graph, angle_path = _load_graph(args)
    eyes = dataio.load_vf_csv(args.data, site_ids=graph.site_ids,
                              y_scale=args.y_scale, days_per_year=args.days_per_year)
    os.makedirs(args.out, exist_ok=True)
    multi = len(eyes) > 1
    hashes = {"data": dataio.file_sha256(args.data),
              "angles": dataio.file_sha256(angle_path)}
    for k, series in enumerate(eyes):
        fit_series = series.subset_visits(series.nu - 1) if args.holdout_final else series
        mcmc = _mcmc_from(args, seed=args.seed + k)
        spec = ModelSpec(variant=args.model, mcmc=mcmc)
        spec.spatial.kappa2 = args.kappa2
        spec.spatial.rho = args.rho
        samples = fit_model(spec, fit_series, graph)
        report = {
            "eye_id": series.eye_id,
            "dic": None,
            "p_d": None,
            "mspe": None,
            "geweke_max_abs_z": None,
            "max_metric": None,
            "per_site_p": None,
        }
        d = diagnostics.dic(samples, fit_series)
        report["dic"] = d.dic
        report["p_d"] = d.p_d
        if args.holdout_final:
            report["mspe"] = diagnostics.mspe(
                samples, series.times[-1], series.obs[:, -1])
        try:
            report["geweke_max_abs_z"] = diagnostics.geweke_panel(samples)
        except DataError:
            report["geweke_max_abs_z"] = None  # chain too short for the panel
        pm = diagnostics.progression_metric(samples)
        report["max_metric"] = pm.max_metric
        report["per_site_p"] = [float(v) for v in pm.per_site]
        samples.meta.update({
            "input_hashes": hashes,
            "cli": {
                "model": args.model, "seed": mcmc.seed,
                "y_scale": args.y_scale, "days_per_year": args.days_per_year,
                "dissim_scale": args.dissim_scale, "kappa2": args.kappa2,
                "rho": args.rho, "holdout_final": bool(args.holdout_final),
            },
        })
        out_dir = os.path.join(args.out, series.eye_id) if multi else args.out
        samples.save(out_dir)
        with open(os.path.join(out_dir, "diagnostics.json"), "w") as f:
            json.dump(report, f, sort_keys=True, indent=2)
            f.write("\n")
        print(f"fit {series.eye_id}: {samples.n_draws} draws -> {out_dir} "
              f"(DIC {d.dic:.3f}, p_D {d.p_d:.3f})")
    return 0


def _cmd_predict(args):
    samples = dataio.load_samples(args.samples)
    times = np.array([float(t) for t in args.times.split(",")])
    y_scale = float(samples.meta.get("y_scale", 1.0))
    pred = diagnostics.predict_tobit_mean(samples, times)
    with open(args.out, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["site_id", "time_years", "predicted_db"])
        for i, sid in enumerate(samples.site_ids):
            for t_idx, t in enumerate(times):
                w.writerow([int(sid), dataio.fmt9(t),
                            dataio.fmt9(pred[i, t_idx] * y_scale)])
    print(f"predictions for {len(times)} times -> {args.out}")
    return 0


def _cmd_diagnose(args):
    labels = {}
    with open(args.labels, newline="") as f:
        reader = csv.reader(f)
        header = next(reader, None)
        if header is None or [c.strip() for c in header] != ["eye_id", "progressing"]:
            raise DataError(f"{args.labels}: expected header eye_id,progressing")
        for r in reader:
            if r:
                labels[r[0].strip()] = r[1].strip().lower() in ("1", "true", "yes")
    entries = []
    for name in sorted(os.listdir(args.samples_root)):
        d = os.path.join(args.samples_root, name)
        if os.path.isdir(d) and os.path.exists(os.path.join(d, "meta.json")):
            samples = dataio.load_samples(d)
            eye = samples.meta.get("eye_id") or name
            if eye not in labels:
                raise DataError(f"no progression label for eye {eye}")
            pm = diagnostics.progression_metric(samples)
            entries.append({"eye_id": eye, "max_metric": pm.max_metric,
                            "progressing": bool(labels[eye])})
    if not entries:
        raise DataError(f"{args.samples_root}: no sample directories found")
    metrics = np.array([e["max_metric"] for e in entries])
    labs = np.array([e["progressing"] for e in entries])
    rep = diagnostics.logistic_diagnostic(metrics, labs)
    out = {
        "eyes": entries,
        "logistic": {
            "aic": rep.aic, "auc": rep.auc, "p_value": rep.p_value,
            "converged": rep.converged, "slope": rep.slope,
            "intercept": rep.intercept,
        },
    }
    with open(args.out, "w") as f:
        json.dump(out, f, sort_keys=True, indent=2, allow_nan=True)
        f.write("\n")
    print(f"diagnosed {len(entries)} eyes -> {args.out} "
          f"(AUC {rep.auc:.3f})")
    return 0


def _cmd_simulate(args):
    graph = dataio.default_vf_graph()
    setting = simulation.make_setting(args.setting)
    Phi, series = simulation.generate_setting(setting, graph, args.seed,
                                              n_visits=args.visits)
    os.makedirs(args.out, exist_ok=True)
    series.time_scale = 365.25  # emit times as days
    with open(os.path.join(args.out, "truth.csv"), "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["site_id", "beta0", "beta1", "lambda0", "lambda1", "eta", "theta"])
        theta = np.clip(Phi[:, 4], series.x1, series.x_nu)
        for i, sid in enumerate(graph.site_ids):
            w.writerow([int(sid)] + [dataio.fmt9(v) for v in Phi[i]] +
                       [dataio.fmt9(theta[i])])
    dataio.write_vf_csv(os.path.join(args.out, "data.csv"), [series])
    with open(os.path.join(args.out, "meta.json"), "w") as f:
        json.dump({"setting": args.setting, "seed": args.seed,
                   "visits": args.visits, "alpha": setting.alpha,
                   "delta": list(setting.delta),
                   "description": setting.description}, f, sort_keys=True, indent=2)
        f.write("\n")
    print(f"setting {args.setting} replicate -> {args.out}")
    return 0


def _cmd_study(args):
    graph = dataio.default_vf_graph()
    models = tuple(VARIANTS) if args.models == "all" else tuple(args.models.split(","))
    for mdl in models:
        if mdl not in VARIANTS:
            raise DataError(f"unknown model {mdl!r}")
    mcmc = None if not args.full_scale else {"n_iter": 260_000, "n_burn": 10_000, "n_thin": 25}
    if not args.full_scale:
        mcmc = {"n_iter": args.iters, "n_burn": args.burn, "n_thin": args.thin}

    def progress(done, total):
        print(f"  replicate {done}/{total}", flush=True)

    if args.fixed_phi:
        result, _, _ = simulation.fixed_phi_study(
            args.replicates, graph, mcmc=mcmc, master_seed=args.seed,
            n_jobs=args.jobs, progress=progress)
    else:
        settings = tuple(int(s) for s in args.settings.split(","))
        result = simulation.run_study(settings, models, args.replicates, graph,
                                      fit_visits=args.fit_visits, mcmc=mcmc,
                                      master_seed=args.seed, n_jobs=args.jobs,
                                      progress=progress)
    simulation.write_study_tables(result, args.out)
    print(f"study tables -> {args.out}")
    return 0


def _cmd_heatmap(args):
    samples = dataio.load_samples(args.samples)
    if args.angles:
        graph = dataio.load_angle_csv(args.angles, dissim_scale=args.dissim_scale)
    else:
        graph = dataio.default_vf_graph(dissim_scale=args.dissim_scale)
    if set(graph.site_ids.tolist()) != set(samples.site_ids.tolist()):
        raise DataError("angle file sites do not match the fitted sites")
    # order graph metadata to the samples' site order
    order = {int(s): i for i, s in enumerate(graph.site_ids)}
    idx = np.array([order[int(s)] for s in samples.site_ids])
    inv = np.empty(graph.m, dtype=np.int64)
    inv[idx] = np.arange(graph.m)
    from .graph import SpatialGraph

    graph = SpatialGraph(site_ids=graph.site_ids[idx], rows=graph.rows[idx],
                         cols=graph.cols[idx], dissim=graph.dissim[idx],
                         edges=np.sort(inv[graph.edges], axis=1),
                         blind_spot_ids=graph.blind_spot_ids,
                         dissim_scale=graph.dissim_scale)
    names = dataio.emit_heatmap_frames(samples, graph, args.out,
                                       step=args.step, extend=args.extend)
    print(f"{len(names)} frames -> {args.out}")
    return 0


_COMMANDS = {
    "fit": _cmd_fit,
    "predict": _cmd_predict,
    "diagnose": _cmd_diagnose,
    "simulate": _cmd_simulate,
    "study": _cmd_study,
    "heatmap": _cmd_heatmap,
}


def cli_main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return _COMMANDS[args.command](args)
    except DataError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except NumericError as e:
        print(f"numerical failure: {e}", file=sys.stderr)
        return 2
    except SpcpError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except OSError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


def main():
    sys.exit(cli_main())


if __name__ == "__main__":
    main()
