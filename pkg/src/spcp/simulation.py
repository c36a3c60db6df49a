"""Data generation and evaluation for the bundled simulation studies.

Five data-generating settings share one joint spatial structure with the
baseline parameters below and differ in which pieces are switched off:

1. progressing: change points all before follow-up, no spatial dependence,
   no variance change (a progressing point-wise linear model);
2. stable: change points all after follow-up, otherwise as setting 1;
3. non-spatial change points: variance change restored, no spatial
   dependence, no cross-covariance;
4. spatial change points without cross-covariance;
5. the full model.

Each replicate draws a fresh effect matrix from the prior, simulates 21
visits at a 0.05 time step through the Tobit observation model, fits the
requested model variants to an initial stretch of visits, and scores fit
(DIC), prediction (MSPE at held-out horizons), and change-point recovery
(bias, MSE, and empirical coverage of 95% intervals).
"""

import os
from dataclasses import dataclass, field
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from . import DataError
from . import _kernels
from .diagnostics import credible_interval, dic, mspe, progression_metric
from .likelihood import VFSeries, effect_moments
from .mcar import McarHyper, mcar_sample
from .sampler import McmcConfig, SpatialCpConfig
from .variants import ModelSpec, NonspatialConfig, PlrConfig, fit

BASE_DELTA = np.array([25.0, -15.0, -0.5, 0.1, 0.5])
BASE_ALPHA = 0.10
NO_SPATIAL_ALPHA = 1000.0
FIXED_PHI_DELTA = np.array([25.0, -30.0, 1.0, 0.5, 0.5])

# Cross-covariance template: variances 0.025 with correlations +/-0.5
# (0.25 between the two variance-process effects).
_BASE_CORR = np.array([
    [1.00, -0.50, -0.50, -0.50, 0.50],
    [-0.50, 1.00, 0.50, 0.50, -0.50],
    [-0.50, 0.50, 1.00, 0.25, -0.50],
    [-0.50, 0.50, 0.25, 1.00, -0.50],
    [0.50, -0.50, -0.50, -0.50, 1.00],
])
_BASE_VAR = 0.025


def base_cross_covariance(min_eig=1e-6):
    """The full cross-covariance, shrunk toward diagonal if needed.

    Off-diagonal entries are correlations scaled by the common variance.
    If the resulting matrix were not positive definite the correlations
    would be shrunk by the smallest factor restoring a minimum eigenvalue
    of ``min_eig``; returns (Sigma, shrink_factor).
    """
    corr = _BASE_CORR.copy()
    off = corr - np.eye(5)
    shrink = 1.0
    for _ in range(60):
        Sigma = _BASE_VAR * (np.eye(5) + shrink * off)
        if np.linalg.eigvalsh(Sigma).min() >= min_eig:
            break
        shrink *= 0.95
    return Sigma, shrink


@dataclass
class SimSetting:
    id: int
    delta: np.ndarray
    Sigma: np.ndarray
    alpha: float
    description: str
    sigma_shrink: float = 1.0


def make_setting(setting_id):
    """The five data-generating settings."""
    Sigma_full, shrink = base_cross_covariance()
    diag = np.diag(np.diag(Sigma_full)).copy()
    if setting_id == 1:
        delta = BASE_DELTA.copy()
        delta[3] = 0.0
        delta[4] = -10.0
        S = diag.copy()
        S[3, 3] = 0.0
        return SimSetting(1, delta, S, NO_SPATIAL_ALPHA,
                          "progressing: change points before follow-up", shrink)
    if setting_id == 2:
        delta = BASE_DELTA.copy()
        delta[3] = 0.0
        delta[4] = 10.0
        S = diag.copy()
        S[3, 3] = 0.0
        return SimSetting(2, delta, S, NO_SPATIAL_ALPHA,
                          "stable: change points after follow-up", shrink)
    if setting_id == 3:
        return SimSetting(3, BASE_DELTA.copy(), diag, NO_SPATIAL_ALPHA,
                          "non-spatial change points", shrink)
    if setting_id == 4:
        return SimSetting(4, BASE_DELTA.copy(), diag, BASE_ALPHA,
                          "spatial change points, no cross-covariance", shrink)
    if setting_id == 5:
        return SimSetting(5, BASE_DELTA.copy(), Sigma_full, BASE_ALPHA,
                          "full spatial change-point model", shrink)
    raise DataError(f"unknown simulation setting {setting_id}")


def draw_effects(delta, Sigma, alpha, graph, rng, rho=0.99):
    """Effect matrix draw, tolerating zero-variance columns.

    Columns with zero prior variance are pinned at their mean; the rest
    are drawn jointly from the spatial prior on the reduced covariance.
    """
    delta = np.asarray(delta, dtype=float)
    Sigma = np.asarray(Sigma, dtype=float)
    pos = np.diag(Sigma) > 0.0
    Phi = np.tile(delta, (graph.m, 1))
    if pos.any():
        sub = McarHyper(delta=delta[pos], Sigma=Sigma[np.ix_(pos, pos)],
                        alpha=alpha, rho=rho)
        Phi[:, pos] = mcar_sample(sub, graph, rng)
    return Phi


def simulate_series(Phi, times, rng, eye_id="sim", site_ids=None):
    """Tobit observation of one effect matrix at the given visit times."""
    times = np.asarray(times, dtype=float)
    mu, sig = effect_moments(Phi, times)
    y = mu + sig * rng.standard_normal(mu.shape)
    censored = y <= 0.0
    obs = np.where(censored, 0.0, y)
    return VFSeries(times=times, obs=obs, censored=censored, eye_id=eye_id,
                    site_ids=site_ids)


def generate_setting(setting, graph, seed, n_visits=21, dt=0.05):
    """(truth, series) for one replicate of a setting; bit-reproducible."""
    rng = np.random.default_rng(seed)
    times = dt * np.arange(n_visits)
    Phi = draw_effects(setting.delta, setting.Sigma, setting.alpha, graph, rng)
    series = simulate_series(Phi, times, rng, eye_id=f"setting{setting.id}-seed{seed}",
                             site_ids=graph.site_ids.copy())
    return Phi, series


def desk_mcmc(seed=0):
    """Reduced chain length for tractable studies (20k sweeps, 1.8k draws)."""
    return McmcConfig(n_iter=20_000, n_burn=2_000, n_thin=10, seed=seed)


def full_mcmc(seed=0):
    """Chain length used for the headline studies (250k sweeps post burn-in)."""
    return McmcConfig(n_iter=260_000, n_burn=10_000, n_thin=25, seed=seed)


def build_spec(model, mcmc, graph=None):
    if model == "spatial-cp":
        return ModelSpec(variant=model, mcmc=mcmc, spatial=SpatialCpConfig())
    if model in ("ns-latent", "ns-cont", "ns-disc"):
        return ModelSpec(variant=model, mcmc=mcmc, nonspatial=NonspatialConfig())
    if model == "plr":
        return ModelSpec(variant=model, mcmc=mcmc, plr=PlrConfig())
    raise DataError(f"unknown model {model!r}")


def _summarize_fit(samples, fit_series, full_series, horizons, level=0.95):
    """Per-fit scalar and per-site summaries consumed by the aggregators."""
    out = {}
    d = dic(samples, fit_series)
    out["dic"] = d.dic
    out["p_d"] = d.p_d
    if horizons:
        h_times = np.asarray(horizons, dtype=float)
        idx = []
        for h in h_times:
            match = np.flatnonzero(np.isclose(full_series.times, h))
            if match.size != 1:
                raise DataError(f"horizon {h} is not a simulated visit time")
            idx.append(match[0])
        obs_h = full_series.obs[:, idx]
        vals = mspe(samples, h_times, obs_h)
        out["mspe"] = np.atleast_1d(vals)
    theta = samples.theta
    eta = samples.eta
    qs = np.quantile(theta, [0.025, 0.5, 0.975], axis=0)
    out["theta_hat"] = theta.mean(axis=0)
    out["theta_lo"], out["theta_hi"] = qs[0], qs[2]
    qe = np.quantile(eta, [0.025, 0.975], axis=0)
    out["eta_hat"] = eta.mean(axis=0)
    out["eta_lo"], out["eta_hi"] = qe[0], qe[1]
    if np.all(np.isfinite(samples.alpha)):
        out["alpha_hat"] = float(samples.alpha.mean())
        out["alpha_lo"], out["alpha_hi"] = credible_interval(samples.alpha, level)
    out["max_metric"] = progression_metric(samples).max_metric
    return out


def _study_replicate(args):
    """One replicate: simulate, fit every model, summarize. Runs in a worker."""
    (setting_id, rep, data_seed, model_seeds, models, graph, fit_visits,
     horizons, mcmc_kwargs, n_visits, dt) = args
    setting = make_setting(setting_id)
    Phi_true, series = generate_setting(setting, graph, data_seed,
                                        n_visits=n_visits, dt=dt)
    fit_series = series.subset_visits(fit_visits) if fit_visits < series.nu else series
    truth = {
        "eta_true": Phi_true[:, 4].copy(),
        "theta_true": np.clip(Phi_true[:, 4], fit_series.x1, fit_series.x_nu),
        "alpha_true": setting.alpha,
    }
    results = {}
    for model, mseed in zip(models, model_seeds):
        spec = build_spec(model, McmcConfig(seed=mseed, **mcmc_kwargs))
        samples = fit(spec, fit_series, graph)
        results[model] = _summarize_fit(samples, fit_series, series, horizons)
    return setting_id, rep, truth, results


@dataclass
class SimResult:
    """Stacked per-replicate records plus aggregate tables."""

    settings: tuple
    models: tuple
    n_replicates: int
    horizons: tuple
    records: dict = field(default_factory=dict)  # (setting, model) -> dict of stacked arrays
    truths: dict = field(default_factory=dict)   # setting -> dict of stacked arrays

    def aggregate(self, setting_id, model):
        """bias / mse / ec for theta and eta, plus mean fit and prediction scores."""
        rec = self.records[(setting_id, model)]
        tru = self.truths[setting_id]
        out = {"dic": float(np.mean(rec["dic"])), "p_d": float(np.mean(rec["p_d"]))}
        if "mspe" in rec:
            out["mspe"] = np.mean(rec["mspe"], axis=0)
        for name, hat, lo, hi, true in (
            ("theta", rec["theta_hat"], rec["theta_lo"], rec["theta_hi"], tru["theta_true"]),
            ("eta", rec["eta_hat"], rec["eta_lo"], rec["eta_hi"], tru["eta_true"]),
        ):
            err = hat - true
            out[f"{name}_bias"] = float(err.mean())
            out[f"{name}_mse"] = float((err ** 2).mean())
            out[f"{name}_ec"] = float(((lo <= true) & (true <= hi)).mean())
        if "alpha_hat" in rec:
            a_true = tru["alpha_true"]
            out["alpha_ec"] = float(((rec["alpha_lo"] <= a_true) & (a_true <= rec["alpha_hi"])).mean())
        out["mean_max_metric"] = float(np.mean(rec["max_metric"]))
        return out


def resolve_jobs(n_jobs=None):
    if n_jobs is not None:
        return max(1, int(n_jobs))
    env = os.environ.get("SPCP_THREADS")
    if env:
        return max(1, int(env))
    return os.cpu_count() or 1


def run_study(settings, models, n_replicates, graph, fit_visits=14,
              horizons=(0.75, 1.0), mcmc=None, master_seed=0, n_jobs=None,
              n_visits=21, dt=0.05, progress=None):
    """Fit every model to fresh replicates of each setting and aggregate.

    Replicates are independent jobs; each gets its own seed stream spawned
    from the master seed, so results are reproducible for any worker
    count. ``mcmc`` is a dict of McmcConfig overrides (defaults to the
    desk-scale chain length).
    """
    mcmc_kwargs = {"n_iter": 20_000, "n_burn": 2_000, "n_thin": 10}
    if mcmc:
        mcmc_kwargs.update(mcmc)
    settings = tuple(settings)
    models = tuple(models)
    jobs = []
    root = np.random.SeedSequence(master_seed)
    for setting_id in settings:
        s_ss = np.random.SeedSequence((master_seed, setting_id))
        rep_seeds = s_ss.spawn(n_replicates)
        for rep in range(n_replicates):
            kids = rep_seeds[rep].spawn(len(models) + 1)
            data_seed = int(kids[0].generate_state(1)[0])
            model_seeds = [int(k.generate_state(1)[0]) for k in kids[1:]]
            jobs.append((setting_id, rep, data_seed, model_seeds, models, graph,
                         fit_visits, horizons, mcmc_kwargs, n_visits, dt))
    del root
    results = _run_jobs(jobs, n_jobs, progress)
    return _collect_study(results, settings, models, n_replicates, horizons)


def _run_jobs(jobs, n_jobs, progress=None):
    n_jobs = resolve_jobs(n_jobs)
    _kernels.warmup()  # compile before forking so workers inherit the JIT cache
    out = []
    if n_jobs == 1 or len(jobs) == 1:
        for k, job in enumerate(jobs):
            out.append(_study_replicate(job))
            if progress:
                progress(k + 1, len(jobs))
    else:
        with ProcessPoolExecutor(max_workers=n_jobs) as pool:
            for k, res in enumerate(pool.map(_study_replicate, jobs, chunksize=1)):
                out.append(res)
                if progress:
                    progress(k + 1, len(jobs))
    return out


def _collect_study(results, settings, models, n_replicates, horizons):
    sim = SimResult(settings=tuple(settings), models=tuple(models),
                    n_replicates=n_replicates, horizons=tuple(horizons or ()))
    for setting_id in settings:
        rows = sorted([r for r in results if r[0] == setting_id], key=lambda r: r[1])
        truth_stack = {}
        for key in rows[0][2]:
            vals = [r[2][key] for r in rows]
            truth_stack[key] = np.stack(vals) if np.ndim(vals[0]) else np.asarray(vals)
        sim.truths[setting_id] = truth_stack
        for model in models:
            stack = {}
            for key in rows[0][3][model]:
                vals = [r[3][model][key] for r in rows]
                stack[key] = np.stack(vals) if np.ndim(vals[0]) else np.asarray(vals)
            sim.records[(setting_id, model)] = stack
    return sim


def fixed_phi_study(n_replicates, graph, delta=None, models=("spatial-cp", "ns-cont", "ns-latent"),
                    mcmc=None, master_seed=0, n_jobs=None, phi_seed=20, n_visits=21, dt=0.05,
                    progress=None):
    """Replicated fits around one fixed effect matrix.

    A single effect matrix is drawn once (change points spread across the
    whole follow-up), then every replicate simulates fresh data from it
    over all visits and fits the continuous change-point models. Returns
    (SimResult, Phi_true, per_site), where per_site stacks the
    posterior-mean change points per site across replicates.
    """
    delta = FIXED_PHI_DELTA.copy() if delta is None else np.asarray(delta, dtype=float)
    Sigma, _ = base_cross_covariance()
    rng = np.random.default_rng(phi_seed)
    Phi_true = draw_effects(delta, Sigma, BASE_ALPHA, graph, rng)
    times = dt * np.arange(n_visits)
    mcmc_kwargs = {"n_iter": 20_000, "n_burn": 2_000, "n_thin": 10}
    if mcmc:
        mcmc_kwargs.update(mcmc)
    models = tuple(models)
    jobs = []
    rep_seeds = np.random.SeedSequence((master_seed, 99)).spawn(n_replicates)
    for rep in range(n_replicates):
        kids = rep_seeds[rep].spawn(len(models) + 1)
        data_seed = int(kids[0].generate_state(1)[0])
        model_seeds = [int(k.generate_state(1)[0]) for k in kids[1:]]
        jobs.append((rep, data_seed, model_seeds, models, graph, Phi_true,
                     times, mcmc_kwargs))
    results = _run_fixed_jobs(jobs, n_jobs, progress)
    sim = SimResult(settings=(0,), models=models, n_replicates=n_replicates, horizons=())
    rows = sorted(results, key=lambda r: r[0])
    theta_true = np.clip(Phi_true[:, 4], times[0], times[-1])
    sim.truths[0] = {
        "eta_true": np.tile(Phi_true[:, 4], (n_replicates, 1)),
        "theta_true": np.tile(theta_true, (n_replicates, 1)),
        "alpha_true": np.full(n_replicates, BASE_ALPHA),
    }
    per_site = {}
    for model in models:
        stack = {}
        for key in rows[0][1][model]:
            vals = [r[1][model][key] for r in rows]
            stack[key] = np.stack(vals) if np.ndim(vals[0]) else np.asarray(vals)
        sim.records[(0, model)] = stack
        per_site[model] = stack["theta_hat"]
    return sim, Phi_true, per_site


def _fixed_phi_replicate(args):
    rep, data_seed, model_seeds, models, graph, Phi_true, times, mcmc_kwargs = args
    rng = np.random.default_rng(data_seed)
    series = simulate_series(Phi_true, times, rng, eye_id=f"fixed-phi-{rep}",
                             site_ids=graph.site_ids.copy())
    results = {}
    for model, mseed in zip(models, model_seeds):
        spec = build_spec(model, McmcConfig(seed=mseed, **mcmc_kwargs))
        samples = fit(spec, series, graph)
        results[model] = _summarize_fit(samples, series, series, horizons=())
    return rep, results


def _run_fixed_jobs(jobs, n_jobs, progress=None):
    n_jobs = resolve_jobs(n_jobs)
    _kernels.warmup()
    out = []
    if n_jobs == 1 or len(jobs) == 1:
        for k, job in enumerate(jobs):
            out.append(_fixed_phi_replicate(job))
            if progress:
                progress(k + 1, len(jobs))
    else:
        with ProcessPoolExecutor(max_workers=n_jobs) as pool:
            for k, res in enumerate(pool.map(_fixed_phi_replicate, jobs, chunksize=1)):
                out.append(res)
                if progress:
                    progress(k + 1, len(jobs))
    return out


def write_study_tables(result, out_dir):
    """Write the fit / prediction / change-point tables as CSV files."""
    from .dataio import fmt9

    os.makedirs(out_dir, exist_ok=True)
    models = result.models
    with open(os.path.join(out_dir, "fit_table.csv"), "w") as f:
        f.write("metric,model," + ",".join(f"setting{s}" for s in result.settings) + "\n")
        for metric in ("dic", "p_d"):
            for model in models:
                cells = [fmt9(result.aggregate(s, model)[metric]) for s in result.settings]
                f.write(f"{metric},{model}," + ",".join(cells) + "\n")
    if result.horizons:
        with open(os.path.join(out_dir, "prediction_table.csv"), "w") as f:
            f.write("time,model," + ",".join(f"setting{s}" for s in result.settings) + "\n")
            for h_idx, h in enumerate(result.horizons):
                for model in models:
                    cells = [fmt9(result.aggregate(s, model)["mspe"][h_idx])
                             for s in result.settings]
                    f.write(f"{fmt9(h)},{model}," + ",".join(cells) + "\n")
    with open(os.path.join(out_dir, "cp_table.csv"), "w") as f:
        f.write("estimand,metric,model," + ",".join(f"setting{s}" for s in result.settings) + "\n")
        for estimand in ("theta", "eta"):
            for metric in ("bias", "mse", "ec"):
                for model in models:
                    cells = [fmt9(result.aggregate(s, model)[f"{estimand}_{metric}"])
                             for s in result.settings]
                    f.write(f"{estimand},{metric},{model}," + ",".join(cells) + "\n")
