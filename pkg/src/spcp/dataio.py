"""File formats: angle/layout CSV, visual-field CSV, sample archives, and
the emitted reports (heatmap frames, fit-plot data).

All emitted files are deterministic byte streams for a fixed input and
seed: floats are formatted with 9 significant digits and JSON keys are
sorted.
"""

import csv
import hashlib
import json
import math
import os
from importlib import resources

import numpy as np

from . import DataError, __version__
from .diagnostics import cp_probability
from .graph import build_vf_graph, standard_vf54_layout, synthetic_garway_heath_angles
from .likelihood import VFSeries, effect_moments
from .sampler import EFFECT_NAMES, McmcConfig, PosteriorSamples


def fmt9(x):
    """Stable float formatting: 9 significant digits."""
    return format(float(x), ".9g")


def file_sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def _truthy(s):
    return str(s).strip().lower() in ("1", "true", "yes", "y")


# ----- angle / layout files -------------------------------------------------

def load_angle_csv(path, dissim_scale=100.0):
    """Graph from an angle file with header site_id,row,col,angle_deg,is_blind_spot."""
    layout = []
    angles = {}
    errors = []
    with open(path, newline="") as f:
        rows = [r for r in csv.reader(f) if r and not r[0].lstrip().startswith("#")]
    if not rows:
        raise DataError(f"{path}: empty angle file")
    header = [c.strip() for c in rows[0]]
    expected = ["site_id", "row", "col", "angle_deg", "is_blind_spot"]
    if header != expected:
        raise DataError(f"{path}: expected header {','.join(expected)}")
    for n, r in enumerate(rows[1:], start=2):
        try:
            sid = int(r[0])
            row = int(r[1])
            col = int(r[2])
            blind = _truthy(r[4])
            layout.append((sid, row, col, blind))
            if not blind:
                angles[sid] = float(r[3])
        except (ValueError, IndexError) as e:
            errors.append(f"row {n}: {e}")
    if errors:
        raise DataError(f"{path}: " + "; ".join(errors[:20]))
    return build_vf_graph(layout, angles, dissim_scale=dissim_scale)


def write_angle_csv(path, layout, angles, comment=None):
    with open(path, "w", newline="") as f:
        if comment:
            f.write(f"# {comment}\n")
        w = csv.writer(f)
        w.writerow(["site_id", "row", "col", "angle_deg", "is_blind_spot"])
        for sid, row, col, blind in layout:
            w.writerow([sid, row, col, "" if blind else fmt9(angles[sid]), int(blind)])


def default_angle_file():
    """Path of the packaged synthetic angle file for the 54-point grid."""
    return str(resources.files("spcp").joinpath("data/vf54_synthetic_angles.csv"))


def default_vf_graph(dissim_scale=100.0):
    """The 52-site visual field graph with the synthetic angle surrogate."""
    layout = standard_vf54_layout()
    angles = synthetic_garway_heath_angles(layout)
    return build_vf_graph(layout, angles, dissim_scale=dissim_scale)


# ----- visual field data files ----------------------------------------------

VF_HEADER = ["eye_id", "visit_index", "visit_time_days", "site_id", "sensitivity_db"]


def load_vf_csv(path, site_ids=None, y_scale=10.0, days_per_year=365.25):
    """Parse a long-format visual field file into per-eye series.

    Sensitivities are divided by ``y_scale`` and times converted from days
    after baseline to years; the raw values are retained on the series so
    emitted output can reproduce them exactly. Validation problems are
    aggregated and reported together with their row numbers.
    """
    errors = []
    cells = {}
    times = {}
    order = []
    with open(path, newline="") as f:
        reader = csv.reader(f)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        if [c.strip() for c in header] != VF_HEADER:
            raise DataError(f"{path}: expected header {','.join(VF_HEADER)}")
        for n, r in enumerate(reader, start=2):
            if not r or r[0].lstrip().startswith("#"):
                continue
            try:
                eye = r[0].strip()
                visit = int(r[1])
                t_days = float(r[2])
                sid = int(r[3])
                y = float(r[4])
            except (ValueError, IndexError) as e:
                errors.append(f"row {n}: {e}")
                continue
            if y < 0:
                errors.append(f"row {n}: negative sensitivity {y}")
                continue
            key = (eye, visit, sid)
            if key in cells:
                errors.append(f"row {n}: duplicate (eye, visit, site) {key}")
                continue
            if eye not in times:
                times[eye] = {}
                order.append(eye)
            prev = times[eye].get(visit)
            if prev is not None and prev != t_days:
                errors.append(f"row {n}: visit {visit} of eye {eye} has conflicting times")
                continue
            times[eye][visit] = t_days
            cells[key] = y
    out = []
    for eye in order:
        visits = sorted(times[eye])
        t_raw = np.array([times[eye][v] for v in visits])
        if np.any(np.diff(t_raw) <= 0):
            errors.append(f"eye {eye}: visit times are not strictly increasing")
            continue
        sids = sorted({sid for (e, _, sid) in cells if e == eye})
        if site_ids is not None:
            expected = sorted(int(s) for s in site_ids)
            if sids != expected:
                errors.append(
                    f"eye {eye}: site set mismatch ({len(sids)} sites in file, "
                    f"{len(expected)} expected)")
                continue
        missing = [(v, s) for v in visits for s in sids if (eye, v, s) not in cells]
        if missing:
            errors.append(f"eye {eye}: incomplete grid, e.g. visit {missing[0][0]} site {missing[0][1]}")
            continue
        obs_raw = np.array([[cells[(eye, v, s)] for v in visits] for s in sids])
        obs = obs_raw / y_scale
        censored = obs == 0.0
        t_years = (t_raw - t_raw[0]) / days_per_year
        out.append(VFSeries(
            times=t_years, obs=obs, censored=censored,
            site_ids=np.array(sids, dtype=np.int64), eye_id=eye,
            y_scale=y_scale, time_scale=days_per_year, baseline_time=float(t_raw[0]),
            obs_raw=obs_raw, times_raw=t_raw))
    if errors:
        raise DataError(f"{path}: " + "; ".join(errors[:20]))
    if not out:
        raise DataError(f"{path}: no usable eyes")
    return out


def write_vf_csv(path, series_list):
    """Inverse of :func:`load_vf_csv`; exact for loader-produced series."""
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(VF_HEADER)
        for series in series_list:
            t_raw = series.times_raw
            if t_raw is None:
                t_raw = series.times * series.time_scale + series.baseline_time
            obs_raw = series.obs_raw
            if obs_raw is None:
                obs_raw = series.obs * series.y_scale
            for v in range(series.nu):
                for i, sid in enumerate(series.site_ids):
                    w.writerow([series.eye_id, v + 1, fmt9(t_raw[v]),
                                int(sid), fmt9(obs_raw[i, v])])


# ----- posterior sample archives ---------------------------------------------

def _sample_columns(samples):
    cols = []
    for name in EFFECT_NAMES:
        cols += [f"{name}[{int(s)}]" for s in samples.site_ids]
    p = samples.delta.shape[1]
    cols += [f"delta[{k + 1}]" for k in range(p)]
    cols += [f"sigma[{r + 1}][{c + 1}]" for r in range(p) for c in range(r, p)]
    cols += ["alpha"]
    return cols


def save_samples(samples, out_dir):
    """Write samples.csv (one row per draw) and meta.json into a directory."""
    os.makedirs(out_dir, exist_ok=True)
    p = samples.delta.shape[1]
    iu = [(r, c) for r in range(p) for c in range(r, p)]
    with open(os.path.join(out_dir, "samples.csv"), "w", newline="") as f:
        f.write(",".join(_sample_columns(samples)) + "\n")
        for d in range(samples.n_draws):
            parts = []
            for c in range(len(EFFECT_NAMES)):
                parts += [fmt9(v) for v in samples.Phi[d, :, c]]
            parts += [fmt9(v) for v in samples.delta[d]]
            parts += [fmt9(samples.Sigma[d, r, c]) for r, c in iu]
            parts.append(fmt9(samples.alpha[d]))
            f.write(",".join(parts) + "\n")
    cfg = samples.config
    meta = {
        "format": 1,
        "package_version": __version__,
        "variant": samples.variant,
        "site_ids": [int(s) for s in samples.site_ids],
        "times": [float(t) for t in samples.times],
        "n_draws": samples.n_draws,
        "accept_rates": {k: float(v) for k, v in samples.accept_rates.items()},
        "config": None if cfg is None else {
            "n_iter": cfg.n_iter, "n_burn": cfg.n_burn, "n_thin": cfg.n_thin,
            "seed": cfg.seed, "pilot": cfg.pilot, "pilot_block": cfg.pilot_block,
            "pilot_target_low": cfg.pilot_target_low,
            "pilot_target_high": cfg.pilot_target_high,
            "pilot_max_blocks": cfg.pilot_max_blocks,
        },
        "meta": _jsonable(samples.meta),
    }
    with open(os.path.join(out_dir, "meta.json"), "w") as f:
        json.dump(meta, f, sort_keys=True, indent=2)
        f.write("\n")


def load_samples(out_dir):
    meta_path = os.path.join(out_dir, "meta.json")
    with open(meta_path) as f:
        meta = json.load(f)
    site_ids = np.array(meta["site_ids"], dtype=np.int64)
    m = site_ids.shape[0]
    data = np.loadtxt(os.path.join(out_dir, "samples.csv"), delimiter=",", skiprows=1, ndmin=2)
    n = data.shape[0]
    n_eff = len(EFFECT_NAMES)
    Phi = np.empty((n, m, n_eff))
    for c in range(n_eff):
        Phi[:, :, c] = data[:, c * m:(c + 1) * m]
    ofs = n_eff * m
    # infer p from the remaining column count: p + p(p+1)/2 + 1
    rest = data.shape[1] - ofs
    p = n_eff
    assert rest == p + p * (p + 1) // 2 + 1, "unexpected samples.csv layout"
    delta = data[:, ofs:ofs + p]
    ofs += p
    Sigma = np.empty((n, p, p))
    for r in range(p):
        for c in range(r, p):
            Sigma[:, r, c] = data[:, ofs]
            Sigma[:, c, r] = data[:, ofs]
            ofs += 1
    alpha = data[:, ofs]
    cfg = None
    if meta.get("config"):
        cfg = McmcConfig(**meta["config"])
    return PosteriorSamples(
        Phi=Phi, delta=delta, Sigma=Sigma, alpha=alpha, site_ids=site_ids,
        times=np.array(meta["times"]), variant=meta["variant"],
        accept_rates=meta.get("accept_rates", {}), config=cfg,
        meta=meta.get("meta", {}))


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    return obj


# ----- rendered output --------------------------------------------------------

_RAMP = ((0x2C, 0x7B, 0xB6), (0xFF, 0xFF, 0xBF), (0xD7, 0x19, 0x1C))


def _ramp_color(p):
    p = min(max(float(p), 0.0), 1.0)
    if p < 0.5:
        a, b, t = _RAMP[0], _RAMP[1], p / 0.5
    else:
        a, b, t = _RAMP[1], _RAMP[2], (p - 0.5) / 0.5
    return "#%02x%02x%02x" % tuple(round(a[i] + t * (b[i] - a[i])) for i in range(3))


def _grid_svg(graph, values, title, cell=28):
    rows = graph.rows - graph.rows.min()
    cols = graph.cols - graph.cols.min()
    width = (cols.max() + 1) * cell + 20
    height = (rows.max() + 1) * cell + 40
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}">',
        f'<text x="10" y="16" font-family="sans-serif" font-size="12">{title}</text>',
    ]
    for i in range(graph.m):
        x = 10 + cols[i] * cell
        y = 24 + rows[i] * cell
        parts.append(
            f'<rect x="{x}" y="{y}" width="{cell - 2}" height="{cell - 2}" '
            f'fill="{_ramp_color(values[i])}" stroke="#555" stroke-width="0.5"/>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def emit_heatmap_frames(samples, graph, out_dir, times=None, step=0.1, extend=1.0):
    """Per-time change-point probability maps as CSV + SVG frame pairs.

    The default time grid runs from the start of follow-up to one year
    past its end in 0.1-year steps. Writes frame_###.csv / frame_###.svg
    plus an index.json listing the frame times in order.
    """
    if times is None:
        span = (samples.x_nu + extend) - samples.x1
        n_frames = int(math.ceil(span / step - 1e-9)) + 1
        times = samples.x1 + step * np.arange(n_frames)
    times = np.asarray(times, dtype=float)
    os.makedirs(out_dir, exist_ok=True)
    names = []
    for k, t in enumerate(times):
        p = cp_probability(samples, t)
        base = f"frame_{k:03d}"
        with open(os.path.join(out_dir, base + ".csv"), "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["site_id", "row", "col", "cp_probability"])
            for i in range(graph.m):
                w.writerow([int(graph.site_ids[i]), int(graph.rows[i]),
                            int(graph.cols[i]), fmt9(p[i])])
        with open(os.path.join(out_dir, base + ".svg"), "w") as f:
            f.write(_grid_svg(graph, p, f"P[change point < {fmt9(t)}]"))
        names.append(base)
    with open(os.path.join(out_dir, "index.json"), "w") as f:
        json.dump({"frames": names, "times": [float(t) for t in times]},
                  f, sort_keys=True, indent=2)
        f.write("\n")
    return names


def emit_fit_plot_data(samples, series, out_base, level=0.95):
    """Fitted-trend data per site: CSV for external plotting plus a basic
    small-multiples SVG. Output is unscaled back to the input units
    (e.g. dB and days)."""
    times = series.times
    n, m, nu = samples.n_draws, series.m, series.nu
    mu_draws = np.empty((n, m, nu))
    for r in range(n):
        mu_draws[r], _ = effect_moments(samples.Phi[r], times,
                                        x1=samples.x1, x_nu=samples.x_nu)
    tail = 0.5 * (1.0 - level)
    mu_mean = mu_draws.mean(axis=0)
    mu_lo = np.quantile(mu_draws, tail, axis=0)
    mu_hi = np.quantile(mu_draws, 1.0 - tail, axis=0)
    theta = samples.theta
    th_mean = theta.mean(axis=0)
    th_lo = np.quantile(theta, tail, axis=0)
    th_hi = np.quantile(theta, 1.0 - tail, axis=0)
    censored_cp = th_hi >= samples.x_nu - 1e-12

    ys = series.y_scale
    ts = series.time_scale
    t0 = series.baseline_time
    t_raw = series.times_raw if series.times_raw is not None else times * ts + t0
    obs_raw = series.obs_raw if series.obs_raw is not None else series.obs * ys
    with open(out_base + ".csv", "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["site_id", "time_days", "observed_db", "mu_mean_db",
                    "mu_lo_db", "mu_hi_db", "theta_mean_days", "theta_lo_days",
                    "theta_hi_days", "censored_cp"])
        for i in range(m):
            sid = int(series.site_ids[i])
            for t in range(nu):
                w.writerow([
                    sid, fmt9(t_raw[t]), fmt9(obs_raw[i, t]),
                    fmt9(mu_mean[i, t] * ys), fmt9(mu_lo[i, t] * ys),
                    fmt9(mu_hi[i, t] * ys),
                    fmt9(th_mean[i] * ts + t0), fmt9(th_lo[i] * ts + t0),
                    fmt9(th_hi[i] * ts + t0), int(censored_cp[i]),
                ])
    _fit_svg(out_base + ".svg", series, mu_mean, mu_lo, mu_hi, th_mean)
    return out_base + ".csv"


def _fit_svg(path, series, mu_mean, mu_lo, mu_hi, th_mean, cell=90):
    """Tiny per-site trajectory sparklines laid out on the grid."""
    m, nu = mu_mean.shape
    per_row = max(1, int(math.ceil(math.sqrt(m))))
    n_rows = int(math.ceil(m / per_row))
    width = per_row * cell + 20
    height = n_rows * cell + 20
    lo = min(float(np.min(mu_lo)), float(np.min(series.obs)))
    hi = max(float(np.max(mu_hi)), float(np.max(series.obs)))
    span_y = hi - lo if hi > lo else 1.0
    t0, t1 = float(series.times[0]), float(series.times[-1])
    span_t = t1 - t0 if t1 > t0 else 1.0
    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}">']
    for i in range(m):
        ox = 10 + (i % per_row) * cell
        oy = 10 + (i // per_row) * cell
        h = cell - 14

        def px(t):
            return ox + (t - t0) / span_t * (cell - 14)

        def py(v):
            return oy + h - (v - lo) / span_y * h

        parts.append(f'<rect x="{ox}" y="{oy}" width="{cell - 12}" height="{h}" '
                     f'fill="none" stroke="#ccc"/>')
        band = " ".join(f"{px(series.times[t]):.1f},{py(mu_hi[i, t]):.1f}" for t in range(nu))
        band += " " + " ".join(f"{px(series.times[t]):.1f},{py(mu_lo[i, t]):.1f}"
                               for t in reversed(range(nu)))
        parts.append(f'<polygon points="{band}" fill="#fdd" stroke="none"/>')
        line = " ".join(f"{px(series.times[t]):.1f},{py(mu_mean[i, t]):.1f}" for t in range(nu))
        parts.append(f'<polyline points="{line}" fill="none" stroke="#c00" stroke-width="1"/>')
        for t in range(nu):
            parts.append(f'<circle cx="{px(series.times[t]):.1f}" cy="{py(series.obs[i, t]):.1f}" '
                         f'r="1.5" fill="#333"/>')
        if t0 <= th_mean[i] <= t1:
            parts.append(f'<line x1="{px(th_mean[i]):.1f}" y1="{oy}" x2="{px(th_mean[i]):.1f}" '
                         f'y2="{oy + h}" stroke="#00c" stroke-width="1"/>')
    parts.append("</svg>")
    with open(path, "w") as f:
        f.write("\n".join(parts) + "\n")
