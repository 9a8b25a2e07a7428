"""Experiment orchestration: geometry -> sections -> linger -> simulate -> verify.

A run is deterministic given (config, seed): heterogeneity draws and initial
jitter come from counter-based Philox streams keyed by the seed, and all CSV
output uses fixed %.17g formatting.  Stage failures are recorded in the run
manifest (partial artifacts are kept) and then re-raised.
"""
from __future__ import annotations

import datetime as _dt
import json
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional

import numpy as np

from . import __version__ as _pkg_version
from .analysis import (ThresholdInputs, check_variance_identity, coupling_threshold,
                       gronwall_envelope, sync_trace, verify_theorem)
from .config import ExperimentConfig, config_hash, load_config
from .dynamics import (HeterogeneityBound, NetworkConfig, NetworkState, StateBox,
                       TimeScales, heterogeneity_bound, make_reference_network,
                       network_flow)
from .errors import AssumptionViolation, CanardLabError
from .integrate import (IntegratorSettings, Trajectory, integrate,
                        write_trajectory_bin, write_trajectory_csv)
from .linger import (LingerReport, SectionOffsets, build_sections,
                     linger_time_empirical, linger_time_quadrature)
from .manifolds import (find_canard_point, find_fold_curve, find_jump_point,
                        solve_fast_manifold, solve_slow_manifold)

__all__ = ["run_experiment", "sweep_k", "emit_plot_data", "RunArtifact",
           "compute_geometry", "OscillatorGeometry", "worker_count"]


def worker_count():
    try:
        return max(1, int(os.environ.get("CANARDLAB_WORKERS", "1")))
    except ValueError:
        return 1


def _scales(cfg) -> TimeScales:
    return TimeScales(cfg.model.eps_ts, cfg.model.delta)


def _settings(cfg) -> IntegratorSettings:
    ib = cfg.integrator
    return IntegratorSettings(
        rtol=ib.rtol, atol=ib.atol,
        max_step=ib.max_step if ib.max_step > 0 else np.inf,
        initial_step=ib.initial_step if ib.initial_step > 0 else None,
        method=ib.method, event_tolerance=ib.event_tolerance)


@dataclass
class OscillatorGeometry:
    """All geometric objects of one oscillator's uncoupled dynamics."""

    index: int
    fast_charts: list
    fold_points: list
    jump: object
    slow_chart: object
    canard: object
    offsets: SectionOffsets
    entry: object
    prejump: object
    quad_y_from: float          # entry-anchor-matched quadrature lower limit
    slope_at_canard: float


@dataclass
class RunArtifact:
    out_dir: Path
    manifest: dict
    linger_report: Optional[LingerReport] = None
    verification: Optional[object] = None
    trajectory: Optional[Trajectory] = None
    geometry: Optional[List[OscillatorGeometry]] = None
    sweep_rows: Optional[list] = None


# ---------------------------------------------------------------------------
# Geometry stage
# ---------------------------------------------------------------------------

def compute_geometry(model, params_list, cfg: ExperimentConfig,
                     scales: TimeScales) -> List[OscillatorGeometry]:
    g = cfg.geometry
    region = (tuple(g.region_x), tuple(g.region_y), tuple(g.region_z))
    window = (tuple(g.canard_window_y), tuple(g.canard_window_z))
    out = []
    for i, params in enumerate(params_list):
        charts = solve_fast_manifold(model, params, region, tuple(g.fast_grid),
                                     v_window=tuple(g.v_window), scales=scales,
                                     osc_index=i)
        folds = []
        for ch in charts:
            folds.extend(find_fold_curve(ch, model, params, scales))
        if not folds:
            raise AssumptionViolation(
                f"oscillator {i}: no fold point in the region; the fast "
                "manifold is not S-shaped here")
        # jump solve seeds from the fold bounding the quiescent branch (the
        # smallest-x fold) with z frozen at the canard-window corner
        z_c = g.canard_window_z[0]
        fold_seed = min(folds, key=lambda fp: (round(fp.x, 9), fp.v))
        jump = find_jump_point(model, params, z_c,
                               (fold_seed.v, fold_seed.u, fold_seed.x,
                                g.canard_window_y[0]), scales, osc_index=i)
        y_axis = np.linspace(jump.y, g.region_y[1], g.slow_grid[0])
        z_axis = np.linspace(g.region_z[0], g.region_z[1], g.slow_grid[1])
        slow = solve_slow_manifold(model, params, charts, y_axis, z_axis,
                                   scales, osc_index=i)
        # distance is measured against the jump point: heterogeneity can open
        # attracting slivers near the other fold that would otherwise win
        canard = find_canard_point(model, params, charts, slow, [jump],
                                   window=window, index=g.canard_index,
                                   scales=scales, osc_index=i)
        gap = abs(canard.x - jump.x)
        s = cfg.sections
        if s.delta_x_frac <= 0:
            from .linger import default_offsets
            offsets = default_offsets(canard, jump, slow)
        else:
            offsets = SectionOffsets(
                s.delta_x_frac * gap, s.delta_y, s.delta_z,
                s.delta_x_prime_frac * gap, s.delta_y_prime, s.delta_z_prime)
        entry, prejump = build_sections(canard, jump, offsets, charts, model,
                                        params, scales)
        # slope of psi_x along y at the canard maps the x-offset into y
        h = 1e-5 * (1 + abs(canard.y))
        px_p = slow.eval(model, params, canard.y + h, canard.z, scales)[2]
        px_m = slow.eval(model, params, canard.y - h, canard.z, scales)[2]
        slope = (px_p - px_m) / (2 * h)
        if abs(slope) < 1e-8:
            raise AssumptionViolation(
                f"oscillator {i}: slow manifold is x-flat at the canard point; "
                "the y-parameterized passage is degenerate")
        quad_y_from = canard.y - offsets.delta_x / abs(slope)
        out.append(OscillatorGeometry(i, charts, folds, jump, slow, canard,
                                      offsets, entry, prejump, quad_y_from,
                                      float(slope)))
    return out


def _initial_state(cfg, model, params_list, geos, scales) -> NetworkState:
    n = cfg.network.n_osc
    if cfg.initial.mode == "explicit":
        return NetworkState(0.0, np.asarray(cfg.initial.states, dtype=float))
    jitter_rng = np.random.Generator(np.random.Philox(int(cfg.model.seed)).jumped(1))
    jit = cfg.initial.v_jitter * jitter_rng.standard_normal(n)
    rows = np.empty((n, 5))
    for i, geo in enumerate(geos):
        rows[i] = (geo.entry.phi_v + jit[i], geo.entry.phi_u, geo.entry.anchor_x,
                   geo.quad_y_from, cfg.linger.z_start)
    return NetworkState(0.0, rows)


def _linger_stage(cfg, model, params_list, geos, scales) -> LingerReport:
    quads, empiricals, meta = [], [], []
    settings = _settings(cfg)
    for geo, params in zip(geos, params_list):
        q = linger_time_quadrature(
            model, params, scales, geo.slow_chart, geo.quad_y_from, geo.jump.y,
            geo.canard.z,
            seed_point=(geo.canard.v, geo.canard.u, geo.canard.x, geo.canard.y))
        quads.append(q)
        emp = None
        if cfg.linger.empirical:
            y_start = geo.canard.y + cfg.linger.start_margin
            pv, pu, px = geo.slow_chart.eval(model, params, y_start, geo.canard.z,
                                             scales)
            y0 = np.array([pv, pu, px, y_start, cfg.linger.z_start])
            rhs = network_flow(model, NetworkConfig(1, 0.0), scales, [params])
            horizon = cfg.linger.horizon_factor / (scales.eps_ts * scales.delta)
            traj, _ = integrate(rhs, y0, (0.0, horizon), settings)
            emp = linger_time_empirical(traj, geo.entry, geo.prejump, 0,
                                        settings.event_tolerance)
        empiricals.append(emp)
        meta.append({
            "oscillator": geo.index,
            "entry_anchor_x": geo.entry.anchor_x,
            "prejump_anchor_x": geo.prejump.anchor_x,
            "canard": list(geo.canard.point),
            "jump": list(geo.jump.point),
            "quad_y_from": geo.quad_y_from,
        })
    return LingerReport.from_results(quads, empiricals, meta)


def _measure_het_bound(cfg, model, params_list, traj, scales) -> HeterogeneityBound:
    if cfg.analysis.het_bound > 0:
        box = StateBox.of_trajectory(traj.ys).inflate(0.1)
        return HeterogeneityBound(cfg.analysis.het_bound,
                                  tuple(cfg.analysis.m_grid), box, source="user")
    box = StateBox.of_trajectory(traj.ys).inflate(0.1)
    hb = heterogeneity_bound(model, box, params_list,
                             tuple(cfg.analysis.m_grid), scales)
    return hb


def _write_charts(out_dir: Path, geos):
    chart_dir = out_dir / "charts"
    chart_dir.mkdir(parents=True, exist_ok=True)
    for geo in geos:
        path = chart_dir / f"fast_{geo.index:03d}.csv"
        with open(path, "w", newline="") as fh:
            fh.write("sheet,x,y,z,phi_v,phi_u,label,residual\n")
            for ch in geo.fast_charts:
                nx, ny, nz = ch.phi_v.shape
                for ix in range(nx):
                    for iy in range(ny):
                        for iz in range(nz):
                            if np.isnan(ch.phi_v[ix, iy, iz]):
                                continue
                            fh.write("%d,%.17g,%.17g,%.17g,%.17g,%.17g,%d,%.17g\n"
                                     % (ch.sheet_id, ch.x_axis[ix], ch.y_axis[iy],
                                        ch.z_axis[iz], ch.phi_v[ix, iy, iz],
                                        ch.phi_u[ix, iy, iz],
                                        ch.labels[ix, iy, iz],
                                        ch.residuals[ix, iy, iz]))
        spath = chart_dir / f"slow_{geo.index:03d}.csv"
        sc = geo.slow_chart
        with open(spath, "w", newline="") as fh:
            fh.write("y,z,psi_v,psi_u,psi_x,residual\n")
            for iy in range(len(sc.y_axis)):
                for iz in range(len(sc.z_axis)):
                    if np.isnan(sc.psi_x[iy, iz]):
                        continue
                    fh.write("%.17g,%.17g,%.17g,%.17g,%.17g,%.17g\n"
                             % (sc.y_axis[iy], sc.z_axis[iz], sc.psi_v[iy, iz],
                                sc.psi_u[iy, iz], sc.psi_x[iy, iz],
                                sc.residuals[iy, iz]))


def _geometry_json(geos):
    return {
        "oscillators": [
            {
                "index": geo.index,
                "canard": list(map(float, geo.canard.point)),
                "jump": list(map(float, geo.jump.point)),
                "fold_v_values": sorted({round(float(fp.v), 10)
                                         for fp in geo.fold_points}),
                "n_fold_points": len(geo.fold_points),
                "offsets": {
                    "delta_x": geo.offsets.delta_x,
                    "delta_y": geo.offsets.delta_y,
                    "delta_z": geo.offsets.delta_z,
                    "delta_x_prime": geo.offsets.delta_x_prime,
                    "delta_y_prime": geo.offsets.delta_y_prime,
                    "delta_z_prime": geo.offsets.delta_z_prime,
                },
                "sections": {
                    "entry_anchor_x": geo.entry.anchor_x,
                    "entry_phi": [geo.entry.phi_v, geo.entry.phi_u],
                    "prejump_anchor_x": geo.prejump.anchor_x,
                    "prejump_phi": [geo.prejump.phi_v, geo.prejump.phi_u],
                },
                "quad_y_from": geo.quad_y_from,
                "slope_at_canard": geo.slope_at_canard,
                "slow_min_abs_dfdx": geo.slow_chart.min_abs_dfdx,
            }
            for geo in geos
        ]
    }


def _sync_csv(path, times, vv, w, envelope, residual, cs_slack):
    with open(path, "w", newline="") as fh:
        fh.write("t,V_v,W,envelope,residual,cs_slack\n")
        for row in zip(times, vv, w, envelope, residual, cs_slack):
            fh.write(",".join("%.17g" % v for v in row) + "\n")


_STAGE_ORDER = ("model", "manifold", "linger", "simulate", "verify")


def run_experiment(config, out_dir=None, until="verify") -> RunArtifact:
    """Execute the pipeline through ``until`` and write all artifacts.

    Stage order: model -> manifold -> linger -> simulate -> verify.
    Deterministic for a fixed (config, seed); on a stage failure the manifest
    records the stage name and the partial artifacts stay on disk.
    """
    if until not in _STAGE_ORDER:
        raise CanardLabError(f"unknown stage {until!r}")
    last = _STAGE_ORDER.index(until)
    cfg = load_config(config)
    out = Path(out_dir) if out_dir is not None else Path(cfg.output.directory)
    out.mkdir(parents=True, exist_ok=True)
    scales = _scales(cfg)
    manifest = {
        "config_hash": config_hash(cfg),
        "seed": cfg.model.seed,
        "versions": {
            "canardlab": _pkg_version,
            "numpy": np.__version__,
            "python": sys.version.split()[0],
        },
        "created_utc": _dt.datetime.now(_dt.timezone.utc).isoformat(),
        "stages": [],
        "files": [],
        "status": "running",
    }
    (out / "config.json").write_text(load_config(config).to_json() + "\n")
    manifest["files"].append("config.json")
    artifact = RunArtifact(out_dir=out, manifest=manifest)

    def finish_stage(name, t0, error=None):
        manifest["stages"].append({
            "name": name,
            "status": "ok" if error is None else "failed",
            "seconds": round(time.perf_counter() - t0, 3),
            **({"error": str(error)} if error else {}),
        })

    def write_manifest():
        (out / "manifest.json").write_text(
            json.dumps(manifest, indent=2, sort_keys=True) + "\n")

    stage = "model"
    t0 = time.perf_counter()
    try:
        model, params_list = make_reference_network(
            cfg.network.n_osc, cfg.model.heterogeneity_spread, cfg.model.seed,
            cfg.model.coefficients or None)
        finish_stage(stage, t0)

        if last >= 1:
            stage = "manifold"
            t0 = time.perf_counter()
            geos = compute_geometry(model, params_list, cfg, scales)
            artifact.geometry = geos
            _write_charts(out, geos)
            (out / "geometry.json").write_text(
                json.dumps(_geometry_json(geos), indent=2, sort_keys=True) + "\n")
            manifest["files"] += ["geometry.json", "charts/"]
            # startup assumption summary: reaching this point means every
            # oscillator produced folds, a jump point and an attracting canard
            manifest["assumptions"] = {
                "fold_count_per_oscillator": [len(g_.fold_points) for g_ in geos],
                "canard_found": True,
                "min_abs_dfdx": min(g_.slow_chart.min_abs_dfdx for g_ in geos),
                "canard_fold_gap": [abs(g_.canard.x - g_.jump.x) for g_ in geos],
            }
            finish_stage(stage, t0)

        if last >= 2:
            stage = "linger"
            t0 = time.perf_counter()
            report = _linger_stage(cfg, model, params_list, geos, scales)
            artifact.linger_report = report
            report.to_json(out / "linger.json")
            manifest["files"].append("linger.json")
            manifest["t_linger_min"] = report.t_linger_min
            manifest["assumptions"]["drift_sign_constant"] = True
            finish_stage(stage, t0)

        if last >= 3:
            stage = "simulate"
            t0 = time.perf_counter()
            state0 = _initial_state(cfg, model, params_list, geos, scales)
            t_min = report.t_linger_min
            t_final = cfg.simulate.t_final if cfg.simulate.t_final > 0 \
                else cfg.simulate.horizon_factor * t_min
            t_final = max(t_final, t_min)
            net = NetworkConfig(cfg.network.n_osc, cfg.network.k)
            rhs = network_flow(model, net, scales, params_list)
            traj, _ = integrate(rhs, state0.states.ravel(), (0.0, t_final),
                                _settings(cfg))
            artifact.trajectory = traj
            write_trajectory_csv(traj, out / "trajectory.csv", n_osc=net.n_osc)
            manifest["files"].append("trajectory.csv")
            if cfg.output.write_binary:
                write_trajectory_bin(traj, out / "trajectory.bin")
                manifest["files"].append("trajectory.bin")
            finish_stage(stage, t0)

        if last < 4:
            manifest["status"] = "ok"
            write_manifest()
            manifest["files"].append("manifest.json")
            return artifact

        stage = "verify"
        t0 = time.perf_counter()
        hb = _measure_het_bound(cfg, model, params_list, traj, scales)
        w_init = float(np.std(state0.states[:, 0]))
        w0 = cfg.analysis.w0 if cfg.analysis.w0 > 0 else w_init
        inputs = ThresholdInputs(hb.value, cfg.analysis.eps_tol, scales.delta,
                                 t_min, w0)
        rep = verify_theorem(traj, model, net, scales, params_list, inputs,
                             charts_per_osc=[g.fast_charts for g in geos],
                             branch_v_tol=cfg.analysis.branch_v_tol)
        rep.het_bound_source = hb.source
        artifact.verification = rep
        rep.to_json(out / "verification.json")
        manifest["files"].append("verification.json")

        # fixed-column sync trace on a uniform grid
        n_rows = 2001
        ts = np.linspace(0.0, traj.t1, n_rows)
        ys = traj(ts)
        ident = check_variance_identity((ts, ys), model, net, scales,
                                        params_list, het_bound=hb.value)
        v = ys[:, 0::5]
        vv = ((v - v.mean(axis=1, keepdims=True)) ** 2).mean(axis=1)
        w = np.sqrt(vv)
        env = gronwall_envelope(w0, hb.value, net.k, ts) if net.k > 0 \
            else np.full_like(ts, np.nan)
        resid = np.full_like(ts, np.nan)
        resid[1:-1] = ident.residual
        slack = ident.cs_slack          # evaluated at every sample
        _sync_csv(out / "sync_trace.csv", ts, vv, w, env, resid, slack)
        manifest["files"].append("sync_trace.csv")
        finish_stage(stage, t0)

        manifest["status"] = "ok"
        manifest["t_linger_min"] = t_min
        manifest["k_star"] = rep.k_star
        manifest["passed"] = rep.passed
        write_manifest()
        manifest["files"].append("manifest.json")
        return artifact
    except Exception as exc:
        finish_stage(stage, t0, error=exc)
        manifest["status"] = ("assumption-violation"
                              if isinstance(exc, AssumptionViolation) else "error")
        write_manifest()
        raise


# ---------------------------------------------------------------------------
# Coupling sweep
# ---------------------------------------------------------------------------

def _sweep_row(payload):
    """One verified run at a single k; module-level for process pools."""
    (cfg_dict, k, state0, t_min, charts_lists, het, w0) = payload
    cfg = ExperimentConfig.from_dict(cfg_dict)
    scales = _scales(cfg)
    model, params_list = make_reference_network(
        cfg.network.n_osc, cfg.model.heterogeneity_spread, cfg.model.seed,
        cfg.model.coefficients or None)
    net = NetworkConfig(cfg.network.n_osc, float(k))
    rhs = network_flow(model, net, scales, params_list)
    t_final = max(cfg.simulate.horizon_factor * t_min, t_min)
    traj, _ = integrate(rhs, np.asarray(state0).ravel(), (0.0, t_final),
                        _settings(cfg))
    inputs = ThresholdInputs(het, cfg.analysis.eps_tol, scales.delta, t_min, w0)
    rep = verify_theorem(traj, model, net, scales, params_list, inputs,
                         charts_per_osc=charts_lists,
                         branch_v_tol=cfg.analysis.branch_v_tol)
    return {
        "k": float(k),
        "v_var_at_proof_time": rep.v_var_at_proof_time,
        "v_var_at_t_min": rep.v_var_at_t_min,
        "passed": bool(rep.passes["v_var_below_tol_at_t_min"]
                       and rep.passes["v_var_below_tol_at_proof_time"]
                       and not rep.invalid),
        "invalid": rep.invalid,
    }


def sweep_k(config, grid=None, out_dir=None) -> RunArtifact:
    """One verified run per k with shared seed, geometry and initial state.

    Geometry, linger window and the heterogeneity bound do not depend on k,
    so they are computed once; rows then run independently (optionally in a
    process pool sized by CANARDLAB_WORKERS).  Per-row failures are recorded
    and the sweep continues.
    """
    cfg = load_config(config)
    grid = list(cfg.sweep.grid) if grid is None else sorted(float(g) for g in grid)
    if not grid:
        raise CanardLabError("sweep grid is empty")
    out = Path(out_dir) if out_dir is not None else Path(cfg.output.directory)
    out.mkdir(parents=True, exist_ok=True)
    scales = _scales(cfg)

    model, params_list = make_reference_network(
        cfg.network.n_osc, cfg.model.heterogeneity_spread, cfg.model.seed,
        cfg.model.coefficients or None)
    geos = compute_geometry(model, params_list, cfg, scales)
    report = _linger_stage(cfg, model, params_list, geos, scales)
    t_min = report.t_linger_min
    state0 = _initial_state(cfg, model, params_list, geos, scales)

    # measure M once on a probe run at the largest k (box is k-insensitive
    # during the on-branch phase, and a common M keeps rows comparable)
    net = NetworkConfig(cfg.network.n_osc, grid[-1])
    rhs = network_flow(model, net, scales, params_list)
    probe, _ = integrate(rhs, state0.states.ravel(),
                         (0.0, max(t_min, cfg.simulate.horizon_factor * t_min)),
                         _settings(cfg))
    hb = _measure_het_bound(cfg, model, params_list, probe, scales)
    w_init = float(np.std(state0.states[:, 0]))
    w0 = cfg.analysis.w0 if cfg.analysis.w0 > 0 else w_init
    k_star = coupling_threshold(ThresholdInputs(hb.value, cfg.analysis.eps_tol,
                                                scales.delta, t_min, w0))

    charts_lists = [g.fast_charts for g in geos]
    payloads = [(cfg.to_canonical_dict(), k, state0.states.copy(), t_min,
                 charts_lists, hb.value, w0) for k in grid]
    rows = []
    nw = worker_count()
    if nw > 1:
        with ProcessPoolExecutor(max_workers=nw) as pool:
            futs = [pool.submit(_sweep_row, p) for p in payloads]
            for k, fut in zip(grid, futs):
                try:
                    rows.append(fut.result())
                except Exception as exc:
                    rows.append({"k": float(k), "error": str(exc)})
    else:
        for k, p in zip(grid, payloads):
            try:
                rows.append(_sweep_row(p))
            except Exception as exc:
                rows.append({"k": float(k), "error": str(exc)})

    passing = [r["k"] for r in rows if r.get("passed")]
    k_empirical = min(passing) if passing else None
    table = {
        "k_star": k_star,
        "k_empirical": k_empirical,
        "t_linger_min": t_min,
        "het_bound": hb.value,
        "het_bound_source": hb.source,
        "w0": w0,
        "eps_tol": cfg.analysis.eps_tol,
        "rows": rows,
    }
    with open(out / "sweep.csv", "w", newline="") as fh:
        fh.write("k,V_v_at_proof_time,V_v_at_t_min,pass,invalid,error\n")
        for r in rows:
            fh.write("%.17g,%s,%s,%d,%d,%s\n" % (
                r["k"],
                "%.17g" % r["v_var_at_proof_time"] if "v_var_at_proof_time" in r else "",
                "%.17g" % r["v_var_at_t_min"] if "v_var_at_t_min" in r else "",
                int(bool(r.get("passed"))), int(bool(r.get("invalid"))),
                r.get("error", "")))
    (out / "sweep.json").write_text(json.dumps(table, indent=2, sort_keys=True) + "\n")

    manifest = {
        "config_hash": config_hash(cfg),
        "seed": cfg.model.seed,
        "kind": "sweep",
        "k_star": k_star,
        "k_empirical": k_empirical,
        "files": ["sweep.csv", "sweep.json"],
        "status": "ok",
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2,
                                                  sort_keys=True) + "\n")
    art = RunArtifact(out_dir=out, manifest=manifest, linger_report=report,
                      geometry=geos)
    art.sweep_rows = rows
    return art


# ---------------------------------------------------------------------------
# Plot data
# ---------------------------------------------------------------------------

def emit_plot_data(artifact_dir, kind, out_path=None) -> Path:
    """Plain-CSV plotting exports with documented headers.

    Kinds: sync_trace (t, V_v, W, envelope), phase_diagram
    (k, V_v_at_window, pass), manifold_slice (x, v_attracting, v_repelling).
    """
    src = Path(artifact_dir)
    if kind == "sync_trace":
        f = src / "sync_trace.csv"
        if not f.exists():
            raise CanardLabError("missing sync_trace.csv: run the 'verify' stage first")
        rows = f.read_text().strip().splitlines()
        out = Path(out_path) if out_path else src / "plotdata_sync_trace.csv"
        with open(out, "w", newline="") as fh:
            fh.write("t,V_v,W,envelope\n")
            for line in rows[1:]:
                parts = line.split(",")
                fh.write(",".join(parts[0:4]) + "\n")
        return out
    if kind == "phase_diagram":
        f = src / "sweep.csv"
        if not f.exists():
            raise CanardLabError("missing sweep.csv: run the 'sweep' stage first")
        rows = f.read_text().strip().splitlines()
        out = Path(out_path) if out_path else src / "plotdata_phase_diagram.csv"
        with open(out, "w", newline="") as fh:
            fh.write("k,V_v_at_window,pass\n")
            for line in rows[1:]:
                parts = line.split(",")
                if parts[2]:
                    fh.write("%s,%s,%s\n" % (parts[0], parts[2], parts[3]))
        return out
    if kind == "manifold_slice":
        f = src / "charts" / "fast_000.csv"
        if not f.exists():
            raise CanardLabError("missing charts/fast_000.csv: run the "
                                 "'manifold' stage first")
        rows = f.read_text().strip().splitlines()[1:]
        recs = [line.split(",") for line in rows]
        y0, z0 = recs[0][2], recs[0][3]
        per_x = {}
        for r in recs:
            if r[2] != y0 or r[3] != z0:
                continue
            x = float(r[1])
            per_x.setdefault(x, []).append((int(r[6]), float(r[4])))
        out = Path(out_path) if out_path else src / "plotdata_manifold_slice.csv"
        with open(out, "w", newline="") as fh:
            fh.write("x,v_attracting,v_repelling\n")
            for x in sorted(per_x):
                att = sorted(v for lab, v in per_x[x] if lab == 1)
                rep = sorted(v for lab, v in per_x[x] if lab == 0)
                v_att = att[0] if att else np.nan
                v_rep = min(rep, key=lambda v: abs(v - v_att)) if rep else np.nan
                fh.write("%.17g,%.17g,%.17g\n" % (x, v_att, v_rep))
        return out
    raise CanardLabError(f"unknown plot-data kind {kind!r}")
