"""Thin HTTP client command line.

Every subcommand speaks JSON to the service API.  By default the app runs
in-process over an ASGI transport (same filesystem, no socket); pass
``--server URL`` to target a remote instance started with ``canardlab serve``.

Exit codes: 0 success, 2 assumption violation, 1 any other error.
"""
from __future__ import annotations

import json
import sys
from pathlib import Path

import click
import httpx

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_ASSUMPTION = 2


def _request(server, endpoint, payload):
    if server:
        with httpx.Client(base_url=server.rstrip("/"), timeout=None) as client:
            return client.post(endpoint, json=payload)
    # in-process: the ASGI transport is async-only
    import asyncio

    from .service import create_app

    async def go():
        transport = httpx.ASGITransport(app=create_app())
        async with httpx.AsyncClient(transport=transport, timeout=None,
                                     base_url="http://canardlab.local") as client:
            return await client.post(endpoint, json=payload)

    return asyncio.run(go())


def _load_config_payload(config_path):
    """Parse the config client-side so remote servers need no file access."""
    from .config import load_config
    return load_config(config_path).to_canonical_dict()


def _post(ctx, endpoint, payload):
    resp = _request(ctx.obj.get("server"), endpoint, payload)
    try:
        body = resp.json()
    except json.JSONDecodeError:
        click.echo(f"error: non-JSON response ({resp.status_code})", err=True)
        sys.exit(EXIT_ERROR)
    if resp.status_code == 409:
        click.echo(f"assumption violation: {body.get('detail')}", err=True)
        sys.exit(EXIT_ASSUMPTION)
    if resp.status_code >= 400:
        click.echo(f"error: {body.get('detail', body)}", err=True)
        sys.exit(EXIT_ERROR)
    return body


def _run_payload(config, seed, out, k=None):
    payload = {"config": _load_config_payload(config)}
    if seed is not None:
        payload["seed"] = seed
    if out is not None:
        payload["out_dir"] = out
    if k is not None:
        payload["k"] = k
    return payload


run_options = [
    click.option("--config", required=True, type=click.Path(exists=True),
                 help="Experiment config (TOML or JSON)."),
    click.option("--seed", type=int, default=None, help="Override model seed."),
    click.option("--out", type=click.Path(), default=None,
                 help="Output directory override."),
]


def _add_options(opts):
    def wrap(fn):
        for opt in reversed(opts):
            fn = opt(fn)
        return fn
    return wrap


@click.group()
@click.option("--server", default=None, metavar="URL",
              help="Remote service URL; default runs the app in-process.")
@click.version_option()
@click.pass_context
def main(ctx, server):
    """Numerical laboratory for coupled three-time-scale oscillator networks."""
    ctx.ensure_object(dict)
    ctx.obj["server"] = server


@main.command()
@_add_options(run_options)
@click.option("--k", type=float, default=None, help="Override coupling strength.")
@click.pass_context
def simulate(ctx, config, seed, out, k):
    """Run geometry, linger and the coupled simulation; write trajectories."""
    body = _post(ctx, "/simulate", _run_payload(config, seed, out, k))
    click.echo(f"ok: artifacts in {body['out_dir']}")
    if body.get("linger"):
        click.echo(f"t_linger_min = {body['linger']['t_linger_min']:.6g}")


@main.command()
@_add_options(run_options)
@click.pass_context
def manifold(ctx, config, seed, out):
    """Compute fast/slow manifold charts, folds and canard points."""
    body = _post(ctx, "/manifold", _run_payload(config, seed, out))
    click.echo(f"ok: charts in {body['out_dir']}/charts")


@main.command()
@_add_options(run_options)
@click.pass_context
def linger(ctx, config, seed, out):
    """Compute linger times; print the per-oscillator table."""
    body = _post(ctx, "/linger", _run_payload(config, seed, out))
    rep = body["linger"]
    click.echo(f"{'oscillator':>10} {'method':>12} {'t_linger':>14}")
    for row in rep["oscillators"]:
        click.echo(f"{row['index']:>10} {'quadrature':>12} "
                   f"{row['t_linger_quadrature']:>14.6g}")
        if row.get("t_linger_empirical") is not None:
            click.echo(f"{row['index']:>10} {'empirical':>12} "
                       f"{row['t_linger_empirical']:>14.6g}")
    click.echo(f"t_linger_min = {rep['t_linger_min']:.6g}")


@main.command()
@_add_options(run_options)
@click.option("--k", type=float, default=None, help="Override coupling strength.")
@click.pass_context
def verify(ctx, config, seed, out, k):
    """Full pipeline plus the sufficient-condition verification report."""
    body = _post(ctx, "/verify", _run_payload(config, seed, out, k))
    rep = body["verification"]
    click.echo(f"k = {rep['k_used']:.6g}  k* = {rep['k_star']:.6g}")
    click.echo(f"V_v(delta*t_min) = {rep['v_var_at_proof_time']:.6g}  "
               f"V_v(t_min) = {rep['v_var_at_t_min']:.6g}  "
               f"eps_tol = {rep['eps_tol']:.6g}")
    for name, ok in rep["passes"].items():
        click.echo(f"  [{'PASS' if ok else 'FAIL'}] {name}")
    if rep["invalid"]:
        click.echo("report INVALID: branch assumption violated before the "
                   "proof evaluation point", err=True)
        sys.exit(EXIT_ASSUMPTION)
    click.echo("verdict: " + ("PASS" if rep["passed"] else "FAIL"))


@main.command()
@_add_options(run_options)
@click.option("--grid", default=None,
              help="Comma-separated k grid, e.g. '0,0.5,1,2,4'.")
@click.pass_context
def sweep(ctx, config, seed, out, grid):
    """Coupling-strength sweep; reports k_empirical against k*."""
    payload = _run_payload(config, seed, out)
    if grid:
        try:
            payload["grid"] = [float(g) for g in grid.split(",") if g.strip()]
        except ValueError:
            click.echo(f"error: bad --grid {grid!r}", err=True)
            sys.exit(EXIT_ERROR)
    body = _post(ctx, "/sweep", payload)
    table = body["table"]
    click.echo(f"{'k':>12} {'V_v(d*t_min)':>14} {'V_v(t_min)':>14} {'pass':>6}")
    for row in table["rows"]:
        if "error" in row:
            click.echo(f"{row['k']:>12.6g} {'-':>14} {'-':>14}  error: {row['error']}")
        else:
            click.echo(f"{row['k']:>12.6g} {row['v_var_at_proof_time']:>14.6g} "
                       f"{row['v_var_at_t_min']:>14.6g} "
                       f"{'yes' if row['passed'] else 'no':>6}")
    ke = table["k_empirical"]
    click.echo(f"k_star = {table['k_star']:.6g}  k_empirical = "
               + (f"{ke:.6g}" if ke is not None else "none"))


@main.command(name="plot-data")
@click.argument("kind", type=click.Choice(["sync_trace", "phase_diagram",
                                           "manifold_slice"]))
@click.option("--out", "artifact_dir", required=True, type=click.Path(exists=True),
              help="Run artifact directory.")
@click.pass_context
def plot_data(ctx, kind, artifact_dir):
    """Emit plain plotting CSVs from run artifacts."""
    body = _post(ctx, "/plot-data", {"artifact_dir": artifact_dir, "kind": kind})
    click.echo(f"ok: {body['path']}")


@main.command()
@click.option("--host", default="127.0.0.1")
@click.option("--port", default=8777, type=int)
def serve(host, port):
    """Run the HTTP service."""
    import uvicorn
    uvicorn.run("canardlab.service:app", host=host, port=port)


@main.command(name="default-config")
@click.option("--out", type=click.Path(), default=None,
              help="Write the default TOML here instead of stdout.")
def default_config(out):
    """Print (or write) the shipped default configuration."""
    from .config import DEFAULT_CONFIG_TOML
    if out:
        Path(out).write_text(DEFAULT_CONFIG_TOML)
        click.echo(f"wrote {out}")
    else:
        click.echo(DEFAULT_CONFIG_TOML, nl=False)


if __name__ == "__main__":
    main()
