"""Command-line entry points.

Exit codes: 0 success, 1 validation failure, 2 run-time violation detected,
so a scenario can gate CI.
"""

from __future__ import annotations

import json
import sys
from pathlib import Path

import click

from . import report as report_mod
from .runner import Runtime, execute_standalone
from .scenario import Scenario, ScenarioError, validate
from .sim import MS
from .twin import Twin


@click.group()
@click.option("--seed", type=int, default=None, help="Override the scenario seed.")
@click.option("--out", type=click.Path(), default="out",
              help="Output root for run directories.")
@click.option("--auto-confirm", is_flag=True, default=False,
              help="Treat human-confirmation advisories as confirmed (headless).")
@click.pass_context
def main(ctx, seed, out, auto_confirm):
    """Deterministic BFT cyber range: run scenarios, sweep vulnerability
    regions, replay runs, serve the console API."""
    ctx.ensure_object(dict)
    ctx.obj.update(seed=seed, out=Path(out), auto_confirm=auto_confirm)


def _load(path: str) -> Scenario:
    try:
        return validate(path)
    except ScenarioError as exc:
        for err in exc.errors:
            click.echo(f"error: {err}", err=True)
        sys.exit(1)


def _run_dir(ctx, scn: Scenario, seed: int) -> Path:
    base = ctx.obj["out"] / "runs"
    base.mkdir(parents=True, exist_ok=True)
    k = 0
    while (base / f"{scn.name}-{seed}-{k:03d}").exists():
        k += 1
    return base / f"{scn.name}-{seed}-{k:03d}"


@main.command("validate")
@click.argument("scenario_file", type=click.Path(exists=True))
def validate_cmd(scenario_file):
    """Validate a scenario file; prints every problem found."""
    scn = _load(scenario_file)
    click.echo(f"ok: {scn.name} (f={scn.f}, n={scn.n}, "
               f"duration={scn.data['duration_ms']} ms, hash={scn.hash()})")


@main.command("run")
@click.argument("scenario_file", type=click.Path(exists=True))
@click.option("--figures/--no-figures", default=True)
@click.pass_context
def run_cmd(ctx, scenario_file, figures):
    """Execute a scenario and persist the run directory."""
    scn = _load(scenario_file)
    seed = ctx.obj["seed"] if ctx.obj["seed"] is not None else scn.seed
    run_dir = _run_dir(ctx, scn, seed)
    rt = Runtime(scn, seed=seed, store_root=run_dir / "store",
                 auto_confirm=ctx.obj["auto_confirm"], run_id=run_dir.name)
    rt.run()
    report = rt.build_report()
    report_mod.save_run(report, run_dir)
    verified = report_mod.record_verified_configs(report, ctx.obj["out"])
    if figures:
        report_mod.render_run(run_dir, broker=rt.broker)
    m = report["metrics"]
    click.echo(f"run {run_dir.name}: decisions={m['decisions']} "
               f"view_changes={m['view_changes']} "
               f"false_suspicions={m['false_suspicions']} "
               f"failsafe={m['failsafe_engaged']} "
               f"report_hash={report['report_hash']}")
    click.echo(f"  -> {run_dir}")
    if verified:
        click.echo(f"  historian: verified configs {verified}")
    if report["violations"]:
        click.echo(f"violations detected: {report['violations']}", err=True)
        sys.exit(2)


@main.command("sweep")
@click.argument("scenario_file", type=click.Path(exists=True))
@click.pass_context
def sweep_cmd(ctx, scenario_file):
    """Run the scenario's sweep jobs standalone and render the maps."""
    scn = _load(scenario_file)
    seed = ctx.obj["seed"] if ctx.obj["seed"] is not None else scn.seed
    jobs = [j for j in scn.data["jobs"] if j["kind"] == "sweep"]
    if not jobs:
        click.echo("error: scenario declares no sweep jobs", err=True)
        sys.exit(1)
    out = ctx.obj["out"] / "sweeps"
    out.mkdir(parents=True, exist_ok=True)
    executor = lambda data, faults, horizon, init, tag: execute_standalone(
        data, faults, horizon, init, tag, master_seed=seed)
    twin = Twin(scn, executor=executor, run_id=f"sweep-{scn.name}")
    for job in jobs:
        snap = twin.snapshot()
        vmap = twin.sweep(snap, job["axes"], job.get("faults_template", []),
                          int(job.get("horizon_ms", 1000) * MS))
        doc = vmap.to_json()
        (out / f"map_{vmap.id}.json").write_text(
            json.dumps(doc, indent=1, sort_keys=True))
        report_mod.write_map_csv(doc, out)
        report_mod.render_map(doc, out)
        outcomes = {c["outcome"] for c in vmap.cells.values()}
        click.echo(f"map {vmap.id}: {len(vmap.cells)} cells, "
                   f"{len(vmap.boundary)} boundary edges, outcomes={sorted(outcomes)}")
    click.echo(f"  -> {out}")


@main.command("replay")
@click.argument("run_dir", type=click.Path(exists=True))
def replay_cmd(run_dir):
    """Re-execute a stored run and compare report hashes."""
    ok, want, got = report_mod.replay_run(run_dir)
    click.echo(f"stored  {want}")
    click.echo(f"replayed {got}")
    if not ok:
        click.echo("replay mismatch", err=True)
        sys.exit(2)
    click.echo("replay deterministic: hashes identical")


@main.command("report")
@click.argument("run_dir", type=click.Path(exists=True))
@click.option("--to", "to_dir", type=click.Path(), default=None,
              help="Render into this directory instead of the run dir.")
def report_cmd(run_dir, to_dir):
    """Render figures and CSV exports for a stored run."""
    written = report_mod.render_run(run_dir, out_dir=to_dir)
    for path in written:
        click.echo(str(path))


@main.command("export-siem")
@click.argument("run_dir", type=click.Path(exists=True))
@click.option("--file", "out_file", type=click.Path(), default=None)
@click.option("--from", "lo", type=int, default=0)
@click.option("--to", "hi", type=int, default=None)
def export_siem_cmd(run_dir, out_file, lo, hi):
    """Export the SIEM event stream as newline-delimited JSON."""
    broker = report_mod.open_store(run_dir)
    out_file = out_file or str(Path(run_dir) / "siem_export.ndjson")
    path = report_mod.export_siem(broker, out_file, lo, hi)
    n = sum(1 for _ in path.open())
    click.echo(f"{path} ({n} events)")


@main.command("serve")
@click.option("--host", default="127.0.0.1")
@click.option("--port", type=int, default=8008)
@click.pass_context
def serve_cmd(ctx, host, port):
    """Start the HTTP+streaming service (console backend)."""
    import uvicorn

    from .service import create_app
    frontend = Path("frontend/dist")
    app = create_app(out_root=ctx.obj["out"],
                     auto_confirm=ctx.obj["auto_confirm"],
                     frontend_dir=frontend if frontend.exists() else None)
    uvicorn.run(app, host=host, port=port, log_level="warning")


if __name__ == "__main__":
    main()
