"""Command-line client for the search service.

Every command builds a request, sends it to the service (in-process by
default, remote with ``--server``), and writes the response artifacts to
the output directory.  Reruns with the same configuration and seed write
byte-identical files.  Exit codes: 0 success, 1 configuration or usage
error, 2 runtime failure (including failed verification checks).
"""

from __future__ import annotations

import json
import sys
import time
from pathlib import Path

import click
import pydantic

from .client import ServiceClient, ServiceError
from .errors import ArchslimError, ConfigError
from .schemas import CostProfile, RunConfig
from .training import FULL_COST_WEIGHT_GRID, FULL_POLICY_LR_GRID


def _load_json(path: str) -> dict:
    try:
        return json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise ConfigError(f"file not found: {path}")
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON in {path}: {exc}")


def _load_run_config(config: str | None, algo: str | None, seed: int | None,
                     profile: str | None) -> dict:
    payload = _load_json(config) if config else {}
    run = RunConfig(**payload)
    if algo:
        run = run.model_copy(update={"algorithm": algo})
    if seed is not None:
        run = run.model_copy(update={"hyperparams": run.hyperparams.model_copy(update={"seed": seed})})
    if profile:
        run = run.model_copy(update={"profile": CostProfile(**_load_json(profile))})
    return json.loads(run.model_dump_json())


def _write(out_dir: str, name: str, text: str) -> Path:
    path = Path(out_dir) / name
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text)
    return path


def _write_json(out_dir: str, name: str, payload) -> Path:
    return _write(out_dir, name, json.dumps(payload, indent=2) + "\n")


def _write_jsonl(out_dir: str, name: str, records: list[dict]) -> Path:
    lines = "".join(json.dumps(rec) + "\n" for rec in records)
    return _write(out_dir, name, lines)


@click.group()
@click.option("--server", default=None, help="URL of a running service; in-process when omitted.")
@click.pass_context
def cli(ctx, server):
    """One-shot architecture search for small transformers."""
    ctx.obj = {"server": server}


@cli.command()
@click.option("--config", default=None, help="Search-space config JSON (RunConfig or space fields).")
@click.option("--lengths", default="32,128,512", show_default=True)
@click.option("--reps", default=7, show_default=True)
@click.option("--seed", default=0, show_default=True)
@click.option("--out", default=".", show_default=True)
@click.pass_context
def profile(ctx, config, lengths, reps, seed, out):
    """Measure per-component costs on this machine."""
    space = {}
    if config:
        payload = _load_json(config)
        space = payload.get("space", payload)
    request = {
        "space": space,
        "lengths": [int(x) for x in lengths.split(",")],
        "reps": reps,
        "seed": seed,
    }
    with ServiceClient(ctx.obj["server"]) as client:
        response = client.post("/profile", request)
    _write_json(out, "profile.json", response["profile"])
    _write(out, "profile.csv", response["csv"])
    for warning in response["profile"].get("warnings", []):
        click.echo(f"warning: {warning}", err=True)
    click.echo(f"profile written to {out}/profile.json")


@cli.command()
@click.option("--config", default=None, help="Run config JSON.")
@click.option("--algo", type=click.Choice(["do", "sdo"]), default=None)
@click.option("--seed", type=int, default=None)
@click.option("--profile", "profile_path", default=None, help="Cost profile JSON.")
@click.option("--out", default=".", show_default=True)
@click.pass_context
def search(ctx, config, algo, seed, profile_path, out):
    """Run one-shot search and export the selected architecture."""
    run = _load_run_config(config, algo, seed, profile_path)
    started = time.perf_counter()
    with ServiceClient(ctx.obj["server"]) as client:
        response = client.post("/search", {"run": run})
    elapsed = time.perf_counter() - started
    _write_jsonl(out, "metrics.jsonl", response["metrics"])
    _write_json(out, "architecture.json", response["selected"])
    _write_json(out, "description.json", response["description"])
    _write(out, "architecture.dot", response["dot"])
    _write_json(out, "checkpoint.json", response["checkpoint"])
    _write_json(out, "run.json", {
        "config_hash": response["config_hash"],
        "seed": run["hyperparams"]["seed"],
        "run": run,
    })
    speed = "inf" if response["speedup_infinite"] else f"{response['speedup']:.3f}x"
    click.echo(
        f"{response['algorithm']} selected cost {response['cost']:.1f} "
        f"({speed} predicted), dev metric {response['dev_metric']:.4f}, "
        f"search wall time {elapsed:.1f}s"
    )
    if not response["valid"]:
        click.echo("warning: extracted architecture failed validation (collapse?)", err=True)


@cli.command()
@click.option("--config", default=None, help="Run config JSON.")
@click.option("--algo", type=click.Choice(["do", "sdo"]), default="sdo", show_default=True)
@click.option("--seed", type=int, default=None)
@click.option("--profile", "profile_path", default=None)
@click.option("--cost-weights", default=",".join(f"{v:g}" for v in FULL_COST_WEIGHT_GRID),
              show_default=True, help="Comma-separated cost-weight grid.")
@click.option("--policy-lrs", default=",".join(f"{v:g}" for v in FULL_POLICY_LR_GRID),
              show_default=True, help="Comma-separated policy learning rates (sdo only).")
@click.option("--quality-floor", type=float, default=None)
@click.option("--out", default=".", show_default=True)
@click.pass_context
def grid(ctx, config, algo, seed, profile_path, cost_weights, policy_lrs, quality_floor, out):
    """Sweep cost weights (and policy learning rates) and tabulate."""
    run = _load_run_config(config, algo, seed, profile_path)
    request = {
        "run": run,
        "cost_weight_grid": [float(x) for x in cost_weights.split(",")],
        "policy_lr_grid": [float(x) for x in policy_lrs.split(",")],
        "quality_floor": quality_floor,
    }
    with ServiceClient(ctx.obj["server"]) as client:
        response = client.post("/grid", request)
    _write(out, "grid.csv", response["csv"])
    _write_json(out, "grid.json", response["result"])
    _write_json(out, "grid_run.json", {
        "config_hash": response["config_hash"],
        "seed": run["hyperparams"]["seed"],
        "request": request,
    })
    best = response["result"]["best_index"]
    if best is None:
        click.echo("no run met the quality floor; table written")
    else:
        row = response["result"]["rows"][best]
        click.echo(f"best: {row['algorithm']} lambda={row['cost_weight']:g} "
                   f"cost={row['cost']:.1f} metric={row['metric']:.4f}")


@cli.command()
@click.option("--arch", required=True, help="Selected architecture JSON (from search).")
@click.option("--config", default=None, help="Run config JSON (task and hyperparams).")
@click.option("--seed", type=int, default=None)
@click.option("--out", default=".", show_default=True)
@click.pass_context
def retrain(ctx, arch, config, seed, out):
    """Train a selected architecture from scratch with frozen gates."""
    run = _load_run_config(config, None, seed, None)
    request = {
        "selected": _load_json(arch),
        "task": run["task"],
        "hyperparams": run["hyperparams"],
    }
    with ServiceClient(ctx.obj["server"]) as client:
        response = client.post("/retrain", request)
    _write_jsonl(out, "retrain_metrics.jsonl", response["metrics"])
    _write_json(out, "retrain_checkpoint.json", response["checkpoint"])
    click.echo(f"retrained dev metric {response['dev_metric']:.4f}")


@cli.command()
@click.option("--teacher", required=True, help="Teacher checkpoint JSON.")
@click.option("--teacher-arch", required=True, help="Teacher architecture JSON.")
@click.option("--config", default=None, help="Run config JSON (task and hyperparams).")
@click.option("--algo", type=click.Choice(["do", "sdo"]), default=None,
              help="Run architecture search during distillation.")
@click.option("--ramp-start", type=float, default=80.0, show_default=True)
@click.option("--ramp-end", type=float, default=100.0, show_default=True)
@click.option("--seed", type=int, default=None)
@click.option("--out", default=".", show_default=True)
@click.pass_context
def distill(ctx, teacher, teacher_arch, config, algo, ramp_start, ramp_end, seed, out):
    """Distill a teacher into a student on teacher-labeled data."""
    run = _load_run_config(config, None, seed, None)
    arch = _load_json(teacher_arch)
    request = {
        "teacher_checkpoint": _load_json(teacher),
        "teacher_gates": arch["values"] if "values" in arch else arch,
        "task": run["task"],
        "distill": {"ramp_start_pct": ramp_start, "ramp_end_pct": ramp_end},
        "hyperparams": run["hyperparams"],
        "algorithm": algo,
    }
    if run.get("profile"):
        request["profile"] = run["profile"]
    with ServiceClient(ctx.obj["server"]) as client:
        response = client.post("/distill", request)
    _write_jsonl(out, "distill_metrics.jsonl", response["history"])
    _write_json(out, "distill_checkpoint.json", response["checkpoint"])
    if response.get("selected") is not None:
        _write_json(out, "distill_architecture.json", {
            "schema_version": 1,
            "space": run["space"],
            "values": response["selected"],
        })
        click.echo(f"student dev metric {response['dev_metric']:.4f}, "
                   f"selected cost {response['cost']:.1f}")
    else:
        click.echo(f"student dev metric {response['dev_metric']:.4f}")


@cli.command()
@click.option("--arch", required=True, help="Selected architecture JSON.")
@click.option("--profile", "profile_path", default=None, help="Cost profile JSON.")
@click.option("--out", default=".", show_default=True)
@click.pass_context
def export(ctx, arch, profile_path, out):
    """Render a selected architecture to description JSON and DOT."""
    request = {"selected": _load_json(arch)}
    if profile_path:
        request["profile"] = _load_json(profile_path)
    with ServiceClient(ctx.obj["server"]) as client:
        response = client.post("/export", request)
    _write_json(out, "description.json", response["description"])
    _write(out, "architecture.dot", response["dot"])
    click.echo(f"exported to {out}/description.json and {out}/architecture.dot")


@cli.command()
@click.pass_context
def verify(ctx):
    """Run the property suites; nonzero exit on any failure."""
    with ServiceClient(ctx.obj["server"]) as client:
        response = client.post("/verify", {})
    for check in response["checks"]:
        status = "pass" if check["passed"] else "FAIL"
        click.echo(f"{check['name']}: {status} ({check['detail']})")
    if not response["passed"]:
        raise ArchslimError("verification failed")
    click.echo("all checks passed")


@cli.command()
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", default=8351, show_default=True)
def serve(host, port):
    """Run the service (deploy on the machine to be profiled)."""
    import uvicorn

    from .service import create_app

    uvicorn.run(create_app(), host=host, port=port)


def main(argv=None) -> int:
    try:
        cli.main(args=argv, standalone_mode=False)
        return 0
    except click.exceptions.Abort:
        return 1
    except click.exceptions.ClickException as exc:
        exc.show(file=sys.stderr)
        return 1
    except ServiceError as exc:
        click.echo(f"error: {exc.detail}", err=True)
        return 1 if exc.is_config_error else 2
    except (ConfigError, pydantic.ValidationError) as exc:
        click.echo(f"error: {exc}", err=True)
        return 1
    except ArchslimError as exc:
        click.echo(f"error: {exc}", err=True)
        return 2
    except Exception as exc:  # unexpected: runtime failure
        click.echo(f"error: {exc}", err=True)
        return 2


if __name__ == "__main__":
    sys.exit(main())
