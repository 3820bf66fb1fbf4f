"""Command-line front end.

Thin client: every subcommand serializes its inputs, calls the HTTP API and
writes whatever artifacts come back. By default the app is mounted
in-process (no socket, nothing to start); pointing ``--server`` or the
``EVCSIM_SERVER`` environment variable at a running instance switches to a
real network call with identical behaviour.

Failures print exactly one ``error[<code>]: <message>`` line on stderr and
exit nonzero, so wrapping scripts can pattern-match them.
"""

from __future__ import annotations

import asyncio
import base64
import json
import sys
from pathlib import Path

import click
import httpx

from . import __version__
from .io import atomic_write_bytes, atomic_write_text, resolve_out_dir
from .service import create_app


def _die(code: str, message: str) -> None:
    click.echo(f"error[{code}]: {' '.join(str(message).split())}", err=True)
    sys.exit(2)


async def _post_in_process(path: str, payload: dict) -> httpx.Response:
    transport = httpx.ASGITransport(app=create_app())
    async with httpx.AsyncClient(
        transport=transport, base_url="http://evcsim.local", timeout=3600.0
    ) as client:
        return await client.post(path, json=payload)


def _call(server: str | None, path: str, payload: dict) -> dict:
    try:
        if server:
            with httpx.Client(base_url=server, timeout=3600.0) as client:
                resp = client.post(path, json=payload)
        else:
            resp = asyncio.run(_post_in_process(path, payload))
    except httpx.HTTPError as e:
        _die("connection", f"cannot reach {server or 'in-process app'}: {e}")
    if resp.status_code != 200:
        try:
            detail = resp.json().get("detail")
        except ValueError:
            detail = None
        if isinstance(detail, dict) and "message" in detail:
            _die(detail.get("error", "server-error"), detail["message"])
        _die("server-error", f"HTTP {resp.status_code}: {resp.text[:200]}")
    return resp.json()


def _load_config_doc(path: str | None) -> dict:
    if path is None:
        return {}
    try:
        text = Path(path).read_text()
    except OSError as e:
        _die("config-io", str(e))
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as e:
        _die("config-parse", f"{path}: {e}")
    if not isinstance(doc, dict):
        _die("config-parse", f"{path}: top level must be a JSON object")
    return doc


def _out_dir(doc: dict) -> Path:
    out = doc.get("out_dir", "out")
    if not isinstance(out, str):
        _die("invalid-config", "out_dir must be a string")
    return resolve_out_dir(out)


_config_option = click.option(
    "--config", "config_path", type=click.Path(), default=None,
    help="Scenario config JSON; omitted fields use built-in defaults.",
)


@click.group()
@click.version_option(__version__, prog_name="evcsim")
@click.option(
    "--server", envvar="EVCSIM_SERVER", default=None,
    help="Base URL of a running API instance; default runs in-process.",
)
@click.pass_context
def main(ctx: click.Context, server: str | None) -> None:
    """Simulate, attack, detect and mitigate on the PV charging station."""
    ctx.obj = server


@main.command()
@_config_option
@click.pass_obj
def calibrate(server: str | None, config_path: str | None) -> None:
    """Solve plant parameters that hit the target operating medians."""
    doc = _load_config_doc(config_path)
    plant = doc.get("plant", {})
    targets = plant.get("targets", {}) if isinstance(plant, dict) else {}
    res = _call(server, "/calibrate", {"targets": targets})
    out = _out_dir(doc)
    path = out / "params.json"
    atomic_write_text(path, json.dumps(res["params"], indent=2, sort_keys=True) + "\n")
    click.echo(f"calibrated parameters -> {path}")


@main.command()
@click.option(
    "--agent", type=click.Choice(["pv", "bes", "ev", "all"]), default="all",
    show_default=True, help="Which channel's agent to train.",
)
@_config_option
@click.option("--seed", type=int, default=None, help="Override the config seed.")
@click.pass_obj
def train(
    server: str | None, agent: str, config_path: str | None, seed: int | None
) -> None:
    """Train mitigation agents; writes bundles and reward traces."""
    doc = _load_config_doc(config_path)
    if seed is not None:
        doc["seed"] = seed
    res = _call(server, "/train", {"config": doc, "agent": agent})
    out = _out_dir(doc)
    for ch, art in sorted(res["agents"].items()):
        bundle_path = out / f"agent_{ch}.bin"
        atomic_write_bytes(bundle_path, base64.b64decode(art["bundle_b64"]))
        atomic_write_text(out / f"reward_{ch}.csv", art["reward_csv"])
        flag = " (stalled)" if art["stalled"] else ""
        click.echo(
            f"{ch}: {art['episodes']} episodes, "
            f"best return {art['best_return']:.4f}{flag} -> {bundle_path}"
        )


@main.command()
@_config_option
@click.pass_obj
def run(server: str | None, config_path: str | None) -> None:
    """Run one scenario; writes time series, phase stats and charts."""
    doc = _load_config_doc(config_path)
    res = _call(server, "/run", {"config": doc})
    out = _out_dir(doc)
    atomic_write_text(out / "timeseries.csv", res["time_series_csv"])
    atomic_write_text(out / "stats.csv", res["stats_csv"])
    for name, svg in sorted(res["svgs"].items()):
        atomic_write_text(out / name, svg)
    for note in res["notes"]:
        click.echo(f"note: {note}", err=True)
    click.echo(f"run {res['config_hash']} -> {out}")


@main.command()
@_config_option
@click.option(
    "--strategies", default="legacy,brute_force,clone,td3", show_default=True,
    help="Comma-separated mitigation strategies to pit against each other.",
)
@click.pass_obj
def compare(server: str | None, config_path: str | None, strategies: str) -> None:
    """Re-run one scenario under several mitigation strategies."""
    wanted = [s.strip() for s in strategies.split(",") if s.strip()]
    if not wanted:
        _die("invalid-strategies", "no strategies given")
    doc = _load_config_doc(config_path)
    res = _call(server, "/compare", {"config": doc, "strategies": wanted})
    out = _out_dir(doc)
    atomic_write_text(out / "compare_stats.csv", res["stats_csv"])
    for name, csv_text in sorted(res["time_series"].items()):
        atomic_write_text(out / "compare" / name / "timeseries.csv", csv_text)
    for note in res["notes"]:
        click.echo(f"note: {note}", err=True)
    click.echo(f"compared {','.join(wanted)} -> {out}")


@main.command()
@click.option(
    "--input", "input_path", required=True, type=click.Path(),
    help="A previously written time-series CSV.",
)
@click.pass_obj
def stats(server: str | None, input_path: str) -> None:
    """Recompute phase statistics from a logged time series (to stdout)."""
    try:
        text = Path(input_path).read_text()
    except OSError as e:
        _die("input-io", str(e))
    res = _call(server, "/stats", {"csv_text": text})
    for note in res["notes"]:
        click.echo(f"note: {note}", err=True)
    click.echo(res["stats_csv"], nl=False)


@main.command()
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", default=8000, show_default=True, type=int)
def serve(host: str, port: int) -> None:
    """Expose the API over the network for remote CLI use."""
    import uvicorn

    uvicorn.run(create_app(), host=host, port=port)


if __name__ == "__main__":
    main()
