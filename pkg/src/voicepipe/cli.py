"""Operator entry points: serve, chat, push-wav, bench.

Exit codes are a stable contract: 0 success, 2 config, 3 bind,
4 connect, 5 capability, 6 turn failure, 7 endpoint timeout.
"""
from __future__ import annotations

import asyncio
import logging
import os
import signal
import sys

import click

from .bench import run_bench, write_bench_outputs
from .client import ConnectError, ServerEvent, WsSession
from .config import load_config
from .errors import ConfigError, ValidationError
from .gateway import Gateway
from .pipeline import validate_config
from .pushwav import push_wav
from .server import GatewayServer
from .stages.registry import default_registry
from . import wire

EXIT_CONFIG = 2
EXIT_BIND = 3
EXIT_CONNECT = 4
EXIT_CAPABILITY = 5
EXIT_TURN_FAILED = 6
EXIT_ENDPOINT_TIMEOUT = 7

DEFAULT_URL = "ws://127.0.0.1:7705/v1/session"


def _load_plan(config_path: str):
    try:
        config = load_config(config_path)
        return validate_config(config)
    except ValidationError as exc:
        click.echo("invalid pipeline config:", err=True)
        for violation in exc.violations:
            click.echo(f"  - {violation}", err=True)
        sys.exit(EXIT_CONFIG)


@click.group()
def main():
    """Real-time voice agent pipeline server and tools."""


@main.command()
@click.option("--config", "config_path", required=True, type=click.Path(exists=False))
@click.option("--bind", default="127.0.0.1:7705", show_default=True, help="ADDR:PORT")
@click.option("--auth-token-env", default=None, help="env var holding the bearer token")
@click.option("--log-level", default="info", show_default=True)
@click.option("--static", "static_dir", default=None, type=click.Path(), help="serve a web client bundle")
def serve(config_path, bind, auth_token_env, log_level, static_dir):
    """Run the gateway server with the configured pipeline."""
    logging.basicConfig(
        level=getattr(logging, log_level.upper(), logging.INFO),
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    plan = _load_plan(config_path)
    token = None
    if auth_token_env:
        token = os.environ.get(auth_token_env)
        if token is None:
            click.echo(f"error: auth token env var {auth_token_env!r} is not set", err=True)
            sys.exit(EXIT_CONFIG)
    try:
        host, port_str = bind.rsplit(":", 1)
        port = int(port_str)
    except ValueError:
        click.echo(f"error: --bind must be ADDR:PORT, got {bind!r}", err=True)
        sys.exit(EXIT_CONFIG)

    async def run():
        gateway = Gateway(plan, default_registry(), auth_token=token)
        server = GatewayServer(gateway, host, port, static_dir=static_dir)
        try:
            await server.start()
        except OSError as exc:
            click.echo(f"error: cannot bind {bind}: {exc}", err=True)
            return EXIT_BIND
        click.echo(f"listening on {host}:{server.bound_port}")
        stop = asyncio.Event()
        loop = asyncio.get_running_loop()
        for sig in (signal.SIGINT, signal.SIGTERM):
            loop.add_signal_handler(sig, stop.set)
        await stop.wait()
        click.echo("shutting down")
        await server.stop()
        return 0

    sys.exit(asyncio.run(run()))


@main.command()
@click.option("--url", default=DEFAULT_URL, show_default=True)
@click.option("--text", "text_mode", is_flag=True, default=True, help="text chat mode")
@click.option("--auth-token-env", default=None)
def chat(url, text_mode, auth_token_env):
    """Interactive terminal chat against a running server."""
    token = os.environ.get(auth_token_env) if auth_token_env else None
    sys.exit(asyncio.run(_chat(url, token)))


async def _chat(url: str, token) -> int:
    try:
        session = await WsSession.connect(url, caps={"text": True}, token=token)
    except ConnectError as exc:
        click.echo(f"error: {exc}", err=True)
        return EXIT_CONNECT
    click.echo(f"connected, session {session.session_id}")
    loop = asyncio.get_running_loop()
    events = session.events()
    try:
        while True:
            try:
                line = await loop.run_in_executor(None, input, "you> ")
            except EOFError:
                return 0
            if not line.strip():
                continue
            await session.send_event(wire.EV_TEXT_USER, {"text": line})
            code = await _render_turn(events)
            if code is not None:
                return code
    except KeyboardInterrupt:
        try:
            await session.send_event(wire.EV_CONTROL_INTERRUPT, {})
        except Exception:  # noqa: BLE001 - already disconnecting
            pass
        click.echo("\ninterrupted")
        return 0
    finally:
        await session.close()


async def _render_turn(events) -> int | None:
    """Stream one agent turn to the terminal; returns an exit code on failure."""
    streaming = False
    async for incoming in events:
        if isinstance(incoming, bytes):
            continue  # text-mode client: ignore stray audio
        event: ServerEvent = incoming
        if event.event == wire.EV_AGENT_TEXT_DELTA:
            click.echo(event.data.get("text", ""), nl=False)
            streaming = True
        elif event.event == wire.EV_AGENT_TEXT_DONE:
            click.echo()
            streaming = False
        elif event.event == wire.EV_METRICS_TURN:
            ms = event.data.get("eos_to_first_audio_ms")
            if ms is not None:
                click.echo(f"[turn {event.data.get('turn')}] eos -> first audio: {ms} ms")
            return None
        elif event.event == wire.EV_AGENT_TURN_END:
            if streaming:
                click.echo()
            if not event.data.get("interrupted"):
                continue  # metrics event follows
            return None
        elif event.event == wire.EV_ERROR:
            code = event.data.get("code")
            click.echo(f"server error [{code}]: {event.data.get('message')}", err=True)
            if code == "capability":
                return EXIT_CAPABILITY
            if code in ("adapter_error", "stage_failed"):
                return EXIT_TURN_FAILED
    return EXIT_CONNECT  # stream ended unexpectedly


@main.command("push-wav")
@click.option("--url", default=DEFAULT_URL, show_default=True)
@click.option("--in", "in_path", required=True, type=click.Path())
@click.option("--out", "out_path", required=True, type=click.Path())
@click.option("--report", "report_path", default=None, type=click.Path())
@click.option("--timeout", "timeout_s", default=10.0, show_default=True, help="endpoint timeout seconds")
@click.option("--auth-token-env", default=None)
@click.option("--figure/--no-figure", default=True, show_default=True)
def push_wav_cmd(url, in_path, out_path, report_path, timeout_s, auth_token_env, figure):
    """Stream a WAV through one full turn and collect the agent reply."""
    token = os.environ.get(auth_token_env) if auth_token_env else None
    sys.exit(
        asyncio.run(
            push_wav(
                url,
                in_path,
                out_path,
                report_path,
                timeout_s=timeout_s,
                token=token,
                figure=figure,
            )
        )
    )


@main.command()
@click.option("--config", "config_path", required=True, type=click.Path())
@click.option("--turns", default=20, show_default=True)
@click.option("--handoff", type=click.Choice(["sentence", "full"]), default=None)
@click.option("--out", "out_path", default=None, type=click.Path())
@click.option("--figure/--no-figure", default=True, show_default=True)
def bench(config_path, turns, handoff, out_path, figure):
    """Run N synthetic turns in-process and report latency percentiles."""
    plan = _load_plan(config_path)
    registry = default_registry()
    try:
        reports, summary = asyncio.run(
            run_bench(plan.config, registry, turns, handoff=handoff)
        )
    except ConfigError as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(EXIT_CONFIG)
    except TimeoutError as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(EXIT_TURN_FAILED)
    for report in reports:
        ms = report.eos_to_first_audio_ms
        click.echo(f"turn {report.turn}: {ms if ms is not None else 'incomplete'} ms")
    click.echo(
        f"n={summary['n']} p50={summary['p50']} ms p95={summary['p95']} ms "
        f"mean={summary['mean']:.1f} ms"
    )
    if out_path:
        fig_path = write_bench_outputs(out_path, reports, summary, figure=figure)
        click.echo(f"report -> {out_path}" + (f", figure -> {fig_path}" if fig_path else ""))
    sys.exit(0)


if __name__ == "__main__":
    main()
