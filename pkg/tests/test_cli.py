"""CLI contract: exit codes, config errors, bench outputs, serve smoke."""
from __future__ import annotations

import asyncio
import socket
import subprocess
import sys
import time
from pathlib import Path

import pytest
from click.testing import CliRunner

from voicepipe.audio import sine_pcm, write_wav
from voicepipe.cli import main

CONFIG_DIR = Path(__file__).resolve().parent.parent / "configs"

CYCLE_CONFIG = """
stages:
  - id: a
    kind: echo
  - id: b
    kind: echo
edges: [[a, b], [b, a]]
sources: [a]
sinks: [b]
"""

HTTP_CONFIG = """
stages:
  - id: llm
    kind: http_llm
    params: {base_url: "http://127.0.0.1:1/x"}
  - id: tts
    kind: mock_tts
edges: [[llm, tts]]
sources: [llm]
sinks: [llm, tts]
"""

FAST_BENCH_CONFIG = """
stages:
  - id: asr
    kind: mock_asr
    aggregate: utterance
    params: {script: ["hi"], asr_final_delay_ms: 20}
  - id: llm
    kind: scripted_llm
    params:
      script: [["Short", " reply."]]
      llm_inter_token_ms: 5
  - id: tts
    kind: mock_tts
    params: {tts_first_audio_delay_ms: 10}
edges: [[asr, llm], [llm, tts]]
sources: [asr]
sinks: [asr, llm, tts]
"""


@pytest.fixture
def runner():
    return CliRunner()


class TestConfigErrors:
    def test_cycle_named_exit_2(self, runner, tmp_path):
        config = tmp_path / "cycle.yaml"
        config.write_text(CYCLE_CONFIG)
        result = runner.invoke(main, ["bench", "--config", str(config), "--turns", "1"])
        assert result.exit_code == 2
        assert "cycle" in result.output

    def test_missing_file_exit_2(self, runner, tmp_path):
        result = runner.invoke(
            main, ["bench", "--config", str(tmp_path / "nope.yaml"), "--turns", "1"]
        )
        assert result.exit_code == 2

    def test_shipped_example_configs_validate(self, runner):
        from voicepipe.config import load_config
        from voicepipe.pipeline import validate_config

        for name in ("mock_agent.yaml", "echo.yaml", "http_agent.yaml"):
            validate_config(load_config(CONFIG_DIR / name))


class TestBench:
    def test_non_mock_stage_rejected(self, runner, tmp_path):
        config = tmp_path / "http.yaml"
        config.write_text(HTTP_CONFIG)
        result = runner.invoke(main, ["bench", "--config", str(config), "--turns", "1"])
        assert result.exit_code == 2
        assert "deterministic" in result.output

    def test_bench_writes_report_and_figure(self, runner, tmp_path):
        config = tmp_path / "fast.yaml"
        config.write_text(FAST_BENCH_CONFIG)
        out = tmp_path / "bench.csv"
        result = runner.invoke(
            main,
            ["bench", "--config", str(config), "--turns", "3", "--out", str(out)],
        )
        assert result.exit_code == 0, result.output
        assert out.exists()
        assert out.with_suffix(".png").exists()
        assert "p50=" in result.output

    def test_handoff_flag_accepted(self, runner, tmp_path):
        config = tmp_path / "fast.yaml"
        config.write_text(FAST_BENCH_CONFIG)
        result = runner.invoke(
            main,
            ["bench", "--config", str(config), "--turns", "2", "--handoff", "full"],
        )
        assert result.exit_code == 0, result.output

    def test_shipped_mock_config_through_bench_cli(self, runner, tmp_path):
        out = tmp_path / "mock.csv"
        result = runner.invoke(
            main,
            [
                "bench",
                "--config",
                str(CONFIG_DIR / "mock_agent.yaml"),
                "--turns",
                "2",
                "--out",
                str(out),
            ],
        )
        assert result.exit_code == 0, result.output
        assert out.exists() and out.with_suffix(".png").exists()
        # default timings: each turn lands in the sentence-handoff ballpark
        from voicepipe.report import read_report_rows

        for row in read_report_rows(out):
            assert 950 <= int(row["eos_to_first_audio_ms"]) <= 1250


class TestPushWav:
    def test_malformed_wav_exit_2(self, runner, tmp_path):
        bad = tmp_path / "bad.wav"
        bad.write_bytes(b"RIFFgarbage")
        result = runner.invoke(
            main,
            [
                "push-wav",
                "--in",
                str(bad),
                "--out",
                str(tmp_path / "out.wav"),
            ],
        )
        assert result.exit_code == 2

    def test_connection_refused_exit_4(self, runner, tmp_path):
        wav = tmp_path / "tone.wav"
        write_wav(str(wav), sine_pcm(1600))
        result = runner.invoke(
            main,
            [
                "push-wav",
                "--url",
                "ws://127.0.0.1:1/v1/session",
                "--in",
                str(wav),
                "--out",
                str(tmp_path / "out.wav"),
            ],
        )
        assert result.exit_code == 4


class TestChat:
    def test_connection_refused_exit_4(self, runner):
        result = runner.invoke(
            main, ["chat", "--url", "ws://127.0.0.1:1/v1/session"]
        )
        assert result.exit_code == 4


class TestServe:
    def test_port_already_bound_exit_3(self, runner):
        blocker = socket.socket()
        blocker.bind(("127.0.0.1", 0))
        port = blocker.getsockname()[1]
        try:
            result = runner.invoke(
                main,
                [
                    "serve",
                    "--config",
                    str(CONFIG_DIR / "echo.yaml"),
                    "--bind",
                    f"127.0.0.1:{port}",
                ],
            )
            assert result.exit_code == 3
        finally:
            blocker.close()

    def test_serve_subprocess_listens_and_shuts_down(self, tmp_path):
        proc = subprocess.Popen(
            [
                sys.executable,
                "-m",
                "voicepipe.cli",
                "serve",
                "--config",
                str(CONFIG_DIR / "echo.yaml"),
                "--bind",
                "127.0.0.1:0",
            ],
            stdout=subprocess.PIPE,
            stderr=subprocess.STDOUT,
            text=True,
        )
        try:
            line = proc.stdout.readline()
            assert "listening on 127.0.0.1:" in line
        finally:
            proc.terminate()
            proc.wait(timeout=10)
