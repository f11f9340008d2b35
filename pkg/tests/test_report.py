"""Report files: delimited rows, summary block, rendered figure."""
from __future__ import annotations

import uuid

from voicepipe.metrics import LatencyReport, MarkKind
from voicepipe.report import (
    HEADER_NOTE,
    read_report_rows,
    render_latency_figure,
    write_report,
)


def sample_reports(session):
    reports = []
    for turn, latency in enumerate([1000, 1100, 1050]):
        reports.append(
            LatencyReport(
                session=session,
                turn=turn,
                complete=True,
                interrupted=False,
                eos_to_first_audio_ms=latency,
                marks={
                    MarkKind.EOS: turn * 5_000_000,
                    MarkKind.TTS_FIRST_AUDIO: turn * 5_000_000 + latency * 1000,
                },
                stale_packets=0,
            )
        )
    return reports


def test_write_and_read_back(tmp_path):
    session = uuid.uuid4()
    path = tmp_path / "report.csv"
    write_report(path, sample_reports(session), {"n": 3, "p50": 1050, "p95": 1100, "mean": 1050.0})
    text = path.read_text()
    assert text.startswith(HEADER_NOTE)
    assert "# summary" in text
    assert "# p50,1050" in text
    rows = read_report_rows(path)
    assert [int(r["eos_to_first_audio_ms"]) for r in rows] == [1000, 1100, 1050]
    assert rows[0]["complete"] == "true"


def test_incomplete_turn_has_empty_latency_cell(tmp_path):
    session = uuid.uuid4()
    report = LatencyReport(
        session=session,
        turn=0,
        complete=False,
        interrupted=True,
        eos_to_first_audio_ms=None,
        marks={MarkKind.EOS: 0},
        stale_packets=4,
    )
    path = tmp_path / "one.csv"
    write_report(path, [report])
    row = read_report_rows(path)[0]
    assert row["eos_to_first_audio_ms"] == ""
    assert row["interrupted"] == "true"
    assert row["stale_packets"] == "4"


def test_figure_rendered_alongside(tmp_path):
    session = uuid.uuid4()
    png = tmp_path / "latency.png"
    render_latency_figure(png, sample_reports(session), {"n": 3, "p50": 1050, "p95": 1100})
    data = png.read_bytes()
    assert data[:8] == b"\x89PNG\r\n\x1a\n"
    assert len(data) > 1000
