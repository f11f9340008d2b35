"""Latency report files: delimited per-turn rows, a summary block, a figure.

The headline column measures end-of-user-speech to the first agent audio
frame queued to the client connection; sound actually leaving the client's
speaker is not observable from the server.
"""
from __future__ import annotations

import csv
from pathlib import Path
from typing import Optional

from .metrics import LatencyReport, MarkKind

_MARK_COLUMNS = [
    MarkKind.EOS,
    MarkKind.ASR_FINAL,
    MarkKind.LLM_FIRST_TOKEN,
    MarkKind.LLM_DONE,
    MarkKind.TTS_FIRST_AUDIO,
    MarkKind.TURN_END,
]

HEADER_NOTE = (
    "# eos_to_first_audio_ms: end of user speech to first agent audio frame "
    "queued to the client connection"
)


def write_report(
    path: str | Path,
    reports: list[LatencyReport],
    summary: Optional[dict] = None,
) -> None:
    path = Path(path)
    with path.open("w", newline="") as fh:
        fh.write(HEADER_NOTE + "\n")
        writer = csv.writer(fh)
        writer.writerow(
            ["turn", "eos_to_first_audio_ms", "complete", "interrupted", "stale_packets"]
            + [f"{kind.value}_us" for kind in _MARK_COLUMNS]
        )
        for report in reports:
            writer.writerow(
                [
                    report.turn,
                    "" if report.eos_to_first_audio_ms is None else report.eos_to_first_audio_ms,
                    str(report.complete).lower(),
                    str(report.interrupted).lower(),
                    report.stale_packets,
                ]
                + ["" if kind not in report.marks else report.marks[kind] for kind in _MARK_COLUMNS]
            )
        if summary:
            fh.write("\n# summary\n")
            for key in ("n", "p50", "p95", "mean"):
                if key in summary:
                    fh.write(f"# {key},{summary[key]}\n")


def read_report_rows(path: str | Path) -> list[dict]:
    """Parse the per-turn rows back out (summary lines are comments)."""
    rows = []
    with Path(path).open() as fh:
        lines = [ln for ln in fh if ln.strip() and not ln.startswith("#")]
    reader = csv.DictReader(lines)
    for row in reader:
        rows.append(row)
    return rows


def render_latency_figure(
    path: str | Path,
    reports: list[LatencyReport],
    summary: Optional[dict] = None,
    title: str = "turn latency",
) -> None:
    """Per-turn latency chart saved next to the delimited report."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    turns = [r.turn for r in reports if r.eos_to_first_audio_ms is not None]
    values = [r.eos_to_first_audio_ms for r in reports if r.eos_to_first_audio_ms is not None]
    fig, ax = plt.subplots(figsize=(7, 3.5))
    ax.plot(turns, values, "o-", color="#1f77b4", label="eos → first audio")
    if summary:
        ax.axhline(summary["p50"], color="#2ca02c", ls="--", lw=1, label=f"p50 = {summary['p50']} ms")
        ax.axhline(summary["p95"], color="#d62728", ls=":", lw=1, label=f"p95 = {summary['p95']} ms")
    ax.set_xlabel("turn")
    ax.set_ylabel("latency (ms)")
    ax.set_title(title)
    ax.legend(loc="best", fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
