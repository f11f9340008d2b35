"""Pipeline configuration files: YAML schema with precise error paths.

Schema:
    stages:
      - id: asr              # [a-z0-9_-]{1,32}
        kind: mock_asr       # a registered stage kind
        params: {...}        # passed to the stage's on_start
        queue_capacity: 64   # optional
        backpressure: block | drop_oldest   # optional
        aggregate: utterance                # optional
        accepts: [audio]     # optional, defaults per kind
        emits: [text]        # optional, defaults per kind
    edges: [[asr, llm], [llm, tts]]
    sources: [asr]
    sinks: [asr, llm, tts]
    options:
      tts_handoff: sentence | full
"""
from __future__ import annotations

from pathlib import Path

import yaml

from .errors import ValidationError
from .packets import PayloadKind
from .pipeline import PipelineConfig, PipelineOptions
from .runtime import BackpressurePolicy, StageDescriptor
from .stages.registry import DEFAULT_ACCEPTS, DEFAULT_EMITS

_KIND_NAMES = {k.value: k for k in PayloadKind}


def parse_config(doc: dict) -> PipelineConfig:
    problems: list[str] = []
    if not isinstance(doc, dict):
        raise ValidationError(["config root must be a mapping"])

    stages: list[StageDescriptor] = []
    raw_stages = doc.get("stages")
    if not isinstance(raw_stages, list) or not raw_stages:
        problems.append("stages: must be a non-empty list")
        raw_stages = []
    for i, raw in enumerate(raw_stages):
        where = f"stages[{i}]"
        if not isinstance(raw, dict):
            problems.append(f"{where}: must be a mapping")
            continue
        sid = raw.get("id")
        kind = raw.get("kind")
        if not isinstance(sid, str):
            problems.append(f"{where}.id: required string")
            continue
        if not isinstance(kind, str):
            problems.append(f"{where}.kind: required string")
            continue
        accepts = _parse_kinds(raw.get("accepts"), DEFAULT_ACCEPTS.get(kind), f"{where}.accepts", problems)
        emits = _parse_kinds(raw.get("emits"), DEFAULT_EMITS.get(kind), f"{where}.emits", problems)
        params = raw.get("params", {})
        if not isinstance(params, dict):
            problems.append(f"{where}.params: must be a mapping")
            params = {}
        backpressure = raw.get("backpressure")
        policy = None
        if backpressure is not None:
            try:
                policy = BackpressurePolicy(backpressure)
            except ValueError:
                problems.append(
                    f"{where}.backpressure: must be block or drop_oldest, got {backpressure!r}"
                )
        capacity = raw.get("queue_capacity", 64)
        if not isinstance(capacity, int) or isinstance(capacity, bool):
            problems.append(f"{where}.queue_capacity: must be an integer")
            capacity = 64
        aggregate = raw.get("aggregate")
        if aggregate is not None and aggregate != "utterance":
            problems.append(f"{where}.aggregate: only 'utterance' is supported")
            aggregate = None
        stages.append(
            StageDescriptor(
                id=sid,
                kind=kind,
                accepts=accepts,
                emits=emits,
                params=params,
                queue_capacity=capacity,
                backpressure=policy,
                aggregate=aggregate,
            )
        )

    edges: list[tuple[str, str]] = []
    raw_edges = doc.get("edges", [])
    if not isinstance(raw_edges, list):
        problems.append("edges: must be a list of [from, to] pairs")
        raw_edges = []
    for i, raw in enumerate(raw_edges):
        if (
            not isinstance(raw, (list, tuple))
            or len(raw) != 2
            or not all(isinstance(x, str) for x in raw)
        ):
            problems.append(f"edges[{i}]: must be a [from, to] pair of stage ids")
            continue
        edges.append((raw[0], raw[1]))

    sources = _parse_ids(doc.get("sources"), "sources", problems)
    sinks = _parse_ids(doc.get("sinks"), "sinks", problems)

    raw_options = doc.get("options", {})
    if not isinstance(raw_options, dict):
        problems.append("options: must be a mapping")
        raw_options = {}
    options = PipelineOptions(tts_handoff=raw_options.get("tts_handoff", "sentence"))

    if problems:
        raise ValidationError(problems)
    return PipelineConfig(
        stages=stages, edges=edges, sources=sources, sinks=sinks, options=options
    )


def _parse_kinds(raw, default, where: str, problems: list[str]) -> frozenset[PayloadKind]:
    if raw is None:
        if default is None:
            problems.append(f"{where}: required for custom stage kinds")
            return frozenset()
        return default
    if not isinstance(raw, list):
        problems.append(f"{where}: must be a list of payload kinds")
        return frozenset()
    kinds = set()
    for name in raw:
        if name not in _KIND_NAMES:
            problems.append(f"{where}: unknown payload kind {name!r}")
            continue
        kinds.add(_KIND_NAMES[name])
    return frozenset(kinds)


def _parse_ids(raw, where: str, problems: list[str]) -> list[str]:
    if not isinstance(raw, list) or not all(isinstance(x, str) for x in raw):
        problems.append(f"{where}: must be a list of stage ids")
        return []
    return list(raw)


def load_config(path: str | Path) -> PipelineConfig:
    try:
        doc = yaml.safe_load(Path(path).read_text())
    except OSError as exc:
        raise ValidationError([f"cannot read config: {exc}"])
    except yaml.YAMLError as exc:
        raise ValidationError([f"config is not valid YAML: {exc}"])
    return parse_config(doc)
