"""Offline evaluation: tagged QA items, cell-level metrics, judge scores, suite runs.

A QAItem carries the ground truth for one question: the exact set of
(room, modality, timestamp) cells a correct execution consumes, the expected
named values, and a reference answer.  score_cells compares a trace's
retrieved cells against that truth; judge() asks one or more judge backends
to rate the answer text; run_suite drives the whole pipeline over every
(item, configuration) pair and aggregates.
"""

from __future__ import annotations

import json
import re
import statistics
from dataclasses import dataclass, field
from pathlib import Path

from . import gateway
from .context import Metadata
from .errors import RatingUnparseable, SpecInvalid
from .orchestrator import AblationConfig, Pipeline

AMBIGUITY_TAGS = ("implicit_processing", "implicit_conditions", "unknown")
PROCESSING_TAGS = ("none", "supported", "unsupported")
TARGET_TAGS = ("value", "temporal", "spatial")
JUDGE_METRICS = ("cohesiveness", "helpfulness", "truthfulness")

_SCORE_RE = re.compile(r"^score:\s*([0-9]+)\s*$", re.IGNORECASE | re.MULTILINE)


# -- ground-truth items --------------------------------------------------------


@dataclass(frozen=True)
class QAItem:
    id: str
    question: str
    persona: str
    ambiguity: tuple          # subset of AMBIGUITY_TAGS
    processing: str           # one of PROCESSING_TAGS
    target: tuple             # non-empty subset of TARGET_TAGS
    truth_cells: frozenset    # of (room_id, modality, ts-iso) triples
    reference_answer: str
    oracle_values: dict = field(default_factory=dict)
    requires_taxonomy: bool = False

    def __post_init__(self):
        bad = set(self.ambiguity) - set(AMBIGUITY_TAGS)
        if bad:
            raise SpecInvalid(f"{self.id}: unknown ambiguity tags {sorted(bad)}")
        if self.processing not in PROCESSING_TAGS:
            raise SpecInvalid(f"{self.id}: unknown processing tag {self.processing!r}")
        bad = set(self.target) - set(TARGET_TAGS)
        if bad or not self.target:
            raise SpecInvalid(f"{self.id}: bad target tags {sorted(self.target)}")
        if "unknown" in self.ambiguity and self.truth_cells:
            raise SpecInvalid(f"{self.id}: unknown-tagged items must have no truth cells")

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "question": self.question,
            "persona": self.persona,
            "tags": {
                "ambiguity": list(self.ambiguity),
                "processing": self.processing,
                "target": list(self.target),
            },
            "requires_taxonomy": self.requires_taxonomy,
            "truth_cells": sorted(list(cell) for cell in self.truth_cells),
            "reference_answer": self.reference_answer,
            "oracle_values": self.oracle_values,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "QAItem":
        tags = doc.get("tags", {})
        return cls(
            id=doc["id"],
            question=doc["question"],
            persona=doc["persona"],
            ambiguity=tuple(tags.get("ambiguity", [])),
            processing=tags.get("processing", "none"),
            target=tuple(tags.get("target", [])),
            truth_cells=frozenset(tuple(c) for c in doc.get("truth_cells", [])),
            reference_answer=doc.get("reference_answer", ""),
            oracle_values=dict(doc.get("oracle_values", {})),
            requires_taxonomy=bool(doc.get("requires_taxonomy", False)),
        )


def load_items(path) -> list[QAItem]:
    with open(path, encoding="utf-8") as fh:
        docs = json.load(fh)
    return [QAItem.from_dict(doc) for doc in docs]


def save_items(items, path) -> None:
    Path(path).write_text(
        json.dumps([item.to_dict() for item in items], indent=2) + "\n",
        encoding="utf-8")


# -- cell-level metrics --------------------------------------------------------


@dataclass(frozen=True)
class CellMetrics:
    exec_accuracy: int
    precision: float
    recall: float


def score_cells(retrieved, truth) -> CellMetrics:
    """Exactness plus standard set precision/recall over cell addresses.

    An empty retrieved set is vacuously precise (1.0); an empty truth set is
    vacuously recalled (1.0).  Exactness needs the two sets equal.
    """
    retrieved = frozenset(retrieved)
    truth = frozenset(truth)
    overlap = len(retrieved & truth)
    return CellMetrics(
        exec_accuracy=1 if retrieved == truth else 0,
        precision=overlap / len(retrieved) if retrieved else 1.0,
        recall=overlap / len(truth) if truth else 1.0,
    )


# -- judge scoring -------------------------------------------------------------


@dataclass
class JudgeScore:
    cohesiveness: float
    helpfulness: float
    truthfulness: float
    ratings: dict = field(default_factory=dict)   # metric -> list of rating records
    flags: list = field(default_factory=list)     # unparseable (metric, model, run)

    def to_dict(self) -> dict:
        return {
            "cohesiveness": self.cohesiveness,
            "helpfulness": self.helpfulness,
            "truthfulness": self.truthfulness,
            "ratings": self.ratings,
            "flags": [list(flag) for flag in self.flags],
        }


def _flat(text: str) -> str:
    """Single-line form for rating prompts; judge fields are line-keyed."""
    return " / ".join(part.strip() for part in str(text).splitlines() if part.strip())


def compose_judge_prompt(metric: str, question: str, answer: str,
                         reference: str) -> gateway.RolePrompt:
    user = "\n".join([
        f"metric: {metric}",
        f"question: {_flat(question)}",
        f"answer: {_flat(answer)}",
        f"reference: {_flat(reference)}",
        "",
        "Rate the answer on the named metric. Reply with exactly one line:",
        "score: <integer 1-5>",
    ])
    return gateway.RolePrompt(role=gateway.ROLE_JUDGE,
                              system=gateway.load_prompt("judge_rubric"),
                              user=user)


def _parse_rating(text: str) -> int | None:
    match = _SCORE_RE.search(text)
    if match is None:
        return None
    value = int(match.group(1))
    return value if 1 <= value <= 5 else None


def judge(answer: str, item: QAItem, backends, runs: int = 2) -> JudgeScore:
    """One rating per metric x backend x run; means over the parsed ratings.

    Unparseable ratings are excluded and flagged.  If fewer than half of a
    metric's ratings parse, the whole score is refused as unreliable.
    """
    if not backends:
        raise SpecInvalid("judge needs at least one backend")
    means: dict[str, float] = {}
    ratings: dict[str, list] = {}
    flags: list[tuple] = []
    for metric in JUDGE_METRICS:
        records = []
        parsed = []
        for backend in backends:
            for run in range(runs):
                prompt = compose_judge_prompt(metric, item.question, answer,
                                              item.reference_answer)
                completion = backend.complete(prompt, {"judge_run": run})
                value = _parse_rating(completion.text)
                model = getattr(backend, "model", "unknown")
                records.append({"model": model, "run": run, "score": value})
                if value is None:
                    flags.append((metric, model, run))
                else:
                    parsed.append(value)
        total = len(records)
        if len(parsed) * 2 < total:
            raise RatingUnparseable(
                f"{metric}: only {len(parsed)}/{total} ratings parsed")
        means[metric] = round(sum(parsed) / len(parsed), 2)
        ratings[metric] = records
    return JudgeScore(cohesiveness=means["cohesiveness"],
                      helpfulness=means["helpfulness"],
                      truthfulness=means["truthfulness"],
                      ratings=ratings, flags=flags)


# -- suite runs ----------------------------------------------------------------


def _mean_stdev(values) -> dict:
    values = list(values)
    if not values:
        return {"mean": 0.0, "stdev": 0.0, "n": 0}
    mean = sum(values) / len(values)
    stdev = statistics.stdev(values) if len(values) > 1 else 0.0
    return {"mean": round(mean, 3), "stdev": round(stdev, 3), "n": len(values)}


def _stage_latency_groups(rows, key_fn) -> dict:
    groups: dict[str, list] = {}
    for row in rows:
        groups.setdefault(key_fn(row), []).append(row)
    out = {}
    for name, members in sorted(groups.items()):
        out[name] = {
            stage: _mean_stdev(r["stage_latency_ms"][stage] for r in members)
            for stage in ("plan", "query", "process", "respond")
        }
    return out


def run_suite(items, configs, *, store, metadata_by_persona: dict,
              planner_backend, responder_backend, judges=(), judge_runs: int = 2,
              registry=None, trace_dir=None) -> dict:
    """Evaluate every (item, config) pair; aggregate per configuration.

    metadata_by_persona maps each item persona to a Metadata carrying the
    deployment taxonomy and the reference clock.
    """
    for item in items:
        if item.persona not in metadata_by_persona:
            raise SpecInvalid(f"{item.id}: no metadata for persona {item.persona!r}")
    pipeline = Pipeline(store, planner_backend, responder_backend,
                        registry=registry, trace_dir=trace_dir)
    report: dict = {"item_count": len(items), "configs": {}}
    for config in configs:
        rows = []
        for item in items:
            answer, trace = pipeline.handle(
                item.question, metadata_by_persona[item.persona], config=config)
            retrieved = frozenset(tuple(cell) for cell in trace.retrieved_cells)
            metrics = score_cells(retrieved, item.truth_cells)
            row = {
                "id": item.id,
                "persona": item.persona,
                "processing": item.processing,
                "ambiguity": list(item.ambiguity),
                "requires_taxonomy": item.requires_taxonomy,
                "status": answer.status,
                "answer": answer.text,
                "reference": item.reference_answer,
                "exec_accuracy": metrics.exec_accuracy,
                "precision": round(metrics.precision, 4),
                "recall": round(metrics.recall, 4),
                "total_token_length": trace.total_token_length,
                "end_to_end_ms": round(trace.end_to_end_ms, 3),
                "stage_latency_ms": {s.name: round(s.latency_ms, 3)
                                     for s in trace.stages},
                "planner_output_tokens": (trace.planner or {}).get("output_tokens", 0),
                "planner_latency_ms": (trace.planner or {}).get("latency_ms", 0.0),
                "trace_ref": answer.trace_ref,
            }
            if judges:
                score = judge(answer.text, item, judges, runs=judge_runs)
                row["judge"] = score.to_dict()
            rows.append(row)
        section = {
            "mean_exec_accuracy": round(
                sum(r["exec_accuracy"] for r in rows) / len(rows), 4),
            "mean_precision": round(sum(r["precision"] for r in rows) / len(rows), 4),
            "mean_recall": round(sum(r["recall"] for r in rows) / len(rows), 4),
            "status_counts": {
                status: sum(1 for r in rows if r["status"] == status)
                for status in ("ok", "partial", "refused", "failed")
            },
            "stage_latency_ms": {
                stage: _mean_stdev(r["stage_latency_ms"][stage] for r in rows)
                for stage in ("plan", "query", "process", "respond")
            },
            "latency_by_processing": _stage_latency_groups(
                rows, lambda r: "processing" if r["processing"] == "unsupported"
                else "no_processing"),
            "latency_by_ambiguity": _stage_latency_groups(
                rows, lambda r: "ambiguous" if r["ambiguity"] else "unambiguous"),
            "planner_scatter": [
                [r["planner_output_tokens"], r["planner_latency_ms"]] for r in rows
            ],
            "items": rows,
        }
        if judges:
            for metric in JUDGE_METRICS:
                section[f"mean_{metric}"] = round(
                    sum(r["judge"][metric] for r in rows) / len(rows), 2)
        report["configs"][config.name] = section
    return report


def render_report(report: dict) -> str:
    """Plain-text summary table, one line per configuration."""
    lines = []
    header = (f"{'config':<28} {'exec':>6} {'prec':>6} {'recall':>6} "
              f"{'ok':>3} {'part':>4} {'ref':>3} {'fail':>4}")
    lines.append(header)
    lines.append("-" * len(header))
    for name, section in report["configs"].items():
        counts = section["status_counts"]
        lines.append(
            f"{name:<28} {section['mean_exec_accuracy']:>6.3f} "
            f"{section['mean_precision']:>6.3f} {section['mean_recall']:>6.3f} "
            f"{counts['ok']:>3} {counts['partial']:>4} {counts['refused']:>3} "
            f"{counts['failed']:>4}")
        if "mean_truthfulness" in section:
            lines.append(
                f"{'':<28} judge: cohesiveness {section['mean_cohesiveness']:.2f}, "
                f"helpfulness {section['mean_helpfulness']:.2f}, "
                f"truthfulness {section['mean_truthfulness']:.2f}")
    lines.append("")
    lines.append(f"items: {report['item_count']}")
    for name, section in report["configs"].items():
        by_proc = section["latency_by_processing"]
        if "processing" in by_proc and "no_processing" in by_proc:
            lines.append(
                f"{name}: process-stage mean "
                f"{by_proc['processing']['process']['mean']:.3f} ms (processing) vs "
                f"{by_proc['no_processing']['process']['mean']:.3f} ms (none)")
    return "\n".join(lines)
