"""The four staging workflows, from reports and a client to prediction records.

Two baselines (plain step-by-step inference; raw retrieved context per
report) and the two rule-elicitation workflows: iterative induction of a
gated long-term rule memory followed by memory-guided inference, and
one-shot synthesis of rules from retrieved guideline chunks applied at every
inference. Induction is strictly sequential by design; inference records are
sorted by report id so output bytes never depend on scheduling.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass
from typing import Sequence

from .corpus import Report, StageCategory, StageLabel
from .llm import LlmClient, SchemaViolationError
from .memory import RuleMemory, UpdateTrace, gated_update, render_numbered, serialize
from .prompts import TemplateRegistry, render
from .retrieval import ChunkIndex, RetrievalQuery, top_k

log = logging.getLogger(__name__)

METHODS = ("zscot", "rag", "kewltm", "kewrag")
CHUNK_SEPARATOR = "\n---\n"
RAG_QUERY_MODES = ("guideline", "report-text")


class PipelineError(RuntimeError):
    """A workflow could not run (bad configuration or terminal step failure)."""


@dataclass(frozen=True)
class PredictionRecord:
    """One model prediction for one report under one method."""

    report_id: str
    category: StageCategory
    predicted: StageLabel | None  # None means unparseable
    reasoning: str
    method: str
    memory_version: int | None = None
    retrieved_chunk_ids: tuple[int, ...] | None = None
    timing_ms: int = 0

    def __post_init__(self) -> None:
        if self.method not in METHODS:
            raise PipelineError(f"unknown method {self.method!r}")
        wants_memory = self.method in ("kewltm", "kewrag")
        if (self.memory_version is not None) != wants_memory:
            raise PipelineError(
                f"memory_version must be present iff method is kewltm/kewrag "
                f"(method={self.method})"
            )
        wants_chunks = self.method in ("rag", "kewrag")
        if (self.retrieved_chunk_ids is not None) != wants_chunks:
            raise PipelineError(
                f"retrieved_chunk_ids must be present iff method is rag/kewrag "
                f"(method={self.method})"
            )
        if self.predicted is not None and self.predicted.category is not self.category:
            raise PipelineError(
                f"predicted label {self.predicted.render()} does not match "
                f"category {self.category.value}"
            )

    @property
    def is_unparseable(self) -> bool:
        return self.predicted is None


@dataclass(frozen=True)
class InductionResult:
    """Outcome of the memory-induction phase over one ordered train stream."""

    final_memory: RuleMemory | None
    traces: tuple[UpdateTrace, ...]
    n_consumed: int
    auxiliary_predictions: tuple[PredictionRecord, ...]

    def __post_init__(self) -> None:
        if self.n_consumed != len(self.traces):
            raise PipelineError("n_consumed must equal the number of traces")


@dataclass(frozen=True)
class ElicitedRules:
    """One-shot rule synthesis output plus the chunk ids it was built from."""

    memory: RuleMemory
    chunk_ids: tuple[int, ...]


def record_to_json(record: PredictionRecord, **extra) -> dict:
    obj: dict = {
        "report_id": record.report_id,
        "category": record.category.value,
        "predicted": record.predicted.render() if record.predicted else "unparseable",
        "reasoning": record.reasoning,
        "method": record.method,
        "timing_ms": record.timing_ms,
    }
    if record.memory_version is not None:
        obj["memory_version"] = record.memory_version
    if record.retrieved_chunk_ids is not None:
        obj["retrieved_chunk_ids"] = list(record.retrieved_chunk_ids)
    obj.update(extra)
    return obj


def record_from_json(obj: dict) -> PredictionRecord:
    category = StageCategory(obj["category"])
    predicted_raw = obj["predicted"]
    predicted = (
        None if predicted_raw == "unparseable" else StageLabel.parse(predicted_raw, category)
    )
    chunk_ids = obj.get("retrieved_chunk_ids")
    return PredictionRecord(
        report_id=obj["report_id"],
        category=category,
        predicted=predicted,
        reasoning=obj.get("reasoning", ""),
        method=obj["method"],
        memory_version=obj.get("memory_version"),
        retrieved_chunk_ids=tuple(chunk_ids) if chunk_ids is not None else None,
        timing_ms=int(obj.get("timing_ms", 0)),
    )


def _timer(client: LlmClient):
    """Millisecond timer; scripted runs report 0 so outputs are byte-stable."""
    if client.deterministic:
        return lambda start: 0
    return lambda start: int((time.perf_counter() - start) * 1000)


def _infer_one(
    client: LlmClient,
    request,
    report: Report,
    category: StageCategory,
    method: str,
    *,
    memory_version: int | None = None,
    chunk_ids: tuple[int, ...] | None = None,
) -> PredictionRecord:
    elapsed = _timer(client)
    start = time.perf_counter()
    try:
        out = client.chat(request)
        predicted, reasoning = out.stage, out.reasoning or ""
    except SchemaViolationError:
        predicted, reasoning = None, ""
    return PredictionRecord(
        report_id=report.id,
        category=category,
        predicted=predicted,
        reasoning=reasoning,
        method=method,
        memory_version=memory_version,
        retrieved_chunk_ids=chunk_ids,
        timing_ms=elapsed(start),
    )


def run_zscot(
    reports: Sequence[Report],
    category: StageCategory,
    client: LlmClient,
    templates: TemplateRegistry,
) -> list[PredictionRecord]:
    """Plain step-by-step inference: no memory, no retrieval."""
    if not reports:
        raise PipelineError("no reports to run")
    template = templates.get("zscot_inference")
    records = [
        _infer_one(
            client, render(template, {"report": r.text}), r, category, "zscot"
        )
        for r in reports
    ]
    return sorted(records, key=lambda rec: rec.report_id)


def run_rag(
    reports: Sequence[Report],
    category: StageCategory,
    client: LlmClient,
    index: ChunkIndex,
    query: RetrievalQuery,
    templates: TemplateRegistry,
    *,
    rag_query_mode: str = "guideline",
) -> list[PredictionRecord]:
    """Raw-context inference: retrieved chunks concatenated into each prompt.

    In the default ``guideline`` mode the query is report-independent and
    retrieval happens once per run; ``report-text`` mode retrieves per report
    using the report text as the query.
    """
    if rag_query_mode not in RAG_QUERY_MODES:
        raise PipelineError(f"unknown rag_query_mode {rag_query_mode!r}")
    if not reports:
        raise PipelineError("no reports to run")
    if len(index) == 0:
        raise PipelineError("retrieval index is empty")
    template = templates.get("rawrag_inference")
    records = []
    if rag_query_mode == "guideline":
        hits = top_k(index, query, client.embed)
        context = CHUNK_SEPARATOR.join(c.text for c, _ in hits)
        ids = tuple(c.chunk_id for c, _ in hits)
        for r in reports:
            request = render(template, {"report": r.text, "chunks": context})
            records.append(
                _infer_one(client, request, r, category, "rag", chunk_ids=ids)
            )
    else:
        for r in reports:
            hits = top_k(index, RetrievalQuery(r.text, query.k), client.embed)
            context = CHUNK_SEPARATOR.join(c.text for c, _ in hits)
            ids = tuple(c.chunk_id for c, _ in hits)
            request = render(template, {"report": r.text, "chunks": context})
            records.append(
                _infer_one(client, request, r, category, "rag", chunk_ids=ids)
            )
    return sorted(records, key=lambda rec: rec.report_id)


def induce_ltm(
    train_reports: Sequence[Report],
    category: StageCategory,
    client: LlmClient,
    templates: TemplateRegistry,
    threshold: float = 80.0,
    n_train: int | None = None,
) -> InductionResult:
    """Iteratively induce the rule memory over the first `n_train` reports.

    While the memory is empty the elicitation template runs and its candidate
    is accepted unconditionally; afterwards each report runs the update
    template with the current memory bound in, gated by the similarity
    threshold. A step whose output stays unparseable is skipped: the memory
    is unchanged and the trace records a rejection at similarity 0. Stage
    predictions made along the way are auxiliary and never evaluated.
    """
    n = len(train_reports) if n_train is None else n_train
    if not 1 <= n <= len(train_reports):
        raise PipelineError(
            f"n_train must be in [1, {len(train_reports)}], got {n}"
        )
    memory: RuleMemory | None = None
    traces: list[UpdateTrace] = []
    auxiliary: list[PredictionRecord] = []
    elapsed = _timer(client)
    for step, report in enumerate(train_reports[:n], 1):
        if memory is None:
            request = render(templates.get("ltm_elicit"), {"report": report.text})
        else:
            request = render(
                templates.get("ltm_update"),
                {"report": report.text, "memory": render_numbered(memory)},
            )
        start = time.perf_counter()
        try:
            out = client.chat(request)
        except SchemaViolationError:
            current_len = len(serialize(memory)) if memory is not None else 0
            traces.append(
                UpdateTrace(
                    step=step,
                    proposed_len=0,
                    current_len=current_len,
                    similarity=0.0,
                    accepted=False,
                )
            )
            auxiliary.append(
                PredictionRecord(
                    report_id=report.id,
                    category=category,
                    predicted=None,
                    reasoning="",
                    method="kewltm",
                    memory_version=memory.version if memory is not None else 0,
                    timing_ms=elapsed(start),
                )
            )
            continue
        assert out.rules is not None
        memory, trace = gated_update(
            memory, list(out.rules), threshold, step, category=category
        )
        traces.append(trace)
        auxiliary.append(
            PredictionRecord(
                report_id=report.id,
                category=category,
                predicted=out.stage,
                reasoning=out.reasoning or "",
                method="kewltm",
                memory_version=memory.version,
                timing_ms=elapsed(start),
            )
        )
    return InductionResult(
        final_memory=memory,
        traces=tuple(traces),
        n_consumed=len(traces),
        auxiliary_predictions=tuple(auxiliary),
    )


def run_kewltm_inference(
    test_reports: Sequence[Report],
    category: StageCategory,
    memory: RuleMemory,
    client: LlmClient,
    templates: TemplateRegistry,
) -> list[PredictionRecord]:
    """Memory-guided inference with the frozen induced rule list."""
    if memory is None or not memory.rules:
        raise PipelineError("cannot run memory-guided inference without induced rules")
    if not test_reports:
        raise PipelineError("no reports to run")
    template = templates.get("ltm_inference")
    rendered_memory = render_numbered(memory)
    records = [
        _infer_one(
            client,
            render(template, {"report": r.text, "memory": rendered_memory}),
            r,
            category,
            "kewltm",
            memory_version=memory.version,
        )
        for r in test_reports
    ]
    return sorted(records, key=lambda rec: rec.report_id)


def elicit_kewrag_rules(
    index: ChunkIndex,
    query: RetrievalQuery,
    client: LlmClient,
    templates: TemplateRegistry,
) -> ElicitedRules:
    """Retrieve once and synthesize the chunks into a frozen rule set.

    Single pass, no iteration; an unparseable synthesis is terminal for the
    run.
    """
    if len(index) == 0:
        raise PipelineError("retrieval index is empty")
    hits = top_k(index, query, client.embed)
    context = CHUNK_SEPARATOR.join(c.text for c, _ in hits)
    request = render(templates.get("rag_elicit"), {"chunks": context})
    try:
        out = client.chat(request)
    except SchemaViolationError as exc:
        raise PipelineError(f"rule synthesis failed: {exc}")
    assert out.rules is not None
    memory = RuleMemory(category=templates.category, rules=tuple(out.rules), version=1)
    return ElicitedRules(memory=memory, chunk_ids=tuple(c.chunk_id for c, _ in hits))


def run_kewrag_inference(
    reports: Sequence[Report],
    category: StageCategory,
    rules: RuleMemory,
    client: LlmClient,
    templates: TemplateRegistry,
    *,
    chunk_ids: tuple[int, ...] = (),
) -> list[PredictionRecord]:
    """Rule-guided inference with the frozen synthesized rules; no retrieval."""
    if rules is None or not rules.rules:
        raise PipelineError("cannot run rule-guided inference with an empty rule set")
    if not reports:
        raise PipelineError("no reports to run")
    template = templates.get("rag_inference")
    rendered_rules = render_numbered(rules)
    records = [
        _infer_one(
            client,
            render(template, {"report": r.text, "rules": rendered_rules}),
            r,
            category,
            "kewrag",
            memory_version=rules.version,
            chunk_ids=tuple(chunk_ids),
        )
        for r in reports
    ]
    return sorted(records, key=lambda rec: rec.report_id)
