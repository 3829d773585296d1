"""Metrics, error tables, multi-run aggregation, and trace analysis.

Each category is scored as a 4-class problem: per-class precision, recall,
and F1 from the confusion matrix, macro-averaged with equal class weights.
Unparseable predictions count as errors (a false negative for the gold
class, a false positive for nothing). Zero denominators yield 0 by
convention. Percentages round half away from zero; multi-run results render
as "mean±sample-std".
"""

from __future__ import annotations

import json
import statistics
from dataclasses import dataclass
from decimal import ROUND_HALF_UP, Decimal
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .corpus import Corpus, StageCategory, StageLabel
from .memory import UpdateTrace
from .pipelines import PredictionRecord

ERROR_CAUSES = ("IIE", "Inf", "NI", "IK", "CGT", "IncInf")


class EvaluationError(ValueError):
    """Records, annotations, or aggregation inputs are inconsistent."""


@dataclass(frozen=True)
class ErrorAnnotation:
    """A manually assigned cause for one wrong prediction."""

    report_id: str
    method: str
    category: StageCategory
    cause: str
    note: str = ""

    def __post_init__(self) -> None:
        if self.cause not in ERROR_CAUSES:
            raise EvaluationError(
                f"cause must be one of {ERROR_CAUSES}, got {self.cause!r}"
            )


@dataclass(frozen=True)
class ClassMetrics:
    label: StageLabel
    precision: float
    recall: float
    f1: float


@dataclass(frozen=True)
class MacroMetrics:
    precision: float
    recall: float
    f1: float
    per_class: tuple[ClassMetrics, ...] = ()


@dataclass(frozen=True)
class ConfusionMatrix:
    """4x4 grid indexed (gold rank, predicted rank) plus per-gold unparseable counts."""

    category: StageCategory
    counts: np.ndarray  # (4, 4) int64
    unparseable: np.ndarray  # (4,) int64

    @property
    def total(self) -> int:
        return int(self.counts.sum() + self.unparseable.sum())

    def _idx(self, label: StageLabel) -> int:
        return label.rank - self.category.ranks.start


def _safe_div(num: float, den: float) -> float:
    return num / den if den > 0 else 0.0


def score(
    records: Sequence[PredictionRecord],
    corpus: Corpus,
    category: StageCategory,
) -> tuple[ConfusionMatrix, MacroMetrics]:
    """Score records against the corpus gold labels for one category.

    Every record's report must exist and carry a gold label for the
    category; callers filter out unlabeled reports beforehand.
    """
    by_id = corpus.by_id
    labels = category.labels()
    offset = category.ranks.start
    counts = np.zeros((4, 4), dtype=np.int64)
    unparseable = np.zeros(4, dtype=np.int64)
    for rec in records:
        report = by_id.get(rec.report_id)
        if report is None:
            raise EvaluationError(f"record references unknown report id {rec.report_id!r}")
        gold = report.gold_label(category)
        if gold is None:
            raise EvaluationError(
                f"report {rec.report_id!r} lacks a gold {category.value} label"
            )
        if rec.predicted is None:
            unparseable[gold.rank - offset] += 1
        else:
            counts[gold.rank - offset, rec.predicted.rank - offset] += 1
    per_class = []
    for lab in labels:
        i = lab.rank - offset
        tp = int(counts[i, i])
        fp = int(counts[:, i].sum() - counts[i, i])
        fn = int(counts[i, :].sum() - counts[i, i] + unparseable[i])
        p = _safe_div(tp, tp + fp)
        r = _safe_div(tp, tp + fn)
        f1 = _safe_div(2 * p * r, p + r)
        per_class.append(ClassMetrics(label=lab, precision=p, recall=r, f1=f1))
    macro = MacroMetrics(
        precision=sum(c.precision for c in per_class) / len(per_class),
        recall=sum(c.recall for c in per_class) / len(per_class),
        f1=sum(c.f1 for c in per_class) / len(per_class),
        per_class=tuple(per_class),
    )
    return ConfusionMatrix(category, counts, unparseable), macro


def count_errors(
    records: Sequence[PredictionRecord], corpus: Corpus, category: StageCategory
) -> int:
    """Records whose prediction differs from gold, unparseable included."""
    by_id = corpus.by_id
    wrong = 0
    for rec in records:
        report = by_id.get(rec.report_id)
        if report is None:
            raise EvaluationError(f"record references unknown report id {rec.report_id!r}")
        gold = report.gold_label(category)
        if gold is None:
            raise EvaluationError(
                f"report {rec.report_id!r} lacks a gold {category.value} label"
            )
        if rec.predicted is None or rec.predicted != gold:
            wrong += 1
    return wrong


def format_error_pct(count: float, total: int) -> str:
    """Percentage of errors, one decimal, round half away from zero."""
    if total <= 0:
        raise EvaluationError("total must be positive")
    pct = (Decimal(str(count)) * 100 / Decimal(total)).quantize(
        Decimal("0.1"), rounding=ROUND_HALF_UP
    )
    return f"{pct}%"


def format_error_count(count: float, *, multi_run: bool) -> str:
    return f"{count:.2f}" if multi_run else str(int(count))


@dataclass(frozen=True)
class ErrorTableRow:
    method: str
    num_errors: str
    error_pct: str
    mean_errors: float
    total: int


def error_table(
    record_sets: Mapping[str, Sequence[PredictionRecord] | Sequence[Sequence[PredictionRecord]]],
    corpus: Corpus,
    category: StageCategory,
) -> list[ErrorTableRow]:
    """Error counts and percentages per method.

    A value may be one record list (single run) or a list of runs; for
    multi-run methods the count is the mean across runs, rendered to two
    decimals, and the percentage uses the per-run total.
    """
    rows = []
    expected_total: int | None = None
    for method, value in record_sets.items():
        runs: list[Sequence[PredictionRecord]]
        if value and isinstance(value[0], PredictionRecord):
            runs = [value]  # type: ignore[list-item]
        else:
            runs = list(value)  # type: ignore[arg-type]
        if not runs or not runs[0]:
            raise EvaluationError(f"method {method!r} has no records")
        totals = {len(run) for run in runs}
        if len(totals) != 1:
            raise EvaluationError(f"method {method!r} runs have unequal sizes {sorted(totals)}")
        total = totals.pop()
        if expected_total is None:
            expected_total = total
        mean_errors = sum(count_errors(run, corpus, category) for run in runs) / len(runs)
        multi = len(runs) > 1
        rows.append(
            ErrorTableRow(
                method=method,
                num_errors=format_error_count(mean_errors, multi_run=multi),
                error_pct=format_error_pct(
                    mean_errors if multi else int(mean_errors), total
                ),
                mean_errors=mean_errors,
                total=total,
            )
        )
    return rows


def aggregate_runs(values: Sequence[float]) -> str:
    """Render a metric series as ``mean±std`` (sample std, 3 decimals).

    A single value renders as the mean alone.
    """
    if not values:
        raise EvaluationError("cannot aggregate an empty series")
    mean = statistics.fmean(values)
    if len(values) == 1:
        return f"{mean:.3f}"
    return f"{mean:.3f}±{statistics.stdev(values):.3f}"


def aggregate_macro_runs(runs: Sequence[MacroMetrics]) -> dict[str, str]:
    """Per-metric mean±std across runs, keyed precision/recall/f1."""
    if not runs:
        raise EvaluationError("cannot aggregate zero runs")
    return {
        "precision": aggregate_runs([m.precision for m in runs]),
        "recall": aggregate_runs([m.recall for m in runs]),
        "f1": aggregate_runs([m.f1 for m in runs]),
    }


def compare_unique_errors(
    a: Sequence[PredictionRecord],
    b: Sequence[PredictionRecord],
    corpus: Corpus,
    category: StageCategory,
) -> tuple[list[str], list[str]]:
    """Ids wrong under one method while the other was correct, both ways."""
    ids_a = {rec.report_id for rec in a}
    ids_b = {rec.report_id for rec in b}
    if ids_a != ids_b:
        sample = sorted(ids_a ^ ids_b)[:3]
        raise EvaluationError(f"record sets cover different report ids (e.g. {sample})")

    def wrong_ids(records: Sequence[PredictionRecord]) -> set[str]:
        by_id = corpus.by_id
        out = set()
        for rec in records:
            report = by_id.get(rec.report_id)
            if report is None:
                raise EvaluationError(
                    f"record references unknown report id {rec.report_id!r}"
                )
            gold = report.gold_label(category)
            if gold is None:
                raise EvaluationError(
                    f"report {rec.report_id!r} lacks a gold {category.value} label"
                )
            if rec.predicted is None or rec.predicted != gold:
                out.add(rec.report_id)
        return out

    wrong_a = wrong_ids(a)
    wrong_b = wrong_ids(b)
    return sorted(wrong_a - wrong_b), sorted(wrong_b - wrong_a)


@dataclass(frozen=True)
class CauseTally:
    counts: dict[str, int]
    total: int


def tally_annotations(annotations: Sequence[ErrorAnnotation]) -> CauseTally:
    """Count annotations per cause, zero-filled for absent causes."""
    counts = {cause: 0 for cause in ERROR_CAUSES}
    for ann in annotations:
        counts[ann.cause] += 1
    return CauseTally(counts=counts, total=len(annotations))


def memory_curve(
    per_run_traces: Sequence[Sequence[UpdateTrace]],
) -> list[tuple[int, float]]:
    """Per-step mean serialized-memory length across runs.

    Shorter runs are padded by carrying their last length forward.
    """
    if not per_run_traces or any(not run for run in per_run_traces):
        raise EvaluationError("memory_curve needs at least one non-empty trace per run")
    max_steps = max(len(run) for run in per_run_traces)
    series = []
    for step in range(1, max_steps + 1):
        lengths = [
            run[step - 1].current_len if step <= len(run) else run[-1].current_len
            for run in per_run_traces
        ]
        series.append((step, sum(lengths) / len(lengths)))
    return series


def write_curve_csv(series: Sequence[tuple[int, float]], path: str | Path) -> None:
    lines = ["step,mean_len"]
    lines += [f"{step},{repr(mean)}" for step, mean in series]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def save_annotations(annotations: Sequence[ErrorAnnotation], path: str | Path) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        for ann in annotations:
            fh.write(
                json.dumps(
                    {
                        "report_id": ann.report_id,
                        "method": ann.method,
                        "category": ann.category.value,
                        "cause": ann.cause,
                        "note": ann.note,
                    },
                    ensure_ascii=False,
                )
                + "\n"
            )


def load_annotations(path: str | Path) -> list[ErrorAnnotation]:
    out = []
    with Path(path).open("r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                out.append(
                    ErrorAnnotation(
                        report_id=str(obj["report_id"]),
                        method=str(obj["method"]),
                        category=StageCategory(obj["category"]),
                        cause=str(obj["cause"]),
                        note=str(obj.get("note", "")),
                    )
                )
            except (json.JSONDecodeError, KeyError, ValueError) as exc:
                raise EvaluationError(f"{path} line {lineno}: {exc}")
    return out


def render_metrics_table(macro: MacroMetrics) -> str:
    """Human-readable per-class and macro metrics block."""
    lines = [f"{'label':<8}{'precision':>10}{'recall':>10}{'f1':>10}"]
    for cm in macro.per_class:
        lines.append(
            f"{cm.label.render():<8}{cm.precision:>10.3f}{cm.recall:>10.3f}{cm.f1:>10.3f}"
        )
    lines.append(f"{'macro':<8}{macro.precision:>10.3f}{macro.recall:>10.3f}{macro.f1:>10.3f}")
    return "\n".join(lines)
