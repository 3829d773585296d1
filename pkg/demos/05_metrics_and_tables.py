"""
Scoring, error tables, and multi-run aggregation
================================================

Walks through the evaluation machinery on a toy prediction set: per-class
and macro metrics, error counts with the reference rounding, unique-error
comparison between two methods, cause tallies, and mean±std aggregation.
"""

from stagepipe import (
    StageCategory,
    aggregate_runs,
    compare_unique_errors,
    score,
    tally_annotations,
)
from stagepipe.corpus import Corpus, Report, StageLabel
from stagepipe.evaluation import (
    ErrorAnnotation,
    error_table,
    format_error_pct,
    render_metrics_table,
)
from stagepipe.pipelines import PredictionRecord

T = StageCategory.T


def record(rid: str, label: str | None, method: str = "zscot") -> PredictionRecord:
    return PredictionRecord(
        report_id=rid,
        category=T,
        predicted=StageLabel.parse(label) if label else None,
        reasoning="",
        method=method,
    )


gold = {"a": "T1", "b": "T1", "c": "T2", "d": "T2", "e": "T3", "f": "T4"}
corpus = Corpus(tuple(Report(rid, f"report {rid}", {T: StageLabel.parse(lab)})
                      for rid, lab in gold.items()))

# method A gets four right; method B gets a different four right
preds_a = {"a": "T1", "b": "T2", "c": "T2", "d": "T2", "e": "T3", "f": None}
preds_b = {"a": "T1", "b": "T1", "c": "T2", "d": "T3", "e": "T3", "f": "T4"}
records_a = [record(rid, lab, "zscot") for rid, lab in preds_a.items()]
# kewltm records carry the frozen memory version they were produced with
records_b = [
    PredictionRecord(
        report_id=rid,
        category=T,
        predicted=StageLabel.parse(lab) if lab else None,
        reasoning="",
        method="kewltm",
        memory_version=1,
    )
    for rid, lab in preds_b.items()
]

_, macro_a = score(records_a, corpus, T)
print("method A:")
print(render_metrics_table(macro_a))

# unparseable predictions (None above) count as errors for their gold class
rows = error_table({"A": records_a, "B": records_b}, corpus, T)
print("\nerror table:")
for row in rows:
    print(f"  {row.method}: {row.num_errors} errors of {row.total} -> {row.error_pct}")

# the rounding is half-away-from-zero: 110 of 800 renders 13.8%
print("\nreference roundings:", format_error_pct(110, 800), format_error_pct(115.50, 700))

a_only, b_only = compare_unique_errors(records_a, records_b, corpus, T)
print(f"\nA-only errors (B correct): {a_only}")
print(f"B-only errors (A correct): {b_only}")

# unique errors get manual cause annotations, then tallied
annotations = [
    ErrorAnnotation("b", "zscot", T, "NI", note="read 1.9 cm as over 2 cm"),
    ErrorAnnotation("f", "zscot", T, "IIE", note="missed the stated stage"),
]
tally = tally_annotations(annotations)
print(f"cause tally: {tally.counts} (total {tally.total})")

# eight-run aggregation renders mean and sample standard deviation
f1_runs = [0.822, 0.815, 0.83, 0.812, 0.825, 0.81, 0.83, 0.82]
print(f"\nf1 over eight runs: {aggregate_runs(f1_runs)}")
