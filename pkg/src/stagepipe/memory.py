"""Long-term rule memory: canonical serialization, Levenshtein gate, persistence.

The memory is an ordered list of natural-language staging rules. Candidate
updates proposed during induction are accepted only when the candidate's
serialization is similar enough to the current one, measured by character
level Levenshtein distance rescaled to a 0-100 similarity score. The first
candidate (empty memory) is always accepted.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .corpus import StageCategory

# below this length the two-row python DP beats numpy's per-call overhead
_DIAGONAL_MIN_LEN = 48


class RuleMemoryError(ValueError):
    """A rule memory value, file, or update request is invalid."""


@dataclass(frozen=True)
class RuleMemory:
    """An immutable snapshot of the rule list for one category."""

    category: StageCategory
    rules: tuple[str, ...]
    version: int = 0

    def __post_init__(self) -> None:
        cleaned = tuple(r.strip() for r in self.rules)
        if any(not r for r in cleaned):
            raise RuleMemoryError("rules must be non-empty after trimming")
        object.__setattr__(self, "rules", cleaned)
        if self.version < 0:
            raise RuleMemoryError(f"version must be >= 0, got {self.version}")

    def __len__(self) -> int:
        return len(self.rules)


@dataclass(frozen=True)
class UpdateTrace:
    """One induction step: candidate length, accepted length, gate outcome."""

    step: int
    proposed_len: int
    current_len: int
    similarity: float
    accepted: bool


def serialize_rules(rules: Iterable[str]) -> str:
    """Trim each rule and join with single newlines (no trailing newline)."""
    return "\n".join(r.strip() for r in rules)


def serialize(memory: RuleMemory) -> str:
    """Canonical serialization used for edit-distance comparison."""
    return serialize_rules(memory.rules)


def render_numbered(memory: RuleMemory | Sequence[str]) -> str:
    """Rules as a numbered list, the form bound into prompt templates."""
    rules = memory.rules if isinstance(memory, RuleMemory) else memory
    return "\n".join(f"{i}. {r.strip()}" for i, r in enumerate(rules, 1))


def _distance_rows(a: str, b: str) -> int:
    """Classic two-row DP; fastest for short strings."""
    prev = list(range(len(b) + 1))
    for i, ca in enumerate(a, 1):
        cur = [i] + [0] * len(b)
        for j, cb in enumerate(b, 1):
            cur[j] = min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (ca != cb))
        prev = cur
    return prev[-1]


def _distance_diagonals(a: str, b: str) -> int:
    """Anti-diagonal DP: each diagonal depends elementwise on the previous
    two, so the inner loop vectorizes. O(n+m) numpy calls instead of O(n*m)
    python steps; worthwhile for the multi-kilobyte serializations produced
    during induction."""
    n, m = len(a), len(b)
    ca = np.frombuffer(a.encode("utf-32-le"), dtype=np.uint32)
    cb = np.frombuffer(b.encode("utf-32-le"), dtype=np.uint32)
    big = n + m + 1
    prev2 = np.full(n + 1, big, dtype=np.int64)  # diagonal k-2
    prev = np.full(n + 1, big, dtype=np.int64)  # diagonal k-1
    prev2[0] = 0  # D[0][0]
    prev[0] = 1  # D[0][1]; n,m >= 1 here
    prev[1] = 1  # D[1][0]
    for k in range(2, n + m + 1):
        cur = np.full(n + 1, big, dtype=np.int64)
        if k <= m:
            cur[0] = k  # D[0][k]
        if k <= n:
            cur[k] = k  # D[k][0]
        lo = max(1, k - m)
        hi = min(n, k - 1)
        if lo <= hi:
            i = np.arange(lo, hi + 1)
            cost = (ca[i - 1] != cb[k - i - 1]).astype(np.int64)
            cur[lo : hi + 1] = np.minimum(
                np.minimum(prev[lo - 1 : hi] + 1, prev[lo : hi + 1] + 1),
                prev2[lo - 1 : hi] + cost,
            )
        prev2, prev = prev, cur
    return int(prev[n])


def edit_distance(a: str, b: str) -> int:
    """Character-level Levenshtein distance over Unicode scalar values.

    Unit-cost insertions, deletions, and substitutions; no case folding.
    """
    if a == b:
        return 0
    # shared prefixes/suffixes never change the optimal alignment cost
    lo, hi_a, hi_b = 0, len(a), len(b)
    while lo < hi_a and lo < hi_b and a[lo] == b[lo]:
        lo += 1
    while hi_a > lo and hi_b > lo and a[hi_a - 1] == b[hi_b - 1]:
        hi_a -= 1
        hi_b -= 1
    a, b = a[lo:hi_a], b[lo:hi_b]
    if not a:
        return len(b)
    if not b:
        return len(a)
    if min(len(a), len(b)) < _DIAGONAL_MIN_LEN:
        return _distance_rows(a, b)
    return _distance_diagonals(a, b)


def similarity(a: str, b: str) -> float:
    """Similarity score in [0, 100]: ``100 * (1 - distance / max_len)``.

    Two empty strings score 100. Computed as ``100 * (max_len - d) / max_len``
    so exact thresholds (e.g. distance 1 at length 5 -> exactly 80.0) land on
    exact floats.
    """
    longest = max(len(a), len(b))
    if longest == 0:
        return 100.0
    return 100 * (longest - edit_distance(a, b)) / longest


def gated_update(
    memory: RuleMemory | None,
    candidate: Sequence[str],
    threshold: float,
    step: int,
    *,
    category: StageCategory | None = None,
) -> tuple[RuleMemory, UpdateTrace]:
    """Apply the similarity-gated update rule for one induction step.

    With no existing memory the candidate is accepted unconditionally.
    Otherwise it is accepted iff ``similarity(candidate, memory) >=
    threshold``; a rejection leaves the memory (and its version) unchanged.
    An UpdateTrace is produced either way.
    """
    if not 0 <= threshold <= 100:
        raise RuleMemoryError(f"threshold must be in [0, 100], got {threshold}")
    if memory is None and category is None:
        raise RuleMemoryError("category is required when memory is absent")
    cat = memory.category if memory is not None else category
    assert cat is not None
    candidate_ser = serialize_rules(candidate)
    current_ser = serialize(memory) if memory is not None else ""
    sim = similarity(candidate_ser, current_ser)
    accepted = memory is None or sim >= threshold
    if accepted:
        new = RuleMemory(
            category=cat,
            rules=tuple(candidate),
            version=(memory.version if memory is not None else 0) + 1,
        )
    else:
        new = memory
    trace = UpdateTrace(
        step=step,
        proposed_len=len(candidate_ser),
        current_len=len(serialize(new)),
        similarity=sim,
        accepted=accepted,
    )
    return new, trace


def persist(memory: RuleMemory, path: str | Path) -> None:
    """Write the memory as JSON; `load` restores it losslessly."""
    payload = {
        "category": memory.category.value,
        "version": memory.version,
        "rules": list(memory.rules),
    }
    Path(path).write_text(
        json.dumps(payload, indent=2, ensure_ascii=False) + "\n", encoding="utf-8"
    )


def load(path: str | Path, expect_category: StageCategory | None = None) -> RuleMemory:
    """Load a memory file, validating invariants and (optionally) category."""
    try:
        obj = json.loads(Path(path).read_text(encoding="utf-8"))
        category = StageCategory(obj["category"])
        rules = tuple(str(r) for r in obj["rules"])
        version = int(obj["version"])
    except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        raise RuleMemoryError(f"malformed memory file {path}: {exc}")
    if expect_category is not None and category is not expect_category:
        raise RuleMemoryError(
            f"memory file {path} is for category {category.value}, "
            f"expected {expect_category.value}"
        )
    return RuleMemory(category=category, rules=rules, version=version)


def write_traces(traces: Sequence[UpdateTrace], path: str | Path) -> None:
    """Write traces as CSV with header step,proposed_len,current_len,similarity,accepted."""
    with Path(path).open("w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["step", "proposed_len", "current_len", "similarity", "accepted"])
        for t in traces:
            writer.writerow(
                [t.step, t.proposed_len, t.current_len, repr(t.similarity),
                 "true" if t.accepted else "false"]
            )


def read_traces(path: str | Path) -> list[UpdateTrace]:
    traces = []
    with Path(path).open("r", encoding="utf-8", newline="") as fh:
        for row in csv.DictReader(fh):
            traces.append(
                UpdateTrace(
                    step=int(row["step"]),
                    proposed_len=int(row["proposed_len"]),
                    current_len=int(row["current_len"]),
                    similarity=float(row["similarity"]),
                    accepted=row["accepted"] == "true",
                )
            )
    return traces
