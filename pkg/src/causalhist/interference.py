"""Branch interference measures and causal classification.

For a target history ``a`` ending in event ``a_n`` the competitors are the
other histories with the same final event.  With ``chi`` the chain
vectors, ``r = sum of competitor chi`` and ``s = r + chi_a`` the slice
vector (the image of ``P_{a_n}`` applied to the evolved initial state)::

    I1 = sum_b |chi_b| / |chi_a|
    I2 = |s - chi_a| / |chi_a|
    I3 = sum_b |<chi_b|chi_a>| / |chi_a|^2
    I4 = |<s - chi_a|chi_a>| / |chi_a|^2

They satisfy ``I4 <= I2 <= I1`` and ``I4 <= I3 <= I1``.

I1 and I3 ignore interference among the competitors, so many small
mutually cancelling branches still count in full; I2 and I4 take that
cancellation into account, which makes causal attribution ambiguous when
competitors cancel the target itself.  All four are always reported.
"""

from __future__ import annotations

import math
from collections.abc import Sequence
from dataclasses import dataclass, field
from typing import Literal

import numpy as np

from causalhist.histories import Enumeration, HistoryRecord, _records_of

Measure = Literal["I1", "I2", "I3", "I4"]
MEASURES: tuple[str, ...] = ("I1", "I2", "I3", "I4")

# Non-endorsed defaults, echoed into run metadata.
DEFAULT_MEASURE: Measure = "I3"
DEFAULT_THRESHOLD = 1e-3
ZERO_NORM = 1e-14
INEQUALITY_SLACK = 1e-9


@dataclass(frozen=True)
class Measures:
    i1: float
    i2: float
    i3: float
    i4: float

    def get(self, measure: str) -> float:
        return getattr(self, measure.lower())

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.i1, self.i2, self.i3, self.i4)


def _group_measures(vectors: np.ndarray, block: int = 512) -> list[Measures | None]:
    """Measures for every member of one final-event group, in order.

    Competitor sums are formed explicitly with a zero-diagonal mask rather
    than as ``total - own`` so no cancellation creeps into small targets.
    """
    m = vectors.shape[0]
    norms = np.sqrt(np.einsum("ij,ij->i", vectors.conj(), vectors).real)
    out: list[Measures | None] = []
    for lo in range(0, m, block):
        hi = min(m, lo + block)
        rows = np.arange(lo, hi)
        mask = np.ones((hi - lo, m))
        mask[np.arange(hi - lo), rows] = 0.0
        own = vectors[lo:hi]
        rest = mask @ vectors
        overlaps = np.abs(own.conj() @ vectors.T)  # |<chi_a|chi_b>|, a in block
        na = norms[lo:hi]
        w = na * na
        with np.errstate(divide="ignore", invalid="ignore"):
            i1 = (mask @ norms) / na
            i2 = np.linalg.norm(rest, axis=1) / na
            i3 = (mask * overlaps).sum(axis=1) / w
            i4 = np.abs(np.einsum("ij,ij->i", rest.conj(), own)) / w
        for k in range(hi - lo):
            if na[k] < ZERO_NORM:
                out.append(None)
            else:
                out.append(Measures(float(i1[k]), float(i2[k]), float(i3[k]), float(i4[k])))
    return out


def _by_final_event(recs: Sequence[HistoryRecord]) -> dict[str, list[int]]:
    groups: dict[str, list[int]] = {}
    for i, r in enumerate(recs):
        groups.setdefault(r.labels[-1], []).append(i)
    return groups


def measure_all(records) -> list[Measures | None]:
    """Measures for every record (``None`` for zero-norm histories)."""
    recs = _records_of(records)
    out: list[Measures | None] = [None] * len(recs)
    for members in _by_final_event(recs).values():
        vecs = np.stack([recs[i].chain_vector for i in members])
        for i, m in zip(members, _group_measures(vecs)):
            out[i] = m
    return out


def interference_measures(target: HistoryRecord, all_records) -> Measures | None:
    """Measures of ``target`` against the other histories sharing its final event.

    Returns ``None`` when the target has (numerically) zero norm.
    """
    recs = _records_of(all_records)
    group = [r for r in recs if r.labels[-1] == target.labels[-1] and r.labels != target.labels]
    vecs = np.stack([target.chain_vector] + [r.chain_vector for r in group])
    return _group_measures(vecs)[0]


def slice_vector(records, final_label: str) -> np.ndarray:
    recs = _records_of(records)
    total = np.zeros(recs[0].chain_vector.shape, dtype=np.complex128)
    for r in recs:
        if r.labels[-1] == final_label:
            total = total + r.chain_vector
    return total


def slice_identity_residual(enumeration: Enumeration) -> float:
    """Max over final events of ``|slice - P_{a_n} U(t_n, t_0) psi_0|``."""
    space = enumeration.space
    final = space.evolved_state()
    last = space.spaces[-1]
    return max(
        float(np.linalg.norm(slice_vector(enumeration, label) - p @ final))
        for label, p in zip(last.labels, last.projectors)
    )


@dataclass
class InterferenceReport:
    values: dict[tuple[str, ...], Measures | None]
    measure: str
    threshold: float
    causal: list[tuple[str, ...]] = field(default_factory=list)
    noncausal: list[tuple[str, ...]] = field(default_factory=list)
    undefined: list[tuple[str, ...]] = field(default_factory=list)
    complete: bool = True

    def status(self, labels: tuple[str, ...]) -> str:
        m = self.values[labels]
        if m is None:
            return "undefined"
        return "causal" if m.get(self.measure) <= self.threshold else "noncausal"


def _check_measure(measure: str) -> str:
    m = measure.upper()
    if m not in MEASURES:
        raise ValueError(f"unknown measure {measure!r}; choose from {MEASURES}")
    return m


def classify_causal(records, measure: str = DEFAULT_MEASURE, threshold: float = DEFAULT_THRESHOLD) -> InterferenceReport:
    """Classify each history as causal when its chosen measure is <= threshold.

    Zero-norm histories go to ``undefined``.  Measures computed on a pruned
    enumeration only see surviving competitors; ``complete`` flags this.
    """
    measure = _check_measure(measure)
    if threshold < 0:
        raise ValueError("threshold must be >= 0")
    recs = _records_of(records)
    complete = records.complete if isinstance(records, Enumeration) else True
    report = InterferenceReport({}, measure, float(threshold), complete=complete)
    for r, m in zip(recs, measure_all(recs)):
        report.values[r.labels] = m
        if m is None:
            report.undefined.append(r.labels)
        elif m.get(measure) <= threshold:
            report.causal.append(r.labels)
        else:
            report.noncausal.append(r.labels)
    return report


@dataclass
class StepwiseReport:
    """Per-history prefix classification.

    ``prefixes[labels]`` lists ``(k, measures or None, passed)`` for
    ``k = 1..n``; a history is step-causal when every prefix passes.
    """

    measure: str
    threshold: float
    prefixes: dict[tuple[str, ...], list[tuple[int, Measures | None, bool]]]
    step_causal: list[tuple[str, ...]] = field(default_factory=list)
    not_step_causal: list[tuple[str, ...]] = field(default_factory=list)
    undefined: list[tuple[str, ...]] = field(default_factory=list)

    def recovers(self) -> list[tuple[str, ...]]:
        """Histories failing at some earlier step but passing at the last one."""
        out = []
        for labels, steps in self.prefixes.items():
            if steps[-1][2] and not all(p for _, _, p in steps):
                out.append(labels)
        return out


def stepwise_causality(
    enumeration: Enumeration, measure: str = DEFAULT_MEASURE, threshold: float = DEFAULT_THRESHOLD
) -> StepwiseReport:
    """Evaluate the measure on every prefix ``(a_1..a_k)`` of every history.

    The length-``k`` prefix family is taken from the enumeration tree
    itself (``enumeration.levels``), which for a full enumeration is
    exactly the length-``k`` enumeration.
    """
    measure = _check_measure(measure)
    per_level = []
    for level in enumeration.levels:
        per_level.append({r.labels: m for r, m in zip(level, measure_all(level))})
    report = StepwiseReport(measure, float(threshold), {})
    for rec in enumeration.records:
        steps = []
        for k in range(1, len(rec.labels) + 1):
            m = per_level[k - 1][rec.labels[:k]]
            steps.append((k, m, m is not None and m.get(measure) <= threshold))
        report.prefixes[rec.labels] = steps
        if steps[-1][1] is None:
            report.undefined.append(rec.labels)
        elif all(p for _, _, p in steps):
            report.step_causal.append(rec.labels)
        else:
            report.not_step_causal.append(rec.labels)
    return report


@dataclass(frozen=True)
class AuditResult:
    passed: bool
    worst_slack: float  # largest lhs - rhs over all four inequalities; <= 0 when they hold strictly
    worst_history: tuple[str, ...] | None
    worst_inequality: str | None

    def __bool__(self):
        return self.passed


_INEQUALITIES = (("I3<=I1", 2, 0), ("I4<=I2", 3, 1), ("I2<=I1", 1, 0), ("I4<=I3", 3, 2))


def inequality_audit(report: InterferenceReport, slack: float = INEQUALITY_SLACK) -> AuditResult:
    worst, where, which = -math.inf, None, None
    for labels, m in report.values.items():
        if m is None:
            continue
        vals = m.as_tuple()
        for name, lo, hi in _INEQUALITIES:
            gap = vals[lo] - vals[hi]
            if gap > worst:
                worst, where, which = gap, labels, name
    if where is None:
        return AuditResult(True, 0.0, None, None)
    return AuditResult(worst <= slack, float(worst), where, which)
