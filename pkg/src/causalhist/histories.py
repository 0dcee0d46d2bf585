"""History spaces, history-tree enumeration and the decoherence functional.

Chain vectors are built in the Schrödinger picture::

    chi_a = P_{a_n} U(t_n, t_{n-1}) ... P_{a_1} U(t_1, t_0) psi_0

which differs from the Heisenberg-picture branch vector
``psi_a = P_{a_n}(t_n) ... P_{a_1}(t_1) psi_0`` only by the common unitary
``U(t_n, t_0)``, i.e. ``psi_a = U(t_n, t_0)^dagger chi_a``.  Inner products,
weights and every quantity derived from them are therefore identical.
"""

from __future__ import annotations

import itertools
import math
from collections.abc import Mapping, Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from causalhist.errors import ResourceLimitError, ValidationError
from causalhist.event_algebra import CoarseningMap, SampleSpace, coarsen
from causalhist.hilbert import (
    DEFAULT_TOL,
    Propagator,
    _frozen,
    as_operator,
    as_state,
    propagator,
)

DEFAULT_MAX_RECORDS = 2**20
DEFAULT_MAX_ENTRIES = 2**20 * 64


@dataclass(frozen=True, eq=False)
class HistorySpace:
    """Dynamics, time grid ``t_0 < ... < t_n`` and one sample space per ``t_k``.

    ``hamiltonian`` generates one propagator per interval.  Alternatively
    ``step_unitaries`` gives the interval unitaries explicitly (used for
    measurement interactions specified only by their action); exactly one
    of the two must be provided.
    """

    times: tuple[float, ...]
    spaces: tuple[SampleSpace, ...]
    initial_state: np.ndarray
    hamiltonian: np.ndarray | None = None
    step_unitaries: tuple[np.ndarray, ...] | None = None
    steps: tuple[Propagator, ...] = field(init=False, repr=False)

    def __post_init__(self):
        times = tuple(float(t) for t in self.times)
        spaces = tuple(self.spaces)
        if len(times) < 2:
            raise ValidationError("a history space needs t_0 and at least one history time")
        if any(b <= a for a, b in zip(times, times[1:])):
            raise ValidationError(f"times must be strictly increasing, got {times}")
        if len(spaces) != len(times) - 1:
            raise ValidationError(f"{len(spaces)} sample spaces for {len(times) - 1} history times")
        psi0 = as_state(self.initial_state, normalized=True)
        dim = psi0.shape[0]
        for k, s in enumerate(spaces, start=1):
            if s.dim != dim:
                raise ValidationError(f"sample space at t_{k} has dim {s.dim}, state has dim {dim}")
        if (self.hamiltonian is None) == (self.step_unitaries is None):
            raise ValidationError("provide exactly one of hamiltonian or step_unitaries")
        if self.hamiltonian is not None:
            h = as_operator(self.hamiltonian)
            if h.shape[0] != dim:
                raise ValidationError(f"Hamiltonian has dim {h.shape[0]}, state has dim {dim}")
            object.__setattr__(self, "hamiltonian", h)
            steps = tuple(propagator(h, a, b) for a, b in zip(times, times[1:]))
        else:
            units = tuple(as_operator(u) for u in self.step_unitaries)
            if len(units) != len(spaces):
                raise ValidationError(f"{len(units)} step unitaries for {len(spaces)} intervals")
            if any(u.shape[0] != dim for u in units):
                raise ValidationError("step unitaries must match the state dimension")
            object.__setattr__(self, "step_unitaries", units)
            steps = tuple(Propagator(u, a, b) for u, a, b in zip(units, times, times[1:]))
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "spaces", spaces)
        object.__setattr__(self, "initial_state", psi0)
        object.__setattr__(self, "steps", steps)

    @property
    def n(self) -> int:
        return len(self.spaces)

    @property
    def dim(self) -> int:
        return self.initial_state.shape[0]

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(len(s) for s in self.spaces)

    @property
    def exact(self) -> bool:
        return all(s.kind == "exact" for s in self.spaces)

    def truncated(self, k: int) -> "HistorySpace":
        """The history space made of the first ``k`` history times."""
        if not 1 <= k <= self.n:
            raise ValueError(f"k must be in 1..{self.n}")
        kw = dict(times=self.times[: k + 1], spaces=self.spaces[:k], initial_state=self.initial_state)
        if self.hamiltonian is not None:
            return HistorySpace(hamiltonian=self.hamiltonian, **kw)
        return HistorySpace(step_unitaries=self.step_unitaries[:k], **kw)

    def evolution(self, k: int | None = None) -> np.ndarray:
        """``U(t_k, t_0)``; computed directly from the generator when there is one."""
        k = self.n if k is None else k
        if self.hamiltonian is not None:
            return propagator(self.hamiltonian, self.times[0], self.times[k]).unitary
        u = np.eye(self.dim, dtype=np.complex128)
        for step in self.steps[:k]:
            u = step.unitary @ u
        return u

    def evolved_state(self, k: int | None = None) -> np.ndarray:
        return self.evolution(k) @ self.initial_state

    def resolve(self, labels: Sequence) -> tuple[int, ...]:
        """Map a label sequence (strings or positions) to event indices."""
        if len(labels) != self.n:
            raise ValueError(f"expected {self.n} labels, got {len(labels)}")
        out = []
        for space, label in zip(self.spaces, labels):
            if isinstance(label, (int, np.integer)) and not isinstance(label, bool):
                if not 0 <= label < len(space):
                    raise ValueError(f"event index {label} out of range for {len(space)} events")
                out.append(int(label))
            else:
                out.append(space.index(label))
        return tuple(out)

    def labels_of(self, index: Sequence[int]) -> tuple[str, ...]:
        return tuple(s.labels[i] for s, i in zip(self.spaces, index))


@dataclass(frozen=True, eq=False)
class HistoryRecord:
    labels: tuple[str, ...]
    index: tuple[int, ...]
    chain_vector: np.ndarray
    weight: float

    @property
    def norm(self) -> float:
        return math.sqrt(self.weight)

    def __repr__(self):
        return f"HistoryRecord({'|'.join(self.labels)}, weight={self.weight:.6g})"


def _record(space: HistorySpace, index: tuple[int, ...], vec: np.ndarray) -> HistoryRecord:
    vec = _frozen(vec)
    return HistoryRecord(space.labels_of(index), index, vec, float(np.vdot(vec, vec).real))


def _step(space: HistorySpace, k: int, vec: np.ndarray, event: int) -> np.ndarray:
    # k is 0-based: evolve over interval k then apply the event projector at t_{k+1}
    return space.spaces[k].projectors[event] @ (space.steps[k].unitary @ vec)


def chain_vector(space: HistorySpace, labels: Sequence) -> np.ndarray:
    index = space.resolve(labels)
    vec = space.initial_state
    for k, a in enumerate(index):
        vec = _step(space, k, vec, a)
    return _frozen(vec)


def history(space: HistorySpace, labels: Sequence) -> HistoryRecord:
    index = space.resolve(labels)
    return _record(space, index, chain_vector(space, index))


def born_weight(record: HistoryRecord) -> float:
    """Squared norm of the chain vector."""
    v = record.chain_vector
    return float(np.vdot(v, v).real)


@dataclass(eq=False)
class Enumeration:
    """Output of :func:`enumerate_histories`.

    ``records`` holds the complete-length histories in lexicographic order;
    ``levels[k - 1]`` holds the length-``k`` prefixes that were expanded
    or kept (``levels[-1] is records``).  ``pruned_weight`` is the total
    partial norm squared of every discarded subtree, bounded by
    ``pruned_bound = prod(K_k) * prune_below``.
    """

    space: HistorySpace
    records: list[HistoryRecord]
    levels: list[list[HistoryRecord]]
    prune_below: float = 0.0
    pruned_weight: float = 0.0
    pruned_count: int = 0

    @property
    def pruned_bound(self) -> float:
        return math.prod(self.space.shape) * self.prune_below

    @property
    def complete(self) -> bool:
        return self.pruned_count == 0 and self.prune_below == 0.0

    def __len__(self):
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    def __getitem__(self, i):
        return self.records[i]

    def by_labels(self) -> dict[tuple[str, ...], HistoryRecord]:
        return {r.labels: r for r in self.records}


def _subtree(space: HistorySpace, prefix: tuple[int, ...], vec: np.ndarray, prune_below: float, limit: int):
    """Depth-first expansion below ``prefix``; returns (levels, pruned weights)."""
    n = space.n
    levels: list[list[HistoryRecord]] = [[] for _ in range(n)]
    pruned: list[float] = []
    count = 0

    def visit(prefix, vec):
        nonlocal count
        k = len(prefix)
        evolved = space.steps[k].unitary @ vec
        for a, p in enumerate(space.spaces[k].projectors):
            child = p @ evolved
            w = float(np.vdot(child, child).real)
            if w < prune_below:
                pruned.append(w)
                continue
            idx = prefix + (a,)
            levels[k].append(_record(space, idx, child))
            if k + 1 == n:
                count += 1
                if count > limit:
                    raise ResourceLimitError(
                        f"enumeration produced more than max_records={limit} histories", cap="max_records"
                    )
            else:
                visit(idx, child)

    visit(prefix, vec)
    return levels, pruned


def enumerate_histories(
    space: HistorySpace,
    prune_below: float = 0.0,
    max_records: int = DEFAULT_MAX_RECORDS,
    max_entries: int = DEFAULT_MAX_ENTRIES,
    threads: int = 1,
) -> Enumeration:
    """Enumerate the history tree depth-first in lexicographic label order.

    A branch is discarded as soon as its partial chain vector has norm
    squared below ``prune_below``.  With ``prune_below=0`` the full tree of
    ``prod(K_k)`` histories is returned.  ``threads > 1`` expands the
    first-level subtrees concurrently; the merged result is identical to
    the sequential traversal.
    """
    if prune_below < 0:
        raise ValueError("prune_below must be >= 0")
    estimate = math.prod(space.shape)
    if prune_below == 0.0:
        if estimate > max_records:
            raise ResourceLimitError(
                f"full enumeration needs {estimate} records, above max_records={max_records}; "
                "set prune_below > 0 or raise the cap",
                cap="max_records",
            )
        if estimate * space.dim > max_entries:
            raise ResourceLimitError(
                f"full enumeration needs {estimate} x {space.dim} stored amplitudes, "
                f"above max_entries={max_entries}",
                cap="max_entries",
            )
    limit = min(max_records, max_entries // space.dim)

    if threads <= 1 or space.n == 1:
        levels, pruned = _subtree(space, (), space.initial_state, prune_below, limit)
    else:
        evolved = space.steps[0].unitary @ space.initial_state
        roots, pruned = [], []
        levels = [[] for _ in range(space.n)]
        jobs = []
        for a, p in enumerate(space.spaces[0].projectors):
            child = p @ evolved
            w = float(np.vdot(child, child).real)
            if w < prune_below:
                jobs.append(("pruned", w))
            else:
                rec = _record(space, (a,), child)
                jobs.append(("kept", rec))
        with ThreadPoolExecutor(max_workers=threads) as pool:
            futures = [
                pool.submit(_subtree, space, rec.index, rec.chain_vector, prune_below, limit) if kind == "kept" else None
                for kind, rec in jobs
            ]
            for (kind, item), fut in zip(jobs, futures):
                if kind == "pruned":
                    pruned.append(item)
                    continue
                roots.append(item)
                levels[0].append(item)
                sub_levels, sub_pruned = fut.result()
                for k in range(1, space.n):
                    levels[k].extend(sub_levels[k])
                pruned.extend(sub_pruned)
        if len(levels[-1]) > limit:
            raise ResourceLimitError(f"enumeration produced more than max_records={limit} histories", cap="max_records")

    return Enumeration(
        space=space,
        records=levels[-1],
        levels=levels,
        prune_below=float(prune_below),
        pruned_weight=float(math.fsum(pruned)),
        pruned_count=len(pruned),
    )


@dataclass(frozen=True, eq=False)
class DecoherenceMatrix:
    entries: np.ndarray
    labels: tuple[tuple[str, ...], ...]

    @property
    def weights(self) -> np.ndarray:
        return self.entries.diagonal().real

    def __len__(self):
        return len(self.labels)

    def normalized(self) -> np.ndarray:
        """``|D(a, b)| / sqrt(D(a, a) D(b, b))`` with zero rows left at 0."""
        nrm = np.sqrt(self.weights)
        scale = np.outer(nrm, nrm)
        out = np.zeros(self.entries.shape)
        np.divide(np.abs(self.entries), scale, out=out, where=scale > 0)
        return out

    def min_eigenvalue(self) -> float:
        return float(np.linalg.eigvalsh(self.entries)[0])


def _records_of(records) -> list[HistoryRecord]:
    return list(records.records if isinstance(records, Enumeration) else records)


def decoherence_matrix(records) -> DecoherenceMatrix:
    """Gram matrix ``D(a, b) = <chi_a|chi_b>`` over the given histories."""
    recs = _records_of(records)
    if not recs:
        raise ValueError("no records")
    if len({len(r.labels) for r in recs}) != 1:
        raise ValueError("records have mixed history lengths")
    x = np.stack([r.chain_vector for r in recs])
    d = x.conj() @ x.T
    d = 0.5 * (d + d.conj().T)
    d[np.diag_indices_from(d)] = [r.weight for r in recs]
    return DecoherenceMatrix(_frozen(d), tuple(r.labels for r in recs))


@dataclass(frozen=True)
class ConsistencyResult:
    consistent: bool
    max_offdiag: float
    worst_pair: tuple[tuple[str, ...], tuple[str, ...]] | None
    max_normalized_offdiag: float
    epsilon: float
    real_part_only: bool = False

    def __bool__(self):
        return self.consistent


def consistency_check(d: DecoherenceMatrix, epsilon: float, real_part_only: bool = False) -> ConsistencyResult:
    """``|D(a, b)| <= epsilon`` for every ``a != b``.

    ``real_part_only`` switches to the weaker ``|Re D(a, b)| <= epsilon``
    condition, which is enough for additive weights only.
    """
    m = len(d)
    if m < 2:
        return ConsistencyResult(True, 0.0, None, 0.0, epsilon, real_part_only)
    vals = np.abs(d.entries.real) if real_part_only else np.abs(d.entries)
    vals = vals.copy()
    np.fill_diagonal(vals, -1.0)
    flat = int(np.argmax(vals))
    i, j = divmod(flat, m)
    i, j = min(i, j), max(i, j)
    worst = float(vals[i, j])
    norm = d.normalized()
    np.fill_diagonal(norm, 0.0)
    return ConsistencyResult(
        worst <= epsilon,
        worst,
        (d.labels[i], d.labels[j]),
        float(norm.max()),
        epsilon,
        real_part_only,
    )


@dataclass(frozen=True)
class AdditivityResult:
    max_weight_residual: float
    max_vector_residual: float
    rows: tuple[tuple[tuple[str, ...], float, float], ...]  # (coarse labels, weight residual, vector residual)


def additivity_check(
    space: HistorySpace,
    coarsening: CoarseningMap | Mapping[int, CoarseningMap],
    records_fine,
) -> AdditivityResult:
    """Compare each coarse history with the sum of its fine members.

    ``coarsening`` is either one map applied at every history time or a
    dict ``{k: map}`` keyed by 1-based time index (other times unchanged).
    The vector residual ``|chi_coarse - sum chi_fine|`` vanishes
    identically; the weight residual ``|w_coarse - sum w_fine|`` vanishes
    only when the fine histories do not interfere.
    """
    if isinstance(coarsening, CoarseningMap):
        maps = {k: coarsening for k in range(1, space.n + 1)}
    else:
        maps = dict(coarsening)
        if any(not 1 <= k <= space.n for k in maps):
            raise ValueError(f"coarsening time indices must lie in 1..{space.n}")
    per_time = []
    for k in range(1, space.n + 1):
        s = space.spaces[k - 1]
        cmap = maps.get(k) or CoarseningMap.identity(s.labels)
        per_time.append(cmap)
    coarse_spaces = tuple(coarsen(s, m) for s, m in zip(space.spaces, per_time))
    kw = dict(times=space.times, spaces=coarse_spaces, initial_state=space.initial_state)
    if space.hamiltonian is not None:
        coarse = HistorySpace(hamiltonian=space.hamiltonian, **kw)
    else:
        coarse = HistorySpace(step_unitaries=space.step_unitaries, **kw)

    fine = _records_of(records_fine)
    members: dict[tuple[str, ...], list[HistoryRecord]] = {}
    for r in fine:
        key = tuple(m.coarse_of(label) for m, label in zip(per_time, r.labels))
        members.setdefault(key, []).append(r)

    rows = []
    for labels in itertools.product(*(tuple(m.groups) for m in per_time)):
        rec = history(coarse, labels)
        group = members.get(labels, [])
        vsum = np.zeros(space.dim, dtype=np.complex128)
        for r in group:
            vsum = vsum + r.chain_vector
        wsum = math.fsum(r.weight for r in group)
        rows.append((labels, abs(rec.weight - wsum), float(np.linalg.norm(rec.chain_vector - vsum))))
    return AdditivityResult(
        max(r[1] for r in rows),
        max(r[2] for r in rows),
        tuple(rows),
    )


@dataclass(frozen=True)
class BranchingResult:
    branching: bool
    violations: tuple[tuple[tuple[str, ...], tuple[str, ...], int, int], ...]

    def __bool__(self):
        return self.branching


def branching_structure_check(records, zero_tol: float = 1e-12) -> BranchingResult:
    """Find pairs of nonzero-weight histories that re-merge after diverging.

    A violation ``(a, b, i, j)`` (1-based times, ``i < j``) means
    ``a_i != b_i``, ``a_j == b_j`` and both weights exceed ``zero_tol``.
    ``i`` is the first divergence and ``j`` the first later agreement.
    """
    recs = [r for r in _records_of(records) if r.weight > zero_tol]
    if not recs:
        return BranchingResult(True, ())
    idx = np.array([r.index for r in recs])
    n = idx.shape[1]
    violations = []
    for a in range(len(recs) - 1):
        eq = idx[a + 1 :] == idx[a]
        # first position where histories differ
        differs = ~eq
        has_diff = differs.any(axis=1)
        first_diff = np.argmax(differs, axis=1)
        pos = np.arange(n)
        later_eq = eq & (pos[None, :] > first_diff[:, None])
        merges = has_diff & later_eq.any(axis=1)
        for off in np.flatnonzero(merges):
            i = int(first_diff[off])
            j = int(np.argmax(later_eq[off]))
            violations.append((recs[a].labels, recs[a + 1 + off].labels, i + 1, j + 1))
    return BranchingResult(not violations, tuple(violations))


@dataclass(frozen=True)
class WeightSumResult:
    weight_sum: float
    offdiag_sum: complex
    total_norm_sq: float  # |sum_a chi_a|^2
    residual: float  # |(1 - weight_sum) - offdiag_sum|
    gram_residual: float  # |total_norm_sq - weight_sum - offdiag_sum|


def weight_sum_identity(records, d: DecoherenceMatrix | None = None) -> WeightSumResult:
    """Check ``1 - sum_a w_a = sum_{a != b} D(a, b)`` on a full enumeration.

    Both sides are returned.  The Gram form
    ``|sum_a chi_a|^2 = sum_{a, b} D(a, b)`` holds for any family of
    vectors; the version with 1 on the left additionally needs the events
    at each time to sum to the identity.
    """
    recs = _records_of(records)
    d = d if d is not None else decoherence_matrix(recs)
    weight_sum = math.fsum(r.weight for r in recs)
    ent = d.entries
    off = ent.copy()
    np.fill_diagonal(off, 0.0)
    offdiag_sum = complex(math.fsum(off.real.ravel()), math.fsum(off.imag.ravel()))
    total = np.zeros(recs[0].chain_vector.shape, dtype=np.complex128)
    for r in recs:
        total = total + r.chain_vector
    total_norm_sq = float(np.vdot(total, total).real)
    return WeightSumResult(
        weight_sum,
        offdiag_sum,
        total_norm_sq,
        abs((1.0 - weight_sum) - offdiag_sum),
        abs(total_norm_sq - weight_sum - offdiag_sum),
    )


def telescoping_residual(enumeration: Enumeration) -> float:
    """``|sum_a chi_a - U(t_n, t_0) psi_0|`` for a full enumeration."""
    total = np.zeros(enumeration.space.dim, dtype=np.complex128)
    for r in enumeration.records:
        total = total + r.chain_vector
    return float(np.linalg.norm(total - enumeration.space.evolved_state()))


__all__ = [
    "AdditivityResult",
    "BranchingResult",
    "ConsistencyResult",
    "DecoherenceMatrix",
    "Enumeration",
    "HistoryRecord",
    "HistorySpace",
    "WeightSumResult",
    "additivity_check",
    "born_weight",
    "branching_structure_check",
    "chain_vector",
    "consistency_check",
    "decoherence_matrix",
    "enumerate_histories",
    "history",
    "telescoping_residual",
    "weight_sum_identity",
    "DEFAULT_TOL",
]
