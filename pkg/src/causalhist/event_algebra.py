"""Quantum sample spaces, Boolean event operations and coarse-graining.

A :class:`SampleSpace` is an ordered family of projectors labelled by
opaque strings.  ``kind="exact"`` spaces are orthogonal decompositions of
the identity; ``kind="almost"`` spaces (pointer projectors built from
overlapping Gaussian packets) carry a :class:`Deviation` record instead of
being rejected.
"""

from __future__ import annotations

from collections.abc import Mapping, Sequence
from dataclasses import dataclass
from typing import Literal

import numpy as np

from causalhist.errors import ValidationError
from causalhist.hilbert import DEFAULT_TOL, _frozen, as_operator, max_entry

Kind = Literal["exact", "almost"]


@dataclass(frozen=True)
class Deviation:
    completeness: float  # max|sum_a P_a - 1|
    overlap: float  # max_{a != b} max|P_a P_b|
    idempotence: float  # max_a max|P_a^2 - P_a|


def measure_deviation(projectors: Sequence[np.ndarray]) -> Deviation:
    dim = projectors[0].shape[0]
    if not any(np.any(p - np.diag(np.diag(p))) for p in projectors):
        diags = np.array([np.diag(p) for p in projectors])
        overlap = 0.0
        for i in range(len(diags)):
            for j in range(i + 1, len(diags)):
                overlap = max(overlap, max_entry(diags[i] * diags[j]))
        return Deviation(
            max_entry(diags.sum(axis=0) - 1.0),
            overlap,
            max(max_entry(d * d - d) for d in diags),
        )
    total = np.zeros((dim, dim), dtype=np.complex128)
    for p in projectors:
        total += p
    overlap = 0.0
    for i, p in enumerate(projectors):
        for q in projectors[i + 1 :]:
            overlap = max(overlap, max_entry(p @ q), max_entry(q @ p))
    idem = max(max_entry(p @ p - p) for p in projectors)
    return Deviation(max_entry(total - np.eye(dim)), overlap, idem)


@dataclass(frozen=True, eq=False)
class SampleSpace:
    projectors: tuple[np.ndarray, ...]
    labels: tuple[str, ...]
    kind: Kind = "exact"
    deviation: Deviation | None = None

    def __post_init__(self):
        projs = tuple(as_operator(p) for p in self.projectors)
        if not projs:
            raise ValidationError("a sample space needs at least one projector")
        dim = projs[0].shape[0]
        if any(p.shape != (dim, dim) for p in projs):
            raise ValidationError("projectors in a sample space must share one dimension")
        labels = tuple(str(label) for label in self.labels)
        if len(labels) != len(projs):
            raise ValidationError(f"{len(labels)} labels for {len(projs)} projectors")
        if len(set(labels)) != len(labels):
            raise ValidationError(f"duplicate labels in {labels}")
        if self.kind not in ("exact", "almost"):
            raise ValidationError(f"unknown sample space kind {self.kind!r}")
        dev = self.deviation or measure_deviation(projs)
        if self.kind == "exact":
            if max(dev.completeness, dev.overlap, dev.idempotence) > DEFAULT_TOL:
                raise ValidationError(
                    "projectors do not form an orthogonal decomposition of identity "
                    f"(completeness {dev.completeness:.3e}, overlap {dev.overlap:.3e}, "
                    f"idempotence {dev.idempotence:.3e})"
                )
        else:
            for label, p in zip(labels, projs):
                herm = max_entry(p - p.conj().T)
                lowest = np.linalg.eigvalsh(0.5 * (p + p.conj().T))[0]
                if herm > DEFAULT_TOL or lowest < -DEFAULT_TOL:
                    raise ValidationError(f"event {label!r} is not Hermitian positive semidefinite")
        object.__setattr__(self, "projectors", projs)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "deviation", dev)

    @property
    def dim(self) -> int:
        return self.projectors[0].shape[0]

    def __len__(self) -> int:
        return len(self.projectors)

    def index(self, label) -> int:
        try:
            return self.labels.index(str(label))
        except ValueError:
            raise ValueError(f"unknown event label {label!r}; expected one of {self.labels}") from None

    def __getitem__(self, label) -> np.ndarray:
        return self.projectors[self.index(label)]

    def total(self) -> np.ndarray:
        return sum(self.projectors[1:], self.projectors[0].copy())


@dataclass(frozen=True)
class CellPartition:
    """Disjoint basis-index cells covering ``range(dim)``."""

    cells: tuple[tuple[int, ...], ...]
    labels: tuple[str, ...] | None = None

    def __post_init__(self):
        cells = tuple(tuple(int(i) for i in c) for c in self.cells)
        labels = self.labels
        if labels is None:
            labels = tuple(str(i) for i in range(len(cells)))
        labels = tuple(str(label) for label in labels)
        if not cells:
            raise ValidationError("partition has no cells")
        if len(labels) != len(cells):
            raise ValidationError(f"{len(labels)} labels for {len(cells)} cells")
        if len(set(labels)) != len(labels):
            raise ValidationError(f"duplicate cell labels in {labels}")
        seen: set[int] = set()
        for label, cell in zip(labels, cells):
            if not cell:
                raise ValidationError(f"cell {label!r} is empty")
            overlap = seen.intersection(cell)
            if overlap or len(set(cell)) != len(cell):
                raise ValidationError(f"cell {label!r} overlaps other cells at {sorted(overlap) or cell}")
            seen.update(cell)
        if seen != set(range(len(seen))):
            missing = sorted(set(range(max(seen) + 1)) - seen)
            raise ValidationError(f"cells do not cover the index range; missing {missing}")
        object.__setattr__(self, "cells", cells)
        object.__setattr__(self, "labels", labels)

    @property
    def dim(self) -> int:
        return sum(len(c) for c in self.cells)

    @classmethod
    def blocks(cls, dim: int, n_cells: int) -> "CellPartition":
        """Split ``range(dim)`` into ``n_cells`` contiguous, near-equal cells."""
        if not 1 <= n_cells <= dim:
            raise ValidationError(f"cannot split {dim} sites into {n_cells} cells")
        return cls(tuple(tuple(int(i) for i in c) for c in np.array_split(np.arange(dim), n_cells)))

    @classmethod
    def singletons(cls, dim: int) -> "CellPartition":
        return cls(tuple((i,) for i in range(dim)))


@dataclass(frozen=True)
class CoarseningMap:
    """Coarse label -> tuple of fine labels it merges."""

    groups: Mapping[str, tuple[str, ...]]

    def __post_init__(self):
        groups = {str(k): tuple(str(x) for x in v) for k, v in dict(self.groups).items()}
        fine = [x for v in groups.values() for x in v]
        if len(set(fine)) != len(fine):
            raise ValidationError("a fine label appears in more than one coarse group")
        if any(not v for v in groups.values()):
            raise ValidationError("coarse groups must be nonempty")
        object.__setattr__(self, "groups", groups)

    @property
    def fine_labels(self) -> set[str]:
        return {x for v in self.groups.values() for x in v}

    def coarse_of(self, fine_label: str) -> str:
        for coarse, members in self.groups.items():
            if fine_label in members:
                return coarse
        raise KeyError(fine_label)

    @classmethod
    def identity(cls, labels: Sequence[str]) -> "CoarseningMap":
        return cls({label: (label,) for label in labels})

    @classmethod
    def merge_all(cls, labels: Sequence[str], coarse_label: str = "all") -> "CoarseningMap":
        return cls({coarse_label: tuple(labels)})


def cell_projectors(partition: CellPartition) -> SampleSpace:
    """Diagonal 0/1 projectors, one per cell."""
    dim = partition.dim
    projs = []
    for cell in partition.cells:
        p = np.zeros((dim, dim), dtype=np.complex128)
        p[list(cell), list(cell)] = 1.0
        projs.append(p)
    return SampleSpace(tuple(projs), partition.labels, "exact")


def pointer_states(lattice_size: int, width_sigma: float) -> np.ndarray:
    """Columns are normalized periodic Gaussians centred at each site.

    The amplitude is ``exp(-d^2 / (4 sigma^2))`` summed over ring images,
    so ``|pi_x(y)|^2`` has standard deviation ``sigma`` before wrapping.
    """
    if lattice_size < 4:
        raise ValidationError(f"lattice_size must be >= 4, got {lattice_size}")
    if not width_sigma > 0:
        raise ValidationError(f"width_sigma must be positive, got {width_sigma}")
    n_images = int(np.ceil(12.0 * width_sigma / lattice_size)) + 1
    sites = np.arange(lattice_size)
    d = sites[:, None] - sites[None, :]
    amp = np.zeros((lattice_size, lattice_size))
    for m in range(-n_images, n_images + 1):
        amp += np.exp(-((d + m * lattice_size) ** 2) / (4.0 * width_sigma**2))
    amp /= np.linalg.norm(amp, axis=0, keepdims=True)
    return amp.astype(np.complex128)


def pointer_projectors(lattice_size: int, width_sigma: float, partition: CellPartition) -> SampleSpace:
    """Almost-orthogonal events ``P_a = sum_{x in cell a} |pi_x><pi_x|``."""
    if partition.dim != lattice_size:
        raise ValidationError(f"partition covers {partition.dim} sites but lattice has {lattice_size}")
    states = pointer_states(lattice_size, width_sigma)
    projs = []
    for cell in partition.cells:
        block = states[:, list(cell)]
        projs.append(block @ block.conj().T)
    return SampleSpace(tuple(projs), partition.labels, "almost")


def coarsen(space: SampleSpace, cmap: CoarseningMap) -> SampleSpace:
    """Merge events: ``P_coarse = sum of the fine P`` in each group."""
    if cmap.fine_labels != set(space.labels):
        raise ValueError(
            f"coarsening map labels {sorted(cmap.fine_labels)} do not match space labels {list(space.labels)}"
        )
    projs = []
    for members in cmap.groups.values():
        idx = sorted(space.index(m) for m in members)
        total = space.projectors[idx[0]].copy()
        for i in idx[1:]:
            total = total + space.projectors[i]
        projs.append(total)
    return SampleSpace(tuple(projs), tuple(cmap.groups), space.kind)


def _check_commuting(p, q, tol):
    comm = max_entry(p @ q - q @ p)
    if comm > tol:
        raise ValidationError(f"events do not commute: max|[P, Q]| = {comm:.3e}")


def event_and(p, q, tol: float = DEFAULT_TOL) -> np.ndarray:
    p, q = as_operator(p), as_operator(q)
    _check_commuting(p, q, tol)
    return _frozen(p @ q)


def event_or(p, q, tol: float = DEFAULT_TOL) -> np.ndarray:
    p, q = as_operator(p), as_operator(q)
    _check_commuting(p, q, tol)
    return _frozen(p + q - p @ q)


def event_not(p) -> np.ndarray:
    p = as_operator(p)
    return _frozen(np.eye(p.shape[0]) - p)


@dataclass(frozen=True)
class CoarseningResult:
    is_coarsening: bool
    map: CoarseningMap | None = None
    counterexample: str | None = None  # coarse label that is not a sum of fine events

    def __bool__(self):
        return self.is_coarsening


def is_coarsening_of(coarse: SampleSpace, fine: SampleSpace, tol: float = 1e-9) -> CoarseningResult:
    """Decide whether every coarse event is a sum of fine events.

    A fine event belongs to the coarse event ``Q`` whenever ``Q P = P``;
    the coarse event must then equal the sum of its members, and each fine
    event must land in exactly one group.
    """
    if coarse.dim != fine.dim:
        raise ValueError(f"dimension mismatch: {coarse.dim} vs {fine.dim}")
    groups: dict[str, tuple[str, ...]] = {}
    assigned: set[str] = set()
    for c_label, q in zip(coarse.labels, coarse.projectors):
        members = tuple(
            f_label
            for f_label, p in zip(fine.labels, fine.projectors)
            if f_label not in assigned and max_entry(q @ p - p) <= tol
        )
        total = sum((fine[m] for m in members), np.zeros_like(q))
        if not members or max_entry(total - q) > tol:
            return CoarseningResult(False, counterexample=c_label)
        groups[c_label] = members
        assigned.update(members)
    if assigned != set(fine.labels):
        orphan = sorted(set(fine.labels) - assigned)[0]
        return CoarseningResult(False, counterexample=orphan)
    return CoarseningResult(True, map=CoarseningMap(groups))
