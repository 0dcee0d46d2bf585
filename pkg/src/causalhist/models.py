"""Desk-scale physical systems built on top of :mod:`causalhist.histories`.

* :class:`SpinEnvModel` -- a qubit dephased by ``n_env`` environment spins
  through ``H = sum_k g_k sz (x) sz_k``.
* :class:`LatticeModel` -- a tight-binding ring whose sites are grouped
  into cells, with sharp or Gaussian pointer events.
* :class:`MeasurementChainModel` -- system, device and optional observer
  coupled by permutation unitaries ``|i>|D> -> |i>|D_i>``.
* :func:`nonorthogonal_probe` -- unitarity constraint for a device that
  measures an almost orthogonal basis.
"""

from __future__ import annotations

import math
from collections.abc import Sequence
from dataclasses import dataclass, field
from functools import reduce

import numpy as np

from causalhist.errors import ResourceLimitError, ValidationError
from causalhist.event_algebra import CellPartition, SampleSpace, cell_projectors, pointer_projectors
from causalhist.hilbert import as_state, propagator
from causalhist.histories import HistorySpace

MAX_SPIN_ENV = 12
MAX_LATTICE_SITES = 4096

SIGMA_Z = np.diag([1.0, -1.0]).astype(np.complex128)
PLUS = np.array([1.0, 1.0], dtype=np.complex128) / math.sqrt(2.0)
MINUS = np.array([1.0, -1.0], dtype=np.complex128) / math.sqrt(2.0)


def kron_all(*ops):
    return reduce(np.kron, ops)


# --------------------------------------------------------------------------- spin environment


@dataclass(frozen=True)
class SpinEnvModel:
    """System qubit (most significant tensor factor) plus ``n_env`` spins."""

    couplings: tuple[float, ...]
    max_env: int = MAX_SPIN_ENV

    def __post_init__(self):
        g = tuple(float(x) for x in self.couplings)
        if not g:
            raise ValidationError("spin environment needs at least one coupling")
        if len(g) > self.max_env:
            raise ResourceLimitError(
                f"n_env={len(g)} gives dimension 2^{len(g) + 1}, above max_env={self.max_env}", cap="max_env"
            )
        object.__setattr__(self, "couplings", g)

    @classmethod
    def random(cls, n_env: int, rng: np.random.Generator, low: float = 0.2, high: float = 1.0, **kw):
        return cls(tuple(rng.uniform(low, high, size=n_env)), **kw)

    @property
    def n_env(self) -> int:
        return len(self.couplings)

    @property
    def dim(self) -> int:
        return 2 ** (self.n_env + 1)

    def hamiltonian(self) -> np.ndarray:
        # diagonal: sz eigenvalue of the system times sum_k g_k sz_k
        bits = (np.arange(self.dim)[:, None] >> np.arange(self.n_env, -1, -1)[None, :]) & 1
        signs = 1.0 - 2.0 * bits
        diag = signs[:, 0] * (signs[:, 1:] @ np.array(self.couplings))
        return np.diag(diag).astype(np.complex128)

    def initial_state(self, system=(PLUS[0], PLUS[1])) -> np.ndarray:
        sys = as_state(system, normalized=True)
        return kron_all(sys, *([PLUS] * self.n_env))

    def dephasing_factor(self, t: float) -> float:
        """Closed form ``prod_k |cos(2 g_k t)|``."""
        return float(np.prod(np.abs(np.cos(2.0 * np.array(self.couplings) * t))))

    def environment_overlap(self, t: float) -> complex:
        """``<E_0(t)|E_1(t)>`` from full evolution of ``|+>|+...+>``."""
        u = propagator(self.hamiltonian(), 0.0, t).unitary
        psi = u @ self.initial_state()
        half = self.dim // 2
        e0 = psi[:half] * math.sqrt(2.0)
        e1 = psi[half:] * math.sqrt(2.0)
        return complex(np.vdot(e0, e1))

    def system_space(self, basis: str = "z") -> SampleSpace:
        env = np.eye(2**self.n_env)
        if basis == "z":
            kets, labels = (np.array([1, 0]), np.array([0, 1])), ("0", "1")
        elif basis == "x":
            kets, labels = (PLUS, MINUS), ("+", "-")
        else:
            raise ValueError(f"basis must be 'z' or 'x', got {basis!r}")
        projs = tuple(np.kron(np.outer(k, k.conj()), env) for k in kets)
        return SampleSpace(projs, labels)

    def readout_space(self, with_env_coarse: bool = True) -> SampleSpace:
        """System ``+/-`` readout, optionally also resolving every spin in its x basis."""
        if with_env_coarse:
            return self.system_space("x")
        singles = [(PLUS, "+"), (MINUS, "-")]
        projs, labels = [], []
        for combo in np.ndindex(*([2] * (self.n_env + 1))):
            kets = [singles[c][0] for c in combo]
            ket = kron_all(*kets)
            projs.append(np.outer(ket, ket.conj()))
            labels.append("".join(singles[c][1] for c in combo))
        return SampleSpace(tuple(projs), tuple(labels))


def spin_env_history_space(
    model: SpinEnvModel,
    times: Sequence[float],
    with_env_coarse: bool = True,
    readout: bool = True,
    system_state=(PLUS[0], PLUS[1]),
) -> HistorySpace:
    """System ``z`` events at ``t_1..t_{n-1}`` and a readout at ``t_n``.

    With ``readout=True`` the final event is the system ``+/-`` projector
    (tensored with the environment identity when ``with_env_coarse``);
    the off-diagonal entry between ``(.., 0, +)`` and ``(.., 1, +)`` then
    has normalized magnitude ``prod_k |cos(2 g_k (t_n - t_0))|``.  With
    ``readout=False`` every slice is a ``z`` event.
    """
    times = tuple(float(t) for t in times)
    n = len(times) - 1
    if readout and n < 2:
        raise ValidationError("a readout history space needs at least two history times")
    z = model.system_space("z")
    spaces = [z] * n
    if readout:
        spaces[-1] = model.readout_space(with_env_coarse)
    return HistorySpace(
        times=times,
        spaces=tuple(spaces),
        initial_state=model.initial_state(system_state),
        hamiltonian=model.hamiltonian(),
    )


# --------------------------------------------------------------------------- lattice


@dataclass(frozen=True)
class LatticeModel:
    sites: int
    hopping: float
    partition: CellPartition
    pointer_sigma: float | None = None
    packet_width: float = 1.0
    max_sites: int = MAX_LATTICE_SITES

    def __post_init__(self):
        if self.sites < 4:
            raise ValidationError(f"lattice needs at least 4 sites, got {self.sites}")
        if self.sites > self.max_sites:
            raise ResourceLimitError(f"lattice of {self.sites} sites exceeds max_sites={self.max_sites}", cap="max_sites")
        if self.partition.dim != self.sites:
            raise ValidationError(f"partition covers {self.partition.dim} sites, lattice has {self.sites}")
        if self.packet_width <= 0:
            raise ValidationError("packet_width must be positive")

    def hamiltonian(self) -> np.ndarray:
        h = np.zeros((self.sites, self.sites), dtype=np.complex128)
        for x in range(self.sites):
            y = (x + 1) % self.sites
            h[x, y] = h[y, x] = -self.hopping
        return h

    def sample_space(self) -> SampleSpace:
        if self.pointer_sigma is None:
            return cell_projectors(self.partition)
        return pointer_projectors(self.sites, self.pointer_sigma, self.partition)

    def wavepacket(self, cell: int | str = 0) -> np.ndarray:
        """Normalized Gaussian centred mid-cell and supported on that cell only."""
        labels = self.partition.labels
        k = labels.index(str(cell)) if str(cell) in labels else int(cell)
        members = np.array(self.partition.cells[k])
        centre = 0.5 * (members.min() + members.max())
        psi = np.zeros(self.sites, dtype=np.complex128)
        psi[members] = np.exp(-((members - centre) ** 2) / (4.0 * self.packet_width**2))
        return psi / np.linalg.norm(psi)


def lattice_history_space(model: LatticeModel, times: Sequence[float], initial_cell=0, initial_state=None) -> HistorySpace:
    psi0 = model.wavepacket(initial_cell) if initial_state is None else initial_state
    n = len(times) - 1
    space = model.sample_space()
    return HistorySpace(
        times=tuple(times),
        spaces=(space,) * n,
        initial_state=psi0,
        hamiltonian=model.hamiltonian(),
    )


# --------------------------------------------------------------------------- measurement chain


def _conditional_swap(d_ctrl: int, d_target: int, pairs) -> np.ndarray:
    """Permutation on ctrl (x) target swapping target levels per control level.

    ``pairs[c]`` is ``(a, b)`` to swap target levels a and b when the
    control is in level c, or ``None`` to leave it alone.
    """
    dim = d_ctrl * d_target
    perm = np.arange(dim)
    for c, pair in enumerate(pairs):
        if pair is None:
            continue
        a, b = pair
        perm[c * d_target + a], perm[c * d_target + b] = c * d_target + b, c * d_target + a
    u = np.zeros((dim, dim), dtype=np.complex128)
    u[perm, np.arange(dim)] = 1.0
    return u


@dataclass(frozen=True)
class MeasurementChainModel:
    """System of dimension ``d`` measured by a device and optionally watched by an observer.

    Device level 0 is the ready state ``|D>``; level ``i + 1`` is ``|D_i>``.
    The observer is laid out the same way.  The interaction swaps the ready
    level with the outcome level conditioned on the measured index and acts
    as the identity elsewhere.
    """

    d: int
    observer: bool = False
    device_dim: int | None = None
    observer_dim: int | None = None

    def __post_init__(self):
        if self.d < 1:
            raise ValidationError("system dimension must be >= 1")
        object.__setattr__(self, "device_dim", self.device_dim or self.d + 1)
        object.__setattr__(self, "observer_dim", self.observer_dim or self.d + 1)
        if self.device_dim < self.d + 1 or self.observer_dim < self.d + 1:
            raise ValidationError("device and observer need at least d + 1 levels")

    @property
    def dims(self) -> tuple[int, ...]:
        return (self.d, self.device_dim) + ((self.observer_dim,) if self.observer else ())

    @property
    def dim(self) -> int:
        return math.prod(self.dims)

    def _embed(self, u_pair: np.ndarray, first: int) -> np.ndarray:
        before = math.prod(self.dims[:first])
        after = math.prod(self.dims[first + 2 :])
        return kron_all(np.eye(before), u_pair, np.eye(after))

    def device_unitary(self) -> np.ndarray:
        pairs = [(0, i + 1) for i in range(self.d)]
        return self._embed(_conditional_swap(self.d, self.device_dim, pairs), 0)

    def observer_unitary(self) -> np.ndarray:
        # observer copies the device outcome; ready device (level 0) and spare levels untouched
        pairs = [None] + [(0, i + 1) for i in range(self.d)] + [None] * (self.device_dim - self.d - 1)
        return self._embed(_conditional_swap(self.device_dim, self.observer_dim, pairs), 1)

    def _level_space(self, factor: int, n_levels: int) -> SampleSpace:
        before = math.prod(self.dims[:factor])
        after = math.prod(self.dims[factor + 1 :])
        projs, labels = [], []
        for lvl in range(n_levels):
            e = np.zeros((n_levels, n_levels))
            e[lvl, lvl] = 1.0
            projs.append(kron_all(np.eye(before), e, np.eye(after)))
            labels.append("ready" if lvl == 0 else str(lvl - 1) if lvl <= self.d else f"spare{lvl - self.d - 1}")
        return SampleSpace(tuple(projs), tuple(labels))

    def device_space(self) -> SampleSpace:
        return self._level_space(1, self.device_dim)

    def observer_space(self) -> SampleSpace:
        if not self.observer:
            raise ValidationError("model has no observer stage")
        return self._level_space(2, self.observer_dim)

    def initial_state(self, amplitudes) -> np.ndarray:
        c = np.asarray(amplitudes, dtype=np.complex128)
        if c.shape != (self.d,):
            raise ValidationError(f"expected {self.d} amplitudes, got shape {c.shape}")
        if abs(np.vdot(c, c).real - 1.0) > 1e-12:
            raise ValidationError(f"amplitudes are not normalized: sum |c_i|^2 = {np.vdot(c, c).real!r}")
        ready = [np.eye(n)[0] for n in self.dims[1:]]
        return kron_all(c, *ready)


def measurement_chain_space(model: MeasurementChainModel, amplitudes, stages: Sequence[str] = ("device",)) -> HistorySpace:
    """History space at ``t = 0, 1[, 2]``: device readout, then observer readout."""
    stages = tuple(stages)
    if stages not in (("device",), ("device", "observer")):
        raise ValidationError(f"stages must be ('device',) or ('device', 'observer'), got {stages}")
    if "observer" in stages and not model.observer:
        raise ValidationError("observer stage requested on a model without an observer")
    psi0 = model.initial_state(amplitudes)
    units = [model.device_unitary()]
    spaces = [model.device_space()]
    if "observer" in stages:
        units.append(model.observer_unitary())
        spaces.append(model.observer_space())
    return HistorySpace(
        times=tuple(float(t) for t in range(len(units) + 1)),
        spaces=tuple(spaces),
        initial_state=psi0,
        step_unitaries=tuple(units),
    )


# --------------------------------------------------------------------------- nonorthogonal probe


@dataclass(frozen=True)
class ProbeResult:
    epsilon: float
    device_overlap: complex
    basis_overlap: float  # <eps|1> = sqrt(epsilon)
    required_overlap: float  # |<a~|b~>| needed; inf when the device states are orthogonal
    feasible: bool
    consistency_constraint_residual: float
    expansion_magnitudes: tuple[float, float] = field(default=(0.0, 0.0))


def expansion_magnitudes(target, basis_a, basis_b) -> tuple[float, float]:
    """Magnitudes of the coefficients of ``target`` in the (nonorthogonal) pair basis."""
    m = np.column_stack([basis_a, basis_b]).astype(np.complex128)
    coef = np.linalg.solve(m, np.asarray(target, dtype=np.complex128))
    return float(abs(coef[0])), float(abs(coef[1]))


def unitarity_constraint(basis_overlap: complex, device_overlap: complex) -> tuple[bool, float, float]:
    """Solve ``x * device_overlap = basis_overlap`` for a perturbed-state overlap ``|x| <= 1``.

    Returns ``(feasible, |x| required, residual)``.  When infeasible the
    residual is the smallest achievable ``|x * device_overlap - basis_overlap|``.
    """
    ab, dov = complex(basis_overlap), complex(device_overlap)
    feasible = abs(ab) <= abs(dov)
    if ab == 0:
        return True, 0.0, 0.0
    if not feasible:
        needed = math.inf if dov == 0 else abs(ab) / abs(dov)
        return False, needed, abs(ab) - abs(dov)
    x = ab / dov
    return True, abs(x), abs(x * dov - ab)


def nonorthogonal_probe(epsilon: float, device_overlap: complex) -> ProbeResult:
    """Can a device measure ``{|eps>, |1>}`` with ``|eps> = sqrt(1-eps)|0> + sqrt(eps)|1>``?

    Unitarity of ``|a>|D> -> |a~>|D_a>`` and ``|b>|D> -> |b~>|D_b>`` demands
    ``<a~|b~><D_a|D_b> = <a|b>``, which has a solution with ``|<a~|b~>| <= 1``
    iff ``|<a|b>| <= |<D_a|D_b>|``.  The result also carries the coefficient
    magnitudes of ``|0>`` expanded in ``{|+>, |1>}``.
    """
    if not 0.0 < epsilon < 1.0:
        raise ValidationError(f"epsilon must lie in (0, 1), got {epsilon}")
    dov = complex(device_overlap)
    if abs(dov) > 1.0:
        raise ValidationError(f"|device_overlap| must be <= 1, got {abs(dov)}")
    ket_eps = np.array([math.sqrt(1.0 - epsilon), math.sqrt(epsilon)], dtype=np.complex128)
    ket_1 = np.array([0.0, 1.0], dtype=np.complex128)
    ab = complex(np.vdot(ket_eps, ket_1))
    feasible, needed, residual = unitarity_constraint(ab, dov)
    mags = expansion_magnitudes(np.array([1.0, 0.0]), PLUS, ket_1)
    return ProbeResult(epsilon, dov, abs(ab), needed, feasible, residual, mags)
