"""Dense complex linear algebra for small Hilbert spaces.

States are 1-d ``complex128`` arrays and operators are square 2-d
``complex128`` arrays.  Everything returned from this module is marked
read-only so it can be shared freely between histories and threads.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from causalhist.errors import ValidationError

DEFAULT_TOL = 1e-10
NORMALIZED_TOL = 1e-12


def _frozen(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


def as_state(v, normalized: bool = False) -> np.ndarray:
    """Coerce ``v`` to a read-only complex state vector.

    With ``normalized=True`` the norm must already be 1 to within 1e-12;
    the vector is not rescaled.
    """
    arr = np.array(v, dtype=np.complex128)
    if arr.ndim != 1 or arr.size < 1:
        raise ValueError(f"state vector must be 1-d and non-empty, got shape {arr.shape}")
    if normalized:
        nrm = np.linalg.norm(arr)
        if abs(nrm - 1.0) > NORMALIZED_TOL:
            raise ValidationError(f"state is not normalized: |psi| = {nrm!r}")
    return _frozen(arr)


def as_operator(a) -> np.ndarray:
    """Coerce ``a`` to a read-only square complex matrix."""
    arr = np.array(a, dtype=np.complex128)
    if arr.ndim != 2 or arr.shape[0] != arr.shape[1] or arr.shape[0] < 1:
        raise ValueError(f"operator must be a non-empty square matrix, got shape {arr.shape}")
    return _frozen(arr)


def normalize(v) -> np.ndarray:
    arr = np.array(v, dtype=np.complex128)
    nrm = np.linalg.norm(arr)
    if nrm == 0:
        raise ValidationError("cannot normalize the zero vector")
    return _frozen(arr / nrm)


def inner(u, v) -> complex:
    """Inner product <u|v>, conjugate-linear in ``u``."""
    u = np.asarray(u)
    v = np.asarray(v)
    if u.shape != v.shape or u.ndim != 1:
        raise ValueError(f"dimension mismatch: {u.shape} vs {v.shape}")
    return complex(np.vdot(u, v))


def apply(a, v) -> np.ndarray:
    """Matrix-vector product ``a @ v``; the result is not renormalized."""
    a = np.asarray(a)
    v = np.asarray(v)
    if a.ndim != 2 or v.ndim != 1 or a.shape[1] != v.shape[0]:
        raise ValueError(f"dimension mismatch: operator {a.shape} applied to vector {v.shape}")
    return _frozen(np.asarray(a @ v, dtype=np.complex128))


def max_entry(a) -> float:
    a = np.asarray(a)
    return float(np.max(np.abs(a))) if a.size else 0.0


def hermitian_check(a, tol: float = DEFAULT_TOL) -> tuple[bool, float]:
    """Return ``(is_hermitian, max|A - A^dagger|)``."""
    a = np.asarray(a)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"operator must be square, got shape {a.shape}")
    dev = max_entry(a - a.conj().T)
    return dev <= tol, dev


def unitarity_deviation(u) -> float:
    u = np.asarray(u)
    return max_entry(u.conj().T @ u - np.eye(u.shape[0]))


@dataclass(frozen=True, eq=False)
class Propagator:
    """Unitary ``U(t_to, t_from)`` for a time-independent generator."""

    unitary: np.ndarray
    t_from: float
    t_to: float

    def __post_init__(self):
        u = as_operator(self.unitary)
        dev = unitarity_deviation(u)
        if dev > DEFAULT_TOL:
            raise ValidationError(f"propagator is not unitary: max|U^dag U - 1| = {dev:.3e}")
        object.__setattr__(self, "unitary", u)

    @property
    def dim(self) -> int:
        return self.unitary.shape[0]

    def __matmul__(self, other):
        if isinstance(other, Propagator):
            return self.unitary @ other.unitary
        return self.unitary @ other


def propagator(h, t_from: float, t_to: float, tol: float = DEFAULT_TOL) -> Propagator:
    """Build ``exp(-i H (t_to - t_from))`` from a Hermitian ``H``.

    Uses the eigendecomposition of the Hermitian part of ``H``; a diagonal
    generator is exponentiated entrywise.
    """
    h = as_operator(h)
    ok, dev = hermitian_check(h, tol)
    if not ok:
        raise ValidationError(f"Hamiltonian is not Hermitian: max|H - H^dag| = {dev:.3e}")
    dt = float(t_to) - float(t_from)
    h = 0.5 * (h + h.conj().T)
    if not np.any(h - np.diag(np.diag(h))):
        u = np.diag(np.exp(-1j * dt * np.diag(h).real))
    else:
        w, vecs = np.linalg.eigh(h)
        u = (vecs * np.exp(-1j * dt * w)) @ vecs.conj().T
    return Propagator(u, float(t_from), float(t_to))
