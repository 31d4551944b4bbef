"""Dense complex linear algebra for Lindblad-form generators.

Conventions used everywhere in the package:

* hbar = 1, energies are angular frequencies;
* density matrices are vectorised by column stacking, so that
  ``vec(A @ X @ B) == kron(B.T, A) @ vec(X)``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
import scipy.linalg
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import ConfigError, NumericsError, ValidationError

MAX_DIM = 64
HERMITIAN_TOL = 1e-12
TRACE_TOL = 1e-12
PSD_TOL = 1e-10
# dense superoperator exponentials above this Hilbert dimension are slower
# than a Krylov-type action on the state
_DENSE_DIM_LIMIT = 16


def vec(rho: np.ndarray) -> np.ndarray:
    return np.asarray(rho).reshape(-1, order="F")


def unvec(v: np.ndarray, dim: int) -> np.ndarray:
    return np.asarray(v).reshape((dim, dim), order="F")


def _as_square(m, name="matrix") -> np.ndarray:
    m = np.asarray(m, dtype=np.complex128)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ConfigError(f"{name} must be square, got shape {m.shape}")
    return m


def is_hermitian(m: np.ndarray, tol: float = HERMITIAN_TOL) -> bool:
    scale = max(1.0, float(np.max(np.abs(m)))) if m.size else 1.0
    return bool(np.max(np.abs(m - m.conj().T), initial=0.0) <= tol * scale)


@dataclass(frozen=True, eq=False)
class DensityMatrix:
    """Hermitian, unit-trace, positive semidefinite matrix.

    Validation happens on construction; use :meth:`unchecked` for results of
    propagation, where round-off may push the trace a few ulps away from 1.
    """

    entries: np.ndarray

    def __post_init__(self):
        m = _as_square(self.entries, "density matrix")
        if not np.all(np.isfinite(m)):
            raise ValidationError("density matrix has non-finite entries")
        if not is_hermitian(m):
            raise ValidationError("density matrix is not Hermitian")
        if abs(np.trace(m) - 1.0) > TRACE_TOL:
            raise ValidationError(f"density matrix trace {np.trace(m).real!r} != 1")
        lam_min = np.linalg.eigvalsh(0.5 * (m + m.conj().T))[0]
        if lam_min < -PSD_TOL:
            raise ValidationError(f"density matrix not positive (min eigenvalue {lam_min:.3e})")
        m.setflags(write=False)
        object.__setattr__(self, "entries", m)

    @classmethod
    def unchecked(cls, entries: np.ndarray) -> "DensityMatrix":
        obj = object.__new__(cls)
        m = np.array(entries, dtype=np.complex128)
        m.setflags(write=False)
        object.__setattr__(obj, "entries", m)
        return obj

    @classmethod
    def basis(cls, dim: int, k: int) -> "DensityMatrix":
        m = np.zeros((dim, dim), dtype=np.complex128)
        m[k, k] = 1.0
        return cls(m)

    @classmethod
    def pure(cls, psi) -> "DensityMatrix":
        psi = np.asarray(psi, dtype=np.complex128)
        psi = psi / np.linalg.norm(psi)
        return cls(np.outer(psi, psi.conj()))

    @property
    def dim(self) -> int:
        return self.entries.shape[0]

    def trace(self) -> complex:
        return complex(np.trace(self.entries))


@dataclass(frozen=True, eq=False)
class Liouvillian:
    """Generator ``L(rho) = -i[H, rho] + sum_k (A rho A+ - {A+A, rho}/2)``."""

    hamiltonian: np.ndarray
    collapse_ops: tuple = field(default_factory=tuple)

    @property
    def dim(self) -> int:
        return self.hamiltonian.shape[0]

    def __call__(self, rho) -> np.ndarray:
        rho = np.asarray(getattr(rho, "entries", rho), dtype=np.complex128)
        H = self.hamiltonian
        out = -1j * (H @ rho - rho @ H)
        for A in self.collapse_ops:
            AdA = A.conj().T @ A
            out += A @ rho @ A.conj().T - 0.5 * (AdA @ rho + rho @ AdA)
        return out

    def superoperator(self) -> np.ndarray:
        """Dense ``dim**2 x dim**2`` matrix acting on column-stacked states."""
        d = self.dim
        eye = np.eye(d)
        H = self.hamiltonian
        S = -1j * (np.kron(eye, H) - np.kron(H.T, eye))
        for A in self.collapse_ops:
            AdA = A.conj().T @ A
            S += np.kron(A.conj(), A) - 0.5 * (np.kron(eye, AdA) + np.kron(AdA.T, eye))
        return S

    def sparse_superoperator(self) -> sp.csr_matrix:
        d = self.dim
        eye = sp.identity(d, dtype=np.complex128, format="csr")
        H = sp.csr_matrix(self.hamiltonian)
        S = -1j * (sp.kron(eye, H) - sp.kron(H.T, eye))
        for A in self.collapse_ops:
            As = sp.csr_matrix(A)
            AdA = sp.csr_matrix(A.conj().T @ A)
            S = S + sp.kron(As.conj(), As) - 0.5 * (sp.kron(eye, AdA) + sp.kron(AdA.T, eye))
        return sp.csr_matrix(S)

    @property
    def is_unitary(self) -> bool:
        return not any(np.any(A != 0) for A in self.collapse_ops)


def build_liouvillian(H, collapse_ops: Sequence = ()) -> Liouvillian:
    H = _as_square(H, "hamiltonian")
    if H.shape[0] > MAX_DIM:
        raise ConfigError(f"dimension {H.shape[0]} exceeds cap {MAX_DIM}")
    if not is_hermitian(H):
        raise ValidationError("hamiltonian is not Hermitian")
    ops = []
    for k, A in enumerate(collapse_ops):
        A = _as_square(A, f"collapse operator {k}")
        if A.shape != H.shape:
            raise ConfigError(f"collapse operator {k} has shape {A.shape}, expected {H.shape}")
        ops.append(A.copy())
    H = H.copy()
    H.setflags(write=False)
    for A in ops:
        A.setflags(write=False)
    return Liouvillian(H, tuple(ops))


def matrix_exp(M) -> np.ndarray:
    """exp(M) by scaling and squaring with a Pade approximant."""
    M = np.asarray(M, dtype=np.complex128)
    if M.ndim < 2 or M.shape[-1] != M.shape[-2]:
        raise ConfigError(f"matrix_exp needs square matrices, got shape {M.shape}")
    if M.shape[-1] > MAX_DIM * MAX_DIM:
        raise ConfigError(f"matrix of size {M.shape[-1]} exceeds cap {MAX_DIM * MAX_DIM}")
    if not np.all(np.isfinite(M)):
        raise ValidationError("matrix_exp: non-finite entries")
    return scipy.linalg.expm(M)


@dataclass(frozen=True, eq=False)
class Propagator:
    """Linear map on column-stacked ``dim x dim`` matrices."""

    dim: int
    superoperator: np.ndarray

    @classmethod
    def identity(cls, dim: int) -> "Propagator":
        return cls(dim, np.eye(dim * dim, dtype=np.complex128))

    @classmethod
    def from_liouvillian(cls, L: Liouvillian, t: float) -> "Propagator":
        if t < 0:
            raise ValidationError(f"negative duration {t}")
        return cls(L.dim, matrix_exp(L.superoperator() * t))

    def apply(self, rho) -> np.ndarray:
        rho = np.asarray(getattr(rho, "entries", rho), dtype=np.complex128)
        if rho.shape != (self.dim, self.dim):
            raise ConfigError(f"state shape {rho.shape} does not match propagator dim {self.dim}")
        return unvec(self.superoperator @ vec(rho), self.dim)


def compose(P1: Propagator, P2: Propagator) -> Propagator:
    """Propagator that applies ``P2`` first, then ``P1``."""
    if P1.dim != P2.dim:
        raise ConfigError(f"cannot compose propagators of dims {P1.dim} and {P2.dim}")
    return Propagator(P1.dim, P1.superoperator @ P2.superoperator)


def _evolve(L: Liouvillian, rho: np.ndarray, t: float) -> np.ndarray:
    d = L.dim
    if t == 0:
        return rho.copy()
    if L.is_unitary:
        U = matrix_exp(-1j * t * L.hamiltonian)
        return U @ rho @ U.conj().T
    if d <= _DENSE_DIM_LIMIT:
        return unvec(matrix_exp(L.superoperator() * t) @ vec(rho), d)
    out = spla.expm_multiply(L.sparse_superoperator() * t, vec(rho))
    return unvec(out, d)


def propagate(L: Liouvillian, rho, t: float):
    """rho(t) = exp(L t) rho.

    Accepts a :class:`DensityMatrix` (returned as one) or a raw matrix, which
    is how linear combinations with arbitrary trace are propagated.
    """
    if t < 0:
        raise ValidationError(f"negative propagation time {t}")
    raw = np.asarray(getattr(rho, "entries", rho), dtype=np.complex128)
    if raw.shape != (L.dim, L.dim):
        raise ConfigError(f"state shape {raw.shape} does not match generator dim {L.dim}")
    out = _evolve(L, raw, float(t))
    if isinstance(rho, DensityMatrix):
        return DensityMatrix.unchecked(out)
    return out


def _generator_distance(a: Liouvillian, b: Liouvillian) -> float:
    # upper bound on the induced 2-norm of the superoperator difference
    dist = 2.0 * np.linalg.norm(a.hamiltonian - b.hamiltonian)
    for A, B in zip(a.collapse_ops, b.collapse_ops):
        dist += 2.0 * np.linalg.norm(A - B) * (np.linalg.norm(A) + np.linalg.norm(B))
    return float(dist)


def propagate_time_dependent(
    generator: Callable[[float], Liouvillian],
    rho,
    t0: float,
    t1: float,
    tol: float = 1e-8,
    max_steps: int = 100_000,
):
    """Piecewise-constant propagation of a time-dependent generator.

    Each slice of width ``h`` uses the generator at its midpoint, with ``h``
    shrunk until ``||L(t + h) - L(t)|| * h <= tol``.
    """
    if t1 < t0:
        raise ValidationError(f"end time {t1} before start time {t0}")
    state = np.asarray(getattr(rho, "entries", rho), dtype=np.complex128).copy()
    t = float(t0)
    h = float(t1 - t0)
    steps = 0
    while t < t1:
        h = min(h, t1 - t)
        while True:
            dist = _generator_distance(generator(t + h), generator(t)) * h
            if dist <= tol or h < 1e-14 * max(1.0, abs(t1)):
                break
            h *= 0.5
        state = _evolve(generator(t + 0.5 * h), state, h)
        t = t1 if h >= t1 - t else t + h
        steps += 1
        if steps > max_steps:
            raise NumericsError(f"time-dependent propagation needed more than {max_steps} slices")
        h *= 2.0
    if isinstance(rho, DensityMatrix):
        return DensityMatrix.unchecked(state)
    return state
