"""Non-demolition measurement kernels.

A measurement model tells how the detector state attached to the system
block ``|n alpha><m alpha'|`` evolves while the system is left alone.  The
block's own Bohr phase is kept out of the kernel; what remains is a linear
map on detector matrices, ``S_nm(t1, t2)``.  Its trace on the initial
detector state is the decoherence function ``F_nm(t)`` that multiplies the
system coherence.

Three kinds are shipped:

``projective``
    instantaneous ideal measurement at the end of each cycle; inside a
    cycle the kernel is the identity and coherences are erased at the
    boundary, so ``F(t) = 1`` for ``t <= tau`` and 0 afterwards.
``dephasing``
    continuous measurement at rate ``gamma``: ``F_nm(t) = exp(-gamma t)``
    for ``n != m``.
``two_level_detector``
    an explicit two-level detector starting in its ground state, driven
    with Rabi coupling ``coupling`` while the system occupies
    ``measured_level`` and relaxing back at ``relax_rate``.
"""
from __future__ import annotations

import threading
from collections import OrderedDict
from dataclasses import dataclass, field
from enum import Enum
from typing import Hashable, Iterable

import numpy as np

from .errors import ConfigError, ValidationError
from .linalg import DensityMatrix, matrix_exp, unvec, vec

COMMUTATOR_TOL = 1e-10


class Kind(str, Enum):
    PROJECTIVE = "projective"
    DEPHASING = "dephasing"
    TWO_LEVEL_DETECTOR = "two_level_detector"


@dataclass(frozen=True)
class LevelPair:
    """Index ``(n alpha, m alpha')`` of a kernel; only the levels matter."""

    bra: tuple
    ket: tuple

    @classmethod
    def of_levels(cls, n: Hashable, m: Hashable) -> "LevelPair":
        return cls((n, None), (m, None))

    @property
    def levels(self) -> tuple:
        return self.bra[0], self.ket[0]

    @property
    def diagonal(self) -> bool:
        return self.bra[0] == self.ket[0]


_SIGMA_X = np.array([[0, 1], [1, 0]], dtype=np.complex128)
_LOWER = np.array([[0, 1], [0, 0]], dtype=np.complex128)  # |g><e|, g = index 0


def _dissipator(c: np.ndarray) -> np.ndarray:
    d = c.shape[0]
    eye = np.eye(d)
    cdc = c.conj().T @ c
    return np.kron(c.conj(), c) - 0.5 * (np.kron(eye, cdc) + np.kron(cdc.T, eye))


@dataclass(frozen=True, eq=False)
class MeasurementModel:
    kind: Kind
    tau: float
    rho_d0: DensityMatrix
    gamma: float = 0.0
    coupling: float = 0.0
    relax_rate: float = 0.0
    measured_level: Hashable = None
    _cache: OrderedDict = field(default_factory=OrderedDict, repr=False, compare=False)
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False, compare=False)

    CACHE_SIZE = 64

    @property
    def detector_dim(self) -> int:
        return self.rho_d0.dim

    @property
    def time_independent(self) -> bool:
        return True

    def describe(self) -> dict:
        out = {"kind": self.kind.value, "tau": self.tau}
        if self.kind is Kind.DEPHASING:
            out["gamma"] = self.gamma
        elif self.kind is Kind.TWO_LEVEL_DETECTOR:
            out.update(coupling=self.coupling, relax_rate=self.relax_rate,
                       measured_level=self.measured_level)
        return out

    def check_levels(self, labels: Iterable) -> None:
        labels = list(labels)
        if self.kind is Kind.TWO_LEVEL_DETECTOR and self.measured_level not in labels:
            raise ConfigError(f"measured level {self.measured_level!r} not among levels {labels}")

    # --- generators -----------------------------------------------------

    def _hamiltonian(self, level) -> np.ndarray:
        if level == self.measured_level:
            return self.coupling * _SIGMA_X
        return np.zeros((2, 2), dtype=np.complex128)

    def generator(self, n, m) -> np.ndarray:
        """Superoperator generating ``S_nm`` on column-stacked detector states."""
        if self.kind is Kind.PROJECTIVE:
            return np.zeros((1, 1), dtype=np.complex128)
        if self.kind is Kind.DEPHASING:
            return np.full((1, 1), -self.gamma if n != m else 0.0, dtype=np.complex128)
        eye = np.eye(2)
        Hn, Hm = self._hamiltonian(n), self._hamiltonian(m)
        G = -1j * (np.kron(eye, Hn) - np.kron(Hm.T, eye))
        return G + self.relax_rate * _dissipator(_LOWER)

    def free_generator(self) -> np.ndarray:
        """Detector generator while it is decoupled from the system."""
        if self.kind is Kind.TWO_LEVEL_DETECTOR:
            return self.relax_rate * _dissipator(_LOWER)
        return np.zeros((1, 1), dtype=np.complex128)

    # --- batched kernels ------------------------------------------------

    def _exp_batch(self, G: np.ndarray, u: np.ndarray) -> np.ndarray:
        if G.shape == (1, 1):
            return np.exp(G[0, 0] * u)[:, None, None]
        if not np.any(G):
            return np.broadcast_to(np.eye(G.shape[0], dtype=np.complex128), (u.size,) + G.shape)
        return matrix_exp(G[None, :, :] * u[:, None, None])

    def superop(self, n, m, t1, t2) -> np.ndarray:
        """``S_nm(t1, t2)`` for arrays of times, shape ``(K, d*d, d*d)``."""
        u = np.atleast_1d(np.asarray(t1, dtype=float) - np.asarray(t2, dtype=float)).ravel()
        key = (n, m, u.tobytes())
        with self._lock:
            hit = self._cache.get(key)
            if hit is not None:
                self._cache.move_to_end(key)
                return hit
        out = self._exp_batch(self.generator(n, m), u)
        if self.kind is Kind.PROJECTIVE and n != m:
            out = out * (u <= self.tau * (1 + 1e-12))[:, None, None]
        out = np.ascontiguousarray(out)
        out.setflags(write=False)
        with self._lock:
            self._cache[key] = out
            while len(self._cache) > self.CACHE_SIZE:
                self._cache.popitem(last=False)
        return out

    def free_superop(self, dt) -> np.ndarray:
        u = np.atleast_1d(np.asarray(dt, dtype=float)).ravel()
        return self._exp_batch(self.free_generator(), u)

    def breakpoints(self, tau: float) -> list:
        return []

    # --- closed forms ---------------------------------------------------

    def decoherence_exponentials(self, n, m):
        """``F_nm(u) = sum_k c_k exp(s_k u)`` on [0, tau] as ``(c, s)``.

        ``None`` when the generator is too close to defective for an
        eigen-decomposition to be trusted.
        """
        if self.kind is not Kind.TWO_LEVEL_DETECTOR:
            return np.array([1.0 + 0j]), np.array([self.generator(n, m)[0, 0]])
        G = self.generator(n, m)
        lam, V = np.linalg.eig(G)
        if np.linalg.cond(V) > 1e8:
            return None
        left = vec(np.eye(2)) @ V
        right = np.linalg.solve(V, vec(self.rho_d0.entries))
        return left * right, lam

    def interchange_valid(self, i, f) -> bool:
        """Whether ``S_ii`` and ``S_if`` commute, as the reduced profile formula needs."""
        if self.kind is not Kind.TWO_LEVEL_DETECTOR:
            return True
        A, B = self.generator(i, i), self.generator(i, f)
        return float(np.linalg.norm(A @ B - B @ A)) <= COMMUTATOR_TOL


def _detector_ground() -> DensityMatrix:
    return DensityMatrix(np.diag([1.0, 0.0]).astype(np.complex128))


def _scalar_state() -> DensityMatrix:
    return DensityMatrix(np.ones((1, 1), dtype=np.complex128))


def make_projective(tau: float) -> MeasurementModel:
    if not tau > 0:
        raise ValidationError(f"tau must be positive, got {tau}")
    return MeasurementModel(Kind.PROJECTIVE, float(tau), _scalar_state())


def make_dephasing(gamma: float, tau: float) -> MeasurementModel:
    if not gamma >= 0:
        raise ValidationError(f"dephasing rate must be non-negative, got {gamma}")
    if not tau > 0:
        raise ValidationError(f"tau must be positive, got {tau}")
    return MeasurementModel(Kind.DEPHASING, float(tau), _scalar_state(), gamma=float(gamma))


def make_two_level_detector(
    coupling: float,
    relax_rate: float,
    tau: float,
    measured_level: Hashable,
    levels: Iterable | None = None,
) -> MeasurementModel:
    if not coupling >= 0:
        raise ValidationError(f"coupling must be non-negative, got {coupling}")
    if not relax_rate >= 0:
        raise ValidationError(f"relaxation rate must be non-negative, got {relax_rate}")
    if not tau > 0:
        raise ValidationError(f"tau must be positive, got {tau}")
    model = MeasurementModel(
        Kind.TWO_LEVEL_DETECTOR,
        float(tau),
        _detector_ground(),
        coupling=float(coupling),
        relax_rate=float(relax_rate),
        measured_level=measured_level,
    )
    if levels is not None:
        model.check_levels(levels)
    return model


def kernel_apply(model, pair: LevelPair, t1: float, t2: float, rho_d) -> np.ndarray:
    """``S_pair(t1, t2)`` applied to a detector matrix (any trace)."""
    if t1 < t2:
        raise ValidationError(f"kernel needs t1 >= t2, got t1={t1}, t2={t2}")
    rho = np.asarray(getattr(rho_d, "entries", rho_d), dtype=np.complex128)
    d = model.detector_dim
    if rho.shape != (d, d):
        raise ConfigError(f"detector matrix shape {rho.shape}, expected {(d, d)}")
    n, m = pair.levels
    S = model.superop(n, m, np.array([t1]), np.array([t2]))[0]
    return unvec(S @ vec(rho), d)


def decoherence_function(model, pair: LevelPair, t) -> complex | np.ndarray:
    """``F_pair(t) = Tr S_pair(t, 0) rho_d0``; vectorised over ``t``."""
    t_arr = np.asarray(t, dtype=float)
    if np.any(t_arr < 0):
        raise ValidationError("decoherence function needs t >= 0")
    n, m = pair.levels
    d = model.detector_dim
    S = model.superop(n, m, t_arr.ravel(), np.zeros(t_arr.size))
    F = vec(np.eye(d)) @ (S @ vec(model.rho_d0.entries)).T
    if t_arr.ndim == 0:
        return complex(F[0])
    return F.reshape(t_arr.shape)
