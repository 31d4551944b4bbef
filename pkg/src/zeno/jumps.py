"""Second-order jump probabilities of a repeatedly measured system.

For a constant-in-structure perturbation ``V(t) = v(t) V`` the probability
of a jump ``|i a> -> |f b>`` during one cycle of length ``tau`` is the
double integral over ``0 <= t2 <= t1 <= tau`` of

    v(t1) v(t2) |V_fi|^2 [ e^{+i w u} K_if(t1, t2) + e^{-i w u} K_fi(t1, t2) ]

with ``u = t1 - t2``, ``w = E_f + E_b - E_i - E_a`` and the detector
trace ``K_nm(t1, t2) = Tr S_nm(t1, t2) S_ii(t2, 0) rho_d0``.
"""
from __future__ import annotations

import math
import threading
import warnings
import weakref
from dataclasses import dataclass

import numpy as np

from .errors import NumericsError, PerturbativeWarning, ValidationError
from .linalg import unvec, vec
from .measurement import MeasurementModel
from .quadrature import composite_nodes, rectangle_nodes, triangle_nodes
from .system import JumpResult, MeasurementSchedule, SystemSpec, TransitionOperator

DEFAULT_GRID = 128
MAX_GRID = 1024
RTOL = 1e-8
IMAG_TOL = 1e-10
WARN_TOTAL = 0.1


class PulsedKernel:
    """Kernel of a cycle made of free evolution on [0, tau_f] followed by
    measurement on [tau_f, tau]; presents the same batched interface as
    :class:`MeasurementModel`."""

    def __init__(self, model: MeasurementModel, tau_f: float):
        if tau_f < 0:
            raise ValidationError(f"free duration must be non-negative, got {tau_f}")
        self.model = model
        self.tau_f = float(tau_f)

    @property
    def rho_d0(self):
        return self.model.rho_d0

    @property
    def detector_dim(self) -> int:
        return self.model.detector_dim

    def check_levels(self, labels):
        self.model.check_levels(labels)

    def breakpoints(self, tau: float) -> list:
        return [self.tau_f] if 0 < self.tau_f < tau else []

    def superop(self, n, m, t1, t2) -> np.ndarray:
        t1 = np.atleast_1d(np.asarray(t1, dtype=float)).ravel()
        t2 = np.atleast_1d(np.asarray(t2, dtype=float)).ravel()
        tf = self.tau_f
        d2 = self.detector_dim ** 2
        out = np.empty((t1.size, d2, d2), dtype=np.complex128)
        meas = t2 >= tf
        free = t1 <= tf
        cross = ~meas & ~free
        if meas.any():
            out[meas] = self.model.superop(n, m, t1[meas] - t2[meas], 0.0 * t2[meas])
        if free.any():
            out[free] = self.model.free_superop(t1[free] - t2[free])
        if cross.any():
            out[cross] = self.model.superop(n, m, t1[cross] - tf, 0.0 * t1[cross]) @ \
                self.model.free_superop(tf - t2[cross])
        return out


_TRACE_CACHE: "weakref.WeakKeyDictionary" = weakref.WeakKeyDictionary()
_TRACE_LOCK = threading.Lock()


def _nodes(tau: float, breaks: list, grid: int):
    edges = [0.0, *breaks, float(tau)]
    parts = []
    for k in range(len(edges) - 1):
        parts.append(triangle_nodes(edges[k], edges[k + 1], grid))
        for j in range(k):
            parts.append(rectangle_nodes(edges[k], edges[k + 1], edges[j], edges[j + 1], grid))
    return tuple(np.concatenate(c) for c in zip(*parts))


def _kernel_traces(kernel, i_level, f_level, tau: float, grid: int):
    """Nodes, weights and ``K_if, K_fi`` on the integration grid."""
    breaks = kernel.breakpoints(tau)
    key = (i_level, f_level, float(tau), int(grid), tuple(breaks))
    with _TRACE_LOCK:
        hit = _TRACE_CACHE.get(kernel, {}).get(key)
    if hit is not None:
        return hit
    t1, t2, w = _nodes(tau, breaks, grid)
    d = kernel.detector_dim
    rho0 = vec(kernel.rho_d0.entries)
    path = kernel.superop(i_level, i_level, t2, np.zeros_like(t2)) @ rho0
    tr = vec(np.eye(d))
    k_if = np.einsum("j,kjl,kl->k", tr, kernel.superop(i_level, f_level, t1, t2), path)
    k_fi = np.einsum("j,kjl,kl->k", tr, kernel.superop(f_level, i_level, t1, t2), path)
    out = (t1, t2, w, k_if, k_fi)
    with _TRACE_LOCK:
        try:
            _TRACE_CACHE.setdefault(kernel, {})[key] = out
        except TypeError:
            pass
    return out


def _double_integral(kernel, i_level, f_level, omegas, envelope, tau, grid):
    """Unit-coupling double integral for each Bohr frequency in ``omegas``."""
    t1, t2, w, k_if, k_fi = _kernel_traces(kernel, i_level, f_level, tau, grid)
    weight = w * envelope(t1) * envelope(t2)
    a, b = k_if * weight, k_fi * weight
    u = t1 - t2
    out = np.empty(len(omegas), dtype=np.complex128)
    for start in range(0, len(omegas), 16):
        phase = np.exp(1j * np.outer(omegas[start:start + 16], u))
        out[start:start + 16] = phase @ a + phase.conj() @ b
    return out


def _converged(evaluate, grid: int, scale: float):
    """Evaluate at ``grid`` and ``grid/2``; double until they agree."""
    coarse = evaluate(max(grid // 2, 8))
    while True:
        fine = evaluate(grid)
        err = float(np.max(np.abs(fine - coarse), initial=0.0))
        tol = RTOL * float(np.max(np.abs(fine), initial=0.0)) + 1e-15 * scale
        if err <= tol:
            return fine
        if grid >= MAX_GRID:
            raise NumericsError(f"time quadrature unconverged at grid {grid}", achieved=err)
        coarse, grid = fine, 2 * grid


def _validate(sys: SystemSpec, V: TransitionOperator, kernel, initial, finals, tau):
    if not tau > 0:
        raise ValidationError(f"tau must be positive, got {tau}")
    initial = sys.check_state(initial)
    finals = [sys.check_state(f) for f in finals]
    for f in finals:
        if f[0] == initial[0]:
            raise ValidationError(
                f"initial and final level coincide ({initial[0]!r}); only jumps between levels are covered"
            )
    V.check(sys)
    kernel.check_levels(sys.level_labels)
    return initial, finals


def jump_probabilities(
    sys: SystemSpec,
    V: TransitionOperator,
    model,
    initial,
    finals,
    tau: float,
    grid: int = DEFAULT_GRID,
) -> dict:
    """Jump probabilities into several final states sharing the kernel grid."""
    initial, finals = _validate(sys, V, model, initial, finals, tau)
    out = {}
    by_level: dict = {}
    for f in finals:
        by_level.setdefault(f[0], []).append(f)
    for level, states in by_level.items():
        amps = np.array([abs(V.element(f, initial)) ** 2 for f in states])
        omegas = np.array([sys.omega(f, initial) for f in states])
        active = amps > 0
        values = np.zeros(len(states), dtype=np.complex128)
        if active.any():
            def evaluate(M, _om=omegas[active]):
                return _double_integral(model, initial[0], level, _om, V.envelope, tau, M)

            values[active] = amps[active] * _converged(evaluate, grid, tau * tau)
        resid = np.abs(values.imag)
        if np.any(resid > IMAG_TOL * np.maximum(1.0, np.abs(values.real))):
            raise NumericsError("jump probability has a non-negligible imaginary part",
                                achieved=float(resid.max()))
        for f, v in zip(states, values.real):
            out[f] = float(v)
    total = sum(out.values())
    if total > WARN_TOTAL:
        warnings.warn(
            f"total jump probability per cycle {total:.3g} exceeds {WARN_TOTAL}; "
            "second order may be inaccurate",
            PerturbativeWarning,
            stacklevel=2,
        )
    return out


def jump_probability(sys, V, model, initial, final, tau: float, grid: int = DEFAULT_GRID) -> float:
    """Probability of the jump ``initial -> final`` during one measurement of length ``tau``."""
    final = tuple(final)
    return jump_probabilities(sys, V, model, initial, [final], tau, grid)[final]


@dataclass(frozen=True)
class FirstOrderState:
    """Detector-valued blocks of the first-order correction to the state.

    ``blocks[(p, i)]`` is the detector matrix multiplying ``|p><i|``.
    """

    blocks: dict
    initial: tuple

    def jump_contribution(self, final) -> float:
        """Contribution of the first-order term to the population of ``final``."""
        final = tuple(final)
        block = self.blocks.get((final, final))
        return 0.0 if block is None else float(np.trace(block).real)


def first_order_state(sys, V, model, initial, t: float, grid: int = DEFAULT_GRID) -> FirstOrderState:
    if t < 0:
        raise ValidationError(f"time must be non-negative, got {t}")
    initial = sys.check_state(initial)
    V.check(sys)
    d = model.detector_dim
    blocks = {}
    if t == 0:
        return FirstOrderState(blocks, initial)
    t2, w = composite_nodes(0.0, float(t), grid)
    env = V.envelope(t2)
    rho0 = vec(model.rho_d0.entries)
    path = model.superop(initial[0], initial[0], t2, np.zeros_like(t2)) @ rho0
    t1 = np.full_like(t2, float(t))
    for p in sys.states():
        v_pi = V.element(p, initial)
        if v_pi == 0:
            continue
        v_ip = V.element(initial, p)
        left = model.superop(p[0], initial[0], t1, t2)
        right = model.superop(initial[0], p[0], t1, t2)
        ph = np.exp(1j * sys.omega(initial, p) * (t - t2))
        a = np.einsum("k,kjl,kl->j", w * env * ph, left, path)
        b = np.einsum("k,kjl,kl->j", w * env * ph.conj(), right, path)
        blocks[(p, initial)] = unvec(-1j * v_pi * a, d)
        blocks[(initial, p)] = unvec(1j * v_ip * b, d)
    return FirstOrderState(blocks, initial)


# --- pulsed measurements -------------------------------------------------


def _free_term(omega, envelope, tau_f, grid):
    t1, t2, w = rectangle_nodes(0.0, tau_f, 0.0, tau_f, grid)
    return np.sum(w * envelope(t1) * envelope(t2) * np.exp(1j * omega * (t1 - t2)))


def _measurement_term(model, i_level, f_level, omega, envelope, tau_f, tau, grid):
    t1, t2, w = triangle_nodes(tau_f, tau, grid)
    d = model.detector_dim
    start = model.free_superop(np.array([tau_f]))[0] @ vec(model.rho_d0.entries)
    path = model.superop(i_level, i_level, t2 - tau_f, np.zeros_like(t2)) @ start
    tr = vec(np.eye(d))
    u = t1 - t2
    k_if = np.einsum("j,kjl,kl->k", tr, model.superop(i_level, f_level, u, 0 * u), path)
    k_fi = np.einsum("j,kjl,kl->k", tr, model.superop(f_level, i_level, u, 0 * u), path)
    ph = np.exp(1j * omega * u)
    weight = w * envelope(t1) * envelope(t2)
    return np.sum(weight * (ph * k_if + ph.conj() * k_fi))


def _interference_term(model, i_level, f_level, omega, envelope, tau_f, tau, grid):
    t1, t2, w = rectangle_nodes(tau_f, tau, 0.0, tau_f, grid)
    d = model.detector_dim
    start = model.free_superop(np.array([tau_f]))[0] @ vec(model.rho_d0.entries)
    tr = vec(np.eye(d))
    s = t1 - tau_f
    k_if = tr @ (model.superop(i_level, f_level, s, 0 * s) @ start).T
    k_fi = tr @ (model.superop(f_level, i_level, s, 0 * s) @ start).T
    ph = np.exp(1j * omega * (t1 - t2))
    weight = w * envelope(t1) * envelope(t2)
    return np.sum(weight * (ph * k_if + ph.conj() * k_fi))


def pulsed_jump_probability(
    sys: SystemSpec,
    V: TransitionOperator,
    model: MeasurementModel,
    schedule: MeasurementSchedule,
    initial,
    final,
    grid: int = DEFAULT_GRID,
) -> JumpResult:
    """Jump probability for a cycle of free evolution then measurement,
    split into the free, measurement and interference contributions."""
    tau, tau_f = schedule.tau, schedule.tau_f
    initial, (final,) = _validate(sys, V, model, initial, [final], tau)
    amp = abs(V.element(final, initial)) ** 2
    omega = sys.omega(final, initial)
    i_level, f_level = initial[0], final[0]
    env = V.envelope

    def evaluate(M):
        w_f = _free_term(omega, env, tau_f, M) if tau_f > 0 else 0j
        w_m = _measurement_term(model, i_level, f_level, omega, env, tau_f, tau, M) if tau_f < tau else 0j
        w_i = _interference_term(model, i_level, f_level, omega, env, tau_f, tau, M) \
            if 0 < tau_f < tau else 0j
        return np.array([w_f, w_m, w_i])

    if amp == 0:
        parts = np.zeros(3, dtype=np.complex128)
    else:
        parts = amp * _converged(evaluate, grid, tau * tau)
    resid = float(np.max(np.abs(parts.imag)))
    if resid > IMAG_TOL * max(1.0, float(np.max(np.abs(parts.real)))):
        raise NumericsError("pulsed jump probability has a non-negligible imaginary part", achieved=resid)
    w_f, w_m, w_i = (float(x) for x in parts.real)
    total = w_f + w_m + w_i
    rate = total / tau
    return JumpResult(
        w_total=total,
        w_m=w_m,
        w_f=w_f,
        w_i=w_i,
        rate=rate,
        survival=survival(rate, schedule),
        imag_residue=resid,
    )


def free_jump_probability(coupling: complex, omega: float, duration: float) -> float:
    """Closed form for a constant perturbation with no measurement."""
    if abs(omega * duration) < 1e-4:
        x = omega * duration
        return abs(coupling) ** 2 * duration**2 * (1 - x * x / 12)
    return abs(coupling) ** 2 * 4 * math.sin(0.5 * omega * duration) ** 2 / omega**2


def interference_constant_v(model, i_level, f_level, coupling, omega, tau_f, tau, grid=DEFAULT_GRID) -> float:
    """Interference term for a constant perturbation as a single integral
    over the measurement window."""
    t1, w = composite_nodes(tau_f, tau, grid)
    d = model.detector_dim
    start = model.free_superop(np.array([tau_f]))[0] @ vec(model.rho_d0.entries)
    tr = vec(np.eye(d))
    s = t1 - tau_f
    k_if = tr @ (model.superop(i_level, f_level, s, 0 * s) @ start).T
    k_fi = tr @ (model.superop(f_level, i_level, s, 0 * s) @ start).T
    ph = np.exp(1j * omega * (t1 - 0.5 * tau_f))
    integral = np.sum(w * (ph * k_if + ph.conj() * k_fi))
    if abs(omega) < 1e-12:
        prefactor = tau_f
    else:
        prefactor = 2 * math.sin(0.5 * omega * tau_f) / omega
    return float((abs(coupling) ** 2 * prefactor * integral).real)


def decay_rate(per_channel, tau: float) -> float:
    """Jump rate: total jump probability per cycle divided by the cycle length."""
    ws = np.asarray(list(per_channel), dtype=float)
    if ws.size == 0:
        raise ValidationError("decay rate needs at least one channel probability")
    if not tau > 0:
        raise ValidationError(f"tau must be positive, got {tau}")
    if np.any(ws < -1e-10):
        raise ValidationError("jump probabilities must be non-negative")
    return float(ws.sum() / tau)


def survival(rate: float, schedule: MeasurementSchedule, n: int | None = None) -> float:
    """Probability of no jump after ``n`` cycles (default: the schedule's count)."""
    n = schedule.n_repeats if n is None else n
    return float(min(1.0, max(0.0, math.exp(-rate * n * schedule.tau))))


def survival_power(total_w: float, n: int) -> float:
    """Survival as the product of per-cycle no-jump probabilities."""
    return float(min(1.0, max(0.0, 1.0 - total_w)) ** n)
