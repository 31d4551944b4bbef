"""Brute-force reference: exact propagation of system, reservoir modes and
detector, used to check the second-order jump formula.

The composite Hilbert space is ``levels x channels x detector``.  No
rotating frame is used and no perturbative truncation is made; projective
measurements are modelled as erasure of coherences between different
levels at the end of the cycle.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, InconclusiveError, NumericsError, ValidationError
from .jumps import jump_probability, pulsed_jump_probability
from .linalg import MAX_DIM, build_liouvillian, propagate, propagate_time_dependent
from .measurement import (
    Kind,
    MeasurementModel,
    make_dephasing,
    make_projective,
)
from .spectral import ReservoirSpectrum, golden_rule_rate  # noqa: F401  (re-exported)
from .system import MeasurementSchedule, SystemSpec, TransitionOperator

MAX_MODES = 24
ERROR_FLOOR = 1e-13
TRACE_TOL = 1e-10
POSITIVITY_FLOOR = -1e-9

_SIGMA_X = np.array([[0, 1], [1, 0]], dtype=np.complex128)
_LOWER = np.array([[0, 1], [0, 0]], dtype=np.complex128)


@dataclass(frozen=True, eq=False)
class CompositeScenario:
    """Full problem handed to the exact propagator."""

    sys: SystemSpec
    V: TransitionOperator
    model: MeasurementModel
    schedule: MeasurementSchedule
    name: str = "scenario"

    def __post_init__(self):
        modes = len(self.sys.channels) - 1
        if modes > MAX_MODES:
            raise ConfigError(f"{modes} reservoir modes exceed the cap of {MAX_MODES}")
        if self.dim > MAX_DIM:
            raise ConfigError(f"composite dimension {self.dim} exceeds cap {MAX_DIM}")
        if not 2 <= len(self.sys.levels) <= 3:
            raise ConfigError("composite scenarios take 2 or 3 levels")
        self.V.check(self.sys)
        self.model.check_levels(self.sys.level_labels)

    @property
    def dim(self) -> int:
        return len(self.sys.states()) * self.model.detector_dim

    def scaled(self, s: float) -> "CompositeScenario":
        return CompositeScenario(self.sys, self.V.scaled(s), self.model, self.schedule, self.name)


def decay_scenario(
    e_initial: float,
    e_final: float,
    modes,
    amplitudes,
    model: MeasurementModel,
    schedule: MeasurementSchedule,
    name: str = "decay",
) -> CompositeScenario:
    """Level ``i`` decaying to ``f`` by emitting into one of ``modes``.

    Channel ``"0"`` is the empty reservoir; mode ``k`` is channel ``"k"``.
    """
    modes = [float(e) for e in modes]
    amplitudes = list(amplitudes)
    if len(modes) != len(amplitudes):
        raise ConfigError("one amplitude per mode is required")
    channels = (("0", 0.0),) + tuple((str(k + 1), e) for k, e in enumerate(modes))
    sys = SystemSpec((("i", e_initial), ("f", e_final)), channels)
    couplings = {(("f", str(k + 1)), ("i", "0")): v for k, v in enumerate(amplitudes)}
    return CompositeScenario(sys, TransitionOperator.hermitian(couplings), model, schedule, name)


# --- exact propagation ---------------------------------------------------


def _operators(sc: CompositeScenario):
    states = sc.sys.states()
    index = {s: k for k, s in enumerate(states)}
    n = len(states)
    d = sc.model.detector_dim
    eye_d = np.eye(d)
    H0 = np.diag([sc.sys.energy(s) for s in states]).astype(np.complex128)
    Vm = np.zeros((n, n), dtype=np.complex128)
    for (a, b), v in sc.V.entries.items():
        Vm[index[a], index[b]] = v
    projectors = {}
    for lab in sc.sys.level_labels:
        P = np.zeros((n, n))
        for s in states:
            if s[0] == lab:
                P[index[s], index[s]] = 1.0
        projectors[lab] = P
    return index, np.kron(H0, eye_d), np.kron(Vm, eye_d), projectors


def _segment_terms(sc: CompositeScenario, projectors, measuring: bool):
    """Detector Hamiltonian and collapse operators for one segment."""
    m = sc.model
    d = m.detector_dim
    n = next(iter(projectors.values())).shape[0]
    H = np.zeros((n * d, n * d), dtype=np.complex128)
    ops = []
    if m.kind is Kind.DEPHASING and measuring and m.gamma > 0:
        ops = [math.sqrt(m.gamma) * np.kron(P, np.eye(d)) for P in projectors.values()]
    elif m.kind is Kind.TWO_LEVEL_DETECTOR:
        if measuring:
            H = np.kron(projectors[m.measured_level], m.coupling * _SIGMA_X)
        if m.relax_rate > 0:
            ops = [math.sqrt(m.relax_rate) * np.kron(np.eye(n), _LOWER)]
    return H, ops


def _check_state(rho: np.ndarray, where: str):
    drift = abs(np.trace(rho) - 1.0)
    if drift > TRACE_TOL:
        raise NumericsError(f"trace drifted by {drift:.3e} {where}", achieved=drift)
    low = float(np.linalg.eigvalsh(0.5 * (rho + rho.conj().T)).min())
    if low < POSITIVITY_FLOOR:
        raise NumericsError(f"state lost positivity {where} (eigenvalue {low:.3e})", achieved=-low)


def exact_state(sc: CompositeScenario, initial) -> np.ndarray:
    """Composite density matrix at the end of one cycle."""
    initial = sc.sys.check_state(initial)
    index, H0, Vfull, projectors = _operators(sc)
    d = sc.model.detector_dim
    n = len(index)
    psi = np.zeros((n, n), dtype=np.complex128)
    psi[index[initial], index[initial]] = 1.0
    rho = np.kron(psi, sc.model.rho_d0.entries)
    env = sc.V.envelope
    sched = sc.schedule
    segments = [(0.0, sched.tau_f, False), (sched.tau_f, sched.tau, True)]
    for t0, t1, measuring in segments:
        if t1 <= t0:
            continue
        Hd, ops = _segment_terms(sc, projectors, measuring)
        if sc.V.is_constant:
            L = build_liouvillian(H0 + Vfull + Hd, ops)
            rho = propagate(L, rho, t1 - t0)
        else:
            def gen(t, _Hd=Hd, _ops=ops):
                return build_liouvillian(H0 + float(env(t)) * Vfull + _Hd, _ops)

            rho = propagate_time_dependent(gen, rho, t0, t1, tol=1e-10)
        _check_state(rho, f"after segment [{t0}, {t1}]")
    if sc.model.kind is Kind.PROJECTIVE:
        blocks = [np.kron(P, np.eye(d)) for P in projectors.values()]
        rho = sum(P @ rho @ P for P in blocks)
        _check_state(rho, "after the measurement")
    return rho


def _populations(sc: CompositeScenario, rho: np.ndarray) -> dict:
    d = sc.model.detector_dim
    diag = np.real(np.diag(rho)).reshape(-1, d).sum(axis=1)
    return dict(zip(sc.sys.states(), diag))


def exact_jump_probability(sc: CompositeScenario, initial, final) -> float:
    """Population of ``final`` after one cycle started from ``initial``."""
    final = sc.sys.check_state(final)
    return float(_populations(sc, exact_state(sc, initial))[final])


def exact_level_population(sc: CompositeScenario, initial, level) -> float:
    """Total population of ``level`` (all channels) after one cycle."""
    pops = _populations(sc, exact_state(sc, initial))
    return float(sum(p for s, p in pops.items() if s[0] == level))


def formula_jump_probability(sc: CompositeScenario, initial, final, grid: int = 128) -> float:
    """Second-order value for the same scenario."""
    sched = sc.schedule
    if sched.tau_f > 0:
        return pulsed_jump_probability(sc.sys, sc.V, sc.model, sched, initial, final, grid).w_total
    return jump_probability(sc.sys, sc.V, sc.model, initial, final, sched.tau, grid)


# --- convergence order ---------------------------------------------------


@dataclass(frozen=True)
class ConvergenceFit:
    exponent: float
    scales: tuple
    errors: tuple
    w_exact: tuple
    w_formula: tuple

    @property
    def residual(self) -> float:
        """Difference between exact and formula at the largest scale."""
        return self.errors[int(np.argmax(self.scales))]


def convergence_fit(sc: CompositeScenario, initial, final, scale_factors, grid: int = 128) -> ConvergenceFit:
    """Slope of ``log |W_exact - W_formula|`` against ``log s`` for ``V -> sV``."""
    s = np.asarray(sorted(float(x) for x in scale_factors))
    if s.size < 3:
        raise ValidationError("convergence fit needs at least 3 scale factors")
    if np.any(s <= 0):
        raise ValidationError("scale factors must be positive")
    if s[-1] / s[0] < 4 * (1 - 1e-12):
        raise ValidationError("scale factors must span at least a factor of 4")
    if not sc.V.entries or not any(abs(v) > 0 for v in sc.V.entries.values()):
        raise ValidationError("perturbation vanishes; nothing to fit")
    exact, approx = [], []
    for k in s:
        scn = sc.scaled(k)
        exact.append(exact_jump_probability(scn, initial, final))
        approx.append(formula_jump_probability(scn, initial, final, grid))
    if max(exact) > 0.05:
        raise ValidationError(f"exact jump probability {max(exact):.3g} exceeds 0.05; reduce the coupling")
    err = np.abs(np.array(exact) - np.array(approx))
    ok = err >= ERROR_FLOOR
    if ok.sum() < 2:
        raise InconclusiveError(
            f"differences {err.tolist()} are below the {ERROR_FLOOR} floor; "
            "cannot separate truncation error from quadrature noise"
        )
    slope = np.polyfit(np.log(s[ok]), np.log(err[ok]), 1)[0]
    return ConvergenceFit(float(slope), tuple(s), tuple(err), tuple(exact), tuple(approx))


# --- reservoir discretisation --------------------------------------------


def discretize_spectrum(G: ReservoirSpectrum, n_modes: int, lo: float, hi: float):
    """Midpoint modes on [lo, hi] with ``|v|^2 = G(w) dw``.

    Faithful only for times shorter than the recurrence time ``2 pi / dw``.
    """
    if n_modes < 1:
        raise ValidationError("need at least one mode")
    if not hi > lo:
        raise ValidationError(f"need lo < hi, got [{lo}, {hi}]")
    dw = (hi - lo) / n_modes
    omegas = lo + dw * (np.arange(n_modes) + 0.5)
    return omegas, np.sqrt(G(omegas) * dw)


def recurrence_time(lo: float, hi: float, n_modes: int) -> float:
    return 2 * math.pi * n_modes / (hi - lo)


# --- canonical scenarios -------------------------------------------------


CANONICAL_TAU = 2.0
CANONICAL_COUPLING = 0.08


def canonical_scenarios() -> list:
    """Four small scenarios: resonant or detuned emission, measured
    projectively or by dephasing."""
    out = []
    sched = MeasurementSchedule(CANONICAL_TAU)
    resonant = [0.5, 0.75, 1.0, 1.25, 1.5, 1.75]
    detuned = [1.5 + 0.1 * k for k in range(20)]
    for label, modes in (("resonant", resonant), ("detuned", detuned)):
        amps = [CANONICAL_COUPLING] * len(modes)
        for mname, model in (
            ("projective", make_projective(CANONICAL_TAU)),
            ("dephasing", make_dephasing(0.5, CANONICAL_TAU)),
        ):
            out.append(decay_scenario(1.0, 0.0, modes, amps, model, sched, f"{label}-{mname}"))
    return out


def canonical_final(sc: CompositeScenario):
    """Final state probed in a canonical scenario: the mode closest to resonance."""
    e_i = sc.sys.level_energy("i") - sc.sys.level_energy("f")
    lab, _ = min(sc.sys.channels[1:], key=lambda c: abs(c[1] - e_i))
    return ("f", lab)


@dataclass
class VerifyRecord:
    scenario: str
    exponent: float
    residual: float
    passed: bool
    errors: list = field(default_factory=list)

    def as_json(self) -> dict:
        return {"scenario": self.scenario, "exponent": self.exponent,
                "residual": self.residual, "pass": self.passed}


def verify(probes=None, scale_factors=(1.0, 0.5, 0.25), threshold: float = 2.7, grid: int = 128) -> list:
    """Convergence fits for ``(scenario, initial, final)`` triples; the
    canonical set by default."""
    if probes is None:
        probes = [(sc, ("i", "0"), canonical_final(sc)) for sc in canonical_scenarios()]
    out = []
    for sc, initial, final in sorted(probes, key=lambda p: p[0].name):
        fit = convergence_fit(sc, initial, final, scale_factors, grid)
        out.append(VerifyRecord(sc.name, fit.exponent, fit.residual, fit.exponent >= threshold,
                                list(fit.errors)))
    return out
