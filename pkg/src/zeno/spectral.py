"""Decay rates as the overlap of a reservoir spectrum with the
measurement-broadened line.

    R = 2 pi  integral G(w) P(w) dw

``G`` is the reservoir coupling spectrum and ``P`` the line profile
produced by measurements of duration ``tau``:

    P(w) = (1/pi) Re integral_0^tau (1 - u/tau) F(u) exp(i (w - w_if) u) du
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
import scipy.integrate
from scipy.special import sici

from .errors import AssumptionError, NumericsError, ValidationError
from .measurement import Kind, LevelPair, decoherence_function
from .quadrature import adaptive_integrate, composite_nodes

CORE_LOBES = 25
LORENTZ_EXTENT = 1e6
STRENGTH_RTOL = 1e-6
TIE_TOL = 1e-12
DEFAULT_PAIR = LevelPair.of_levels("i", "f")


# --- reservoir spectra ---------------------------------------------------


def _lorentz(omega, center, width, strength):
    return strength / math.pi * width / ((omega - center) ** 2 + width**2)


def _geometric_points(center: float, start: float, stop: float, factor: float = 2.0):
    pts = []
    r = start
    while r < stop:
        pts += [center - r, center + r]
        r *= factor
    pts += [center - stop, center + stop]
    return pts


@dataclass(frozen=True, eq=False)
class ReservoirSpectrum:
    """Non-negative coupling density ``G(w)`` (units of frequency)."""

    kind: str
    params: dict
    strength: float

    def __post_init__(self):
        if self.kind == "tabulated":
            x = np.asarray(self.params["omega"], dtype=float)
            y = np.asarray(self.params["values"], dtype=float)
            if x.ndim != 1 or x.size < 2 or x.shape != y.shape:
                raise ValidationError("tabulated spectrum needs matching 1-D arrays with >= 2 samples")
            if np.any(np.diff(x) <= 0):
                raise ValidationError("tabulated frequencies must be strictly increasing")
            if np.any(y < 0):
                raise ValidationError("spectrum must be non-negative")
            self.params["omega"], self.params["values"] = x, y
        computed = self._check_integral()
        if abs(computed - self.strength) > STRENGTH_RTOL * max(abs(self.strength), 1e-300):
            raise ValidationError(
                f"spectrum integrates to {computed!r}, declared strength {self.strength!r}"
            )

    def _check_integral(self) -> float:
        p = self.params
        if self.kind == "tabulated":
            return float(scipy.integrate.trapezoid(p["values"], p["omega"]))
        if self.kind == "flat_window":
            val, _ = scipy.integrate.quad(self.__call__, p["lo"], p["hi"], epsabs=0, epsrel=1e-10)
            return val
        cuts = sorted({x for c, w, _ in self._components() for x in (c - w, c, c + w)})
        edges = [-np.inf, *cuts, np.inf]
        total = 0.0
        for a, b in zip(edges[:-1], edges[1:]):
            val, _ = scipy.integrate.quad(self.__call__, a, b, epsabs=0, epsrel=1e-11, limit=200)
            total += val
        return total

    def _components(self):
        p = self.params
        if self.kind == "lorentzian":
            return [(p["center"], p["half_width"], p["strength"])]
        if self.kind == "double_lorentzian":
            return [(c["center"], c["half_width"], c["strength"]) for c in p["components"]]
        return []

    def __call__(self, omega):
        omega = np.asarray(omega, dtype=float)
        p = self.params
        if self.kind in ("lorentzian", "double_lorentzian"):
            out = np.zeros_like(omega)
            for c, w, g in self._components():
                out = out + _lorentz(omega, c, w, g)
            return out
        if self.kind == "flat_window":
            inside = (omega >= p["lo"]) & (omega <= p["hi"])
            return np.where(inside, self.strength / (p["hi"] - p["lo"]), 0.0)
        return np.interp(omega, p["omega"], p["values"], left=0.0, right=0.0)

    def extent(self) -> tuple:
        """Interval outside of which the spectrum is neglected."""
        p = self.params
        if self.kind == "flat_window":
            return float(p["lo"]), float(p["hi"])
        if self.kind == "tabulated":
            return float(p["omega"][0]), float(p["omega"][-1])
        comps = self._components()
        return (min(c - LORENTZ_EXTENT * w for c, w, _ in comps),
                max(c + LORENTZ_EXTENT * w for c, w, _ in comps))

    def breakpoints(self) -> list:
        p = self.params
        if self.kind == "flat_window":
            return [p["lo"], p["hi"]]
        if self.kind == "tabulated":
            return list(p["omega"])
        pts = []
        for c, w, _ in self._components():
            pts.append(c)
            pts += _geometric_points(c, 0.25 * w, LORENTZ_EXTENT * w)
        return pts

    def describe(self) -> dict:
        p = dict(self.params)
        for k in ("omega", "values"):
            if k in p:
                p[k] = [float(x) for x in p[k]]
        return {"kind": self.kind, **p}


def lorentzian(center: float, half_width: float, strength: float) -> ReservoirSpectrum:
    if not half_width > 0:
        raise ValidationError(f"half width must be positive, got {half_width}")
    if not strength >= 0:
        raise ValidationError(f"strength must be non-negative, got {strength}")
    return ReservoirSpectrum(
        "lorentzian",
        {"center": float(center), "half_width": float(half_width), "strength": float(strength)},
        float(strength),
    )


def double_lorentzian(components: Sequence) -> ReservoirSpectrum:
    comps = []
    for c in components:
        c = dict(c)
        if not c["half_width"] > 0 or not c["strength"] >= 0:
            raise ValidationError(f"bad Lorentzian component {c}")
        comps.append({k: float(c[k]) for k in ("center", "half_width", "strength")})
    if len(comps) != 2:
        raise ValidationError("double Lorentzian needs exactly two components")
    return ReservoirSpectrum("double_lorentzian", {"components": comps},
                             sum(c["strength"] for c in comps))


def flat_window(lo: float, hi: float, strength: float) -> ReservoirSpectrum:
    if not hi > lo:
        raise ValidationError(f"window needs lo < hi, got [{lo}, {hi}]")
    if not strength >= 0:
        raise ValidationError(f"strength must be non-negative, got {strength}")
    return ReservoirSpectrum("flat_window", {"lo": float(lo), "hi": float(hi)}, float(strength))


def tabulated(omega, values) -> ReservoirSpectrum:
    x = np.asarray(omega, dtype=float)
    y = np.asarray(values, dtype=float)
    strength = float(scipy.integrate.trapezoid(y, x)) if x.shape == y.shape and x.size >= 2 else 0.0
    return ReservoirSpectrum("tabulated", {"omega": x, "values": y}, strength)


def delta_channel(omega: float, weight: float, scale: float = 1.0) -> ReservoirSpectrum:
    """A single discrete channel of squared coupling ``weight`` at ``omega``,
    smeared over a window of width ``1e-6 * scale``."""
    half = 0.5e-6 * scale
    return flat_window(omega - half, omega + half, weight)


def spectrum_eval(G: ReservoirSpectrum, omega):
    return G(omega)


def golden_rule_rate(G: ReservoirSpectrum, omega_if: float) -> float:
    """Decay rate without measurement, ``2 pi G(w_if)``."""
    return float(2 * math.pi * G(omega_if))


# --- broadening profiles -------------------------------------------------


def _phi(x: np.ndarray) -> np.ndarray:
    """(exp(x) - 1 - x) / x**2, accurate near x = 0."""
    x = np.asarray(x, dtype=np.complex128)
    out = np.empty_like(x)
    small = np.abs(x) < 0.5
    xs = x[small]
    acc = np.zeros_like(xs)
    for n in range(22, -1, -1):
        acc = acc * xs + 1.0 / math.factorial(n + 2)
    out[small] = acc
    xl = x[~small]
    out[~small] = (np.expm1(xl) - xl) / (xl * xl)
    return out


@dataclass(frozen=True, eq=False)
class BroadeningProfile:
    """Measurement-modified line shape ``P(w)`` around ``omega_if``.

    ``slope0`` and ``slope_tau`` are the derivatives of the weighted
    decoherence function ``(1 - u/tau) F(u)`` at both ends; they fix the
    ``1/w**2`` tails used to close the normalisation integral.
    """

    omega_if: float
    tau: float
    evaluator: Callable = field(repr=False)
    source: str = "closed_form"
    interchange_valid: bool = True
    slope0: complex = 0j
    slope_tau: complex = 0j
    width: float = 0.0

    def __call__(self, omega):
        return self.evaluator(np.asarray(omega, dtype=float))

    @property
    def core_halfwidth(self) -> float:
        return CORE_LOBES * 2 * math.pi / self.tau

    def breakpoints(self, lo: float, hi: float) -> list:
        w0, step = self.omega_if, 2 * math.pi / self.tau
        lobes = w0 + step * np.arange(-CORE_LOBES, CORE_LOBES + 1)
        pts = list(lobes)
        if self.width > 0:
            pts += [w0 - self.width, w0 + self.width]
        reach = max(abs(lo - w0), abs(hi - w0), self.core_halfwidth)
        pts += _geometric_points(w0, self.core_halfwidth, reach)
        pts = np.clip(pts, lo, hi)
        return sorted(set(pts.tolist()) | {lo, hi})

    def tail_mass(self, cutoff: float) -> float:
        """Integral of the asymptotic tail over ``|w - w_if| > cutoff``."""
        a = self.tau
        si, ci = sici(a * cutoff)
        cos_tail = math.cos(a * cutoff) / cutoff - a * (math.pi / 2 - si)
        return (2 / math.pi) * (-self.slope0.real / cutoff + self.slope_tau.real * cos_tail)

    def normalization(self, rtol: float = 1e-10) -> float:
        """Integral of ``P`` over all frequencies, tails closed analytically."""
        cutoff = self.core_halfwidth + 100 * self.width
        lo, hi = self.omega_if - cutoff, self.omega_if + cutoff
        core, _ = adaptive_integrate(self.__call__, self.breakpoints(lo, hi), rtol=rtol)
        return core + self.tail_mass(cutoff)


def _closed_form_evaluator(coeffs, rates, omega_if, tau):
    coeffs = np.asarray(coeffs, dtype=np.complex128)
    rates = np.asarray(rates, dtype=np.complex128)

    def P(omega):
        delta = np.asarray(omega, dtype=float) - omega_if
        z = rates[:, None] + 1j * delta.ravel()[None, :]
        val = (coeffs[:, None] * _phi(z * tau)).sum(axis=0)
        return (tau / math.pi * val.real).reshape(delta.shape)

    return P


def _quadrature_evaluator(model, pair, omega_if, tau, nodes=1024):
    u, w = composite_nodes(0.0, tau, nodes)
    weighted = w * (1 - u / tau) * decoherence_function(model, pair, u)

    def P(omega):
        delta = np.asarray(omega, dtype=float) - omega_if
        flat = delta.ravel()
        out = np.empty(flat.size)
        for s in range(0, flat.size, 256):
            ph = np.exp(1j * np.outer(flat[s:s + 256], u))
            out[s:s + 256] = (ph @ weighted).real / math.pi
        return out.reshape(delta.shape)

    return P


def broadening_profile(model, pair: LevelPair, omega_if: float, tau: float) -> BroadeningProfile:
    """Line profile of the transition ``pair`` under measurements of length ``tau``."""
    if not tau > 0:
        raise ValidationError(f"tau must be positive, got {tau}")
    if model.kind is Kind.PROJECTIVE and tau > model.tau * (1 + 1e-12):
        raise ValidationError(f"profile duration {tau} exceeds the measurement interval {model.tau}")
    i, f = pair.levels
    if not model.interchange_valid(i, f):
        raise AssumptionError(
            f"kernels S_ii and S_if of the {model.kind.value} model do not commute for "
            f"levels ({i!r}, {f!r}); the reduced profile formula (superoperator order "
            "interchange) does not apply"
        )
    exps = model.decoherence_exponentials(i, f)
    if exps is not None:
        c, s = exps
        evaluator = _closed_form_evaluator(c, s, omega_if, tau)
        f_tau = complex(np.sum(c * np.exp(s * tau)))
        df0 = complex(np.sum(c * s))
        width = float(np.max(np.abs(s)))
        source = "closed_form"
    else:
        evaluator = _quadrature_evaluator(model, pair, omega_if, tau)
        h = 1e-6 * tau
        f_tau = complex(decoherence_function(model, pair, tau))
        df0 = complex((decoherence_function(model, pair, h) - 1.0) / h)
        width = float(np.max(np.abs(np.linalg.eigvals(model.generator(i, f)))))
        source = "quadrature"
    return BroadeningProfile(
        omega_if=float(omega_if),
        tau=float(tau),
        evaluator=evaluator,
        source=f"{model.kind.value}:{source}",
        interchange_valid=True,
        slope0=-1.0 / tau + df0,
        slope_tau=-f_tau / tau,
        width=width,
    )


def sinc_profile(omega_if: float, tau: float) -> BroadeningProfile:
    """Profile of ideal instantaneous measurements every ``tau``."""
    if not tau > 0:
        raise ValidationError(f"tau must be positive, got {tau}")

    def P(omega):
        x = tau * (np.asarray(omega, dtype=float) - omega_if)
        small = np.abs(x) < 1e-4
        xs = np.where(small, 1.0, x)
        out = 2 * np.sin(0.5 * xs) ** 2 / (math.pi * tau * (xs / tau) ** 2)
        return np.where(small, tau / (2 * math.pi) * (1 - x * x / 12), out)

    return BroadeningProfile(
        omega_if=float(omega_if),
        tau=float(tau),
        evaluator=P,
        source="sinc",
        slope0=-1.0 / tau,
        slope_tau=-1.0 / tau,
    )


def overlap_decay_rate(G: ReservoirSpectrum, P: BroadeningProfile, rtol: float = 1e-9) -> float:
    """``2 pi`` times the overlap integral of spectrum and line profile."""
    g_lo, g_hi = G.extent()
    lo = min(g_lo, P.omega_if - P.core_halfwidth)
    hi = max(g_hi, P.omega_if + P.core_halfwidth)
    pts = sorted(set(P.breakpoints(lo, hi)) | {x for x in G.breakpoints() if lo <= x <= hi})

    def integrand(w):
        return G(w) * P(w)

    value, err = adaptive_integrate(integrand, pts, rtol=rtol)
    rate = 2 * math.pi * value
    if rate < -1e-9 * max(abs(2 * math.pi * err), 1e-300) and rate < -1e-14:
        raise NumericsError(f"overlap integral is negative ({rate!r})", achieved=err)
    return max(rate, 0.0)


# --- regime sweeps -------------------------------------------------------


@dataclass(frozen=True)
class RegimeCurve:
    """Rates along a grid of measurement intervals.

    ``labels[k]`` describes the interval between ``taus[k]`` and
    ``taus[k+1]``: ``"zeno"`` if the rate drops as the interval shrinks,
    ``"anti-zeno"`` if it grows, ``"neutral"`` for ties.
    """

    taus: np.ndarray
    rates: np.ndarray
    rate_golden_rule: float
    labels: tuple

    @property
    def above_golden_rule(self) -> np.ndarray:
        return self.rates > self.rate_golden_rule

    def point_labels(self) -> list:
        """One label per grid point: the interval starting there (the last
        point reuses the final interval)."""
        return list(self.labels) + [self.labels[-1]]


def classify(taus, rates) -> tuple:
    labels = []
    for k in range(len(taus) - 1):
        d = rates[k + 1] - rates[k]
        if abs(d) < TIE_TOL:
            labels.append("neutral")
        elif d > 0:
            labels.append("zeno")
        else:
            labels.append("anti-zeno")
    return tuple(labels)


def sweep_and_classify(
    G: ReservoirSpectrum,
    model_factory: Callable,
    omega_if: float,
    tau_grid,
    pair: LevelPair = DEFAULT_PAIR,
    workers: int = 1,
) -> RegimeCurve:
    """Overlap decay rate over a grid of measurement intervals.

    ``model_factory(tau)`` returns the measurement model used at ``tau``.
    """
    taus = np.asarray(tau_grid, dtype=float)
    if taus.ndim != 1 or taus.size < 8:
        raise ValidationError(f"tau grid needs at least 8 points, got {taus.size}")
    if np.any(np.diff(taus) <= 0) or taus[0] <= 0:
        raise ValidationError("tau grid must be positive and strictly increasing")

    def rate_at(tau):
        return overlap_decay_rate(G, broadening_profile(model_factory(tau), pair, omega_if, tau))

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            rates = np.array(list(pool.map(rate_at, taus)))
    else:
        rates = np.array([rate_at(t) for t in taus])
    return RegimeCurve(taus, rates, golden_rule_rate(G, omega_if), classify(taus, rates))
