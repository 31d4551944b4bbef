"""Level structure, transition operator and measurement schedule."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Hashable, Mapping

import numpy as np

from .errors import ConfigError, ValidationError

State = tuple  # (level label, channel label)
DEFAULT_CHANNEL = "0"


@dataclass(frozen=True)
class SystemSpec:
    """Discrete levels ``E_n`` and reservoir channels ``E_alpha``.

    A basis state is the pair ``(level, channel)``; its energy is
    ``E_n + E_alpha``.
    """

    levels: tuple
    channels: tuple = ((DEFAULT_CHANNEL, 0.0),)

    def __post_init__(self):
        levels = tuple((lab, float(e)) for lab, e in self.levels)
        channels = tuple((lab, float(e)) for lab, e in self.channels)
        if not levels:
            raise ValidationError("system needs at least one level")
        if not channels:
            raise ValidationError("system needs at least one channel")
        for kind, items in (("level", levels), ("channel", channels)):
            labels = [lab for lab, _ in items]
            if len(set(labels)) != len(labels):
                raise ValidationError(f"duplicate {kind} labels in {labels}")
        object.__setattr__(self, "levels", levels)
        object.__setattr__(self, "channels", channels)

    @property
    def level_labels(self) -> list:
        return [lab for lab, _ in self.levels]

    @property
    def channel_labels(self) -> list:
        return [lab for lab, _ in self.channels]

    def level_energy(self, label: Hashable) -> float:
        for lab, e in self.levels:
            if lab == label:
                return e
        raise ConfigError(f"unknown level {label!r}")

    def channel_energy(self, label: Hashable) -> float:
        for lab, e in self.channels:
            if lab == label:
                return e
        raise ConfigError(f"unknown channel {label!r}")

    def energy(self, state: State) -> float:
        level, channel = state
        return self.level_energy(level) + self.channel_energy(channel)

    def omega(self, a: State, b: State) -> float:
        """Bohr frequency ``E(a) - E(b)``."""
        return self.energy(a) - self.energy(b)

    def states(self) -> list:
        return [(n, a) for n, _ in self.levels for a, _ in self.channels]

    def check_state(self, state: State) -> State:
        if not isinstance(state, (tuple, list)) or len(state) != 2:
            raise ConfigError(f"state must be a (level, channel) pair, got {state!r}")
        self.energy(state)
        return tuple(state)


@dataclass(frozen=True)
class Envelope:
    """Real time profile multiplying the transition operator."""

    kind: str = "constant"
    params: Mapping = field(default_factory=dict)

    KINDS = {"constant": (), "cosine": ("frequency", "phase"), "gaussian": ("center", "width")}

    def __post_init__(self):
        if self.kind not in self.KINDS:
            raise ValidationError(f"unknown envelope kind {self.kind!r}")
        missing = [k for k in self.KINDS[self.kind] if k not in self.params]
        if missing:
            raise ValidationError(f"envelope {self.kind!r} missing parameters {missing}")
        if self.kind == "gaussian" and float(self.params["width"]) <= 0:
            raise ValidationError("gaussian envelope width must be positive")
        object.__setattr__(self, "params", dict(self.params))

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        p = self.params
        if self.kind == "constant":
            return np.ones_like(t)
        if self.kind == "cosine":
            return np.cos(float(p["frequency"]) * t + float(p["phase"]))
        return np.exp(-0.5 * ((t - float(p["center"])) / float(p["width"])) ** 2)

    @property
    def is_constant(self) -> bool:
        return self.kind == "constant"


CONSTANT = Envelope()


@dataclass(frozen=True, eq=False)
class TransitionOperator:
    """Matrix elements ``V[a, b]`` between (level, channel) states.

    Time dependence is restricted to a real scalar envelope shared by all
    elements.
    """

    entries: Mapping
    envelope: Callable = CONSTANT

    def __post_init__(self):
        entries = {(tuple(a), tuple(b)): complex(v) for (a, b), v in self.entries.items()}
        for (a, b), v in entries.items():
            if a == b and v != 0:
                raise ValidationError(f"diagonal element V[{a}, {b}] must vanish")
            partner = entries.get((b, a), 0.0)
            if abs(v - np.conj(partner)) > 1e-12 * max(1.0, abs(v)):
                raise ValidationError(f"V is not Hermitian at ({a}, {b})")
        object.__setattr__(self, "entries", entries)

    @classmethod
    def hermitian(cls, couplings: Mapping, envelope: Callable = CONSTANT) -> "TransitionOperator":
        """Build from one triangle of elements, filling in the conjugates."""
        full = {}
        for (a, b), v in couplings.items():
            a, b = tuple(a), tuple(b)
            v = complex(v)
            for key, val in (((a, b), v), ((b, a), np.conj(v))):
                if key in full and abs(full[key] - val) > 1e-12 * max(1.0, abs(val)):
                    raise ValidationError(f"conflicting values for V[{key[0]}, {key[1]}]")
                full[key] = val
        return cls(full, envelope)

    def element(self, a: State, b: State) -> complex:
        return self.entries.get((tuple(a), tuple(b)), 0j)

    def scaled(self, s: float) -> "TransitionOperator":
        return TransitionOperator({k: s * v for k, v in self.entries.items()}, self.envelope)

    @property
    def is_constant(self) -> bool:
        return getattr(self.envelope, "is_constant", False)

    def finals(self, initial: State, level: Hashable) -> list:
        """States of ``level`` coupled to ``initial`` by a nonzero element."""
        out = []
        for (a, b), v in self.entries.items():
            if b == tuple(initial) and a[0] == level and v != 0:
                out.append(a)
        return sorted(out, key=repr)

    def check(self, sys: SystemSpec):
        for a, b in self.entries:
            sys.check_state(a)
            sys.check_state(b)


@dataclass(frozen=True)
class MeasurementSchedule:
    """Cycle of free evolution (``tau_f``) then measurement (``tau - tau_f``)."""

    tau: float
    tau_f: float = 0.0
    n_repeats: int = 1

    def __post_init__(self):
        if not self.tau > 0:
            raise ValidationError(f"cycle duration must be positive, got {self.tau}")
        if not 0 <= self.tau_f <= self.tau:
            raise ValidationError(f"free duration {self.tau_f} outside [0, {self.tau}]")
        if int(self.n_repeats) != self.n_repeats or self.n_repeats < 1:
            raise ValidationError(f"n_repeats must be a positive integer, got {self.n_repeats}")
        object.__setattr__(self, "n_repeats", int(self.n_repeats))

    @property
    def tau_m(self) -> float:
        return self.tau - self.tau_f


@dataclass(frozen=True)
class JumpResult:
    """Jump probability for one (initial, final) pair, split into the
    measurement, free-evolution and interference parts."""

    w_total: float
    w_m: float
    w_f: float
    w_i: float
    rate: float
    survival: float
    imag_residue: float = 0.0
