"""Scenario documents: parsing, validation, execution and CSV output.

A scenario is a JSON object with the keys ``system``, ``perturbation``,
``measurement``, ``schedule`` and optionally ``spectrum``, ``sweep``,
``outputs``, ``name`` and ``unit_scale``.  The JSON schema lives next to
this module in ``data/scenario.schema.json``.
"""
from __future__ import annotations

import io
import json
import logging
import math
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import lru_cache
from importlib import resources
from pathlib import Path
from typing import Optional

import jsonschema
import numpy as np

from .errors import ConfigError, ParseError, ValidationError, ZenoError
from .jumps import DEFAULT_GRID, jump_probabilities, pulsed_jump_probability, survival_power
from .measurement import LevelPair, make_dephasing, make_projective, make_two_level_detector
from .spectral import (
    broadening_profile,
    classify,
    double_lorentzian,
    flat_window,
    golden_rule_rate,
    lorentzian,
    overlap_decay_rate,
    sweep_and_classify,
    tabulated,
)
from .system import Envelope, MeasurementSchedule, SystemSpec, TransitionOperator

log = logging.getLogger(__name__)

ARTIFACTS = ("components", "survival", "rates", "profile")
CSV_FILES = {
    "rates": "rates.csv",
    "profile": "profile.csv",
    "components": "components.csv",
    "survival": "survival.csv",
}
MIN_SWEEP_POINTS = 8

_MODEL_KEYS = {
    "projective": (),
    "dephasing": ("gamma",),
    "two_level_detector": ("coupling", "relax_rate", "measured_level"),
}
_SPECTRUM_KEYS = {
    "lorentzian": ("center", "half_width", "strength"),
    "double_lorentzian": ("components",),
    "flat_window": ("lo", "hi", "strength"),
    "tabulated": ("omega", "values"),
}


@lru_cache(maxsize=None)
def load_schema() -> dict:
    text = resources.files("zeno").joinpath("data/scenario.schema.json").read_text(encoding="utf-8")
    return json.loads(text)


def _relaxed(schema):
    """Copy of the schema that tolerates unknown keys."""
    if isinstance(schema, dict):
        return {k: _relaxed(v) for k, v in schema.items() if k != "additionalProperties"}
    if isinstance(schema, list):
        return [_relaxed(v) for v in schema]
    return schema


# --- scenario model ------------------------------------------------------


@dataclass(frozen=True)
class MeasurementSpec:
    kind: str
    gamma: Optional[float] = None
    coupling: Optional[float] = None
    relax_rate: Optional[float] = None
    measured_level: Optional[str] = None


@dataclass(frozen=True)
class SpectrumSpec:
    kind: str
    final_level: str
    params: tuple  # sorted (key, value) pairs, lists stored as tuples


@dataclass(frozen=True)
class SweepSpec:
    tau_min: float
    tau_max: float
    points: int
    spacing: str = "log"

    def taus(self) -> np.ndarray:
        if self.spacing == "log":
            return np.geomspace(self.tau_min, self.tau_max, self.points)
        return np.linspace(self.tau_min, self.tau_max, self.points)


@dataclass(frozen=True)
class OutputSpec:
    artifacts: tuple
    profile_points: int = 201
    profile_halfwidth: Optional[float] = None


@dataclass(frozen=True)
class Scenario:
    name: str
    levels: tuple
    channels: tuple
    initial: tuple
    elements: tuple  # (bra, ket, complex value)
    envelope: tuple  # (kind, sorted params)
    measurement: MeasurementSpec
    schedule: MeasurementSchedule
    spectrum: Optional[SpectrumSpec] = None
    sweep: Optional[SweepSpec] = None
    outputs: OutputSpec = OutputSpec(("components", "survival"))
    unit_scale: object = None

    # builders for engine objects
    def system(self) -> SystemSpec:
        return SystemSpec(self.levels, self.channels)

    def envelope_obj(self) -> Envelope:
        return Envelope(self.envelope[0], dict(self.envelope[1]))

    def perturbation(self) -> TransitionOperator:
        return TransitionOperator.hermitian({(b, k): v for b, k, v in self.elements}, self.envelope_obj())

    def model(self, tau: float):
        m = self.measurement
        if m.kind == "projective":
            return make_projective(tau)
        if m.kind == "dephasing":
            return make_dephasing(m.gamma, tau)
        return make_two_level_detector(m.coupling, m.relax_rate, tau, m.measured_level,
                                       [lab for lab, _ in self.levels])

    def spectrum_obj(self):
        if self.spectrum is None:
            return None
        p = dict(self.spectrum.params)
        kind = self.spectrum.kind
        if kind == "lorentzian":
            return lorentzian(p["center"], p["half_width"], p["strength"])
        if kind == "double_lorentzian":
            return double_lorentzian([dict(c) for c in p["components"]])
        if kind == "flat_window":
            return flat_window(p["lo"], p["hi"], p["strength"])
        return tabulated(p["omega"], p["values"])

    def final_level(self) -> str:
        """Level used for the line profile."""
        if self.spectrum is not None:
            return self.spectrum.final_level
        others = [lab for lab, _ in self.levels if lab != self.initial[0]]
        V = self.perturbation()
        for lab in others:
            if V.finals(self.initial, lab):
                return lab
        if len(others) == 1:
            return others[0]
        raise ValidationError("cannot tell which level the profile refers to; add a spectrum.final_level")

    def omega_if(self) -> float:
        sys = self.system()
        return sys.energy(self.initial) - sys.level_energy(self.final_level())


def _tupled(x):
    if isinstance(x, list):
        return tuple(_tupled(v) for v in x)
    if isinstance(x, dict):
        return tuple(sorted((k, _tupled(v)) for k, v in x.items()))
    return x


def _untupled_params(params: tuple) -> dict:
    out = {}
    for k, v in params:
        if k == "components":
            out[k] = [dict(c) for c in v]
        elif isinstance(v, tuple):
            out[k] = list(v)
        else:
            out[k] = v
    return out


# --- parsing -------------------------------------------------------------


def _schema_error(err: jsonschema.ValidationError) -> ParseError:
    path = ".".join(str(p) for p in err.absolute_path)
    if err.validator == "required":
        m = re.match(r"'([^']+)' is a required property", err.message)
        key = m.group(1) if m else "?"
        return ParseError(f"missing required key '{key}'", path=f"{path}.{key}" if path else key)
    if err.validator == "additionalProperties":
        extra = sorted(set(err.instance) - set(err.schema.get("properties", {})))
        where = ", ".join(f"{path}.{k}" if path else k for k in extra)
        return ParseError(f"unknown key(s) {extra}", path=where)
    return ParseError(err.message, path=path or "<root>")


def _require(obj: dict, keys, where: str):
    for k in keys:
        if k not in obj:
            raise ParseError(f"missing required key '{k}'", path=f"{where}.{k}")


def _wrap(where: str, fn, *args):
    try:
        return fn(*args)
    except (ValidationError, ConfigError) as exc:
        raise ValidationError(f"{where}: {exc}") from exc


def parse_scenario(text: str, strict: bool = True) -> Scenario:
    """Parse and fully validate a scenario document."""
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"invalid JSON: {exc.msg}", path=f"line {exc.lineno} column {exc.colno}") from exc
    if not isinstance(doc, dict):
        raise ParseError("scenario must be a JSON object", path="<root>")
    schema = load_schema() if strict else _relaxed(load_schema())
    validator = jsonschema.Draft202012Validator(schema)
    errors = sorted(validator.iter_errors(doc), key=lambda e: (list(e.absolute_path), e.message))
    if errors:
        raise _schema_error(jsonschema.exceptions.best_match(errors))
    return _build(doc)


def _build(doc: dict) -> Scenario:
    sysd = doc["system"]
    levels = tuple((d["label"], float(d["energy"])) for d in sysd["levels"])
    channels = tuple((d["label"], float(d["energy"])) for d in sysd.get("channels", [{"label": "0", "energy": 0.0}]))
    initial = tuple(sysd.get("initial", [levels[0][0], channels[0][0]]))
    sys = _wrap("system", SystemSpec, levels, channels)
    _wrap("system.initial", sys.check_state, initial)

    pert = doc["perturbation"]
    elements = []
    for k, e in enumerate(pert.get("elements", [])):
        v = e["value"]
        value = complex(v[0], v[1]) if isinstance(v, list) else complex(v)
        elements.append((tuple(e["bra"]), tuple(e["ket"]), value))
    env = dict(pert.get("envelope", {"kind": "constant"}))
    env_kind = env.pop("kind")
    envelope = (env_kind, tuple(sorted((k, float(v)) for k, v in env.items())))
    _wrap("perturbation.envelope", Envelope, env_kind, env)
    V = _wrap("perturbation.elements", TransitionOperator.hermitian,
              {(b, k): v for b, k, v in elements})
    _wrap("perturbation.elements", V.check, sys)

    md = doc["measurement"]
    _require(md, _MODEL_KEYS[md["kind"]], "measurement")
    meas = MeasurementSpec(
        md["kind"],
        *(None if md.get(k) is None else float(md[k]) for k in ("gamma", "coupling", "relax_rate")),
        md.get("measured_level"),
    )

    sd = doc["schedule"]
    schedule = _wrap("schedule", MeasurementSchedule, float(sd["tau"]), float(sd.get("tau_f", 0.0)),
                     sd.get("n_repeats", 1))

    spectrum = None
    if "spectrum" in doc:
        spd = dict(doc["spectrum"])
        _require(spd, _SPECTRUM_KEYS[spd["kind"]], "spectrum")
        params = {k: spd[k] for k in _SPECTRUM_KEYS[spd["kind"]]}
        spectrum = SpectrumSpec(spd["kind"], spd["final_level"], _tupled(params))
        if elements:
            raise ValidationError(
                "perturbation.elements: must be empty when a spectrum drives the rate "
                "(the spectrum already carries the couplings)"
            )
        _wrap("spectrum.final_level", sys.level_energy, spectrum.final_level)
        if spectrum.final_level == initial[0]:
            raise ValidationError("spectrum.final_level: must differ from the initial level")
        if schedule.tau_f > 0:
            raise ValidationError("schedule.tau_f: spectral rates need measurement over the whole cycle")

    sweep = None
    if "sweep" in doc:
        sw = doc["sweep"]
        sweep = SweepSpec(float(sw["tau_min"]), float(sw["tau_max"]), int(sw["points"]), sw.get("spacing", "log"))
        if sweep.points < MIN_SWEEP_POINTS:
            raise ValidationError(f"sweep.points: need at least {MIN_SWEEP_POINTS}, got {sweep.points}")
        if not 0 < sweep.tau_min < sweep.tau_max:
            raise ValidationError(
                f"sweep: need 0 < tau_min < tau_max, got [{sweep.tau_min}, {sweep.tau_max}]"
            )
        if schedule.tau_f > 0:
            raise ValidationError("sweep: sweeps need tau_f = 0")

    od = doc.get("outputs", {})
    default = ["components", "survival"]
    if sweep is not None:
        default.append("rates")
    if spectrum is not None:
        default.append("profile")
    requested = od.get("artifacts", default)
    artifacts = tuple(a for a in ARTIFACTS if a in requested)
    if "rates" in artifacts and sweep is None:
        raise ValidationError("outputs.artifacts: 'rates' needs a sweep section")
    hw = od.get("profile_halfwidth")
    outputs = OutputSpec(artifacts, int(od.get("profile_points", 201)), None if hw is None else float(hw))
    if outputs.profile_points < 2:
        raise ValidationError("outputs.profile_points: need at least 2")
    if hw is not None and not hw > 0:
        raise ValidationError("outputs.profile_halfwidth: must be positive")

    sc = Scenario(
        name=doc.get("name", "scenario"),
        levels=levels,
        channels=channels,
        initial=initial,
        elements=tuple(elements),
        envelope=envelope,
        measurement=meas,
        schedule=schedule,
        spectrum=spectrum,
        sweep=sweep,
        outputs=outputs,
        unit_scale=doc.get("unit_scale"),
    )
    _wrap("measurement", sc.model, schedule.tau)
    if spectrum is not None:
        _wrap("spectrum", sc.spectrum_obj)
    return sc


def to_document(sc: Scenario) -> dict:
    def value(v: complex):
        return v.real if v.imag == 0 else [v.real, v.imag]

    env = {"kind": sc.envelope[0], **dict(sc.envelope[1])}
    meas = {"kind": sc.measurement.kind}
    for k in ("gamma", "coupling", "relax_rate", "measured_level"):
        if getattr(sc.measurement, k) is not None:
            meas[k] = getattr(sc.measurement, k)
    doc = {
        "name": sc.name,
        "system": {
            "levels": [{"label": l, "energy": e} for l, e in sc.levels],
            "channels": [{"label": l, "energy": e} for l, e in sc.channels],
            "initial": list(sc.initial),
        },
        "perturbation": {
            "elements": [{"bra": list(b), "ket": list(k), "value": value(v)} for b, k, v in sc.elements],
            "envelope": env,
        },
        "measurement": meas,
        "schedule": {"tau": sc.schedule.tau, "tau_f": sc.schedule.tau_f, "n_repeats": sc.schedule.n_repeats},
        "outputs": {
            "artifacts": list(sc.outputs.artifacts),
            "profile_points": sc.outputs.profile_points,
            "profile_halfwidth": sc.outputs.profile_halfwidth,
        },
    }
    if sc.unit_scale is not None:
        doc["unit_scale"] = sc.unit_scale
    if sc.spectrum is not None:
        doc["spectrum"] = {"kind": sc.spectrum.kind, "final_level": sc.spectrum.final_level,
                           **_untupled_params(sc.spectrum.params)}
    if sc.sweep is not None:
        doc["sweep"] = {"tau_min": sc.sweep.tau_min, "tau_max": sc.sweep.tau_max,
                        "points": sc.sweep.points, "spacing": sc.sweep.spacing}
    return doc


def serialize(sc: Scenario) -> str:
    return json.dumps(to_document(sc), indent=2, sort_keys=True) + "\n"


def load_scenario(path, strict: bool = True) -> Scenario:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except UnicodeDecodeError as exc:
        raise ParseError("scenario is not valid UTF-8", path=str(path)) from exc
    return parse_scenario(text, strict=strict)


# --- execution -----------------------------------------------------------


@dataclass
class Report:
    name: str
    components: list = field(default_factory=list)  # (channel, w_total, w_m, w_f, w_i)
    total_w: float = 0.0
    rate: float = 0.0
    survival: list = field(default_factory=list)  # (n, exp form, power form)
    rates: Optional[list] = None  # (tau, rate, rate_golden_rule, regime)
    profile: Optional[tuple] = None  # (omega, P)
    rate_overlap: Optional[float] = None
    rate_golden_rule: Optional[float] = None
    unit_scale: object = None
    log: list = field(default_factory=list)


def _channel_name(state) -> str:
    return f"{state[0]}:{state[1]}"


def _discrete_components(sc: Scenario, tau: float, grid: int):
    sys, V = sc.system(), sc.perturbation()
    finals = [s for s in sys.states() if s[0] != sc.initial[0]]
    model = sc.model(tau)
    if sc.schedule.tau_f > 0:
        sched = MeasurementSchedule(tau, sc.schedule.tau_f, sc.schedule.n_repeats)
        rows = []
        for f in finals:
            r = pulsed_jump_probability(sys, V, model, sched, sc.initial, f, grid)
            rows.append((_channel_name(f), r.w_total, r.w_m, r.w_f, r.w_i))
        return rows
    ws = jump_probabilities(sys, V, model, sc.initial, finals, tau, grid)
    return [(_channel_name(f), ws[f], ws[f], 0.0, 0.0) for f in finals]


def _profile_samples(sc: Scenario):
    tau = sc.schedule.tau
    w0 = sc.omega_if()
    pair = LevelPair.of_levels(sc.initial[0], sc.final_level())
    P = broadening_profile(sc.model(tau), pair, w0, tau)
    hw = sc.outputs.profile_halfwidth or 20 * math.pi / tau
    omega = np.linspace(w0 - hw, w0 + hw, sc.outputs.profile_points)
    return P, (omega, P(omega))


def run_scenario(sc: Scenario, grid: int = DEFAULT_GRID, workers: int = 1, artifacts=None) -> Report:
    """Compute every requested quantity of a scenario."""
    artifacts = sc.outputs.artifacts if artifacts is None else tuple(artifacts)
    rep = Report(sc.name, unit_scale=sc.unit_scale)
    tau = sc.schedule.tau
    n = sc.schedule.n_repeats
    G = sc.spectrum_obj()

    if G is not None:
        pair = LevelPair.of_levels(sc.initial[0], sc.final_level())
        P = broadening_profile(sc.model(tau), pair, sc.omega_if(), tau)
        rep.rate_overlap = overlap_decay_rate(G, P)
        rep.rate_golden_rule = golden_rule_rate(G, sc.omega_if())
        rep.rate = rep.rate_overlap
        rep.total_w = rep.rate * tau
        if "components" in artifacts:
            rep.log.append("components: no discrete channels when a spectrum drives the rate")
    elif any(a in artifacts for a in ("components", "survival")):
        rep.components = _discrete_components(sc, tau, grid)
        rep.total_w = float(sum(r[1] for r in rep.components))
        rep.rate = rep.total_w / tau

    if "survival" in artifacts:
        rep.survival = [
            (k, math.exp(-rep.rate * k * tau), survival_power(rep.total_w, k) if rep.total_w <= 1 else 0.0)
            for k in range(n + 1)
        ]

    if "profile" in artifacts:
        _, rep.profile = _profile_samples(sc)

    if "rates" in artifacts:
        if sc.sweep is None:
            raise ValidationError("rates requested but the scenario has no sweep")
        taus = sc.sweep.taus()
        if G is not None:
            pair = LevelPair.of_levels(sc.initial[0], sc.final_level())
            curve = sweep_and_classify(G, sc.model, sc.omega_if(), taus, pair, workers=workers)
            labels = curve.point_labels()
            rep.rates = [(float(t), float(r), curve.rate_golden_rule, lab)
                         for t, r, lab in zip(curve.taus, curve.rates, labels)]
        else:
            def rate_at(t):
                return sum(r[1] for r in _discrete_components(sc, float(t), grid)) / t

            if workers > 1:
                with ThreadPoolExecutor(max_workers=workers) as pool:
                    rates = list(pool.map(rate_at, taus))
            else:
                rates = [rate_at(t) for t in taus]
            labels = list(classify(taus, rates))
            labels.append(labels[-1])
            rep.rates = [(float(t), float(r), float("nan"), lab) for t, r, lab in zip(taus, rates, labels)]
            rep.log.append("rates: discrete channels have no golden-rule reference; column set to nan")
    return rep


# --- output --------------------------------------------------------------


def _fmt(x) -> str:
    if isinstance(x, str):
        return x
    if isinstance(x, (int, np.integer)) and not isinstance(x, bool):
        return str(int(x))
    return f"{float(x):.17g}"


def _table(header, rows) -> str:
    buf = io.StringIO()
    buf.write(",".join(header) + "\n")
    for row in rows:
        buf.write(",".join(_fmt(v) for v in row) + "\n")
    return buf.getvalue()


def csv_texts(report: Report, artifacts=ARTIFACTS) -> dict:
    """CSV bodies keyed by file name; empty sections are left out."""
    out = {}
    if "rates" in artifacts and report.rates:
        out["rates.csv"] = _table(("tau", "rate", "rate_golden_rule", "regime"), report.rates)
    if "profile" in artifacts and report.profile is not None:
        omega, P = report.profile
        out["profile.csv"] = _table(("omega", "P"), zip(omega, P))
    if "components" in artifacts and report.components:
        out["components.csv"] = _table(("channel", "w_total", "w_m", "w_f", "w_i"), report.components)
    if "survival" in artifacts and report.survival:
        out["survival.csv"] = _table(("n", "survival_exp", "survival_power"), report.survival)
    return out


def emit_csv(report: Report, out_dir, artifacts=ARTIFACTS) -> list:
    """Write the requested CSV files; returns the written paths."""
    out_dir = Path(out_dir)
    texts = csv_texts(report, artifacts)
    for name in artifacts:
        fname = CSV_FILES[name]
        if fname not in texts:
            msg = f"{fname}: section empty, file not written"
            report.log.append(msg)
            log.info(msg)
    written = []
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
        for fname, text in texts.items():
            path = out_dir / fname
            with open(path, "w", encoding="utf-8", newline="") as fh:
                fh.write(text)
            written.append(path)
    except OSError as exc:
        raise ZenoError(f"cannot write output under {out_dir}: {exc}") from exc
    return written
