"""Decay of repeatedly measured quantum systems.

Second-order jump probabilities under non-demolition measurements, the
measurement-broadened line profile, overlap decay rates with Zeno and
anti-Zeno classification, and an exact brute-force reference.
"""
from .errors import (
    AssumptionError,
    ConfigError,
    InconclusiveError,
    NumericsError,
    ParseError,
    PerturbativeWarning,
    ValidationError,
    ZenoError,
)
from .jumps import (
    decay_rate,
    first_order_state,
    free_jump_probability,
    jump_probabilities,
    jump_probability,
    pulsed_jump_probability,
    survival,
    survival_power,
)
from .linalg import DensityMatrix, Liouvillian, Propagator, build_liouvillian, compose, matrix_exp, propagate
from .measurement import (
    Kind,
    LevelPair,
    MeasurementModel,
    decoherence_function,
    kernel_apply,
    make_dephasing,
    make_projective,
    make_two_level_detector,
)
from .oracle import CompositeScenario, convergence_fit, decay_scenario, exact_jump_probability, golden_rule_rate, verify
from .scenario import Scenario, emit_csv, load_scenario, parse_scenario, run_scenario, serialize
from .spectral import (
    BroadeningProfile,
    ReservoirSpectrum,
    RegimeCurve,
    broadening_profile,
    classify,
    double_lorentzian,
    flat_window,
    lorentzian,
    overlap_decay_rate,
    sinc_profile,
    spectrum_eval,
    sweep_and_classify,
    tabulated,
)
from .system import Envelope, JumpResult, MeasurementSchedule, SystemSpec, TransitionOperator

__version__ = "0.1.0"
