import threading

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from zeno.errors import ConfigError, ValidationError
from zeno.linalg import DensityMatrix, build_liouvillian, propagate
from zeno.measurement import (
    LevelPair,
    decoherence_function,
    kernel_apply,
    make_dephasing,
    make_projective,
    make_two_level_detector,
)

OFF = LevelPair.of_levels("i", "f")
DIAG = LevelPair.of_levels("i", "i")
LEVELS = ["i", "f"]


def shipped_models(tau=1.0):
    return [
        make_projective(tau),
        make_dephasing(0.7, tau),
        make_two_level_detector(1.3, 0.0, tau, "i", LEVELS),
        make_two_level_detector(0.8, 2.0, tau, "i", LEVELS),
    ]


def detector_state():
    return DensityMatrix(np.array([[0.7, 0.2 - 0.1j], [0.2 + 0.1j, 0.3]]))


def test_projective_examples():
    m = make_projective(2.0)
    assert decoherence_function(m, OFF, 1.0) == 1
    assert decoherence_function(m, OFF, 0.0) == 1
    assert decoherence_function(m, OFF, 2.5) == 0
    rho = np.ones((1, 1))
    assert kernel_apply(m, DIAG, 1.5, 0.2, rho)[0, 0] == 1
    with pytest.raises(ValidationError):
        make_projective(0.0)


def test_dephasing_examples():
    m = make_dephasing(2.0, 3.0)
    assert decoherence_function(m, OFF, 0.0) == 1
    assert decoherence_function(m, OFF, 1.0) == pytest.approx(np.exp(-2.0), rel=1e-14)
    assert decoherence_function(m, DIAG, 2.7) == 1
    rho = np.array([[0.8]])
    out = kernel_apply(m, OFF, 2.5, 1.0, rho)
    assert out[0, 0] == pytest.approx(0.8 * np.exp(-3.0), rel=1e-14)
    with pytest.raises(ValidationError):
        make_dephasing(-0.1, 1.0)


def test_detector_without_coupling_does_nothing():
    m = make_two_level_detector(0.0, 0.5, 1.0, "i", LEVELS)
    for pair in (OFF, DIAG, LevelPair.of_levels("f", "i")):
        t = np.linspace(0, 1, 7)
        assert np.abs(decoherence_function(m, pair, t) - 1).max() <= 1e-14


def test_detector_unknown_level():
    with pytest.raises(ConfigError):
        make_two_level_detector(1.0, 0.0, 1.0, "x", LEVELS)


def test_detector_diagonal_trace_preserved():
    m = make_two_level_detector(1.1, 0.6, 2.0, "i", LEVELS)
    for pair in (DIAG, LevelPair.of_levels("f", "f")):
        out = kernel_apply(m, pair, 1.7, 0.3, detector_state())
        assert abs(np.trace(out) - 1) <= 1e-10


def test_detector_suppression_grows_with_coupling():
    # overdamped detector: coherence decays as exp(-2 lambda^2 t / relax)
    tau = 1.0
    values = [
        abs(decoherence_function(make_two_level_detector(lam / tau, 50.0, tau, "i", LEVELS), OFF, tau))
        for lam in (0.5, 1.0, 2.0, 4.0)
    ]
    assert all(b < a for a, b in zip(values, values[1:]))
    assert values[-1] < 1


def test_detector_matches_direct_propagation():
    # conditioned evolution X -> -i (H_i X - X H_f) + D(X) propagated as a
    # Lindblad problem on the doubled space |i><f| x detector
    lam, gam, t = 0.9, 0.4, 1.7
    m = make_two_level_detector(lam, gam, 3.0, "i", LEVELS)
    sx = np.array([[0, 1], [1, 0]])
    lower = np.array([[0, 1], [0, 0]])
    P_i, P_f = np.diag([1.0, 0.0]), np.diag([0.0, 1.0])
    H = np.kron(P_i, lam * sx)
    L = build_liouvillian(H, [np.sqrt(gam) * np.kron(np.eye(2), lower)])
    rho0 = np.kron(np.array([[0, 1], [0, 0]]), np.diag([1.0, 0.0]))  # |i><f| x |g><g|
    out = propagate(L, rho0.astype(complex), t)
    block = out[0:2, 2:4]
    F_direct = np.trace(block)
    assert abs(decoherence_function(m, OFF, t) - F_direct) <= 1e-10


@pytest.mark.parametrize("model", shipped_models(), ids=lambda m: m.kind.value + str(m.relax_rate))
def test_decoherence_bounds(model):
    t = np.linspace(0, model.tau, 33)
    for pair in (OFF, DIAG, LevelPair.of_levels("f", "i"), LevelPair.of_levels("f", "f")):
        F = decoherence_function(model, pair, t)
        assert abs(F[0] - 1) <= 1e-12
        assert np.abs(F).max() <= 1 + 1e-10
        if pair.diagonal:
            assert np.abs(np.abs(F) - 1).max() <= 1e-10


@pytest.mark.parametrize("model", shipped_models()[1:], ids=lambda m: m.kind.value + str(m.relax_rate))
def test_off_diagonal_suppressed(model):
    assert abs(decoherence_function(model, OFF, model.tau)) < 1


def test_kernel_identity_at_equal_times():
    for m in shipped_models():
        rho = detector_state().entries if m.detector_dim == 2 else np.array([[1.0]])
        assert np.abs(kernel_apply(m, OFF, 0.6, 0.6, rho) - rho).max() <= 1e-15


def test_kernel_rejects_reversed_times():
    with pytest.raises(ValidationError):
        kernel_apply(make_dephasing(1.0, 1.0), OFF, 0.2, 0.5, np.ones((1, 1)))
    with pytest.raises(ValidationError):
        decoherence_function(make_dephasing(1.0, 1.0), OFF, -0.1)


@settings(max_examples=30, deadline=None)
@given(a=st.floats(-2, 2), b=st.floats(-2, 2), t1=st.floats(0, 1), frac=st.floats(0, 1))
def test_kernel_linear_in_detector_state(a, b, t1, frac):
    m = make_two_level_detector(1.2, 0.3, 1.0, "i", LEVELS)
    t2 = frac * t1
    r1 = detector_state().entries
    r2 = np.array([[0.1, 0.5j], [-0.5j, 0.9]])
    lhs = kernel_apply(m, OFF, t1, t2, a * r1 + b * r2)
    rhs = a * kernel_apply(m, OFF, t1, t2, r1) + b * kernel_apply(m, OFF, t1, t2, r2)
    assert np.abs(lhs - rhs).max() <= 1e-12


@settings(max_examples=30, deadline=None)
@given(t2=st.floats(0, 0.5), u=st.floats(0, 0.5), s=st.floats(0, 0.5))
def test_kernel_time_translation(t2, u, s):
    m = make_two_level_detector(1.2, 0.3, 2.0, "i", LEVELS)
    rho = detector_state().entries
    a = kernel_apply(m, OFF, t2 + u + s, t2 + s, rho)
    b = kernel_apply(m, OFF, t2 + u, t2, rho)
    assert np.abs(a - b).max() <= 1e-10


def test_exponential_form_matches_kernel():
    for m in shipped_models()[1:]:
        c, s = m.decoherence_exponentials("i", "f")
        t = np.linspace(0, 1, 11)
        F = (c[:, None] * np.exp(np.outer(s, t))).sum(axis=0)
        assert np.abs(F - decoherence_function(m, OFF, t)).max() <= 1e-12


def test_interchange_flag():
    assert make_projective(1.0).interchange_valid("i", "f")
    assert make_dephasing(1.0, 1.0).interchange_valid("i", "f")
    assert make_two_level_detector(1.0, 0.0, 1.0, "i").interchange_valid("i", "f")
    assert not make_two_level_detector(1.0, 0.5, 1.0, "i").interchange_valid("i", "f")


def test_cache_is_safe_under_threads():
    m = make_two_level_detector(1.0, 0.4, 1.0, "i", LEVELS)
    grids = [np.linspace(0, 1, 50 + k) for k in range(8)]
    ref = [m.superop("i", "f", g, 0 * g) for g in grids]
    m._cache.clear()
    results = {}

    def work(k):
        for _ in range(5):
            results[k] = m.superop("i", "f", grids[k], 0 * grids[k])

    threads = [threading.Thread(target=work, args=(k,)) for k in range(8)]
    for th in threads:
        th.start()
    for th in threads:
        th.join()
    for k in range(8):
        assert np.array_equal(results[k], ref[k])
