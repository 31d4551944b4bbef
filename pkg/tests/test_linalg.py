import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from zeno.errors import ConfigError, ValidationError
from zeno.linalg import (
    DensityMatrix,
    Propagator,
    build_liouvillian,
    compose,
    matrix_exp,
    propagate,
    propagate_time_dependent,
    unvec,
    vec,
)


def random_hermitian(rng, d, norm=1.0):
    a = rng.normal(size=(d, d)) + 1j * rng.normal(size=(d, d))
    h = a + a.conj().T
    return norm * h / np.linalg.norm(h, 2)


def random_state(rng, d):
    a = rng.normal(size=(d, d)) + 1j * rng.normal(size=(d, d))
    rho = a @ a.conj().T
    return DensityMatrix(rho / np.trace(rho))


def random_generator(rng, d, n_ops=2, scale=1.0):
    H = random_hermitian(rng, d, scale)
    ops = [scale ** 0.5 * (rng.normal(size=(d, d)) + 1j * rng.normal(size=(d, d))) / d for _ in range(n_ops)]
    return build_liouvillian(H, ops)


def test_vec_is_column_stacking():
    m = np.array([[1, 2], [3, 4]])
    assert vec(m).tolist() == [1, 3, 2, 4]
    assert np.array_equal(unvec(vec(m), 2), m)


def test_density_matrix_rejects_bad_input():
    with pytest.raises(ValidationError):
        DensityMatrix(np.array([[0.5, 0.1], [0.2, 0.5]]))
    with pytest.raises(ValidationError):
        DensityMatrix(np.diag([0.6, 0.6]))
    with pytest.raises(ValidationError):
        DensityMatrix(np.diag([1.2, -0.2]))


def test_zero_generator_acts_as_zero():
    L = build_liouvillian(np.zeros((3, 3)), [])
    rho = random_state(np.random.default_rng(0), 3)
    assert np.allclose(L(rho), 0)


def test_commutator_phase():
    w = 1.7
    L = build_liouvillian(np.diag([0.0, w]), [])
    rho = np.array([[0.5, 0.3], [0.3, 0.5]], dtype=complex)
    assert L(rho)[0, 1] == pytest.approx(1j * w * 0.3)


def test_amplitude_damping_rate():
    g = 0.8
    L = build_liouvillian(np.zeros((2, 2)), [np.sqrt(g) * np.array([[0, 1], [0, 0]])])
    rho = np.diag([0.25, 0.75]).astype(complex)
    assert L(rho)[1, 1].real == pytest.approx(-g * 0.75)
    # superoperator matrix must agree with the direct action
    S = L.superoperator()
    assert np.allclose(unvec(S @ vec(rho), 2), L(rho))


def test_build_liouvillian_errors():
    with pytest.raises(ValidationError):
        build_liouvillian(np.array([[0, 1], [0, 0]]), [])
    with pytest.raises(ConfigError):
        build_liouvillian(np.zeros((2, 2)), [np.zeros((3, 3))])
    with pytest.raises(ConfigError):
        build_liouvillian(np.zeros((65, 65)), [])


def test_matrix_exp_examples():
    assert np.allclose(matrix_exp(np.zeros((3, 3))), np.eye(3), atol=0)
    theta = np.array([0.3, -1.2, 2.5])
    assert np.allclose(matrix_exp(np.diag(1j * theta)), np.diag(np.exp(1j * theta)), atol=1e-15)
    rng = np.random.default_rng(1)
    M = rng.normal(size=(4, 4)) + 1j * rng.normal(size=(4, 4))
    M /= np.linalg.norm(M, 2)
    assert np.abs(matrix_exp(M) @ matrix_exp(-M) - np.eye(4)).max() <= 1e-12
    with pytest.raises(ValidationError):
        matrix_exp(np.array([[np.nan, 0], [0, 0]]))


def test_matrix_exp_large_norm_against_eigendecomposition():
    rng = np.random.default_rng(2)
    H = random_hermitian(rng, 6, 100.0)
    lam, U = np.linalg.eigh(H)
    ref = (U * np.exp(-1j * lam)) @ U.conj().T
    assert np.abs(matrix_exp(-1j * H) - ref).max() <= 1e-12 * 6


def test_propagate_examples():
    rng = np.random.default_rng(3)
    L = random_generator(rng, 3)
    rho = random_state(rng, 3)
    assert np.allclose(propagate(L, rho, 0.0).entries, rho.entries, atol=0)
    with pytest.raises(ValidationError):
        propagate(L, rho, -1.0)


@pytest.mark.parametrize("gt", [0.1, 1.0, 5.0])
def test_amplitude_damping_population(gt):
    g = 0.7
    L = build_liouvillian(np.diag([0.0, 1.3]), [np.sqrt(g) * np.array([[0, 1], [0, 0]])])
    rho = DensityMatrix(np.diag([0.4, 0.6]).astype(complex))
    out = propagate(L, rho, gt / g)
    assert abs(out.entries[1, 1].real - 0.6 * np.exp(-gt)) <= 1e-9


def test_pure_dephasing_coherence():
    G = 0.9
    P0, P1 = np.diag([1.0, 0.0]), np.diag([0.0, 1.0])
    # rate G on the coherence from projector collapse operators
    L = build_liouvillian(np.diag([0.0, 2.0]), [np.sqrt(G) * P0, np.sqrt(G) * P1])
    rho = DensityMatrix(np.array([[0.5, 0.4], [0.4, 0.5]], dtype=complex))
    for t in (0.3, 1.0, 4.0):
        assert abs(abs(propagate(L, rho, t).entries[0, 1]) - 0.4 * np.exp(-G * t)) <= 1e-12


def test_sparse_path_matches_dense_path():
    rng = np.random.default_rng(4)
    L = random_generator(rng, 20)
    rho = random_state(rng, 20)
    out = propagate(L, rho.entries, 1.3)
    ref = unvec(matrix_exp(L.superoperator() * 1.3) @ vec(rho.entries), 20)
    assert np.abs(out - ref).max() <= 1e-11


def test_compose_examples():
    rng = np.random.default_rng(5)
    L = random_generator(rng, 3)
    P1 = Propagator.from_liouvillian(L, 0.4)
    P2 = Propagator.from_liouvillian(L, 0.9)
    I = Propagator.identity(3)
    assert np.allclose(compose(I, P1).superoperator, P1.superoperator, atol=0)
    both = compose(P1, P2).superoperator
    assert np.abs(both - Propagator.from_liouvillian(L, 1.3).superoperator).max() <= 1e-10
    # distinct generators do not commute
    A = Propagator.from_liouvillian(build_liouvillian(np.array([[0, 1], [1, 0]]), []), 0.7)
    B = Propagator.from_liouvillian(build_liouvillian(np.zeros((2, 2)), [np.array([[0, 1], [0, 0]])]), 0.7)
    assert np.linalg.norm(compose(A, B).superoperator - compose(B, A).superoperator) > 1e-3
    with pytest.raises(ConfigError):
        compose(A, P1)


def test_compose_is_associative():
    rng = np.random.default_rng(6)
    Ps = [Propagator.from_liouvillian(random_generator(rng, 2), t) for t in (0.2, 0.5, 1.1)]
    left = compose(compose(Ps[0], Ps[1]), Ps[2]).superoperator
    right = compose(Ps[0], compose(Ps[1], Ps[2])).superoperator
    assert np.abs(left - right).max() <= 1e-13


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), d=st.integers(2, 6), t=st.floats(0.0, 100.0))
def test_trace_and_hermiticity_preserved(seed, d, t):
    rng = np.random.default_rng(seed)
    L = random_generator(rng, d, scale=rng.uniform(0.1, 10.0) / d)
    rho = random_state(rng, d)
    out = propagate(L, rho, t).entries
    assert abs(np.trace(out) - 1) <= 1e-10
    assert np.abs(out - out.conj().T).max() <= 1e-10


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), s=st.floats(0.0, 5.0), t=st.floats(0.0, 5.0))
def test_semigroup(seed, s, t):
    rng = np.random.default_rng(seed)
    L = random_generator(rng, 3)
    rho = random_state(rng, 3)
    two_step = propagate(L, propagate(L, rho, s), t).entries
    assert np.abs(two_step - propagate(L, rho, s + t).entries).max() <= 1e-9


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), a=st.floats(-3, 3), b=st.floats(-3, 3), t=st.floats(0, 10))
def test_linearity(seed, a, b, t):
    rng = np.random.default_rng(seed)
    L = random_generator(rng, 3)
    r1, r2 = random_state(rng, 3).entries, random_state(rng, 3).entries
    lhs = propagate(L, a * r1 + b * r2, t)
    rhs = a * propagate(L, r1, t) + b * propagate(L, r2, t)
    assert np.abs(lhs - rhs).max() <= 1e-10


def test_time_dependent_constant_generator_is_exact():
    rng = np.random.default_rng(7)
    L = random_generator(rng, 3)
    rho = random_state(rng, 3)
    out = propagate_time_dependent(lambda t: L, rho, 0.0, 2.0)
    assert np.abs(out.entries - propagate(L, rho, 2.0).entries).max() <= 1e-12


def test_time_dependent_driven_qubit():
    # resonant drive cos(w t) sigma_x in the lab frame, weak amplitude
    w, a = 1.0, 0.05
    sx = np.array([[0, 1], [1, 0]])

    def gen(t):
        return build_liouvillian(np.diag([0.0, w]) + a * np.cos(w * t) * sx, [])

    rho = DensityMatrix.basis(2, 0)
    T = 10.0
    out = propagate_time_dependent(gen, rho, 0.0, T, tol=1e-8)
    # rotating-wave estimate sin^2(a T / 2), corrections of order a / w
    assert out.entries[1, 1].real == pytest.approx(np.sin(a * T / 2) ** 2, rel=0.1)
    assert abs(np.trace(out.entries) - 1) <= 1e-10
