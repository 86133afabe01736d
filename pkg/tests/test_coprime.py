import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import fir_close, scalar_plant
from parametrix.coprime import (
    StabilizingGains, deadbeat_gains, doubly_coprime_general, doubly_coprime_stable,
    doubly_coprime_state_feedback, riccati_gains, verify_bezout,
)
from parametrix.lti import FIR, PreconditionError, StateSpacePlant, internal_stability, markov_expand, spectral_radius, unit_circle_points
from parametrix.maps import YoulaParam, youla_controller
from parametrix.plants import random_plant
from parametrix.synthesis import chain_adjacency, example1_plant


def coeffs(g):
    return g.coeffs.ravel()


# -- gains ------------------------------------------------------------------

def test_deadbeat_gains_scalar():
    g = deadbeat_gains(scalar_plant(0.5))
    assert g.mode == "deadbeat"
    assert g.F[0, 0] == pytest.approx(-0.5) and g.L[0, 0] == pytest.approx(-0.5)


def test_deadbeat_gains_identity():
    I = np.eye(2)
    g = deadbeat_gains(StateSpacePlant(A=I, B1=I, B2=I, C1=I, C2=I))
    assert np.allclose(g.F, -I) and np.allclose(g.L, -I)


def test_deadbeat_gains_already_nilpotent():
    A = np.array([[0.0, 1.0], [0.0, 0.0]])
    P = StateSpacePlant(A=A, B1=np.eye(2), B2=[[0.0], [1.0]], C1=np.eye(2), C2=[[1.0, 0.0]])
    g = deadbeat_gains(P)
    AF, AL = g.closed_loop(P)
    assert np.allclose(np.linalg.matrix_power(AF, 2), 0, atol=1e-12)
    assert np.allclose(np.linalg.matrix_power(AL, 2), 0, atol=1e-12)
    # F = 0 is itself a valid deadbeat gain here
    assert spectral_radius(A + P.B2 @ np.zeros((1, 2))) == 0


def test_uncontrollable_but_stabilizable_falls_back_to_riccati():
    A = np.diag([1.5, 0.3])
    P = StateSpacePlant(A=A, B1=np.eye(2), B2=[[1.0], [0.0]], C1=np.eye(2), C2=np.eye(2))
    g = deadbeat_gains(P)
    assert g.mode == "mixed"
    AF, AL = g.closed_loop(P)
    assert spectral_radius(AF) < 1 and spectral_radius(AL) < 1e-12


def test_riccati_gains_stabilize():
    P = random_plant(np.random.default_rng(3), n=3)
    AF, AL = riccati_gains(P).closed_loop(P)
    assert spectral_radius(AF) < 1 and spectral_radius(AL) < 1


# -- general observer-based factorization -----------------------------------

def test_general_scalar_deadbeat_factors():
    P = scalar_plant(0.5)
    f = doubly_coprime_general(P, deadbeat_gains(P))
    assert np.allclose(coeffs(f.Mr.trim()), [1, -0.5])
    assert np.allclose(coeffs(f.Nr.trim()), [0, 1])
    for z in unit_circle_points(16):
        p22 = 1.0 / (z - 0.5)
        assert abs(f.Nr.eval(z)[0, 0] / f.Mr.eval(z)[0, 0] - p22) < 1e-12


def test_general_with_zero_gains_on_stable_plant():
    P = scalar_plant(0.5)
    f = doubly_coprime_general(P, StabilizingGains(np.zeros((1, 1)), np.zeros((1, 1)), "given"))
    assert fir_close(f.Mr, FIR.identity(1)) < 1e-14
    assert fir_close(f.Nr, markov_expand(P.P22, f.Nr.horizon)) < 1e-14


def test_general_rejects_non_stabilizing_gains():
    P = scalar_plant(2.0)
    with pytest.raises(PreconditionError):
        doubly_coprime_general(P, StabilizingGains(np.zeros((1, 1)), np.zeros((1, 1))))


def test_general_example1_bezout():
    P = example1_plant(3)
    f = doubly_coprime_general(P)
    assert verify_bezout(f, P, 16).max_residual < 1e-10


def test_general_with_state_feedback_gains_equals_state_feedback_factors():
    P = example1_plant(3)
    A = P.A
    f = doubly_coprime_general(P, StabilizingGains(-A, -A, "given"), offset=A)
    g = doubly_coprime_state_feedback(P)
    for (k, a), (_, b) in zip(f.items(), g.items()):
        assert fir_close(a, b) < 1e-14, k


# -- trivial factorization of a stable plant ---------------------------------

def test_stable_factors_scalar():
    f = doubly_coprime_stable(scalar_plant(0.5))
    for k in ("Ur", "Mr", "Ul", "Ml"):
        assert fir_close(getattr(f, k), FIR.identity(1)) == 0
    assert f.Vr.max_abs() == 0 and f.Vl.max_abs() == 0
    assert np.allclose(coeffs(f.Nr)[:5], [0, 1, 0.5, 0.25, 0.125])
    assert f.Nr.residual < 1e-14


def test_stable_factors_nilpotent_plant():
    P = StateSpacePlant(A=0.0, B1=1.0, B2=3.0, C1=1.0, C2=2.0)
    f = doubly_coprime_stable(P)
    assert np.allclose(coeffs(f.Nr.trim()), [0, 6])


def test_stable_factors_reject_unstable():
    with pytest.raises(PreconditionError):
        doubly_coprime_stable(scalar_plant(1.1))


# -- state-feedback factorization --------------------------------------------

def test_state_feedback_factors_scalar():
    f = doubly_coprime_state_feedback(scalar_plant(0.5))
    assert np.allclose(coeffs(f.Mr), [1, -0.5])
    assert np.allclose(coeffs(f.Nr), [0, 1])
    assert np.allclose(coeffs(f.Vr), [-0.5])
    assert np.allclose(coeffs(f.Ur), [1])


def test_state_feedback_factors_zero_A_collapse():
    f = doubly_coprime_state_feedback(example1_plant(A=np.zeros((2, 2))))
    assert fir_close(f.Mr, FIR.identity(2)) == 0
    assert f.Vr.max_abs() == 0


def test_state_feedback_chain_bezout():
    P = example1_plant(3)
    assert verify_bezout(doubly_coprime_state_feedback(P), P).max_residual < 1e-12


def test_state_feedback_needs_identity_io():
    with pytest.raises(PreconditionError):
        doubly_coprime_state_feedback(scalar_plant(0.5, b2=2.0))


# -- Bezout verification -----------------------------------------------------

def test_verify_bezout_stable_scalar():
    P = scalar_plant(0.5)
    rep = verify_bezout(doubly_coprime_stable(P), P, 16)
    assert rep.passed and rep.max_residual < 1e-12


@given(st.integers(0, 2**32 - 1))
def test_state_feedback_factors_pass_for_any_A(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(1, 5))
    A = rng.standard_normal((n, n)) * rng.uniform(0.1, 2.0)
    P = example1_plant(A=A)
    assert verify_bezout(doubly_coprime_state_feedback(P), P).passed


def test_verify_bezout_detects_perturbation():
    P = scalar_plant(0.5)
    f = doubly_coprime_state_feedback(P)
    bad = f.replace(Vr=f.Vr + FIR.const([[0.1]]))
    assert not verify_bezout(bad, P).passed


@given(st.integers(0, 2**32 - 1))
def test_deadbeat_factors_are_exact(seed):
    P = random_plant(np.random.default_rng(seed))
    f = doubly_coprime_general(P, deadbeat_gains(P))
    assert f.horizon <= 2 * P.n  # polynomial factors, never a long expansion
    assert verify_bezout(f, P, 16).max_residual <= 1e-10


@given(st.integers(0, 2**32 - 1))
def test_central_controller_is_stabilizing(seed):
    P = random_plant(np.random.default_rng(seed), max_n=3)
    f = doubly_coprime_general(P)
    K = youla_controller(f, YoulaParam(FIR.zeros(P.nu, P.ny))).realize()
    assert internal_stability(P, K)


def test_chain_adjacency_is_tridiagonal():
    G = chain_adjacency(4)
    assert np.array_equal(G, np.array([[1, 1, 0, 0], [1, 1, 1, 0], [0, 1, 1, 1], [0, 0, 1, 1]]))
