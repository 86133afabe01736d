import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import fir_close
from parametrix.lsq import InfeasibleError, LeastSquaresProgram, VarSpace, solve_equality_ls
from parametrix.lti import FIR, resolvent_left


def scalar_program():
    sp = VarSpace()
    x = sp.add("x", (2, 1), 0)
    return sp, x, LeastSquaresProgram(sp)


def test_unconstrained_scalar():
    sp = VarSpace()
    x = sp.add("x", (1, 1), 0)
    prog = LeastSquaresProgram(sp)
    prog.minimize(x - FIR.const([[1.0]]))
    sol = solve_equality_ls(prog)
    assert sol.x == pytest.approx([1.0])
    assert sol.objective == pytest.approx(0.0, abs=1e-24)


def test_min_norm_on_a_line():
    sp, x, prog = scalar_program()
    prog.minimize(x)
    prog.require_zero(x.lmul([[1.0, 1.0]]) - FIR.const([[2.0]]), "sum")
    sol = solve_equality_ls(prog)
    assert np.allclose(sol.x, [1.0, 1.0])
    assert sol.cost() == pytest.approx(np.sqrt(2))


def test_flat_objective_returns_minimum_norm_point():
    sp, x, prog = scalar_program()
    prog.minimize(x.lmul([[1.0, -1.0]]))
    prog.require_zero(x.lmul([[1.0, 1.0]]) - FIR.const([[2.0]]))
    assert np.allclose(solve_equality_ls(prog).x, [1.0, 1.0])
    sp, x, prog = scalar_program()
    prog.minimize(x.lmul([[0.0, 0.0]]))  # objective independent of x
    assert np.allclose(solve_equality_ls(prog).x, 0)


def test_redundant_rows_are_dropped():
    sp, x, prog = scalar_program()
    prog.minimize(x)
    e = x.lmul([[1.0, 1.0]]) - FIR.const([[2.0]])
    prog.require_zero(e, "a")
    prog.require_zero(e * 3.0, "b")
    sol = solve_equality_ls(prog)
    assert sol.rank == 1 and sol.redundant_rows == 1
    assert np.allclose(sol.x, [1.0, 1.0])


def test_inconsistent_constraints_raise_with_certificate():
    sp, x, prog = scalar_program()
    prog.require_zero(x.lmul([[1.0, 1.0]]) - FIR.const([[2.0]]))
    prog.require_zero(x.lmul([[1.0, 1.0]]) - FIR.const([[3.0]]))
    with pytest.raises(InfeasibleError) as err:
        solve_equality_ls(prog)
    assert err.value.certificate > 0.1


def test_strictly_proper_variable_has_zero_leading_coefficient():
    sp = VarSpace()
    R = sp.add("R", (2, 2), 3, strictly_proper=True)
    assert sp.size == 3 * 4
    x = np.arange(1.0, 13.0)
    g = R.value(x)
    assert np.all(g.coeffs[0] == 0)
    assert fir_close(sp.unpack(x, "R"), g) == 0


def test_duplicate_variable_rejected():
    sp = VarSpace()
    sp.add("Q", (1, 1), 2)
    with pytest.raises(ValueError):
        sp.add("Q", (1, 1), 2)


@given(st.integers(0, 2**32 - 1))
def test_affine_expressions_match_fir_arithmetic(seed):
    rng = np.random.default_rng(seed)
    sp = VarSpace()
    X = sp.add("X", (2, 3), 2)
    Y = sp.add("Y", (2, 3), 1, strictly_proper=True)
    G = FIR(rng.standard_normal((2, 4, 2)))
    H = FIR(rng.standard_normal((3, 3, 1)))
    C = FIR(rng.standard_normal((2, 2, 3)))
    x = rng.standard_normal(sp.size)
    Xv, Yv = sp.unpack(x, "X"), sp.unpack(x, "Y")
    e = (X * 2.0 - Y + C).lmul(G).rmul(H).shift(1)
    ref = (G @ (Xv * 2.0 - Yv + C) @ H).shift(1)
    assert fir_close(e.value(x), ref) < 1e-12
    w = e.window(1, 3).value(x)
    assert fir_close(w, FIR(ref.coeffs[1:4])) < 1e-12


@given(st.integers(0, 2**32 - 1))
def test_apply_pushes_linear_maps_through(seed):
    rng = np.random.default_rng(seed)
    A = rng.standard_normal((2, 2))
    A *= 0.6 / max(abs(np.linalg.eigvals(A)))
    sp = VarSpace()
    X = sp.add("X", (2, 1), 2)
    x = rng.standard_normal(sp.size)
    fn = lambda g: resolvent_left(A, g, 8)
    e = (X + FIR.const([[1.0], [0.0]])).apply(fn)
    ref = fn(sp.unpack(x, "X") + FIR.const([[1.0], [0.0]]))
    assert fir_close(e.value(x), ref) < 1e-12


def test_select_picks_masked_entries_column_major():
    sp = VarSpace()
    X = sp.add("X", (2, 2), 0)
    x = np.array([1.0, 2.0, 3.0, 4.0])  # column-major vec
    v = X.select(np.array([[False, True], [True, False]])).value(x)
    assert v.coeffs.ravel().tolist() == [2.0, 3.0]


def test_tiebreak_variables_are_minimized_first():
    sp = VarSpace()
    u = sp.add("u", (1, 1), 0)
    y = sp.add("y", (1, 1), 0)
    prog = LeastSquaresProgram(sp)
    prog.require_zero(y - u * 2.0 - FIR.const([[1.0]]), "y = 1 + 2u")
    # plain minimum norm trades u against y
    assert abs(solve_equality_ls(prog).x[0]) > 0.1
    prog.tiebreak = ["u"]
    assert np.allclose(solve_equality_ls(prog).x, [0.0, 1.0])
