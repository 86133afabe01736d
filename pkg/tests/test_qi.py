import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from parametrix.lti import StateSpacePlant
from parametrix.qi import SparsityPattern, plant_pattern, qi_brute_force, qi_test
from parametrix.synthesis import chain_adjacency, example1_plant


def pat(rows):
    return SparsityPattern(np.array(rows))


def test_diagonal_is_qi_under_diagonal():
    assert qi_test(SparsityPattern.diagonal(3), SparsityPattern.diagonal(3))


def test_lower_triangular_pair_is_qi():
    low = pat(np.tril(np.ones((3, 3), dtype=int)))
    assert qi_test(low, low)
    assert qi_brute_force(low, low)


def test_sparse_support_under_dense_plant_is_not_qi():
    P = example1_plant(3)
    Ppat = plant_pattern(P)
    assert Ppat.mask.all()
    assert not qi_test(SparsityPattern.support(P.A), Ppat)
    assert not qi_brute_force(SparsityPattern.support(P.A), Ppat)


def test_plant_pattern_examples():
    P = example1_plant(A=np.diag([0.1, 0.2, 0.3]))
    assert np.array_equal(plant_pattern(P).mask, np.eye(3, dtype=bool))
    A = np.diag([1.0, 1.0], -1)  # nilpotent shift x1 -> x2 -> x3
    P = StateSpacePlant(A=A, B1=np.eye(3), B2=[[1.0], [0], [0]], C1=np.eye(3), C2=[[0, 0, 1.0]])
    assert plant_pattern(P).mask.tolist() == [[True]]
    P = StateSpacePlant(A=A, B1=np.eye(3), B2=[[0.0], [0], [1]], C1=np.eye(3), C2=[[1.0, 0, 0]],
                        check_assumptions=False)
    assert plant_pattern(P).mask.tolist() == [[False]]


def test_pattern_validation_and_dimension_errors():
    with pytest.raises(ValueError):
        SparsityPattern(np.array([[2, 0]]))
    with pytest.raises(ValueError):
        SparsityPattern(np.ones(3))
    with pytest.raises(ValueError):
        qi_test(SparsityPattern.full(2, 3), SparsityPattern.full(2, 3))


def test_pattern_algebra():
    a, b = pat([[1, 0], [0, 0]]), pat([[0, 0], [0, 1]])
    assert (a | b).tolist() == [[1, 0], [0, 1]]
    assert not (a & b).mask.any()
    assert SparsityPattern.diagonal(2).allows(np.diag([3.0, 4.0]))
    assert not SparsityPattern.diagonal(2).allows(np.ones((2, 2)))


def masks(max_dim=3):
    dims = st.tuples(st.integers(1, max_dim), st.integers(1, max_dim))
    return dims.flatmap(lambda d: st.tuples(
        arrays(np.int8, d, elements=st.integers(0, 1)), arrays(np.int8, d[::-1], elements=st.integers(0, 1))))


@given(masks())
def test_qi_test_matches_brute_force(pair):
    L, Pm = pair
    if L.sum() > 9:
        L = L.copy()
        L.flat[: L.size - 9] = 0
    assert qi_test(SparsityPattern(L), SparsityPattern(Pm)) == qi_brute_force(SparsityPattern(L), SparsityPattern(Pm))


@given(st.integers(1, 4))
def test_full_pattern_is_always_qi(n):
    assert qi_test(SparsityPattern.full(n, n), SparsityPattern.full(n, n))


def test_chain_support_fails_even_under_a_diagonal_plant():
    # K P K contains K^2, whose support is the two-hop closure of the chain
    S = SparsityPattern.support(chain_adjacency(3))
    assert not qi_test(S, SparsityPattern.diagonal(3))
    assert not qi_brute_force(S, SparsityPattern.diagonal(3))
