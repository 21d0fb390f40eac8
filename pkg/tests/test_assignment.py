import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from services.assignment import (
    BRUTE_FORCE_MAX_N,
    PairingSizeError,
    ProfitMatrix,
    brute_force_pairing,
    hungarian_max,
    pairing_total,
)


@st.composite
def profit_matrices(draw, max_size=6):
    n = draw(st.integers(min_value=1, max_value=max_size))
    return draw(arrays(np.float64, (n, n), elements=st.floats(min_value=-100.0, max_value=100.0, width=64)))


@settings(max_examples=200)
@given(profit_matrices())
def test_hungarian_matches_brute_force(profit):
    _, fast = hungarian_max(profit)
    _, exact = brute_force_pairing(profit)
    assert fast == pytest.approx(exact, abs=1e-9)


@given(profit_matrices(max_size=8), st.floats(min_value=1.0, max_value=1e3))
def test_dominant_diagonal_gives_identity(profit, margin):
    dominant = profit.copy()
    np.fill_diagonal(dominant, np.abs(profit).max() * 2 + margin)
    pairing, _ = hungarian_max(dominant)
    assert pairing.perm == list(range(profit.shape[0]))


@given(profit_matrices(), st.randoms())
def test_relabeling_rows_permutes_the_pairing(profit, random):
    order = list(range(profit.shape[0]))
    random.shuffle(order)
    _, total = hungarian_max(profit)
    _, shuffled_total = hungarian_max(profit[order])
    assert shuffled_total == pytest.approx(total, abs=1e-9)


@given(profit_matrices(), st.floats(min_value=-50.0, max_value=50.0))
def test_row_offset_shifts_total(profit, offset):
    shifted = profit.copy()
    shifted[0] += offset
    _, total = hungarian_max(profit)
    _, shifted_total = hungarian_max(shifted)
    assert shifted_total == pytest.approx(total + offset, abs=1e-8)


def test_single_entry():
    pairing, total = hungarian_max([[3.5]])
    assert pairing.perm == [0]
    assert total == 3.5


def test_known_optimum():
    profit = np.array([[1.0, 5.0, 0.0], [4.0, 1.0, 0.0], [0.0, 0.0, 2.0]])
    pairing, total = hungarian_max(profit)
    assert pairing.perm == [1, 0, 2]
    assert total == 11.0


def test_total_is_the_sequential_sum():
    profit = np.random.default_rng(0).normal(size=(5, 5))
    pairing, total = hungarian_max(profit)
    assert total == pairing_total(profit, pairing.perm)


def test_brute_force_ties_go_to_smallest_permutation():
    pairing, total = brute_force_pairing(np.ones((4, 4)))
    assert pairing.perm == [0, 1, 2, 3]
    assert total == 4.0


def test_brute_force_size_guard():
    with pytest.raises(PairingSizeError):
        brute_force_pairing(np.zeros((BRUTE_FORCE_MAX_N + 1, BRUTE_FORCE_MAX_N + 1)))


@pytest.mark.parametrize("bad", [np.zeros((2, 3)), np.zeros((0, 0)), [[1.0, np.inf], [0.0, 0.0]], [[np.nan]]])
def test_profit_matrix_validation(bad):
    with pytest.raises(ValueError):
        ProfitMatrix(entries=bad)
