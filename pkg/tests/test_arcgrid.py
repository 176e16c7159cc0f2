import numpy as np
import pytest
from hypothesis import given, strategies as st

from vitarc.arcgrid import (
    EmptyGrid,
    EmptyPalette,
    ExceedsMaxSize,
    Grid,
    GridError,
    OutOfRangeColor,
    grids_equal,
    random_grid,
    validate_grid,
)

grids = st.integers(1, 6).flatmap(
    lambda h: st.integers(1, 6).flatmap(
        lambda w: st.lists(st.lists(st.integers(0, 9), min_size=w, max_size=w), min_size=h, max_size=h)
    )
).map(Grid.from_rows)


def test_minimal_grid_is_valid():
    validate_grid(Grid.from_rows([[3]]), 30, 30)


def test_empty_grid_rejected():
    with pytest.raises(EmptyGrid):
        validate_grid(Grid(0, 0, ()))


def test_one_past_max_height_rejected():
    with pytest.raises(ExceedsMaxSize):
        validate_grid(Grid.from_array(np.zeros((31, 5), dtype=int)), 30, 30)


def test_out_of_range_color():
    with pytest.raises(OutOfRangeColor):
        validate_grid(Grid.from_rows([[10]]))


def test_ragged_rows():
    with pytest.raises(GridError):
        Grid.from_rows([[1, 2], [3]])


@pytest.mark.parametrize(
    "a, b, expected",
    [([[1]], [[1]], True), ([[1]], [[2]], False), ([[1, 2]], [[1], [2]], False)],
)
def test_grids_equal_cases(a, b, expected):
    assert grids_equal(Grid.from_rows(a), Grid.from_rows(b)) is expected


@given(grids, grids)
def test_grids_equal_reflexive_and_symmetric(a, b):
    assert grids_equal(a, a)
    assert grids_equal(a, b) == grids_equal(b, a)


def test_single_color_palette_forces_output():
    assert random_grid(7, 2, 2, {5}).to_rows() == [[5, 5], [5, 5]]


def test_random_grid_is_deterministic():
    assert random_grid(3, 4, 5, range(10)) == random_grid(3, 4, 5, range(10))


def test_palette_order_does_not_matter():
    assert random_grid(3, 4, 5, [9, 1, 4]) == random_grid(3, 4, 5, {1, 4, 9})


def test_neighbouring_seeds_differ():
    # Two independent 10x10 draws over 10 colors coincide with probability 1e-100.
    differing = sum(
        not grids_equal(random_grid(s, 10, 10, range(10)), random_grid(s + 1, 10, 10, range(10)))
        for s in range(0, 200, 2)
    )
    assert differing == 100


def test_empty_palette():
    with pytest.raises(EmptyPalette):
        random_grid(0, 2, 2, [])


def test_indexing_and_rows_round_trip():
    g = Grid.from_rows([[1, 2, 3], [4, 5, 6]])
    assert g[1, 0] == 4 and g[0, 2] == 3
    assert Grid.from_array(g.to_array()) == g
