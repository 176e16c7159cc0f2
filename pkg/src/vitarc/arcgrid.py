"""ARC grids: small rectangular arrays of colors 0-9."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

NUM_COLORS = 10
BACKGROUND = 0
DEFAULT_MAX_SIZE = 30


class GridError(ValueError):
    pass


class OutOfRangeColor(GridError):
    pass


class EmptyGrid(GridError):
    pass


class ExceedsMaxSize(GridError):
    pass


class EmptyPalette(GridError):
    pass


@dataclass(frozen=True)
class Grid:
    """Immutable row-major grid of colors."""

    height: int
    width: int
    cells: tuple[int, ...]

    @classmethod
    def from_rows(cls, rows: Sequence[Sequence[int]]) -> "Grid":
        rows = [list(r) for r in rows]
        if not rows or not rows[0]:
            return cls(len(rows), 0, ())
        width = len(rows[0])
        if any(len(r) != width for r in rows):
            raise GridError("ragged rows: every row must have the same length")
        return cls(len(rows), width, tuple(int(c) for r in rows for c in r))

    @classmethod
    def from_array(cls, arr: np.ndarray) -> "Grid":
        arr = np.asarray(arr)
        if arr.ndim != 2:
            raise GridError(f"expected a 2D array, got shape {arr.shape}")
        return cls(int(arr.shape[0]), int(arr.shape[1]), tuple(int(c) for c in arr.ravel()))

    def to_rows(self) -> list[list[int]]:
        w = self.width
        return [list(self.cells[r * w:(r + 1) * w]) for r in range(self.height)]

    def to_array(self) -> np.ndarray:
        return np.array(self.cells, dtype=np.int64).reshape(self.height, self.width)

    def __getitem__(self, yx: tuple[int, int]) -> int:
        y, x = yx
        return self.cells[y * self.width + x]

    def __str__(self) -> str:
        return "\n".join(" ".join(str(c) for c in row) for row in self.to_rows())


def validate_grid(g: Grid, h_max: int = DEFAULT_MAX_SIZE, w_max: int = DEFAULT_MAX_SIZE) -> None:
    """Raise a GridError subclass if `g` is not a valid grid within the bounds."""
    if g.height < 1 or g.width < 1:
        raise EmptyGrid(f"grid is {g.height}x{g.width}; need at least 1x1")
    if len(g.cells) != g.height * g.width:
        raise GridError(f"cells length {len(g.cells)} != {g.height}*{g.width}")
    if g.height > h_max:
        raise ExceedsMaxSize(f"height {g.height} exceeds h_max={h_max}")
    if g.width > w_max:
        raise ExceedsMaxSize(f"width {g.width} exceeds w_max={w_max}")
    for c in g.cells:
        if not 0 <= c < NUM_COLORS:
            raise OutOfRangeColor(f"color {c} outside 0..{NUM_COLORS - 1}")


def grids_equal(a: Grid, b: Grid) -> bool:
    return a.height == b.height and a.width == b.width and a.cells == b.cells


def random_grid(seed: int, h: int, w: int, palette: Iterable[int]) -> Grid:
    """Deterministic grid with cells drawn uniformly from `palette`."""
    palette = sorted(set(int(c) for c in palette))
    if not palette:
        raise EmptyPalette("palette must contain at least one color")
    rng = np.random.default_rng(seed)
    arr = rng.choice(np.array(palette, dtype=np.int64), size=(h, w))
    return Grid.from_array(arr)
