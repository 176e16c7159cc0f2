"""Grid <-> token sequence conversion.

Two layouts are supported:

* ``Padded2D``: the grid is padded to a fixed ``(h_max + 1) x (w_max + 2)``
  template *before* flattening. Border tokens mark the true grid extent
  and every template row ends with ``<2d_nl>``. With ``borders=False`` the
  template shrinks to ``h_max x w_max`` and only ``<2d_pad>`` surrounds the
  grid (the border-token ablation).
* ``Flat1D``: the vanilla baseline. The grid is flattened in raster order
  and right-padded with ``<pad>`` to ``h_max * w_max``.

Template row ``y`` with slots ``x = 0..w_max`` followed by the newline slot::

    y <  h:  c c c ... c  endx  2dpad ... 2dpad  nl
    y == h:  endy ... endy endxy 2dpad ... 2dpad  nl
    y >  h:  2dpad ...                            nl
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .arcgrid import NUM_COLORS, ExceedsMaxSize, Grid, GridError, validate_grid

PAD = 10
START = 11
PAD_2D = 12
NEWLINE = 13
END_X = 14
END_Y = 15
END_XY = 16
VOCAB_SIZE = 17

TOKEN_NAMES = [str(c) for c in range(NUM_COLORS)] + [
    "<pad>",
    "<s>",
    "<2d_pad>",
    "<2d_nl>",
    "<2d_endxgrid>",
    "<2d_endygrid>",
    "<2d_endxygrid>",
]
TOKEN_IDS = {name: i for i, name in enumerate(TOKEN_NAMES)}


class TokenizerError(ValueError):
    pass


class ExceedsMaxLen(TokenizerError):
    pass


class MalformedTemplate(TokenizerError):
    pass


class Mode(str, enum.Enum):
    PADDED_2D = "padded2d"
    FLAT_1D = "flat1d"


@dataclass(frozen=True)
class LayoutConfig:
    h_max: int = 30
    w_max: int = 30
    mode: Mode = Mode.PADDED_2D
    borders: bool = True

    def __post_init__(self):
        if self.h_max < 1 or self.w_max < 1:
            raise ValueError("h_max and w_max must be >= 1")
        object.__setattr__(self, "mode", Mode(self.mode))

    @property
    def seq_len(self) -> int:
        if self.mode is Mode.FLAT_1D:
            return self.h_max * self.w_max
        if self.borders:
            return (self.h_max + 1) * (self.w_max + 2)
        return self.h_max * self.w_max

    @property
    def template_shape(self) -> tuple[int, int]:
        if self.mode is Mode.FLAT_1D:
            return 1, self.h_max * self.w_max
        if self.borders:
            return self.h_max + 1, self.w_max + 2
        return self.h_max, self.w_max

    def to_dict(self) -> dict:
        return {"h_max": self.h_max, "w_max": self.w_max, "mode": self.mode.value, "borders": self.borders}

    @classmethod
    def from_dict(cls, d: dict) -> "LayoutConfig":
        return cls(int(d["h_max"]), int(d["w_max"]), Mode(d["mode"]), bool(d.get("borders", True)))


@dataclass(eq=False)
class TokenizedGrid:
    tokens: np.ndarray
    xs: np.ndarray
    ys: np.ndarray
    layout: LayoutConfig
    # Per-token object index; None until segmentation fills it in.
    obj: Optional[np.ndarray] = field(default=None)

    def __len__(self) -> int:
        return len(self.tokens)

    def with_obj(self, obj: np.ndarray) -> "TokenizedGrid":
        return replace(self, obj=np.asarray(obj, dtype=np.int64))


def template_coords(layout: LayoutConfig) -> tuple[np.ndarray, np.ndarray]:
    """(xs, ys) of every template slot in raster order; identical for every grid."""
    rows, cols = layout.template_shape
    if layout.mode is Mode.FLAT_1D:
        return np.arange(rows * cols, dtype=np.int64), np.zeros(rows * cols, dtype=np.int64)
    ys, xs = np.divmod(np.arange(rows * cols, dtype=np.int64), cols)
    return xs, ys


def _template(h: int, w: int, layout: LayoutConfig) -> np.ndarray:
    """Border/pad skeleton for an h x w grid; grid cells are left as -1."""
    t = np.full((layout.h_max + 1, layout.w_max + 2), PAD_2D, dtype=np.int64)
    t[:h, :w] = -1
    t[:h, w] = END_X
    t[h, :w] = END_Y
    t[h, w] = END_XY
    t[:, layout.w_max + 1] = NEWLINE
    return t


def encode_2d(g: Grid, layout: LayoutConfig) -> TokenizedGrid:
    validate_grid(g, layout.h_max, layout.w_max)
    arr = g.to_array()
    if layout.borders:
        t = _template(g.height, g.width, layout)
    else:
        t = np.full((layout.h_max, layout.w_max), PAD_2D, dtype=np.int64)
    t[:g.height, :g.width] = arr
    xs, ys = template_coords(layout)
    return TokenizedGrid(t.ravel(), xs, ys, layout)


def encode_1d_vanilla(g: Grid, max_len: int) -> TokenizedGrid:
    if g.height * g.width > max_len:
        raise ExceedsMaxLen(f"{g.height}x{g.width} grid has {g.height * g.width} cells > max_len={max_len}")
    validate_grid(g, max_len, max_len)
    tokens = np.full(max_len, PAD, dtype=np.int64)
    tokens[:len(g.cells)] = g.cells
    layout = LayoutConfig(max_len, 1, Mode.FLAT_1D)
    return TokenizedGrid(tokens, np.arange(max_len, dtype=np.int64), np.zeros(max_len, dtype=np.int64), layout)


def encode(g: Grid, layout: LayoutConfig) -> TokenizedGrid:
    """Encode under whichever scheme `layout` selects."""
    if layout.mode is Mode.FLAT_1D:
        try:
            validate_grid(g, layout.h_max, layout.w_max)
        except GridError as e:
            raise ExceedsMaxSize(str(e)) from e
        tg = encode_1d_vanilla(g, layout.seq_len)
        return replace(tg, layout=layout)
    return encode_2d(g, layout)


def decode_2d(tokens, layout: LayoutConfig, strict: bool = True) -> Grid:
    """Recover the grid from a Padded2D token sequence.

    Strict mode rejects any deviation from the template. Lenient mode crops
    a best-effort region for failure analysis and maps stray non-color
    tokens inside it to 0.
    """
    tokens = np.asarray(tokens, dtype=np.int64)
    if layout.mode is not Mode.PADDED_2D:
        raise TokenizerError("decode_2d needs a Padded2D layout")
    if len(tokens) != layout.seq_len:
        raise MalformedTemplate(f"expected {layout.seq_len} tokens, got {len(tokens)}")
    t = tokens.reshape(layout.template_shape)
    if not layout.borders:
        return _decode_no_borders(t, strict)
    if not strict:
        return _decode_lenient(t, layout)

    corner = np.argwhere(t == END_XY)
    if len(corner) != 1:
        raise MalformedTemplate(f"expected exactly one <2d_endxygrid>, found {len(corner)}")
    h, w = (int(v) for v in corner[0])
    if h < 1 or w < 1:
        raise MalformedTemplate(f"<2d_endxygrid> at (x={w}, y={h}) implies an empty grid")
    if w > layout.w_max:
        raise MalformedTemplate(f"<2d_endxygrid> in the newline column (x={w})")
    expected = _template(h, w, layout)
    region = t[:h, :w]
    bad = np.argwhere((expected != -1) & (expected != t))
    if len(bad):
        y, x = (int(v) for v in bad[0])
        raise MalformedTemplate(
            f"slot (x={x}, y={y}) holds {TOKEN_NAMES[t[y, x]]}, expected {TOKEN_NAMES[expected[y, x]]}"
        )
    if (region >= NUM_COLORS).any():
        y, x = (int(v) for v in np.argwhere(region >= NUM_COLORS)[0])
        raise MalformedTemplate(f"non-color token {TOKEN_NAMES[region[y, x]]} inside grid at (x={x}, y={y})")
    return Grid.from_array(region)


def _decode_lenient(t: np.ndarray, layout: LayoutConfig) -> Grid:
    body = t[:, : layout.w_max + 1]
    ends = [int(np.argmax(row == END_X)) for row in body if (row == END_X).any()]
    w = max(set(ends), key=ends.count) if ends else 0
    if w == 0:
        colors = body < NUM_COLORS
        w = int(colors.any(axis=0).nonzero()[0].max()) + 1 if colors.any() else 1
    h_rows = np.nonzero(((body == END_Y) | (body == END_XY)).any(axis=1))[0]
    if len(h_rows):
        h = int(h_rows[0])
    else:
        h = len(ends) if ends else int((body < NUM_COLORS).any(axis=1).sum())
    h, w = max(h, 1), max(w, 1)
    region = body[:h, :w].copy()
    region[region >= NUM_COLORS] = 0
    return Grid.from_array(region)


def _decode_no_borders(t: np.ndarray, strict: bool) -> Grid:
    content = t != PAD_2D
    if not content.any():
        if strict:
            raise MalformedTemplate("no grid content found")
        return Grid.from_array(np.zeros((1, 1), dtype=np.int64))
    h = int(content.any(axis=1).nonzero()[0].max()) + 1
    w = int(content.any(axis=0).nonzero()[0].max()) + 1
    region = t[:h, :w].copy()
    if strict:
        if (region >= NUM_COLORS).any():
            raise MalformedTemplate("grid region is not a solid rectangle of colors")
        return Grid.from_array(region)
    region[region >= NUM_COLORS] = 0
    return Grid.from_array(region)


def decode_1d_vanilla(tokens, h: int, w: int) -> Grid:
    """Reshape the first h*w tokens into a grid of a known shape.

    The flat sequence carries no shape information, so this relaxed view is
    only useful for failure analysis against a gold grid.
    """
    tokens = np.asarray(tokens, dtype=np.int64)[: h * w].copy()
    if len(tokens) < h * w:
        raise MalformedTemplate(f"need {h * w} tokens, got {len(tokens)}")
    tokens[tokens >= NUM_COLORS] = 0
    return Grid.from_array(tokens.reshape(h, w))


def decode(tokens, layout: LayoutConfig, shape_hint: Optional[tuple[int, int]] = None, strict: bool = True) -> Grid:
    if layout.mode is Mode.FLAT_1D:
        if shape_hint is None:
            raise TokenizerError("Flat1D sequences need a shape hint to decode")
        return decode_1d_vanilla(tokens, *shape_hint)
    return decode_2d(tokens, layout, strict=strict)


def dump_table(tg: TokenizedGrid) -> str:
    """One line per token: index, name, x, y, o."""
    obj = tg.obj if tg.obj is not None else np.zeros(len(tg), dtype=np.int64)
    lines = ["index\ttoken\tx\ty\to"]
    for i, (tok, x, y, o) in enumerate(zip(tg.tokens, tg.xs, tg.ys, obj)):
        lines.append(f"{i}\t{TOKEN_NAMES[tok]}\t{x}\t{y}\t{o}")
    return "\n".join(lines)
