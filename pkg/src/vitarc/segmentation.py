"""Object indices for the object positional encoding.

Connected components are found on the binarized grid (background vs
anything else), so adjacent cells of different colors form one object.
Each component's tight bounding box then claims every cell inside it; a
cell covered by several boxes takes the smallest component id.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass

import numpy as np

from .arcgrid import BACKGROUND, Grid
from .tokenizer import Mode, TokenizedGrid

_NEIGHBORS = {
    4: ((-1, 0), (1, 0), (0, -1), (0, 1)),
    8: ((-1, -1), (-1, 0), (-1, 1), (0, -1), (0, 1), (1, -1), (1, 0), (1, 1)),
}


class ShapeMismatch(ValueError):
    pass


@dataclass(frozen=True)
class ComponentLabels:
    labels: np.ndarray  # (h, w); 0 = background, 1..K = component id
    num_components: int


@dataclass(frozen=True)
class BoundingBox:
    y_min: int
    x_min: int
    y_max: int
    x_max: int

    @property
    def height(self) -> int:
        return self.y_max - self.y_min + 1

    @property
    def width(self) -> int:
        return self.x_max - self.x_min + 1


@dataclass(frozen=True)
class ObjectMap:
    obj: np.ndarray  # (h, w)
    num_objects: int


def connected_components(g: Grid, connectivity: int = 8, background: int = BACKGROUND) -> ComponentLabels:
    """Flood-fill labeling; ids follow the raster order of each component's first cell."""
    if connectivity not in _NEIGHBORS:
        raise ValueError(f"connectivity must be 4 or 8, got {connectivity}")
    steps = _NEIGHBORS[connectivity]
    fg = g.to_array() != background
    h, w = fg.shape
    labels = np.zeros((h, w), dtype=np.int64)
    k = 0
    for y0 in range(h):
        for x0 in range(w):
            if not fg[y0, x0] or labels[y0, x0]:
                continue
            k += 1
            labels[y0, x0] = k
            queue = deque([(y0, x0)])
            while queue:
                y, x = queue.popleft()
                for dy, dx in steps:
                    ny, nx = y + dy, x + dx
                    if 0 <= ny < h and 0 <= nx < w and fg[ny, nx] and not labels[ny, nx]:
                        labels[ny, nx] = k
                        queue.append((ny, nx))
    return ComponentLabels(labels, k)


def bounding_boxes(cl: ComponentLabels) -> list[BoundingBox]:
    boxes = []
    for k in range(1, cl.num_components + 1):
        ys, xs = np.nonzero(cl.labels == k)
        boxes.append(BoundingBox(int(ys.min()), int(xs.min()), int(ys.max()), int(xs.max())))
    return boxes


def object_index_map(g: Grid, connectivity: int = 8, background: int = BACKGROUND) -> ObjectMap:
    cl = connected_components(g, connectivity, background)
    obj = np.zeros((g.height, g.width), dtype=np.int64)
    # Paint in descending id order so overlaps end up with the smallest id.
    for k, box in reversed(list(enumerate(bounding_boxes(cl), start=1))):
        obj[box.y_min:box.y_max + 1, box.x_min:box.x_max + 1] = k
    return ObjectMap(obj, cl.num_components)


def object_indices_for_tokens(tg: TokenizedGrid, om: ObjectMap) -> TokenizedGrid:
    """Attach per-token object indices; special tokens get 0."""
    if tg.layout.mode is not Mode.PADDED_2D:
        raise ShapeMismatch("object indices need the 2D template; got a Flat1D tokenization")
    h, w = om.obj.shape
    is_color = tg.tokens < 10
    inside = (tg.xs < w) & (tg.ys < h)
    if not np.array_equal(is_color, inside):
        raise ShapeMismatch(f"object map is {h}x{w} but the token grid region differs")
    obj = np.zeros(len(tg), dtype=np.int64)
    obj[inside] = om.obj[tg.ys[inside], tg.xs[inside]]
    return tg.with_obj(obj)


def segment(tg: TokenizedGrid, g: Grid, connectivity: int = 8, background: int = BACKGROUND) -> TokenizedGrid:
    return object_indices_for_tokens(tg, object_index_map(g, connectivity, background))
