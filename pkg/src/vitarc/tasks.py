"""Seeded synthetic grid-to-grid tasks and JSONL dataset I/O.

Each task isolates one mechanism: copying and mirroring (position),
color permutation (content), translation and framing (boundaries), and
cropping or recoloring whole objects (objectness, variable output size).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

from .arcgrid import BACKGROUND, Grid, GridError, validate_grid
from .segmentation import BoundingBox, bounding_boxes, connected_components

TASK_IDS = (
    "identity",
    "hflip",
    "vflip",
    "color_map",
    "translate",
    "border_draw",
    "crop_to_object",
    "recolor_largest_object",
)
SPLITS = ("train", "val", "test")


class BadSpec(ValueError):
    pass


class DatasetIOError(OSError):
    pass


class ParseError(ValueError):
    def __init__(self, line: int, msg: str):
        super().__init__(f"line {line}: {msg}")
        self.line = line


@dataclass(frozen=True)
class TaskSpec:
    task_id: str
    min_size: int = 1
    max_size: int = 6
    palette: tuple[int, ...] = tuple(range(10))
    seed: int = 0
    shift: tuple[int, int] = (1, 1)  # translate: (dx, dy)
    color: int = 5  # border_draw frame / recolor target
    density: float = 0.35  # fraction of non-background cells for sparse inputs

    def __post_init__(self):
        if self.task_id not in TASK_IDS:
            raise BadSpec(f"unknown task {self.task_id!r}; choose from {', '.join(TASK_IDS)}")
        if not 1 <= self.min_size <= self.max_size:
            raise BadSpec(f"need 1 <= min_size <= max_size, got {self.min_size}..{self.max_size}")
        if not self.palette or any(not 0 <= c <= 9 for c in self.palette):
            raise BadSpec("palette must be a nonempty subset of 0..9")
        object.__setattr__(self, "palette", tuple(sorted(set(self.palette))))
        if self.task_id in ("translate", "crop_to_object", "recolor_largest_object"):
            if BACKGROUND not in self.palette or len(self.foreground) < 1:
                raise BadSpec(f"{self.task_id} needs background 0 and at least one other color")
        if self.task_id == "recolor_largest_object" and not [c for c in self.foreground if c != self.color]:
            raise BadSpec("recolor_largest_object needs a foreground color other than the target")
        if self.task_id == "crop_to_object" and self.min_size < 1:
            raise BadSpec("crop_to_object needs grids of at least 1x1")

    @property
    def foreground(self) -> tuple[int, ...]:
        return tuple(c for c in self.palette if c != BACKGROUND)

    @property
    def color_permutation(self) -> dict[int, int]:
        """The fixed palette permutation used by color_map (never the identity)."""
        pal = np.array(self.palette)
        rng = np.random.default_rng([self.seed, 0xC01])
        perm = rng.permutation(pal)
        while len(pal) > 1 and np.array_equal(perm, pal):
            perm = rng.permutation(pal)
        return {int(a): int(b) for a, b in zip(pal, perm)}


@dataclass(frozen=True)
class Sample:
    input: Grid
    output: Grid
    split: str = "train"


@dataclass
class Dataset:
    samples: list[Sample] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.samples)

    def __iter__(self):
        return iter(self.samples)

    def split(self, name: str) -> list[Sample]:
        return [s for s in self.samples if s.split == name]


# -- generators -------------------------------------------------------------------

def _size(rng, spec: TaskSpec) -> tuple[int, int]:
    h, w = rng.integers(spec.min_size, spec.max_size + 1, size=2)
    return int(h), int(w)


def _dense(rng, spec: TaskSpec) -> np.ndarray:
    return rng.choice(np.array(spec.palette), size=_size(rng, spec))


def _sparse(rng, spec: TaskSpec, colors: Sequence[int]) -> np.ndarray:
    h, w = _size(rng, spec)
    arr = rng.choice(np.array(colors), size=(h, w))
    arr[rng.random((h, w)) >= spec.density] = BACKGROUND
    return arr


def _crop_input(rng, spec: TaskSpec) -> np.ndarray:
    """A grid holding exactly one 8-connected object whose box is chosen up front."""
    h, w = _size(rng, spec)
    bh, bw = int(rng.integers(1, h + 1)), int(rng.integers(1, w + 1))
    y0, x0 = int(rng.integers(0, h - bh + 1)), int(rng.integers(0, w - bw + 1))
    fg = np.array(spec.foreground)
    while True:
        box = rng.choice(fg, size=(bh, bw))
        box[rng.random((bh, bw)) >= 0.75] = BACKGROUND
        arr = np.zeros((h, w), dtype=np.int64)
        arr[y0:y0 + bh, x0:x0 + bw] = box
        cl = connected_components(Grid.from_array(arr), 8)
        if cl.num_components == 1 and bounding_boxes(cl)[0] == BoundingBox(y0, x0, y0 + bh - 1, x0 + bw - 1):
            return arr


def apply_rule(spec: TaskSpec, arr: np.ndarray) -> np.ndarray:
    """The task's output for input array `arr`."""
    t = spec.task_id
    if t == "identity":
        return arr.copy()
    if t == "hflip":
        return arr[:, ::-1].copy()
    if t == "vflip":
        return arr[::-1, :].copy()
    if t == "color_map":
        perm = spec.color_permutation
        return np.vectorize(lambda c: perm.get(int(c), int(c)), otypes=[np.int64])(arr)
    if t == "translate":
        dx, dy = spec.shift
        h, w = arr.shape
        out = np.full_like(arr, BACKGROUND)
        ys, xs = (a.ravel() for a in np.indices(arr.shape))
        ny, nx = ys + dy, xs + dx
        keep = (ny >= 0) & (ny < h) & (nx >= 0) & (nx < w)
        out[ny[keep], nx[keep]] = arr[ys[keep], xs[keep]]
        return out
    if t == "border_draw":
        out = arr.copy()
        out[0, :] = out[-1, :] = spec.color
        out[:, 0] = out[:, -1] = spec.color
        return out
    if t == "crop_to_object":
        cl = connected_components(Grid.from_array(arr), 8)
        if cl.num_components != 1:
            raise BadSpec(f"crop_to_object input has {cl.num_components} objects")
        b = bounding_boxes(cl)[0]
        return arr[b.y_min:b.y_max + 1, b.x_min:b.x_max + 1].copy()
    # recolor_largest_object
    cl = connected_components(Grid.from_array(arr), 8)
    out = arr.copy()
    if cl.num_components:
        sizes = np.bincount(cl.labels.ravel(), minlength=cl.num_components + 1)[1:]
        out[cl.labels == int(np.argmax(sizes)) + 1] = spec.color
    return out


def _has_unique_largest(arr: np.ndarray) -> bool:
    cl = connected_components(Grid.from_array(arr), 8)
    if cl.num_components == 0:
        return False
    sizes = np.sort(np.bincount(cl.labels.ravel())[1:])
    return len(sizes) == 1 or sizes[-1] > sizes[-2]


def make_sample(spec: TaskSpec, index: int, split: str = "train") -> Sample:
    """Sample `index` of the task; a pure function of (spec, index)."""
    rng = np.random.default_rng([spec.seed, index])
    t = spec.task_id
    if t == "crop_to_object":
        arr = _crop_input(rng, spec)
    elif t == "translate":
        arr = _sparse(rng, spec, spec.foreground)
    elif t == "recolor_largest_object":
        colors = [c for c in spec.foreground if c != spec.color]
        arr = _sparse(rng, spec, colors)
        while not _has_unique_largest(arr):
            arr = _sparse(rng, spec, colors)
    else:
        arr = _dense(rng, spec)
    return Sample(Grid.from_array(arr), Grid.from_array(apply_rule(spec, arr)), split)


def generate_dataset(spec: TaskSpec, n: int, split: str = "train", start: int = 0) -> Dataset:
    if n < 1:
        raise BadSpec("n must be >= 1")
    return Dataset([make_sample(spec, start + i, split) for i in range(n)])


def generate_splits(spec: TaskSpec, n_train: int, n_val: int = 0, n_test: int = 0) -> Dataset:
    """Consecutive index ranges per split, so splits never share a sample index."""
    samples: list[Sample] = []
    start = 0
    for name, n in zip(SPLITS, (n_train, n_val, n_test)):
        samples += [make_sample(spec, start + i, name) for i in range(n)]
        start += n
    return Dataset(samples)


# -- JSONL --------------------------------------------------------------------------

def sample_to_json(s: Sample) -> str:
    return json.dumps({"input": s.input.to_rows(), "output": s.output.to_rows(), "split": s.split},
                      separators=(",", ":"))


def write_dataset(ds: Iterable[Sample], path) -> None:
    try:
        with open(path, "w") as fh:
            for s in ds:
                fh.write(sample_to_json(s) + "\n")
    except OSError as e:
        raise DatasetIOError(f"cannot write {path}: {e}") from e


def _parse_grid(value, line: int, key: str) -> Grid:
    if not isinstance(value, list) or not all(isinstance(r, list) for r in value):
        raise ParseError(line, f"{key!r} must be a list of lists")
    if not all(isinstance(c, int) and not isinstance(c, bool) for r in value for c in r):
        raise ParseError(line, f"{key!r} must contain integers")
    try:
        g = Grid.from_rows(value)
        validate_grid(g)
    except GridError as e:
        raise ParseError(line, f"{key!r}: {e}") from e
    return g


def read_dataset(path) -> Dataset:
    try:
        text = Path(path).read_text()
    except OSError as e:
        raise DatasetIOError(f"cannot read {path}: {e}") from e
    samples = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        if not raw.strip():
            continue
        try:
            obj = json.loads(raw)
        except json.JSONDecodeError as e:
            raise ParseError(lineno, f"invalid JSON: {e.msg}") from e
        if not isinstance(obj, dict) or "input" not in obj or "output" not in obj:
            raise ParseError(lineno, "expected an object with 'input' and 'output'")
        split = obj.get("split", "train")
        if split not in SPLITS:
            raise ParseError(lineno, f"unknown split {split!r}")
        samples.append(Sample(_parse_grid(obj["input"], lineno, "input"),
                              _parse_grid(obj["output"], lineno, "output"), split))
    return Dataset(samples)
