"""Positional signals: absolute encodings, the embedding mixer, and
relative attention biases.

Absolute encodings are built in numpy (they are fixed functions of the
template coordinates). The mixer runs on ``Tensor`` so its gains train.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import tensor as T
from .tensor import Tensor
from .tokenizer import TokenizedGrid


class PosEncodingError(ValueError):
    pass


class OddDim(PosEncodingError):
    pass


class BadDim(PosEncodingError):
    pass


class DimMismatch(PosEncodingError):
    pass


class SlopeCountMismatch(PosEncodingError):
    pass


class MissingObjectIndices(PosEncodingError):
    pass


class DivisionByZeroAlpha(PosEncodingError):
    pass


class Scheme(str, enum.Enum):
    LEARNED_1D = "learned1d"
    APE_2D = "ape2d"
    OPE_APE_2D = "ope_ape2d"


class MixerVariant(str, enum.Enum):
    DEFAULT = "default"
    HARDCODED_NORM = "hardcoded_norm"
    LEARNABLE_SCALING_SCALAR = "learnable_scaling"
    LEARNABLE_SCALING_VEC = "learnable_scaling_vec"
    WEIGHTED_SUM = "weighted_sum"
    WEIGHTED_SUM_VEC = "weighted_sum_vec"
    WEIGHTED_SUM_NO_NORM = "weighted_sum_no_norm"
    WEIGHTED_SUM_NO_NORM_VEC = "weighted_sum_no_norm_vec"
    LAYER_NORM_MIX = "layer_norm"

    @property
    def is_vector(self) -> bool:
        return self.value.endswith("_vec")

    @property
    def gains(self) -> tuple[str, ...]:
        """Names of the learnable gains this variant uses."""
        if self in (MixerVariant.LEARNABLE_SCALING_SCALAR, MixerVariant.LEARNABLE_SCALING_VEC):
            return ("beta",)
        if self.value.startswith("weighted_sum"):
            return ("alpha", "beta")
        return ()


class RpeVariant(str, enum.Enum):
    NONE = "none"
    ALIBI_1D = "alibi1d"
    TWO_DIR = "two_dir"
    FOUR_DIAG = "four_diag"
    FOUR_CARDINAL = "four_cardinal"


# Start of each slope group's geometric sequence, as a power of 1/2.
# Alibi1D's start is filled in per head count (2^(-8/n), as in 1D ALiBi).
SLOPE_STARTS = {
    RpeVariant.TWO_DIR: {"before": 1.0, "after": 0.5},
    RpeVariant.FOUR_DIAG: {"tl": 0.25, "tr": 1.0, "dl": 0.75, "dr": 0.5},
    RpeVariant.FOUR_CARDINAL: {"up": 1.0, "left": 1.0, "down": 0.5, "right": 0.5},
}


@dataclass(frozen=True)
class PosEncodingConfig:
    d_model: int
    scheme: Scheme = Scheme.APE_2D
    mixer: MixerVariant = MixerVariant.DEFAULT
    rpe: RpeVariant = RpeVariant.NONE

    def __post_init__(self):
        object.__setattr__(self, "scheme", Scheme(self.scheme))
        object.__setattr__(self, "mixer", MixerVariant(self.mixer))
        object.__setattr__(self, "rpe", RpeVariant(self.rpe))
        if self.scheme is Scheme.APE_2D and self.d_model % 4:
            raise BadDim(f"2D APE needs d_model divisible by 4, got {self.d_model}")
        if self.scheme is Scheme.OPE_APE_2D:
            ope_split(self.d_model)

    def to_dict(self) -> dict:
        return {"d_model": self.d_model, "scheme": self.scheme.value, "mixer": self.mixer.value, "rpe": self.rpe.value}

    @classmethod
    def from_dict(cls, d: dict) -> "PosEncodingConfig":
        return cls(int(d["d_model"]), Scheme(d["scheme"]), MixerVariant(d["mixer"]), RpeVariant(d["rpe"]))


# -- absolute encodings ------------------------------------------------------

def sinusoid(p, dim: int) -> np.ndarray:
    """Interleaved [sin, cos] pairs at frequencies 1/10000^(2k/dim).

    `p` may be a scalar or an integer array; the encoding is appended as a
    trailing axis.
    """
    if dim % 2:
        raise OddDim(f"sinusoid dimension must be even, got {dim}")
    p = np.asarray(p, dtype=np.float64)
    k = np.arange(dim // 2, dtype=np.float64)
    angles = p[..., None] / np.power(10000.0, 2.0 * k / dim)
    out = np.empty(p.shape + (dim,), dtype=np.float64)
    out[..., 0::2] = np.sin(angles)
    out[..., 1::2] = np.cos(angles)
    return out


def ape_2d(x, y, d_model: int) -> np.ndarray:
    if d_model % 4:
        raise BadDim(f"2D APE needs d_model divisible by 4, got {d_model}")
    half = d_model // 2
    x, y = np.broadcast_arrays(np.asarray(x), np.asarray(y))
    return np.concatenate([sinusoid(x, half), sinusoid(y, half)], axis=-1)


def ope_split(d_model: int) -> tuple[int, int, int]:
    """(d_o, d_x, d_y): equal thirds when possible, else x/y get the larger even share."""
    if d_model % 2:
        raise BadDim(f"OPE needs an even d_model, got {d_model}")
    d_xy = 2 * math.ceil(d_model / 6)
    d_o = d_model - 2 * d_xy
    if d_o < 2:
        raise BadDim(f"d_model={d_model} too small for a three-way OPE split")
    return d_o, d_xy, d_xy


def ope(o, x, y, d_model: int) -> np.ndarray:
    d_o, d_x, d_y = ope_split(d_model)
    o, x, y = np.broadcast_arrays(np.asarray(o), np.asarray(x), np.asarray(y))
    return np.concatenate([sinusoid(o, d_o), sinusoid(x, d_x), sinusoid(y, d_y)], axis=-1)


# -- mixer -------------------------------------------------------------------

@dataclass
class MixerParams:
    alpha: Optional[Tensor] = None  # content-embedding gain
    beta: Optional[Tensor] = None  # positional gain

    @classmethod
    def init(cls, variant: MixerVariant, d_model: int, dtype=np.float64) -> "MixerParams":
        variant = MixerVariant(variant)
        shape = (d_model,) if variant.is_vector else (1,)
        made = {name: Tensor(np.ones(shape, dtype=dtype), requires_grad=True, name=f"mixer.{name}")
                for name in variant.gains}
        return cls(**made)


def _check_gain(g: Optional[Tensor], d: int, name: str) -> Tensor:
    if g is None:
        raise DimMismatch(f"mixer variant needs a learnable {name}")
    if g.shape[-1] not in (1, d):
        raise DimMismatch(f"{name} has shape {g.shape}; expected (1,) or ({d},)")
    return g


def mix(variant: MixerVariant, params: Optional[MixerParams], e_in, e_pos) -> Tensor:
    """Combine content and positional embeddings into the first-layer input."""
    variant = MixerVariant(variant)
    e_in, e_pos = T.as_tensor(e_in), T.as_tensor(e_pos)
    if e_in.shape[-1] != e_pos.shape[-1]:
        raise DimMismatch(f"embedding dims differ: {e_in.shape[-1]} vs {e_pos.shape[-1]}")
    d = e_in.shape[-1]
    V = MixerVariant
    if variant is V.DEFAULT:
        return e_in + e_pos
    if variant is V.HARDCODED_NORM:
        return T.l2_normalize(e_in) + T.l2_normalize(e_pos)
    if variant is V.LAYER_NORM_MIX:
        return T.layer_norm(e_in) + T.layer_norm(e_pos)
    beta = _check_gain(params.beta if params else None, d, "beta")
    if variant in (V.LEARNABLE_SCALING_SCALAR, V.LEARNABLE_SCALING_VEC):
        return e_in + beta * e_pos
    alpha = _check_gain(params.alpha if params else None, d, "alpha")
    if variant in (V.WEIGHTED_SUM, V.WEIGHTED_SUM_VEC):
        return alpha * T.l2_normalize(e_in) + beta * T.l2_normalize(e_pos)
    return alpha * e_in + beta * e_pos


def pos_input_ratio(params: MixerParams) -> float:
    """Dimension-averaged beta/alpha; above 1 means position outweighs content."""
    if params.alpha is None or params.beta is None:
        raise PosEncodingError("pos_input_ratio needs both alpha and beta gains")
    alpha, beta = params.alpha.data, params.beta.data
    if np.any(alpha == 0):
        raise DivisionByZeroAlpha("alpha has a zero entry")
    return float(np.mean(np.broadcast_to(beta, np.broadcast_shapes(alpha.shape, beta.shape)) / alpha))


# -- relative biases ---------------------------------------------------------

def alibi_slopes(n_heads: int, start: float, ratio: Optional[float] = None) -> np.ndarray:
    if n_heads < 1:
        raise ValueError("n_heads must be >= 1")
    if ratio is None:
        ratio = 2.0 ** (-8.0 / n_heads)
    return start * ratio ** np.arange(n_heads, dtype=np.float64)


@dataclass
class RpeSlopes:
    """Per-head slopes for each direction group of one bias variant."""

    variant: RpeVariant
    groups: dict[str, np.ndarray] = field(default_factory=dict)

    @classmethod
    def default(cls, variant: RpeVariant, n_heads: int) -> "RpeSlopes":
        variant = RpeVariant(variant)
        if variant is RpeVariant.NONE:
            return cls(variant, {})
        if variant is RpeVariant.ALIBI_1D:
            start = 2.0 ** (-8.0 / n_heads)
            return cls(variant, {"alibi": alibi_slopes(n_heads, start)})
        return cls(variant, {name: alibi_slopes(n_heads, 2.0 ** -power)
                             for name, power in SLOPE_STARTS[variant].items()})

    @property
    def n_heads(self) -> int:
        return len(next(iter(self.groups.values()))) if self.groups else 0


_GROUPS = {
    RpeVariant.NONE: (),
    RpeVariant.ALIBI_1D: ("alibi",),
    RpeVariant.TWO_DIR: ("before", "after"),
    RpeVariant.FOUR_DIAG: ("tl", "tr", "dl", "dr"),
    RpeVariant.FOUR_CARDINAL: ("up", "down", "left", "right"),
}


def rpe_bias(
    variant: RpeVariant,
    coords_q: np.ndarray,
    coords_k: np.ndarray,
    index_q: np.ndarray,
    index_k: np.ndarray,
    slopes: RpeSlopes,
    n_heads: Optional[int] = None,
) -> np.ndarray:
    """Additive attention bias of shape (heads, L_q, L_k); entries are -slope * distance.

    `coords_*` are (L, 2) arrays of (x, y); `index_*` are raster positions.
    Distances are Manhattan on coordinates, except Alibi1D which uses
    |index_q - index_k|.
    """
    variant = RpeVariant(variant)
    want = _GROUPS[variant]
    if set(slopes.groups) != set(want):
        raise SlopeCountMismatch(f"{variant.value} needs slope groups {want}, got {sorted(slopes.groups)}")
    coords_q = np.asarray(coords_q, dtype=np.int64).reshape(-1, 2)
    coords_k = np.asarray(coords_k, dtype=np.int64).reshape(-1, 2)
    lq, lk = len(coords_q), len(coords_k)
    if variant is RpeVariant.NONE:
        return np.zeros((n_heads or 1, lq, lk))
    lens = {len(s) for s in slopes.groups.values()}
    if len(lens) != 1:
        raise SlopeCountMismatch("every slope group needs the same number of heads")
    h = lens.pop()
    if n_heads is not None and h != n_heads:
        raise SlopeCountMismatch(f"slopes cover {h} heads, model has {n_heads}")
    g = {k: np.asarray(v, dtype=np.float64)[:, None, None] for k, v in slopes.groups.items()}

    index_q = np.asarray(index_q, dtype=np.int64)
    index_k = np.asarray(index_k, dtype=np.int64)
    if variant is RpeVariant.ALIBI_1D:
        dist = np.abs(index_q[:, None] - index_k[None, :]).astype(np.float64)
        return -(g["alibi"] * dist)

    dx = (coords_k[None, :, 0] - coords_q[:, None, 0]).astype(np.float64)
    dy = (coords_k[None, :, 1] - coords_q[:, None, 1]).astype(np.float64)
    dist = np.abs(dx) + np.abs(dy)
    if variant is RpeVariant.TWO_DIR:
        before = index_k[None, :] <= index_q[:, None]
        return -np.where(before, g["before"] * dist, g["after"] * dist)
    if variant is RpeVariant.FOUR_DIAG:
        # Axis-aligned offsets fall to tl when the key precedes in raster order, else dr.
        raster_before = (dy < 0) | ((dy == 0) & (dx < 0))
        up = (dy < 0) | ((dy == 0) & raster_before)
        left = (dx < 0) | ((dx == 0) & raster_before)
        slope = np.where(up, np.where(left, g["tl"], g["tr"]), np.where(left, g["dl"], g["dr"]))
        return -(slope * dist)
    # FOUR_CARDINAL: each axis component scaled by its own direction's slope.
    x_term = g["left"] * np.maximum(-dx, 0) + g["right"] * np.maximum(dx, 0)
    y_term = g["up"] * np.maximum(-dy, 0) + g["down"] * np.maximum(dy, 0)
    return -(x_term + y_term)


# -- first-layer inputs --------------------------------------------------------

def positional_encodings(xs, ys, obj, cfg: PosEncodingConfig) -> np.ndarray:
    """Fixed (non-learned) encodings for the sinusoidal schemes."""
    if cfg.scheme is Scheme.APE_2D:
        return ape_2d(xs, ys, cfg.d_model)
    if cfg.scheme is Scheme.OPE_APE_2D:
        if obj is None:
            raise MissingObjectIndices("OPE needs per-token object indices")
        return ope(obj, xs, ys, cfg.d_model)
    raise PosEncodingError(f"{cfg.scheme.value} is learned, not a fixed encoding")


def build_position_inputs(
    tg: TokenizedGrid,
    cfg: PosEncodingConfig,
    params: Optional[MixerParams],
    embed: Tensor,
    learned_pos: Optional[Tensor] = None,
) -> Tensor:
    """h0 for each token: mix(token embedding, positional encoding)."""
    e_in = T.embedding(embed, tg.tokens)
    if cfg.scheme is Scheme.LEARNED_1D:
        if learned_pos is None:
            raise PosEncodingError("Learned1D needs a learned position table")
        e_pos = T.embedding(learned_pos, np.arange(len(tg)))
    else:
        if cfg.scheme is Scheme.OPE_APE_2D and (tg.obj is None or tg.layout.mode.value != "padded2d"):
            raise MissingObjectIndices("OPE needs a 2D tokenization with object indices")
        e_pos = Tensor(positional_encodings(tg.xs, tg.ys, tg.obj, cfg).astype(embed.dtype))
    return mix(cfg.mixer, params, e_in, e_pos)


def format_vector(v: Sequence[float]) -> str:
    return " ".join(f"{float(x):.6f}" for x in v)
