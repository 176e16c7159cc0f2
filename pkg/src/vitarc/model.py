"""Pixel-level encoder-decoder transformer.

Each layer follows the pre-norm recipe with a trailing norm::

    a = LN(h);  o = Attn(a) + h;  f = FFN(LN(o)) + o;  h' = LN(f)

Decoder layers insert a cross-attention block between self-attention and
the feed-forward block. Every attention site adds a per-head bias built
from template coordinates (zero when relative biases are off).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Optional, Sequence, Union

import numpy as np

from . import tensor as T
from .posenc import (
    MixerParams,
    MixerVariant,
    PosEncodingConfig,
    RpeSlopes,
    RpeVariant,
    Scheme,
    mix,
    positional_encodings,
    rpe_bias,
)
from .tensor import Tensor
from .tokenizer import START, VOCAB_SIZE, LayoutConfig, Mode, TokenizedGrid, template_coords

NEG_INF = -1e9
Params = dict[str, Tensor]


class ConfigMismatch(ValueError):
    pass


@dataclass(frozen=True)
class ModelConfig:
    n_layers: int = 3
    n_heads: int = 8
    d_model: int = 128
    d_ff: Optional[int] = None
    vocab_size: int = VOCAB_SIZE
    layout: LayoutConfig = field(default_factory=LayoutConfig)
    scheme: Scheme = Scheme.APE_2D
    mixer: MixerVariant = MixerVariant.DEFAULT
    rpe: RpeVariant = RpeVariant.NONE
    connectivity: int = 8
    background: int = 0
    dtype: str = "float64"

    def __post_init__(self):
        if self.d_model % self.n_heads:
            raise ValueError(f"d_model={self.d_model} not divisible by n_heads={self.n_heads}")
        if self.d_ff is None:
            object.__setattr__(self, "d_ff", 4 * self.d_model)
        for name, kind in (("scheme", Scheme), ("mixer", MixerVariant), ("rpe", RpeVariant)):
            object.__setattr__(self, name, kind(getattr(self, name)))
        if self.scheme is Scheme.OPE_APE_2D and self.layout.mode is not Mode.PADDED_2D:
            raise ValueError("OPE requires the Padded2D layout")
        self.posenc  # validates d_model against the scheme

    @property
    def posenc(self) -> PosEncodingConfig:
        return PosEncodingConfig(self.d_model, self.scheme, self.mixer, self.rpe)

    @property
    def seq_len(self) -> int:
        return self.layout.seq_len

    @property
    def np_dtype(self):
        return np.dtype(self.dtype)

    def to_dict(self) -> dict:
        return {
            "n_layers": self.n_layers,
            "n_heads": self.n_heads,
            "d_model": self.d_model,
            "d_ff": self.d_ff,
            "vocab_size": self.vocab_size,
            "layout": self.layout.to_dict(),
            "scheme": self.scheme.value,
            "mixer": self.mixer.value,
            "rpe": self.rpe.value,
            "connectivity": self.connectivity,
            "background": self.background,
            "dtype": self.dtype,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        d = dict(d)
        d["layout"] = LayoutConfig.from_dict(d["layout"])
        return cls(**d)


# -- parameters ----------------------------------------------------------------

def param_shapes(cfg: ModelConfig) -> dict[str, tuple[int, ...]]:
    """Name -> shape for every parameter, in canonical order."""
    d, f, v = cfg.d_model, cfg.d_ff, cfg.vocab_size
    shapes: dict[str, tuple[int, ...]] = {"embed": (v, d)}
    if cfg.scheme is Scheme.LEARNED_1D:
        shapes["pos_table"] = (cfg.seq_len, d)
    gain_shape = (d,) if cfg.mixer.is_vector else (1,)
    for g in cfg.mixer.gains:
        shapes[f"mixer.{g}"] = gain_shape

    def attn(prefix):
        for w in ("wq", "wk", "wv", "wo"):
            shapes[f"{prefix}.{w}"] = (d, d)

    def ln(prefix):
        shapes[f"{prefix}.g"] = (d,)
        shapes[f"{prefix}.b"] = (d,)

    def ffn(prefix):
        shapes[f"{prefix}.w1"] = (d, f)
        shapes[f"{prefix}.b1"] = (f,)
        shapes[f"{prefix}.w2"] = (f, d)
        shapes[f"{prefix}.b2"] = (d,)

    for n in range(cfg.n_layers):
        p = f"enc.{n}"
        ln(f"{p}.ln_attn"); attn(f"{p}.attn"); ln(f"{p}.ln_ff"); ffn(f"{p}.ff"); ln(f"{p}.ln_out")
    for n in range(cfg.n_layers):
        p = f"dec.{n}"
        ln(f"{p}.ln_self"); attn(f"{p}.self")
        ln(f"{p}.ln_cross"); attn(f"{p}.cross")
        ln(f"{p}.ln_ff"); ffn(f"{p}.ff"); ln(f"{p}.ln_out")
    shapes["head.w"] = (d, v)
    shapes["head.b"] = (v,)
    return shapes


def init_params(cfg: ModelConfig, seed: int, zero_head: bool = False, init_std: float = 0.02) -> Params:
    """N(0, init_std) weights, zero biases, unit norm gains, unit mixer gains."""
    rng = np.random.default_rng(seed)
    params: Params = {}
    for name, shape in param_shapes(cfg).items():
        leaf = name.rsplit(".", 1)[-1]
        if name.startswith("mixer.") or leaf == "g":
            arr = np.ones(shape)
        elif leaf in ("b", "b1", "b2"):
            arr = np.zeros(shape)
        elif name == "head.w" and zero_head:
            arr = np.zeros(shape)
        else:
            arr = rng.normal(0.0, init_std, size=shape)
        params[name] = Tensor(arr.astype(cfg.np_dtype), requires_grad=True, name=name)
    return params


def mixer_params(params: Params) -> MixerParams:
    return MixerParams(params.get("mixer.alpha"), params.get("mixer.beta"))


def check_params(params: Params, cfg: ModelConfig) -> None:
    want = param_shapes(cfg)
    if set(want) != set(params):
        missing = sorted(set(want) - set(params))
        extra = sorted(set(params) - set(want))
        raise ConfigMismatch(f"parameter names differ (missing={missing[:3]}, extra={extra[:3]})")
    for name, shape in want.items():
        if params[name].shape != shape:
            raise ConfigMismatch(f"{name}: shape {params[name].shape} != expected {shape}")


# -- static per-config tensors ------------------------------------------------------

class Statics:
    """Template-derived constants shared by every sample under one config."""

    def __init__(self, cfg: ModelConfig):
        self.cfg = cfg
        xs, ys = template_coords(cfg.layout)
        self.xs, self.ys = xs, ys
        self.coords = np.stack([xs, ys], axis=1)
        self.index = np.arange(cfg.seq_len)

    @cached_property
    def bias(self) -> np.ndarray:
        """Relative bias (heads, L, L); query and key share the template."""
        cfg = self.cfg
        if cfg.rpe is RpeVariant.NONE:
            return np.zeros((1, cfg.seq_len, cfg.seq_len), dtype=cfg.np_dtype)
        slopes = RpeSlopes.default(cfg.rpe, cfg.n_heads)
        b = rpe_bias(cfg.rpe, self.coords, self.coords, self.index, self.index, slopes, cfg.n_heads)
        return b.astype(cfg.np_dtype)

    @cached_property
    def causal(self) -> np.ndarray:
        L = self.cfg.seq_len
        return np.triu(np.full((L, L), NEG_INF, dtype=self.cfg.np_dtype), k=1)

    @cached_property
    def dec_self_bias(self) -> np.ndarray:
        return self.bias + self.causal[None]

    @cached_property
    def fixed_pos(self) -> Optional[np.ndarray]:
        """Positional encodings for APE schemes; for OPE the o=0 (decoder) variant."""
        cfg = self.cfg
        if cfg.scheme is Scheme.LEARNED_1D:
            return None
        obj = np.zeros_like(self.xs) if cfg.scheme is Scheme.OPE_APE_2D else None
        return positional_encodings(self.xs, self.ys, obj, cfg.posenc).astype(cfg.np_dtype)

    def src_pos(self, obj: Optional[np.ndarray]) -> Optional[np.ndarray]:
        cfg = self.cfg
        if cfg.scheme is Scheme.OPE_APE_2D:
            if obj is None:
                raise ConfigMismatch("OPE config needs object indices on the source tokens")
            return positional_encodings(self.xs, self.ys, obj, cfg.posenc).astype(cfg.np_dtype)
        return self.fixed_pos


_STATICS: dict[ModelConfig, Statics] = {}


def statics(cfg: ModelConfig) -> Statics:
    s = _STATICS.get(cfg)
    if s is None:
        s = _STATICS[cfg] = Statics(cfg)
    return s


# -- building blocks ---------------------------------------------------------------

def biased_attention(q: Tensor, k: Tensor, v: Tensor, bias=None, mask=None, return_weights: bool = False):
    """softmax(q k^T / sqrt(d_h) + bias + mask) v over the last two axes."""
    if q.shape[-1] != k.shape[-1] or k.shape[-2] != v.shape[-2]:
        raise T.ShapeMismatch(f"q{q.shape} k{k.shape} v{v.shape}")
    scores = (q @ k.swapaxes(-1, -2)) * (1.0 / math.sqrt(q.shape[-1]))
    for extra in (bias, mask):
        if extra is None:
            continue
        extra = np.asarray(extra.data if isinstance(extra, Tensor) else extra)
        if extra.shape[-2:] != scores.shape[-2:]:
            raise T.ShapeMismatch(f"bias {extra.shape} vs scores {scores.shape}")
        scores = scores + extra.astype(scores.dtype, copy=False)
    w = T.softmax(scores, axis=-1)
    out = w @ v
    return (out, w) if return_weights else out


def _heads(x: Tensor, n_heads: int) -> Tensor:
    b, l, d = x.shape
    return x.reshape(b, l, n_heads, d // n_heads).transpose(0, 2, 1, 3)


def _merge(x: Tensor) -> Tensor:
    b, h, l, dh = x.shape
    return x.transpose(0, 2, 1, 3).reshape(b, l, h * dh)


def _ln(params: Params, prefix: str, x: Tensor) -> Tensor:
    return T.layer_norm(x, params[f"{prefix}.g"], params[f"{prefix}.b"])


def _ffn(params: Params, prefix: str, x: Tensor) -> Tensor:
    hdn = T.gelu(x @ params[f"{prefix}.w1"] + params[f"{prefix}.b1"])
    return hdn @ params[f"{prefix}.w2"] + params[f"{prefix}.b2"]


def _mha(params: Params, prefix: str, x_q: Tensor, x_kv: Tensor, n_heads: int, bias) -> Tensor:
    q = _heads(x_q @ params[f"{prefix}.wq"], n_heads)
    k = _heads(x_kv @ params[f"{prefix}.wk"], n_heads)
    v = _heads(x_kv @ params[f"{prefix}.wv"], n_heads)
    return _merge(biased_attention(q, k, v, bias)) @ params[f"{prefix}.wo"]


def _embed(params: Params, cfg: ModelConfig, tokens: np.ndarray, pos: Optional[np.ndarray], positions) -> Tensor:
    e_in = T.embedding(params["embed"], tokens)
    if cfg.scheme is Scheme.LEARNED_1D:
        e_pos = T.embedding(params["pos_table"], positions)
    else:
        e_pos = Tensor(pos)
    return mix(cfg.mixer, mixer_params(params), e_in, e_pos)


# -- batches ---------------------------------------------------------------------

@dataclass
class Batch:
    src: np.ndarray  # (B, L) token ids
    src_obj: Optional[np.ndarray]  # (B, L) object indices, OPE only
    tgt: Optional[np.ndarray] = None  # (B, L) gold output tokens

    @property
    def dec_in(self) -> np.ndarray:
        """Teacher-forcing input: targets shifted right behind <s>."""
        start = np.full((len(self.tgt), 1), START, dtype=np.int64)
        return np.concatenate([start, self.tgt[:, :-1]], axis=1)


def make_batch(cfg: ModelConfig, src: Sequence[TokenizedGrid], tgt: Optional[Sequence[TokenizedGrid]] = None) -> Batch:
    L = cfg.seq_len
    for tg in list(src) + list(tgt or []):
        if len(tg) != L or tg.layout.mode is not cfg.layout.mode:
            raise ConfigMismatch(f"token sequence of length {len(tg)} ({tg.layout.mode.value}) "
                                 f"does not fit layout with L={L} ({cfg.layout.mode.value})")
    src_obj = None
    if cfg.scheme is Scheme.OPE_APE_2D:
        if any(tg.obj is None for tg in src):
            raise ConfigMismatch("OPE config needs object indices on the source tokens")
        src_obj = np.stack([tg.obj for tg in src])
    return Batch(
        np.stack([tg.tokens for tg in src]),
        src_obj,
        np.stack([tg.tokens for tg in tgt]) if tgt is not None else None,
    )


# -- forward passes ------------------------------------------------------------------

def encode(params: Params, cfg: ModelConfig, batch: Batch) -> Tensor:
    st = statics(cfg)
    pos = st.src_pos(batch.src_obj)
    h = _embed(params, cfg, batch.src, pos, st.index)
    for n in range(cfg.n_layers):
        p = f"enc.{n}"
        a = _ln(params, f"{p}.ln_attn", h)
        o = _mha(params, f"{p}.attn", a, a, cfg.n_heads, st.bias) + h
        f = _ffn(params, f"{p}.ff", _ln(params, f"{p}.ln_ff", o)) + o
        h = _ln(params, f"{p}.ln_out", f)
    return h


def decode_train(params: Params, cfg: ModelConfig, memory: Tensor, dec_in: np.ndarray) -> Tensor:
    st = statics(cfg)
    h = _embed(params, cfg, dec_in, st.fixed_pos, st.index)
    for n in range(cfg.n_layers):
        p = f"dec.{n}"
        a = _ln(params, f"{p}.ln_self", h)
        o = _mha(params, f"{p}.self", a, a, cfg.n_heads, st.dec_self_bias) + h
        c = _mha(params, f"{p}.cross", _ln(params, f"{p}.ln_cross", o), memory, cfg.n_heads, st.bias) + o
        f = _ffn(params, f"{p}.ff", _ln(params, f"{p}.ln_ff", c)) + c
        h = _ln(params, f"{p}.ln_out", f)
    return h @ params["head.w"] + params["head.b"]


def forward_train(params: Params, cfg: ModelConfig, src, tgt) -> Tensor:
    """Teacher-forced logits of shape (B, L, V), or (L, V) for a single pair."""
    single = isinstance(src, TokenizedGrid)
    batch = src if isinstance(src, Batch) else make_batch(cfg, [src] if single else src, [tgt] if single else tgt)
    logits = decode_train(params, cfg, encode(params, cfg, batch), batch.dec_in)
    return logits.reshape(logits.shape[1:]) if single else logits


def loss_fn(params: Params, cfg: ModelConfig, batch: Batch) -> Tensor:
    """Cross-entropy summed over every template position, averaged over the batch."""
    logits = forward_train(params, cfg, batch, None)
    return T.cross_entropy(logits, batch.tgt) * (1.0 / len(batch.src))


def greedy_decode_batch(params: Params, cfg: ModelConfig, batch: Batch) -> np.ndarray:
    """Argmax generation of all L template slots, one position at a time.

    Keys and values of earlier decoder positions are cached per layer; the
    arithmetic per position matches the teacher-forced pass.
    """
    st = statics(cfg)
    L, H = cfg.seq_len, cfg.n_heads
    B = len(batch.src)
    out = np.zeros((B, L), dtype=np.int64)
    with T.no_grad():
        memory = encode(params, cfg, batch)
        cross_kv = []
        for n in range(cfg.n_layers):
            p = f"dec.{n}.cross"
            cross_kv.append((_heads(memory @ params[f"{p}.wk"], H), _heads(memory @ params[f"{p}.wv"], H)))
        self_k: list[list[np.ndarray]] = [[] for _ in range(cfg.n_layers)]
        self_v: list[list[np.ndarray]] = [[] for _ in range(cfg.n_layers)]
        prev = np.full((B, 1), START, dtype=np.int64)
        bias_rows = st.bias if st.bias.shape[0] > 1 else np.broadcast_to(st.bias, (1,) + st.bias.shape[1:])
        for t in range(L):
            pos = st.fixed_pos[t:t + 1] if st.fixed_pos is not None else None
            h = _embed(params, cfg, prev, pos, np.array([t]))
            for n in range(cfg.n_layers):
                p = f"dec.{n}"
                a = _ln(params, f"{p}.ln_self", h)
                q = _heads(a @ params[f"{p}.self.wq"], H)
                self_k[n].append(_heads(a @ params[f"{p}.self.wk"], H).data)
                self_v[n].append(_heads(a @ params[f"{p}.self.wv"], H).data)
                k = Tensor(np.concatenate(self_k[n], axis=2))
                v = Tensor(np.concatenate(self_v[n], axis=2))
                att = biased_attention(q, k, v, bias_rows[:, t:t + 1, :t + 1])
                o = _merge(att) @ params[f"{p}.self.wo"] + h
                cq = _heads(_ln(params, f"{p}.ln_cross", o) @ params[f"{p}.cross.wq"], H)
                ck, cv = cross_kv[n]
                c = _merge(biased_attention(cq, ck, cv, bias_rows[:, t:t + 1, :])) @ params[f"{p}.cross.wo"] + o
                f = _ffn(params, f"{p}.ff", _ln(params, f"{p}.ln_ff", c)) + c
                h = _ln(params, f"{p}.ln_out", f)
            logits = (h @ params["head.w"] + params["head.b"]).data[:, 0]
            out[:, t] = np.argmax(logits, axis=-1)
            prev = out[:, t:t + 1]
    return out


def greedy_decode(params: Params, cfg: ModelConfig, src: Union[TokenizedGrid, Sequence[TokenizedGrid]]):
    """Decode one source (returns a TokenizedGrid) or a list of them."""
    single = isinstance(src, TokenizedGrid)
    srcs = [src] if single else list(src)
    tokens = greedy_decode_batch(params, cfg, make_batch(cfg, srcs))
    xs, ys = template_coords(cfg.layout)
    outs = [TokenizedGrid(row, xs, ys, cfg.layout) for row in tokens]
    return outs[0] if single else outs


def attention_weights(params: Params, cfg: ModelConfig, batch: Batch) -> dict[str, np.ndarray]:
    """Raw cross-attention weights (B, heads, L_out, L_in) per decoder layer, teacher-forced."""
    st = statics(cfg)
    weights = {}
    with T.no_grad():
        memory = encode(params, cfg, batch)
        h = _embed(params, cfg, batch.dec_in, st.fixed_pos, st.index)
        for n in range(cfg.n_layers):
            p = f"dec.{n}"
            a = _ln(params, f"{p}.ln_self", h)
            o = _mha(params, f"{p}.self", a, a, cfg.n_heads, st.dec_self_bias) + h
            x_q = _ln(params, f"{p}.ln_cross", o)
            q = _heads(x_q @ params[f"{p}.cross.wq"], cfg.n_heads)
            k = _heads(memory @ params[f"{p}.cross.wk"], cfg.n_heads)
            v = _heads(memory @ params[f"{p}.cross.wv"], cfg.n_heads)
            att, w = biased_attention(q, k, v, st.bias, return_weights=True)
            weights[f"dec.{n}.cross"] = w.data
            c = _merge(att) @ params[f"{p}.cross.wo"] + o
            f = _ffn(params, f"{p}.ff", _ln(params, f"{p}.ln_ff", c)) + c
            h = _ln(params, f"{p}.ln_out", f)
    return weights
