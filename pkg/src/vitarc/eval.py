"""Strict exact-match evaluation and the ablation harness."""

from __future__ import annotations

import csv
import io
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable, Optional, Sequence

import numpy as np

from .arcgrid import grids_equal
from .model import ModelConfig, Params, greedy_decode_batch, make_batch, mixer_params
from .posenc import MixerVariant, RpeVariant, Scheme, pos_input_ratio
from .tasks import Sample, TaskSpec, generate_splits
from .tokenizer import LayoutConfig, Mode, TokenizedGrid, TokenizerError, decode
from .train import TrainConfig, encode_samples, train_loop

log = logging.getLogger(__name__)


class EvalError(ValueError):
    pass


class LengthMismatch(EvalError):
    pass


class EmptyDataset(EvalError):
    pass


def _tokens(x) -> np.ndarray:
    return np.asarray(x.tokens if isinstance(x, TokenizedGrid) else x)


def exact_match(pred, gold) -> bool:
    """Every token must match, pads and border tokens included."""
    p, g = _tokens(pred), _tokens(gold)
    if p.shape != g.shape:
        raise LengthMismatch(f"prediction has {p.size} tokens, gold has {g.size}")
    return bool(np.array_equal(p, g))


@dataclass
class EvalReport:
    solved: int
    total: int
    solve_rate: float
    token_accuracy: float
    per_sample: list[tuple[int, bool]] = field(default_factory=list)
    # Lenient: decoded grid equals the gold grid (failure analysis only).
    grid_match_rate: float = 0.0


def score(pred_tokens: np.ndarray, gold: Sequence[TokenizedGrid], samples: Optional[Sequence[Sample]] = None,
          layout: Optional[LayoutConfig] = None) -> EvalReport:
    gold_tok = np.stack([_tokens(g) for g in gold])
    pred_tokens = np.asarray(pred_tokens)
    if pred_tokens.shape != gold_tok.shape:
        raise LengthMismatch(f"predictions {pred_tokens.shape} vs gold {gold_tok.shape}")
    per = [(i, exact_match(p, g)) for i, (p, g) in enumerate(zip(pred_tokens, gold_tok))]
    solved = sum(ok for _, ok in per)
    total = len(per)
    lenient = 0
    if samples is not None and layout is not None:
        for p, s in zip(pred_tokens, samples):
            try:
                hint = (s.output.height, s.output.width)
                lenient += grids_equal(decode(p, layout, shape_hint=hint, strict=False), s.output)
            except TokenizerError:
                pass
    return EvalReport(
        solved=solved,
        total=total,
        solve_rate=solved / total,
        token_accuracy=float((pred_tokens == gold_tok).mean()),
        per_sample=per,
        grid_match_rate=lenient / total,
    )


def evaluate(
    params: Optional[Params],
    cfg: ModelConfig,
    samples: Sequence[Sample],
    predict: Optional[Callable[[list[TokenizedGrid]], np.ndarray]] = None,
    batch_size: int = 256,
) -> EvalReport:
    """Greedy-decode every input and compare token-for-token with the encoded gold output.

    `predict` replaces the model (e.g. an oracle); it maps a list of source
    token grids to an (N, L) array of predicted tokens.
    """
    if not samples:
        raise EmptyDataset("no samples to evaluate")
    srcs, golds = encode_samples(cfg, samples)
    if predict is None:
        chunks = [greedy_decode_batch(params, cfg, make_batch(cfg, srcs[i:i + batch_size]))
                  for i in range(0, len(srcs), batch_size)]
        preds = np.concatenate(chunks)
    else:
        preds = np.asarray(predict(srcs))
    return score(preds, golds, samples, cfg.layout)


# -- registered model configurations ------------------------------------------------

CONFIG_LABELS = (
    "vit-vanilla",
    "vitarc-vt",
    "vitarc",
    "minus-border",
    "minus-pemixer",
    "minus-rpe",
    "minus-ope",
)


def model_config(
    label: str,
    h_max: int,
    w_max: int,
    n_layers: int = 3,
    n_heads: int = 8,
    d_model: int = 128,
    dtype: str = "float64",
) -> ModelConfig:
    """The named architecture at the given size.

    vit-vanilla: flat 1D padding, learned 1D positions.
    vitarc-vt: 2D template with border tokens, 2D sinusoidal positions.
    vitarc: vitarc-vt plus vector mixer gains, two-direction 2D bias, object encodings.
    minus-*: one component removed (border tokens from vitarc-vt, the rest from vitarc).
    """
    if label not in CONFIG_LABELS:
        raise EvalError(f"unknown config {label!r}; choose from {', '.join(CONFIG_LABELS)}")
    padded = LayoutConfig(h_max, w_max, Mode.PADDED_2D, borders=True)
    base = dict(n_layers=n_layers, n_heads=n_heads, d_model=d_model, dtype=dtype)
    full = dict(base, layout=padded, scheme=Scheme.OPE_APE_2D,
                mixer=MixerVariant.WEIGHTED_SUM_NO_NORM_VEC, rpe=RpeVariant.TWO_DIR)
    table = {
        "vit-vanilla": dict(base, layout=LayoutConfig(h_max, w_max, Mode.FLAT_1D), scheme=Scheme.LEARNED_1D),
        "vitarc-vt": dict(base, layout=padded, scheme=Scheme.APE_2D),
        "vitarc": full,
        "minus-border": dict(base, layout=replace(padded, borders=False), scheme=Scheme.APE_2D),
        "minus-pemixer": dict(full, mixer=MixerVariant.DEFAULT),
        "minus-rpe": dict(full, rpe=RpeVariant.NONE),
        "minus-ope": dict(full, scheme=Scheme.APE_2D),
    }
    return ModelConfig(**table[label])


# -- ablation harness -----------------------------------------------------------------

@dataclass(frozen=True)
class AblationSettings:
    n_train: int = 1000
    n_test: int = 200
    steps: int = 2000
    batch_size: int = 8
    lr: float = 1e-3
    n_layers: int = 2
    n_heads: int = 4
    d_model: int = 64
    dtype: str = "float64"


@dataclass(frozen=True)
class AblationRow:
    task: str
    config: str
    seed: int
    solved: int
    total: int
    solve_rate: float
    token_accuracy: float
    pos_input_ratio: Optional[float] = None


CSV_COLUMNS = ("task", "config", "seed", "solved", "total", "solve_rate", "token_accuracy", "pos_input_ratio")


def run_cell(label: str, spec: TaskSpec, seed: int, settings: AblationSettings) -> AblationRow:
    """Train one (config, task, seed) cell and evaluate it on held-out samples.

    The data depend only on (task spec, seed), so every config sees the
    same training and test sets.
    """
    data = generate_splits(replace(spec, seed=spec.seed * 1_000_003 + seed), settings.n_train, 0, settings.n_test)
    cfg = model_config(label, spec.max_size, spec.max_size, settings.n_layers, settings.n_heads,
                       settings.d_model, settings.dtype)
    tcfg = TrainConfig(lr=settings.lr, batch_size=settings.batch_size, max_steps=settings.steps, seed=seed,
                       log_every=max(settings.steps // 10, 1))
    result = train_loop(cfg, tcfg, data.split("train"))
    rep = evaluate(result.params, cfg, data.split("test"))
    ratio = None
    if cfg.mixer.is_vector and cfg.mixer.gains == ("alpha", "beta"):
        ratio = pos_input_ratio(mixer_params(result.params))
    log.info("%s %s seed=%d solve_rate=%.3f", spec.task_id, label, seed, rep.solve_rate)
    return AblationRow(spec.task_id, label, seed, rep.solved, rep.total, rep.solve_rate, rep.token_accuracy, ratio)


def _run_cell_args(args):
    return run_cell(*args)


def ablation_run(
    labels: Sequence[str],
    specs: Sequence[TaskSpec],
    seeds: Sequence[int],
    settings: AblationSettings = AblationSettings(),
    workers: int = 1,
) -> list[AblationRow]:
    """Every (config, task, seed) cell; rows sorted by (task, config, seed)."""
    if not labels or not seeds:
        raise EvalError("need at least one config and one seed")
    unknown = [label for label in labels if label not in CONFIG_LABELS]
    if unknown:
        raise EvalError(f"unknown config {unknown[0]!r}; choose from {', '.join(CONFIG_LABELS)}")
    jobs = [(label, spec, seed, settings) for spec in specs for label in labels for seed in seeds]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(_run_cell_args, jobs))
    else:
        rows = [run_cell(*job) for job in jobs]
    return sorted(rows, key=lambda r: (r.task, r.config, r.seed))


def rows_to_csv(rows: Sequence[AblationRow]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for r in rows:
        ratio = "" if r.pos_input_ratio is None else f"{r.pos_input_ratio:.6f}"
        w.writerow([r.task, r.config, r.seed, r.solved, r.total, f"{r.solve_rate:.6f}",
                    f"{r.token_accuracy:.6f}", ratio])
    return buf.getvalue()


def report_to_csv(report: EvalReport, task: str = "", config: str = "", seed: int | str = "",
                  ratio: Optional[float] = None) -> str:
    return rows_to_csv([AblationRow(task, config, seed, report.solved, report.total, report.solve_rate,
                                    report.token_accuracy, ratio)])
