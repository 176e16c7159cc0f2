"""Command-line entry point: `vitarc <subcommand> [flags]`.

Every subcommand accepts `--config FILE`, a JSON object keyed by flag
names (dashes or underscores). Flags given on the command line win over
the file. Exit codes: 0 success, 1 runtime error, 2 usage error.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Any, Callable, Optional, Sequence

import numpy as np

from . import eval as ev
from . import model as M
from .arcgrid import Grid, GridError
from .posenc import (
    MixerVariant,
    PosEncodingConfig,
    RpeSlopes,
    RpeVariant,
    Scheme,
    format_vector,
    pos_input_ratio,
    positional_encodings,
    rpe_bias,
)
from .segmentation import connected_components, object_index_map, segment
from .tasks import TASK_IDS, TaskSpec, generate_splits, read_dataset, write_dataset
from .tensor import grad_check
from .tokenizer import LayoutConfig, Mode, dump_table, encode, template_coords
from .train import TrainConfig, encode_samples, load_checkpoint, train_loop, write_loss_log

log = logging.getLogger("vitarc")

LOG_LEVELS = {"error": logging.ERROR, "info": logging.INFO, "debug": logging.DEBUG}


class UsageError(Exception):
    pass


@dataclass(frozen=True)
class Opt:
    flag: str
    type: Callable = str
    default: Any = None
    required: bool = False
    help: str = ""
    choices: Optional[Sequence[str]] = None

    @property
    def dest(self) -> str:
        return self.flag.lstrip("-").replace("-", "_")


def _bool(s) -> bool:
    if isinstance(s, bool):
        return s
    if str(s).lower() in ("1", "true", "yes", "on"):
        return True
    if str(s).lower() in ("0", "false", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"expected a boolean, got {s!r}")


def _ints(s) -> list[int]:
    if isinstance(s, list):
        return [int(x) for x in s]
    return [int(x) for x in str(s).split(",") if x.strip()]


def _strs(s) -> list[str]:
    if isinstance(s, list):
        return [str(x) for x in s]
    return [x.strip() for x in str(s).split(",") if x.strip()]


def _grid(s) -> Grid:
    rows = json.loads(s) if isinstance(s, str) else s
    try:
        return Grid.from_rows(rows)
    except (GridError, TypeError) as e:
        raise argparse.ArgumentTypeError(f"bad grid: {e}")


MODEL_OPTS = [
    Opt("--model", default="vitarc", choices=ev.CONFIG_LABELS, help="registered architecture"),
    Opt("--h-max", int, help="template height (default: largest grid in the data)"),
    Opt("--w-max", int, help="template width (default: largest grid in the data)"),
    Opt("--layers", int, 2, help="encoder and decoder layers each"),
    Opt("--heads", int, 4, help="attention heads"),
    Opt("--d-model", int, 64, help="model width"),
    Opt("--dtype", default="float64", choices=("float64", "float32")),
    Opt("--scheme", choices=[s.value for s in Scheme], help="override the positional scheme"),
    Opt("--mixer", choices=[m.value for m in MixerVariant], help="override the embedding mixer"),
    Opt("--rpe", choices=[r.value for r in RpeVariant], help="override the attention bias"),
]

LAYOUT_OPTS = [
    Opt("--h-max", int, 30, help="template height"),
    Opt("--w-max", int, 30, help="template width"),
    Opt("--mode", default="padded2d", choices=[m.value for m in Mode]),
    Opt("--borders", _bool, True, help="emit border tokens (true/false)"),
]

COMMANDS: dict[str, tuple[str, list[Opt]]] = {
    "gen-data": ("Generate a synthetic task dataset as JSONL.", [
        Opt("--task", required=True, choices=TASK_IDS),
        Opt("--n", int, required=True, help="training samples"),
        Opt("--n-val", int, 0, help="validation samples"),
        Opt("--n-test", int, 0, help="test samples"),
        Opt("--seed", int, required=True),
        Opt("--out", required=True, help="output JSONL path"),
        Opt("--min-size", int, 1),
        Opt("--max-size", int, 6),
        Opt("--palette", _ints, list(range(10)), help="comma-separated colors"),
    ]),
    "train": ("Train a model and write a checkpoint plus a loss log.", [
        Opt("--data", required=True, help="JSONL dataset (train split is used)"),
        Opt("--out", required=True, help="checkpoint path"),
        Opt("--seed", int, required=True),
        Opt("--steps", int, 1000),
        Opt("--lr", float, 1e-3),
        Opt("--batch-size", int, 8),
        Opt("--log", help="loss log CSV path"),
        Opt("--log-every", int, 50),
        Opt("--checkpoint-every", int, 0),
        Opt("--throughput", _bool, False, help="fill the tokens_per_s column (not reproducible)"),
        *MODEL_OPTS,
    ]),
    "eval": ("Greedy-decode a split and report strict exact match.", [
        Opt("--checkpoint", required=True),
        Opt("--data", required=True),
        Opt("--split", default="test", choices=("train", "val", "test")),
        Opt("--out", help="CSV report path (default: stdout)"),
        Opt("--task", default="", help="task label for the CSV row"),
        Opt("--label", default="", help="config label for the CSV row"),
        Opt("--batch-size", int, 256),
        Opt("--dump-attention", help="write raw cross-attention tensors for the first batch (.npz)"),
    ]),
    "ablate": ("Train and evaluate every (task, config, seed) cell.", [
        Opt("--tasks", _strs, required=True, help="comma-separated task ids"),
        Opt("--configs", _strs, required=True, help="comma-separated config labels"),
        Opt("--seeds", _ints, required=True, help="comma-separated seeds"),
        Opt("--out", required=True, help="CSV report path"),
        Opt("--max-size", int, 6),
        Opt("--data-seed", int, 0, help="base seed for the task generators"),
        Opt("--n-train", int, 1000),
        Opt("--n-test", int, 200),
        Opt("--steps", int, 2000),
        Opt("--lr", float, 1e-3),
        Opt("--batch-size", int, 8),
        Opt("--layers", int, 2),
        Opt("--heads", int, 4),
        Opt("--d-model", int, 64),
        Opt("--dtype", default="float64", choices=("float64", "float32")),
        Opt("--workers", int, 1, help="worker processes"),
    ]),
    "encode-dump": ("Print the token table for one grid.", [
        Opt("--grid", _grid, required=True, help="JSON list of rows"),
        *LAYOUT_OPTS,
        Opt("--objects", _bool, False, help="fill the o column from segmentation"),
        Opt("--connectivity", int, 8, choices=(4, 8)),
    ]),
    "segment-dump": ("Print component labels and object indices side by side.", [
        Opt("--grid", _grid, required=True, help="JSON list of rows"),
        Opt("--connectivity", int, 8, choices=(4, 8)),
        Opt("--background", int, 0),
    ]),
    "posenc-dump": ("Print the positional encoding vector for one position.", [
        Opt("--scheme", default="ape2d", choices=("ape2d", "ope_ape2d")),
        Opt("--x", int, required=True),
        Opt("--y", int, required=True),
        Opt("--o", int, 0),
        Opt("--d", int, required=True, help="model width"),
    ]),
    "rpe-dump": ("Print one head's bias matrix over a layout template as CSV.", [
        Opt("--variant", required=True, choices=[r.value for r in RpeVariant]),
        Opt("--h-max", int, 3),
        Opt("--w-max", int, 3),
        Opt("--heads", int, 8),
        Opt("--head", int, 0, help="which head to print"),
    ]),
    "grad-check": ("Compare backprop with central differences on a small full model.", [
        Opt("--seed", int, required=True),
        Opt("--coords", int, 200),
        Opt("--eps", float, 1e-4),
        Opt("--init-std", float, 0.3),
        Opt("--tol", float, 1e-4, help="exit 1 when the max relative error exceeds this"),
    ]),
}


def build_parser() -> tuple[argparse.ArgumentParser, dict[str, argparse.ArgumentParser]]:
    parser = argparse.ArgumentParser(prog="vitarc", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")
    sub.required = True
    subs = {}
    for name, (desc, opts) in COMMANDS.items():
        p = subs[name] = sub.add_parser(name, help=desc, description=desc)
        p.add_argument("--config", help="JSON file of flag values; command-line flags win")
        for o in opts:
            extra = {"choices": o.choices} if o.choices is not None else {}
            tail = []
            if o.required:
                tail.append("required")
            elif o.default is not None:
                tail.append(f"default: {o.default}")
            help_text = "; ".join(filter(None, [o.help, *tail]))
            p.add_argument(o.flag, dest=o.dest, type=o.type, default=None, help=help_text, **extra)
    return parser, subs


def resolve(command: str, ns: argparse.Namespace) -> argparse.Namespace:
    """Merge the config file under the parsed flags, apply defaults, check required flags."""
    opts = {o.dest: o for o in COMMANDS[command][1]}
    values = {d: getattr(ns, d) for d in opts}
    if ns.config:
        try:
            raw = json.loads(Path(ns.config).read_text())
        except OSError as e:
            raise UsageError(f"cannot read config {ns.config}: {e}")
        except json.JSONDecodeError as e:
            raise UsageError(f"config {ns.config} is not valid JSON: {e}")
        if not isinstance(raw, dict):
            raise UsageError("config file must hold a JSON object")
        for key, val in raw.items():
            dest = key.lstrip("-").replace("-", "_")
            if dest not in opts:
                raise UsageError(f"unknown config key {key!r} for {command}")
            if values[dest] is None:
                o = opts[dest]
                try:
                    val = o.type(val) if val is not None else None
                except (ValueError, TypeError, argparse.ArgumentTypeError) as e:
                    raise UsageError(f"config key {key!r}: {e}")
                if o.choices is not None and val not in o.choices:
                    raise UsageError(f"config key {key!r}: {val!r} not in {list(o.choices)}")
                values[dest] = val
    missing = [o.flag for d, o in opts.items() if o.required and values[d] is None]
    if missing:
        raise UsageError(f"missing required flag{'s' if len(missing) > 1 else ''}: {', '.join(missing)}")
    for d, o in opts.items():
        if values[d] is None:
            values[d] = o.default
    return argparse.Namespace(**values)


# -- subcommands ---------------------------------------------------------------------

def _write_text(path: Optional[str], text: str) -> None:
    if path:
        Path(path).write_text(text)
    else:
        sys.stdout.write(text)


def cmd_gen_data(a) -> None:
    spec = TaskSpec(a.task, min_size=a.min_size, max_size=a.max_size, palette=tuple(a.palette), seed=a.seed)
    ds = generate_splits(spec, a.n, a.n_val, a.n_test)
    write_dataset(ds, a.out)
    log.info("wrote %d samples to %s", len(ds), a.out)


def model_from_args(a, samples) -> M.ModelConfig:
    h_max = a.h_max or max(g.height for s in samples for g in (s.input, s.output))
    w_max = a.w_max or max(g.width for s in samples for g in (s.input, s.output))
    cfg = ev.model_config(a.model, h_max, w_max, a.layers, a.heads, a.d_model, a.dtype)
    overrides = {k: getattr(a, k) for k in ("scheme", "mixer", "rpe") if getattr(a, k) is not None}
    return replace(cfg, **overrides) if overrides else cfg


def cmd_train(a) -> None:
    samples = read_dataset(a.data).split("train")
    if not samples:
        raise ValueError(f"{a.data} has no train samples")
    cfg = model_from_args(a, samples)
    tcfg = TrainConfig(lr=a.lr, batch_size=a.batch_size, max_steps=a.steps, seed=a.seed,
                       log_every=a.log_every, checkpoint_path=a.out, checkpoint_every=a.checkpoint_every)
    result = train_loop(cfg, tcfg, samples, record_throughput=a.throughput)
    if a.log:
        write_loss_log(result.log_rows, a.log)
    log.info("trained %d steps; final loss %.6f", result.steps, result.losses[-1])


def cmd_eval(a) -> None:
    cfg, params = load_checkpoint(a.checkpoint)
    samples = read_dataset(a.data).split(a.split)
    report = ev.evaluate(params, cfg, samples, batch_size=a.batch_size)
    ratio = None
    if cfg.mixer.is_vector and cfg.mixer.gains == ("alpha", "beta"):
        ratio = pos_input_ratio(M.mixer_params(params))
    _write_text(a.out, ev.report_to_csv(report, a.task, a.label, "", ratio))
    if a.dump_attention:
        srcs, tgts = encode_samples(cfg, samples[: a.batch_size])
        weights = M.attention_weights(params, cfg, M.make_batch(cfg, srcs, tgts))
        np.savez(a.dump_attention, **weights)
    log.info("solved %d/%d", report.solved, report.total)


def cmd_ablate(a) -> None:
    specs = [TaskSpec(t, max_size=a.max_size, seed=a.data_seed) for t in a.tasks]
    settings = ev.AblationSettings(n_train=a.n_train, n_test=a.n_test, steps=a.steps, batch_size=a.batch_size,
                                   lr=a.lr, n_layers=a.layers, n_heads=a.heads, d_model=a.d_model, dtype=a.dtype)
    rows = ev.ablation_run(a.configs, specs, a.seeds, settings, workers=a.workers)
    Path(a.out).write_text(ev.rows_to_csv(rows))


def _layout(a) -> LayoutConfig:
    return LayoutConfig(a.h_max, a.w_max, Mode(a.mode), borders=a.borders)


def cmd_encode_dump(a) -> None:
    tg = encode(a.grid, _layout(a))
    if a.objects:
        tg = segment(tg, a.grid, a.connectivity)
    print(dump_table(tg))


def _grid_text(arr: np.ndarray) -> list[str]:
    width = max(len(str(int(v))) for v in arr.ravel())
    return [" ".join(str(int(v)).rjust(width) for v in row) for row in arr]


def cmd_segment_dump(a) -> None:
    labels = connected_components(a.grid, a.connectivity, a.background).labels
    objects = object_index_map(a.grid, a.connectivity, a.background).obj
    left, right = _grid_text(labels), _grid_text(objects)
    pad = max(len(s) for s in left)
    print(f"{'labels'.ljust(pad)}   objects")
    for l, r in zip(left, right):
        print(f"{l.ljust(pad)}   {r}")


def cmd_posenc_dump(a) -> None:
    cfg = PosEncodingConfig(a.d, Scheme(a.scheme))
    obj = np.array([a.o]) if cfg.scheme is Scheme.OPE_APE_2D else None
    vec = positional_encodings(np.array([a.x]), np.array([a.y]), obj, cfg)[0]
    print(format_vector(vec))


def cmd_rpe_dump(a) -> None:
    variant = RpeVariant(a.variant)
    if not 0 <= a.head < a.heads:
        raise ValueError(f"--head must lie in [0, {a.heads})")
    xs, ys = template_coords(LayoutConfig(a.h_max, a.w_max))
    coords = np.stack([xs, ys], axis=1)
    idx = np.arange(len(xs))
    bias = rpe_bias(variant, coords, coords, idx, idx, RpeSlopes.default(variant, a.heads), a.heads)[a.head]
    bias = bias + 0.0  # -0.0 -> 0.0
    print("\n".join(",".join(repr(float(v)) for v in row) for row in bias))


def cmd_grad_check(a) -> None:
    cfg = M.ModelConfig(
        n_layers=1, n_heads=2, d_model=16, layout=LayoutConfig(4, 4), scheme=Scheme.OPE_APE_2D,
        mixer=MixerVariant.WEIGHTED_SUM_NO_NORM_VEC, rpe=RpeVariant.TWO_DIR,
    )
    spec = TaskSpec("recolor_largest_object", max_size=4, seed=a.seed)
    srcs, tgts = encode_samples(cfg, generate_splits(spec, 2).samples)
    batch = M.make_batch(cfg, srcs, tgts)
    params = M.init_params(cfg, a.seed, init_std=a.init_std)
    err = grad_check(lambda: M.loss_fn(params, cfg, batch), params, eps=a.eps, n_coords=a.coords, seed=a.seed)
    print(f"max_rel_error={err:.3e} coords={a.coords}")
    if err > a.tol:
        raise RuntimeError(f"gradient check failed: {err:.3e} > {a.tol:g}")


HANDLERS = {
    "gen-data": cmd_gen_data,
    "train": cmd_train,
    "eval": cmd_eval,
    "ablate": cmd_ablate,
    "encode-dump": cmd_encode_dump,
    "segment-dump": cmd_segment_dump,
    "posenc-dump": cmd_posenc_dump,
    "rpe-dump": cmd_rpe_dump,
    "grad-check": cmd_grad_check,
}


def _setup_logging() -> None:
    level = os.environ.get("VITARC_LOG", "error").lower()
    logging.basicConfig(level=LOG_LEVELS.get(level, logging.ERROR), format="%(levelname)s %(name)s: %(message)s",
                        stream=sys.stderr)


def dispatch(argv: Optional[Sequence[str]] = None) -> int:
    parser, subs = build_parser()
    try:
        ns = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    try:
        args = resolve(ns.command, ns)
    except UsageError as e:
        subs[ns.command].print_usage(sys.stderr)
        print(f"vitarc {ns.command}: error: {e}", file=sys.stderr)
        return 2
    try:
        HANDLERS[ns.command](args)
    except Exception as e:  # every runtime failure maps to exit 1
        log.debug("traceback", exc_info=True)
        print(f"vitarc {ns.command}: error: {e}", file=sys.stderr)
        return 1
    return 0


def main() -> None:
    _setup_logging()
    sys.exit(dispatch())


if __name__ == "__main__":
    main()
