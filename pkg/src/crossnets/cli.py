"""Command-line front end.

Subcommands: datagen, train, flops, degree, sweep, gradcheck. Config files
are strict JSON (unknown keys are errors). All error output is a single
stderr line `E_CODE: message` with a nonzero exit status. Sweep output is
a pure function of the sweep spec: worker count and scheduling do not
change a byte.
"""

from __future__ import annotations

import argparse
import concurrent.futures
import hashlib
import itertools
import json
import sys
from dataclasses import dataclass

import numpy as np

from . import configio as cio
from .analysis import degree_bound, flops_report
from .blocks import (
    BlockConfig,
    MmoeConfig,
    ModelConfig,
    ParamRegistry,
    build_stack_params,
    model_from_dict,
    stack_forward,
)
from .data import load_delimited, save_delimited, split, synth_generate, task_from_dict
from .engine import Tape, gradcheck, rng_from_seed
from .errors import (
    ConfigError,
    ContractError,
    CorruptionError,
    CrossnetsError,
    EmbeddingLookupError,
    MetricError,
    ParseError,
    SchemaError,
    ShapeError,
    TrainingError,
    UnsupportedError,
)
from .train import TrainConfig, train_from_dict, train_run

GRADCHECK_THRESHOLD = 1e-4

CSV_HEADER = "config_id,kind,l,r,t,K,experts,flops,params,seed,test_auc,auc_gain,wall_s,status"

_ERROR_CODES = [
    (ConfigError, "E_CONFIG"),
    (ShapeError, "E_SHAPE"),
    (ParseError, "E_PARSE"),
    (SchemaError, "E_SCHEMA"),
    (MetricError, "E_METRIC"),
    (TrainingError, "E_TRAIN"),
    (CorruptionError, "E_CKPT"),
    (UnsupportedError, "E_UNSUPPORTED"),
    (ContractError, "E_CONTRACT"),
    (EmbeddingLookupError, "E_LOOKUP"),
]


def error_code(exc: BaseException) -> str:
    for cls, code in _ERROR_CODES:
        if isinstance(exc, cls):
            return code
    if isinstance(exc, OSError):
        return "E_IO"
    return "E_INTERNAL"


def _load_json(path: str) -> dict:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            return json.load(fh)
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: invalid JSON: {exc}") from None


def _emit_json(obj: dict, out_path: str | None) -> None:
    text = json.dumps(obj, indent=2, sort_keys=True) + "\n"
    sys.stdout.write(text)
    if out_path:
        with open(out_path, "w", encoding="utf-8") as fh:
            fh.write(text)


# ---------------------------------------------------------------------------
# simple commands


def cmd_datagen(args) -> int:
    spec = task_from_dict(_load_json(args.config))
    dataset = synth_generate(spec, args.n, seed=args.seed)
    save_delimited(dataset, spec.schema, args.out)
    print(f"wrote {len(dataset)} rows to {args.out}")
    return 0


def cmd_train(args) -> int:
    model_config = model_from_dict(_load_json(args.model))
    train_config = train_from_dict(_load_json(args.train))
    dataset = load_delimited(args.data, model_config.schema)
    train_ds, test_ds = split(dataset, args.train_frac, args.split_seed)
    summary = train_run(
        model_config, train_config, train_ds, test_ds, checkpoint_path=args.checkpoint
    )
    _emit_json(summary.to_dict(), args.out)
    return 0


def cmd_flops(args) -> int:
    report = flops_report(model_from_dict(_load_json(args.config)))
    report.validate()
    _emit_json(report.to_dict(), args.out)
    return 0


def cmd_degree(args) -> int:
    bound = degree_bound(args.kind, args.layers)
    _emit_json(
        {"kind": bound.kind, "l": bound.l, "per_layer": bound.per_layer, "final": bound.final},
        args.out,
    )
    return 0


def cmd_gradcheck(args) -> int:
    cfg = BlockConfig(
        kind=args.kind,
        d=args.d,
        l=args.layers,
        r=args.r,
        t=args.t,
        K=args.K,
        mask_components=args.mask_components,
    )
    cfg.validate()
    rng = rng_from_seed(args.seed)
    reg = ParamRegistry(rng)
    layers = build_stack_params(reg, "block", cfg)
    x0_value = rng.standard_normal((args.batch, cfg.d))
    # random projection of the output: a plain sum is blind to everything
    # upstream of a trailing unit-gain LayerNorm (normalised rows sum to 0)
    proj = rng.standard_normal((args.batch, cfg.out_width))

    def forward():
        tape = Tape()
        out = stack_forward(tape, tape.constant(x0_value), cfg, layers)
        return tape, tape.sum_all(tape.hadamard(out, tape.constant(proj)))

    err = gradcheck(forward, reg.params, step=args.step)
    ok = bool(err < GRADCHECK_THRESHOLD)
    _emit_json(
        {
            "kind": cfg.kind,
            "d": cfg.d,
            "l": cfg.l,
            "max_relative_error": err,
            "threshold": GRADCHECK_THRESHOLD,
            "pass": ok,
        },
        None,
    )
    return 0 if ok else 1


# ---------------------------------------------------------------------------
# sweep


@dataclass(frozen=True)
class SweepCell:
    config_id: str
    block: BlockConfig
    experts: int | None  # mmoe expert count; None = no mmoe wrapper


_GRID_AXES = {"kind", "l", "r", "t", "K", "mask_components", "experts"}


def _axis(entry: dict, key: str, path: str, default: list | None = None) -> list:
    if key not in entry:
        if default is None:
            raise ConfigError(f"{path}.{key}: required axis missing")
        return default
    return cio.as_list(entry[key], f"{path}.{key}")


def _expand_grid(grid: list, width: int, head: tuple[int, ...], path: str = "grid") -> list[SweepCell]:
    cells: list[SweepCell] = []
    seen: dict[str, str] = {}
    for gi, entry in enumerate(grid):
        ep = f"{path}[{gi}]"
        cio.check_keys(entry, _GRID_AXES, ep)
        kind = cio.as_str(cio.take(entry, "kind", ep), f"{ep}.kind")
        axes = {
            "l": _axis(entry, "l", ep),
            "r": _axis(entry, "r", ep, default=[None]),
            "t": _axis(entry, "t", ep, default=[None]),
            "K": _axis(entry, "K", ep, default=[None]),
            "mask_components": _axis(entry, "mask_components", ep, default=["full"]),
            "experts": _axis(entry, "experts", ep, default=[None]),
        }
        for l, r, t, K, mc, experts in itertools.product(
            axes["l"], axes["r"], axes["t"], axes["K"], axes["mask_components"], axes["experts"]
        ):
            block = BlockConfig(kind=kind, d=width, l=l, r=r, t=t, K=K, mask_components=mc)
            block.validate()
            if experts is not None and cio.as_int(experts, f"{ep}.experts") < 1:
                raise ConfigError(f"{ep}.experts: must be >= 1, got {experts}")
            key = json.dumps(
                {
                    "block": {
                        "kind": kind,
                        "d": width,
                        "l": l,
                        "r": r,
                        "t": t,
                        "K": K,
                        "mask_components": mc,
                    },
                    "experts": experts,
                    "head": list(head),
                },
                sort_keys=True,
            )
            config_id = hashlib.sha256(key.encode("utf-8")).hexdigest()[:12]
            if config_id in seen:
                if seen[config_id] != key:  # pragma: no cover - hash collision
                    raise ConfigError(f"{ep}: config id collision for {config_id}")
                continue  # identical cell listed twice; keep one
            seen[config_id] = key
            cells.append(SweepCell(config_id=config_id, block=block, experts=experts))
    if not cells:
        raise ConfigError(f"{path}: empty grid")
    return cells


def _cell_model_config(cell: SweepCell, schema, head: tuple[int, ...], seed: int) -> ModelConfig:
    return ModelConfig(
        schema=schema,
        block=cell.block,
        head=head,
        seed=seed,
        mmoe=None if cell.experts is None else MmoeConfig(n_experts=cell.experts),
    )


def _pick_reference(
    cells: list[SweepCell], explicit: str | None, schema, head: tuple[int, ...]
) -> str:
    """Reference for AUC gain: explicit config id, else the smallest
    (by FLOPs) low-rank config in the sweep, else the smallest overall."""
    if explicit is not None:
        if not any(c.config_id == explicit for c in cells):
            raise ConfigError(f"reference: config id {explicit!r} is not in the grid")
        return explicit

    def flops_of(cell: SweepCell) -> int:
        return flops_report(_cell_model_config(cell, schema, head, seed=0)).model_total

    lowrank = [c for c in cells if c.block.kind == "lowrank" and c.experts is None]
    pool = lowrank if lowrank else cells
    return min(pool, key=lambda c: (flops_of(c), c.config_id)).config_id


def run_sweep(spec: dict, out_csv: str, workers: int = 1) -> None:
    """Train every (config, seed) cell and write one CSV row per cell plus
    a per-config aggregate JSON next to the CSV."""
    cio.check_keys(
        spec,
        {"task", "n", "train_frac", "split_seed", "head", "grid", "seeds", "train", "reference"},
        "sweep",
    )
    task = task_from_dict(cio.take(spec, "task", "sweep"), "sweep.task")
    n = cio.as_int(cio.take(spec, "n", "sweep"), "sweep.n")
    train_frac = cio.as_float(cio.take(spec, "train_frac", "sweep", default=0.8), "sweep.train_frac")
    split_seed = cio.as_int(cio.take(spec, "split_seed", "sweep", default=0), "sweep.split_seed")
    head = tuple(
        cio.as_int(h, f"sweep.head[{i}]")
        for i, h in enumerate(cio.as_list(cio.take(spec, "head", "sweep", default=[]), "sweep.head"))
    )
    seeds = [
        cio.as_int(s, f"sweep.seeds[{i}]")
        for i, s in enumerate(cio.as_list(cio.take(spec, "seeds", "sweep"), "sweep.seeds"))
    ]
    if not seeds:
        raise ConfigError("sweep.seeds: must list at least one seed")
    base_train = train_from_dict(cio.take(spec, "train", "sweep"), "sweep.train")
    reference = spec.get("reference")
    if reference is not None:
        reference = cio.as_str(reference, "sweep.reference")

    cells = _expand_grid(cio.as_list(cio.take(spec, "grid", "sweep"), "sweep.grid"), task.schema.width, head)
    ref_id = _pick_reference(cells, reference, task.schema, head)

    dataset = synth_generate(task, n)
    train_ds, test_ds = split(dataset, train_frac, split_seed)

    def run_cell(cell: SweepCell, seed: int) -> dict:
        row = {
            "config_id": cell.config_id,
            "kind": cell.block.kind,
            "l": cell.block.l,
            "r": cell.block.r,
            "t": cell.block.t,
            "K": cell.block.K,
            "experts": cell.experts,
            "flops": None,
            "params": None,
            "seed": seed,
            "test_auc": None,
            "auc_gain": None,
            "wall_s": 0.0,
            "status": "ok",
        }
        try:
            model_config = _cell_model_config(cell, task.schema, head, seed=seed)
            report = flops_report(model_config)
            row["flops"] = report.model_total
            row["params"] = report.param_count
            train_config = TrainConfig(
                steps=base_train.steps,
                batch_size=base_train.batch_size,
                learning_rate=base_train.learning_rate,
                beta1=base_train.beta1,
                beta2=base_train.beta2,
                eps=base_train.eps,
                eval_every=base_train.eval_every,
                seed=seed,
            )
            summary = train_run(model_config, train_config, train_ds, test_ds)
            row["test_auc"] = summary.test_auc
        except Exception as exc:  # cell failures are recorded, sweep continues
            row["status"] = error_code(exc)
        return row

    jobs = [(cell, seed) for cell in cells for seed in seeds]
    if workers <= 1:
        rows = [run_cell(cell, seed) for cell, seed in jobs]
    else:
        with concurrent.futures.ThreadPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(lambda cs: run_cell(*cs), jobs))

    ref_auc = {
        row["seed"]: row["test_auc"]
        for row in rows
        if row["config_id"] == ref_id and row["test_auc"] is not None
    }
    for row in rows:
        if row["test_auc"] is not None and row["seed"] in ref_auc:
            row["auc_gain"] = row["test_auc"] - ref_auc[row["seed"]]

    rows.sort(key=lambda r: (r["config_id"], r["seed"]))

    def cell_str(v) -> str:
        if v is None:
            return ""
        if isinstance(v, float):
            return repr(v)
        return str(v)

    columns = CSV_HEADER.split(",")
    with open(out_csv, "w", encoding="utf-8", newline="") as fh:
        fh.write(CSV_HEADER + "\n")
        for row in rows:
            fh.write(",".join(cell_str(row[c]) for c in columns) + "\n")

    aggregates = []
    for config_id, group_iter in itertools.groupby(rows, key=lambda r: r["config_id"]):
        group = list(group_iter)
        gains = [r["auc_gain"] for r in group if r["auc_gain"] is not None]
        aucs = [r["test_auc"] for r in group if r["test_auc"] is not None]
        first = group[0]
        aggregates.append(
            {
                "config_id": config_id,
                "kind": first["kind"],
                "l": first["l"],
                "r": first["r"],
                "t": first["t"],
                "K": first["K"],
                "experts": first["experts"],
                "flops": first["flops"],
                "params": first["params"],
                "n_ok": len(aucs),
                "mean_test_auc": float(np.mean(aucs)) if aucs else None,
                "mean_auc_gain": float(np.mean(gains)) if gains else None,
                "stddev_auc_gain": float(np.std(gains, ddof=1)) if len(gains) > 1 else 0.0,
            }
        )
    agg_path = out_csv[: -len(".csv")] + ".agg.json" if out_csv.endswith(".csv") else out_csv + ".agg.json"
    with open(agg_path, "w", encoding="utf-8") as fh:
        fh.write(
            json.dumps({"reference": ref_id, "configs": aggregates}, indent=2, sort_keys=True)
            + "\n"
        )


def cmd_sweep(args) -> int:
    run_sweep(_load_json(args.config), args.out, workers=args.workers)
    print(f"sweep finished; rows in {args.out}")
    return 0


# ---------------------------------------------------------------------------
# argument parsing


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):  # single-line machine-parseable usage errors
        print(f"E_USAGE: {message}", file=sys.stderr)
        raise SystemExit(2)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="crossnets", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("datagen", help="generate a synthetic CTR dataset as delimited text")
    p.add_argument("--config", required=True, help="task spec JSON")
    p.add_argument("--n", type=int, required=True, help="number of rows")
    p.add_argument("--out", required=True, help="output CSV path")
    p.add_argument("--seed", type=int, default=None, help="override the row-stream seed")
    p.set_defaults(func=cmd_datagen)

    p = sub.add_parser("train", help="train one model on a delimited dataset")
    p.add_argument("--model", required=True, help="model config JSON")
    p.add_argument("--train", required=True, help="train config JSON")
    p.add_argument("--data", required=True, help="dataset CSV path")
    p.add_argument("--out", default=None, help="summary JSON output path")
    p.add_argument("--checkpoint", default=None, help="save the trained model here")
    p.add_argument("--train-frac", type=float, default=0.8)
    p.add_argument("--split-seed", type=int, default=0)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("flops", help="analytic FLOPs and parameter report")
    p.add_argument("--config", required=True, help="model config JSON")
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_flops)

    p = sub.add_parser("degree", help="polynomial interaction-order bound")
    p.add_argument("--kind", required=True)
    p.add_argument("--layers", type=int, required=True)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_degree)

    p = sub.add_parser("sweep", help="run a config grid and emit benchmark rows")
    p.add_argument("--config", required=True, help="sweep spec JSON")
    p.add_argument("--out", required=True, help="output CSV path")
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("gradcheck", help="finite-difference check on a block")
    p.add_argument("--kind", required=True)
    p.add_argument("--d", type=int, default=16)
    p.add_argument("--layers", type=int, default=1)
    p.add_argument("--r", type=int, default=None)
    p.add_argument("--t", type=float, default=None)
    p.add_argument("--K", type=int, default=None)
    p.add_argument("--mask-components", default="full", dest="mask_components")
    p.add_argument("--batch", type=int, default=4)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--step", type=float, default=1e-5)
    p.set_defaults(func=cmd_gradcheck)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except CrossnetsError as exc:
        print(f"{error_code(exc)}: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"E_IO: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":  # pragma: no cover
    raise SystemExit(main())
