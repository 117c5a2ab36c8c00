"""Batch command line: simulate, scale, select, generate, evaluate, robustness.

Every subcommand takes one JSON config file. Exit codes: 0 success,
1 invalid config or input, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import jsonschema
import numpy as np

from . import __version__
from . import metrics as metrics_mod
from . import scaling, selection, simulators
from ._backend import backend_name
from .core import (
    ConfigError,
    DriftConfig,
    GenerationConfig,
    Panel,
    TimeGrid,
    anchor,
    read_panel_csv,
    write_atomic,
    write_panel_csv,
)
from .mle import HESTON_NAMES, OU_NAMES, run_robustness
from .sampler import generate_paths

log = logging.getLogger("sbts")

_NUM = {"type": "number"}
_POS = {"type": "number", "exclusiveMinimum": 0}
_INT1 = {"type": "integer", "minimum": 1}
_SEED = {"type": "integer", "minimum": 0, "maximum": 2**64 - 1}
_PATH = {"type": "string", "minLength": 1}
_ORDER = {"anyOf": [_INT1, {"const": "full"}]}
_BW = {"anyOf": [_POS, {"type": "array", "items": _POS, "minItems": 1}]}

GRID = {
    "type": "object",
    "properties": {
        "dt": _POS,
        "start": _NUM,
        "times": {"type": "array", "items": _NUM, "minItems": 2},
        "substeps": _INT1,
    },
    "additionalProperties": False,
}


def _obj(props: dict, required=()) -> dict:
    return {"type": "object", "properties": props, "required": list(required), "additionalProperties": False}


SCHEMAS = {
    "simulate": _obj(
        {
            "process": {"enum": ["ou", "heston", "garch", "sine", "ar", "fbm"]},
            "params": {"type": "object"},
            "ranges": {"type": "object"},
            "M": _INT1,
            "N": {"type": "integer", "minimum": 2},
            "dt": _POS,
            "seed": _SEED,
            "output": _PATH,
        },
        ["process", "M", "N", "dt", "output"],
    ),
    "scale": _obj(
        {
            "input": _PATH,
            "grid": GRID,
            "mode": {"enum": list(scaling.MODES)},
            "output": _PATH,
            "transform_output": _PATH,
        },
        ["input", "grid", "mode", "output", "transform_output"],
    ),
    "select": _obj(
        {
            "train": _PATH,
            "test": _PATH,
            "grid": GRID,
            "bandwidths": {"type": "array", "items": _BW, "minItems": 1},
            "orders": {"type": "array", "items": _ORDER, "minItems": 1},
            "realizations": _INT1,
            "test_fraction": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
            "max_test": _INT1,
            "anchor": {"type": "boolean"},
            "seed": _SEED,
            "table_output": _PATH,
            "chosen_output": _PATH,
        },
        ["train", "grid", "bandwidths", "table_output", "chosen_output"],
    ),
    "generate": _obj(
        {
            "input": _PATH,
            "grid": GRID,
            "bandwidth": _BW,
            "markov_order": _ORDER,
            "selection": _PATH,
            "num_paths": _INT1,
            "seed": _SEED,
            "noise_scale": {"type": "number", "minimum": 0},
            "anchor": {"type": "boolean"},
            "transform": _PATH,
            "output": _PATH,
            "provenance_output": _PATH,
            "inverted_output": _PATH,
        },
        ["input", "grid", "num_paths", "output"],
    ),
    "evaluate": _obj(
        {
            "real": _PATH,
            "generated": _PATH,
            "max_lag": _INT1,
            "runs": _INT1,
            "seed": _SEED,
            "output": _PATH,
            "per_lag_output": _PATH,
        },
        ["real", "generated", "output"],
    ),
    "robustness": _obj(
        {
            "process": {"enum": ["ou", "heston"]},
            "fixed": {"type": "object"},
            "ranges": {"type": "object"},
            "M": _INT1,
            "N": {"type": "integer", "minimum": 3},
            "dt": _POS,
            "substeps": _INT1,
            "bandwidth": _BW,
            "markov_order": _ORDER,
            "selection": _obj(
                {
                    "bandwidths": {"type": "array", "items": _BW, "minItems": 1},
                    "orders": {"type": "array", "items": _ORDER, "minItems": 1},
                    "realizations": _INT1,
                    "test_fraction": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
                    "max_test": _INT1,
                },
                ["bandwidths"],
            ),
            "x0": _NUM,
            "restarts": {"type": "integer", "minimum": 0},
            "seed": _SEED,
            "output": _PATH,
            "histogram_dir": _PATH,
        },
        ["process", "M", "N", "dt", "output"],
    ),
}


#: config keys holding file or directory paths, resolved against the config's directory
PATH_KEYS = frozenset({
    "output", "input", "train", "test", "table_output", "chosen_output", "selection", "transform",
    "provenance_output", "inverted_output", "real", "generated", "per_lag_output", "histogram_dir",
    "transform_output",
})


class CLIError(Exception):
    """Validation failure reported with exit code 1."""


def load_config(path, command: str) -> dict:
    p = Path(path)
    if not p.is_file():
        raise CLIError(f"config file not found: {p}")
    try:
        cfg = json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise CLIError(f"{p}: invalid JSON: {exc}") from None
    try:
        jsonschema.validate(cfg, SCHEMAS[command])
    except jsonschema.ValidationError as exc:
        where = "/".join(str(x) for x in exc.absolute_path) or "<root>"
        raise CLIError(f"{p}: {where}: {exc.message}") from None
    base = p.resolve().parent
    for key, value in cfg.items():
        if key in PATH_KEYS and isinstance(value, str):
            cfg[key] = str(base / value)
    return cfg


def make_grid(spec: dict, n: int | None = None) -> TimeGrid:
    sub = int(spec.get("substeps", 200))
    if "times" in spec:
        if "dt" in spec or "start" in spec:
            raise CLIError("grid takes either 'times' or 'dt'/'start'")
        times = np.asarray(spec["times"], dtype=np.float64)
        if n is not None and times.size != n:
            raise CLIError(f"grid has {times.size} times but the data has {n}")
        return TimeGrid(times, sub)
    if "dt" not in spec:
        raise CLIError("grid needs 'times' or 'dt'")
    if n is None:
        raise CLIError("grid length unknown")
    return TimeGrid.uniform(n, float(spec["dt"]), float(spec.get("start", 0.0)), sub)


def _read(path, grid_spec: dict) -> Panel:
    raw = read_panel_csv(path)
    return Panel(raw, make_grid(grid_spec, raw.shape[1]))


def _bandwidths(value, d: int) -> np.ndarray:
    h = np.atleast_1d(np.asarray(value, dtype=np.float64))
    return np.full(d, h[0]) if h.size == 1 else h


def _write_json(path, obj) -> None:
    write_atomic(path, json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _process_params(process: str, obj: dict | None):
    obj = dict(obj or {})
    if process == "ou":
        return simulators.OUParams(**obj) if obj else simulators.OU_FIXED
    if process == "heston":
        return simulators.HestonParams(**obj) if obj else simulators.HESTON_FIXED
    return obj


# ---------------------------------------------------------------------------


def cmd_simulate(cfg: dict, threads: int | None) -> dict:
    proc = cfg["process"]
    m, n, seed = cfg["M"], cfg["N"], cfg.get("seed", 0)
    grid = TimeGrid.uniform(n, cfg["dt"])
    params = cfg.get("params", {})
    if "ranges" in cfg:
        if proc not in ("ou", "heston"):
            raise CLIError("ranges are only supported for ou and heston")
        ranges = simulators.ParamRanges(proc, {k: tuple(v) for k, v in cfg["ranges"].items()})
        per = simulators.sample_params(ranges, m, seed)
    else:
        per = None
    try:
        if proc == "ou":
            extra = {k: params.pop(k) for k in ("x0",) if k in params}
            panel = simulators.simulate_ou(per or _process_params("ou", params), grid, m, seed, **extra)
        elif proc == "heston":
            out = params.pop("output", "returns")
            panel = simulators.simulate_heston(per or _process_params("heston", params), grid, m, seed, out).panel
        elif proc == "garch":
            panel = simulators.simulate_garch2(grid, m, seed, **params)
        elif proc == "sine":
            panel = simulators.simulate_sine(grid, m, seed, **params)
        elif proc == "ar":
            panel = simulators.simulate_ar(grid, m, seed, **params)
        else:
            panel = simulators.simulate_fbm(params.get("hurst", 0.25), grid, m, seed)
    except TypeError as exc:
        raise CLIError(f"bad params for {proc}: {exc}") from None
    write_panel_csv(cfg["output"], panel)
    return {"command": "simulate", "process": proc, "shape": list(panel.shape), "output": cfg["output"]}


def cmd_scale(cfg: dict, threads: int | None) -> dict:
    panel = _read(cfg["input"], cfg["grid"])
    out, tr = scaling.fit_transform(panel, cfg["mode"], cfg["grid"].get("dt"))
    write_panel_csv(cfg["output"], out)
    write_atomic(cfg["transform_output"], tr.to_json() + "\n")
    return {"command": "scale", "mode": cfg["mode"], "shape": list(out.shape), "output": cfg["output"]}


def cmd_select(cfg: dict, threads: int | None) -> dict:
    train = _read(cfg["train"], cfg["grid"])
    use_anchor = cfg.get("anchor", False)
    if use_anchor:
        train = anchor(train)
    sc = selection.SelectionConfig(
        bandwidth_grid=tuple(_as_key(h) for h in cfg["bandwidths"]),
        order_grid=tuple(cfg.get("orders", [1])),
        realizations_per_test=cfg.get("realizations", 50),
        seed=cfg.get("seed", 0),
        test_fraction=cfg.get("test_fraction", 0.2),
        max_test=cfg.get("max_test"),
    )
    if "test" in cfg:
        test = _read(cfg["test"], cfg["grid"])
        if use_anchor:
            test = anchor(test)
        report = selection.select(train, test, sc, threads=threads)
    else:
        report = selection.select_split(train, sc, threads=threads)
    write_atomic(cfg["table_output"], report.table_csv())
    chosen = report.to_dict()["chosen"]
    _write_json(cfg["chosen_output"], chosen)
    return {"command": "select", "chosen": chosen, "cells": int(report.mse.size)}


def _as_key(h):
    return tuple(h) if isinstance(h, list) else h


def cmd_generate(cfg: dict, threads: int | None) -> dict:
    ref = _read(cfg["input"], cfg["grid"])
    use_anchor = cfg.get("anchor", False)
    if use_anchor:
        ref = anchor(ref)
    d = ref.n_features
    if "selection" in cfg:
        if "bandwidth" in cfg or "markov_order" in cfg:
            raise CLIError("give either 'selection' or 'bandwidth'/'markov_order'")
        sel_path = Path(cfg["selection"])
        if not sel_path.is_file():
            raise CLIError(f"input file not found: {sel_path}")
        chosen = json.loads(sel_path.read_text())
        h, k = chosen["h"], chosen["k"]
    else:
        if "bandwidth" not in cfg:
            raise CLIError("generate needs 'bandwidth' or 'selection'")
        h, k = cfg["bandwidth"], cfg.get("markov_order", 1)
    drift = DriftConfig(_bandwidths(h, d), k)
    gen = generate_paths(
        ref,
        drift,
        GenerationConfig(cfg["num_paths"], cfg.get("seed", 0), cfg.get("noise_scale", 1.0)),
        threads=threads,
    )
    data = gen.data[:, 1:] if use_anchor else gen.data
    write_panel_csv(cfg["output"], data)
    if "provenance_output" in cfg:
        write_atomic(cfg["provenance_output"], gen.provenance_ndjson())
    summary = {
        "command": "generate",
        "shape": list(data.shape),
        "fallback_total": int(gen.fallback_counts.sum()),
        "output": cfg["output"],
    }
    if "transform" in cfg:
        tpath = Path(cfg["transform"])
        if not tpath.is_file():
            raise CLIError(f"input file not found: {tpath}")
        tr = scaling.ScalingTransform.from_json(tpath.read_text())
        inv = scaling.invert(data, tr)
        target = cfg.get("inverted_output")
        if target is None:
            raise CLIError("'transform' requires 'inverted_output'")
        write_panel_csv(target, inv)
        summary["inverted_output"] = target
    return summary


def cmd_evaluate(cfg: dict, threads: int | None) -> dict:
    real = read_panel_csv(cfg["real"])
    gen = read_panel_csv(cfg["generated"])
    report = metrics_mod.evaluate(real, gen, cfg.get("max_lag"), cfg.get("runs", 1), cfg.get("seed", 0))
    write_atomic(cfg["output"], report.to_json() + "\n")
    if "per_lag_output" in cfg:
        write_atomic(cfg["per_lag_output"], report.per_lag_csv())
    return {"command": "evaluate", "scores": report.scores}


def cmd_robustness(cfg: dict, threads: int | None) -> dict:
    proc = cfg["process"]
    if "fixed" in cfg and "ranges" in cfg:
        raise CLIError("give either 'fixed' or 'ranges'")
    if "ranges" in cfg:
        params = simulators.ParamRanges(proc, {k: tuple(v) for k, v in cfg["ranges"].items()})
    else:
        try:
            params = _process_params(proc, cfg.get("fixed"))
        except TypeError as exc:
            raise CLIError(f"bad fixed params: {exc}") from None
    grid = TimeGrid.uniform(cfg["N"], cfg["dt"], substeps=cfg.get("substeps", 200))
    d = 1 if proc == "ou" else 2
    drift = sel = None
    if "bandwidth" in cfg:
        drift = DriftConfig(_bandwidths(cfg["bandwidth"], d), cfg.get("markov_order", 1))
    elif "selection" in cfg:
        s = cfg["selection"]
        sel = selection.SelectionConfig(
            bandwidth_grid=tuple(_as_key(h) for h in s["bandwidths"]),
            order_grid=tuple(s.get("orders", [1])),
            realizations_per_test=s.get("realizations", 50),
            seed=cfg.get("seed", 0),
            test_fraction=s.get("test_fraction", 0.2),
            max_test=s.get("max_test"),
        )
    else:
        raise CLIError("robustness needs 'bandwidth' or 'selection'")
    report = run_robustness(proc, params, cfg["M"], grid, drift, sel, cfg.get("seed", 0),
                            cfg.get("restarts", 3), threads, cfg.get("x0", 0.0))
    write_atomic(cfg["output"], report.to_json() + "\n")
    if "histogram_dir" in cfg:
        hdir = Path(cfg["histogram_dir"])
        for name in (OU_NAMES if proc == "ou" else HESTON_NAMES):
            write_atomic(hdir / f"{name}.csv", report.histogram_csv(name))
    med = {n: v.get("median_diff") for n, v in report.summaries().items()}
    return {"command": "robustness", "process": proc, "median_diff": med, "output": cfg["output"]}


COMMANDS = {
    "simulate": cmd_simulate,
    "scale": cmd_scale,
    "select": cmd_select,
    "generate": cmd_generate,
    "evaluate": cmd_evaluate,
    "robustness": cmd_robustness,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sbts", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"sbts {__version__} ({backend_name()})")
    parser.add_argument("--threads", type=int, default=None,
                        help="worker threads (default: available parallelism)")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("config", help="JSON run config")
        p.add_argument("--seed", type=int, default=None, help="override the config seed")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.WARNING - 10 * min(args.verbose, 2),
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    threads = args.threads if args.threads is not None else (os.cpu_count() or 1)
    try:
        cfg = load_config(args.config, args.command)
        if args.seed is not None:
            cfg["seed"] = args.seed
            jsonschema.validate(cfg, SCHEMAS[args.command])
        summary = COMMANDS[args.command](cfg, threads)
    except (CLIError, ConfigError, jsonschema.ValidationError) as exc:
        print(f"sbts {args.command}: error: {getattr(exc, 'message', exc)}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001
        log.debug("runtime failure", exc_info=True)
        print(f"sbts {args.command}: runtime error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    print(json.dumps(summary, sort_keys=True))
    return 0


if __name__ == "__main__":
    sys.exit(main())
