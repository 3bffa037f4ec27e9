"""Command-line front end.

Reads one record per line (``#`` comments and blank lines skipped), fits
the tree and prints a JSON or CSV report::

    treemix evidence data.txt
    treemix density --grid 200 --format csv data.txt
    treemix sample --seed 1 --count 500 data.txt
    treemix experiment --dist singular --sizes 100,1000,10000
"""

from __future__ import annotations

import argparse
import json
import sys
from typing import Sequence, TextIO

import numpy as np

from . import tree as tr
from .core import DuplicateDataError, ModelConfig
from .domains import DomainKind, DomainSpec, classify, encode_unit, parse_domain
from .testkit import DISTRIBUTIONS, consistency_experiment

EXIT_OK, EXIT_INPUT, EXIT_MODEL = 0, 2, 3

COMMANDS = ("evidence", "density", "cdf", "sample", "dims", "heights", "classify", "map-tree",
            "experiment")


class InputError(ValueError):
    pass


# ---------------------------------------------------------------------------
# output


def fmt(v) -> str:
    """17 significant digits; floats keep a decimal point or exponent."""
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    s = format(float(v), ".17g")
    if s.lstrip("-").isdigit():
        s += ".0"
    return s


def dump_json(obj, indent: int = 0) -> str:
    pad, inner = "  " * indent, "  " * (indent + 1)
    if obj is None:
        return "null"
    if isinstance(obj, str):
        return json.dumps(obj)
    if isinstance(obj, (bool, np.bool_, int, float, np.integer, np.floating)):
        v = fmt(obj)
        if v in ("nan", "inf", "-inf"):
            raise ValueError(f"non-finite value {v} in report")
        return v
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f"{inner}{dump_json(str(k))}: {dump_json(v, indent + 1)}" for k, v in obj.items()]
        return "{\n" + ",\n".join(items) + "\n" + pad + "}"
    if isinstance(obj, (list, tuple, np.ndarray)):
        seq = list(obj)
        if not seq:
            return "[]"
        if all(not isinstance(v, (dict, list, tuple, np.ndarray)) for v in seq):
            return "[" + ", ".join(dump_json(v) for v in seq) + "]"
        return "[\n" + ",\n".join(inner + dump_json(v, indent + 1) for v in seq) + "\n" + pad + "]"
    raise TypeError(f"cannot serialise {type(obj).__name__}")


def dump_csv(rows: list[dict]) -> str:
    if not rows:
        return ""
    cols = list(rows[0])
    out = [",".join(cols)]
    out += [",".join(fmt(r[c]) if not isinstance(r[c], str) else r[c] for c in cols) for r in rows]
    return "\n".join(out) + "\n"


# ---------------------------------------------------------------------------
# input


def read_records(stream: TextIO, domain: DomainSpec, config: ModelConfig) -> list[float]:
    """Parse and encode every record; raises InputError naming the line."""
    values = []
    for lineno, line in enumerate(stream, start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        try:
            fields = [float(f) for f in line.replace(",", " ").split()]
        except ValueError:
            raise InputError(f"line {lineno}: not numeric: {line!r}") from None
        try:
            if domain.width == 1:
                values.extend(domain.encode([f], config) for f in fields)
            else:
                values.append(domain.encode(fields, config))
        except ValueError as err:
            raise InputError(f"line {lineno}: {err}") from None
    return values


def encode_at(text: str, domain: DomainSpec, config: ModelConfig) -> float:
    try:
        fields = [float(f) for f in text.replace(",", " ").split()]
        if domain.kind is DomainKind.CLASSIFY:
            if len(fields) != 1:
                raise ValueError("--at takes one observation in classify mode")
            encode_unit(fields[0])  # range check
            return fields[0]
        return domain.encode(fields, config)
    except ValueError as err:
        raise InputError(f"--at: {err}") from None


def grid_points(k: int) -> np.ndarray:
    return (np.arange(k) + 0.5) / k


# ---------------------------------------------------------------------------
# commands


def _base_report(args, tree) -> dict:
    root = tree.root
    return {
        "command": args.command,
        "config": _config_record(args),
        "n": tree.n,
        "ln_evidence": root.log_evidence,
        "node_count": root.node_count,
        "dims": {"probs": root.probs.tolist(), "tail_mass": root.tail_mass},
        "heights": {"average": root.avg_height},
    }


def _config_record(args) -> dict:
    c = args.model
    return {
        "domain": str(args.domain_spec),
        "split_prior": c.split_prior,
        "dim_trunc": c.dim_trunc,
        "max_depth": c.max_depth,
        "overflow_threshold": c.overflow_threshold,
        "duplicates": c.duplicate_policy,
    }


def _grid_or_at(args, fn) -> list[dict]:
    if args.at is not None:
        x = encode_at(args.at, args.domain_spec, args.model)
        return [{"x": x, "value": fn(x)}]
    return [{"x": float(x), "value": fn(float(x))} for x in grid_points(args.grid)]


def cmd_fit(args, tree) -> tuple[dict, list[dict]]:
    report = _base_report(args, tree)
    cmd = args.command
    if cmd == "evidence":
        stats = tr.node_stats(tree)
        report["leaf_depths"] = {str(k): v for k, v in stats.leaf_depths.items()}
        rows = [{"field": k, "value": report[k]} for k in ("n", "ln_evidence", "node_count")]
        rows.append({"field": "avg_height", "value": tree.root.avg_height})
        return report, rows
    if cmd == "dims":
        rows = [{"k": str(k), "prob": p} for k, p in enumerate(tree.root.probs.tolist())]
        rows.append({"k": "tail", "prob": tree.root.tail_mass})
        return report, rows
    if cmd in ("density", "cdf"):
        fn = (lambda x: tr.predictive_density(tree, x)) if cmd == "density" else (
            lambda a: tr.cdf(tree, a))
        report["grid"] = _grid_or_at(args, fn)
        return report, report["grid"]
    if cmd == "heights":
        if args.at is not None:
            x = encode_at(args.at, args.domain_spec, args.model)
            report["heights"]["at_query"] = tr.height_at(tree, x)
            report["heights"]["x"] = x
            return report, [{"x": x, "value": report["heights"]["at_query"]}]
        report["grid"] = _grid_or_at(args, lambda x: tr.height_at(tree, x))
        return report, report["grid"]
    if cmd == "sample":
        if args.seed is None:
            raise InputError("sample requires --seed")
        xs = tr.sample(tree, np.random.default_rng(args.seed), size=args.count)
        report["samples"] = xs.tolist()
        return report, [{"sample": x} for x in report["samples"]]
    if cmd == "map-tree":
        cells = [{"lo": c.lo, "hi": c.hi, "depth": c.depth, "count": c.count}
                 for c in tr.map_skeleton(tree)]
        report["map_cells"] = cells
        return report, cells
    if cmd == "classify":
        def p_one(x):
            return classify(tree, encode_unit(x))
        report["grid"] = _grid_or_at(args, p_one)
        return report, report["grid"]
    raise AssertionError(cmd)


def cmd_experiment(args) -> tuple[dict, list[dict]]:
    try:
        sizes = [int(s) for s in args.sizes.split(",") if s.strip()]
    except ValueError:
        raise InputError(f"--sizes: expected comma-separated integers, got {args.sizes!r}") from None
    if not sizes or any(s < 0 for s in sizes) or sorted(set(sizes)) != sizes:
        raise InputError("--sizes must be strictly increasing nonnegative integers")
    seed = 0 if args.seed is None else args.seed
    rep = consistency_experiment(args.dist, sizes, args.grid, args.model, seed=seed)
    rows = [{
        "n": r.n, "error": r.error, "ln_evidence": r.log_evidence, "mean_dim": r.mean_dim,
        "tail_mass": r.dims.tail_mass, "avg_height": r.avg_height, "node_count": r.node_count,
    } for r in rep.rows]
    report = {
        "command": "experiment",
        "config": _config_record(args),
        "distribution": rep.distribution,
        "seed": seed,
        "rows": rows,
        "grid": [{"x": float(x), "truth": float(q), **{f"n={r.n}": float(d) for r, d in
                                                      zip(rep.rows, col)}}
                 for x, q, *col in zip(rep.grid, rep.truth, *[r.density for r in rep.rows])],
    }
    return report, rows


# ---------------------------------------------------------------------------
# argument parsing


def _positive_int(text):
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text}")
    return v


def _grid_size(text):
    v = int(text)
    if v < 2:
        raise argparse.ArgumentTypeError(f"grid size must be at least 2, got {text}")
    return v


def make_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--domain", default="unit",
                        help="unit | positive | real | cube:<d> | classify (default unit)")
    common.add_argument("--dim-trunc", type=_positive_int, default=16)
    common.add_argument("--max-depth", type=_positive_int, default=52)
    common.add_argument("--split-prior", type=float, default=0.5)
    common.add_argument("--overflow-threshold", type=float, default=100.0)
    common.add_argument("--duplicates", choices=("truncate", "error"), default="truncate")
    common.add_argument("--grid", type=_grid_size, default=100, help="grid size (>= 2)")
    common.add_argument("--seed", type=int, default=None)
    common.add_argument("--format", choices=("json", "csv"), default="json")

    fit = argparse.ArgumentParser(add_help=False)
    fit.add_argument("input", nargs="?", default="-", help="data file, '-' for stdin")
    fit.add_argument("--at", default=None, help="single query point instead of a grid")
    fit.add_argument("--remove", action="append", default=[], metavar="X",
                     help="remove a stored point after fitting (repeatable)")

    parser = argparse.ArgumentParser(prog="treemix", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS[:-1]:
        p = sub.add_parser(name, parents=[common, fit])
        if name == "sample":
            p.add_argument("--count", type=_positive_int, default=1000)
    p = sub.add_parser("experiment", parents=[common])
    p.add_argument("--dist", choices=sorted(DISTRIBUTIONS), default="singular")
    p.add_argument("--sizes", default="100,1000,10000")
    p.set_defaults(grid=1000)
    return parser


def run(argv: Sequence[str] | None = None, stdin: TextIO | None = None,
        stdout: TextIO | None = None, stderr: TextIO | None = None) -> int:
    """Execute one command; returns the process exit status."""
    stdin = sys.stdin if stdin is None else stdin
    stdout = sys.stdout if stdout is None else stdout
    stderr = sys.stderr if stderr is None else stderr
    parser = make_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)

    try:
        args.domain_spec = parse_domain("classify" if args.command == "classify" else args.domain)
        args.model = ModelConfig(args.split_prior, args.dim_trunc, args.max_depth,
                                 args.overflow_threshold, args.duplicates)
        if args.command == "experiment":
            report, rows = cmd_experiment(args)
        else:
            if args.input == "-":
                values = read_records(stdin, args.domain_spec, args.model)
            else:
                try:
                    with open(args.input, encoding="utf-8") as fh:
                        values = read_records(fh, args.domain_spec, args.model)
                except OSError as err:
                    raise InputError(str(err)) from None
            tree = tr.build(values, args.model)
            for text in args.remove:
                tree = tr.remove(tree, encode_at(text, args.domain_spec, args.model))
            report, rows = cmd_fit(args, tree)
    except (InputError, ValueError) as err:
        if isinstance(err, DuplicateDataError):
            print(f"treemix: model error: {err}", file=stderr)
            return EXIT_MODEL
        print(f"treemix: {err}", file=stderr)
        return EXIT_INPUT
    except KeyError as err:
        print(f"treemix: model error: point {err.args[0]!r} not stored", file=stderr)
        return EXIT_MODEL

    stdout.write(dump_json(report) + "\n" if args.format == "json" else dump_csv(rows))
    return EXIT_OK


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
