"""Turn report CSVs into whitespace-separated ``.dat`` files and a gnuplot recipe."""

import csv
import logging
import math
import os
from collections import defaultdict

from .io import format_value

log = logging.getLogger(__name__)

KINDS = {
    "ucp": {"L", "eig_idx", "ratio"},
    "wegner": {"epsilon", "mean_count", "slope_fit"},
    "lift": {"t", "lambda", "hf_lhs", "hf_rhs"},
}

RECIPES = {
    "ucp": ("ratio_vs_L.dat",
            "set logscale y\nset xlabel 'L'\nset ylabel 'mass ratio'\n"
            "plot for [i=0:*] 'ratio_vs_L.dat' index i using 1:2 with linespoints title columnheader(1)\n"),
    "wegner": ("loglog.dat",
               "set logscale xy\nset xlabel 'epsilon'\nset ylabel 'mean count'\n"
               "plot 'loglog.dat' using 1:2:3:4 with yerrorbars title 'mean count'\n"),
    "lift": ("lambda_vs_t.dat",
             "set xlabel 't'\nset ylabel 'lambda(t)'\n"
             "plot 'lambda_vs_t.dat' using 1:2 with linespoints title 'lambda(t)'\n"),
}


class MalformedReport(ValueError):
    pass


def _read(path):
    with open(path, encoding="utf-8", newline="") as fh:
        text = fh.read()
    if not text.strip():
        return None, []
    reader = csv.reader(text.splitlines())
    rows = list(reader)
    header, body = rows[0], rows[1:]
    for i, r in enumerate(body, 2):
        if len(r) != len(header):
            raise MalformedReport(f"{path}: line {i} has {len(r)} fields, expected {len(header)}")
    return header, [dict(zip(header, r)) for r in body]


def _kind(header, path):
    cols = set(header)
    for kind, need in KINDS.items():
        if need <= cols:
            return kind
    raise MalformedReport(f"{path}: columns {sorted(cols)} match no known report")


def _num(row, key, path):
    try:
        return float(row[key])
    except (KeyError, ValueError) as exc:
        raise MalformedReport(f"{path}: bad value for {key!r}: {row.get(key)!r}") from exc


def _dat_ucp(rows, path):
    blocks = defaultdict(list)
    for r in rows:
        blocks[int(_num(r, "eig_idx", path))].append((_num(r, "L", path), _num(r, "ratio", path)))
    lines = []
    for idx in sorted(blocks):
        lines.append(f'"eig_{idx}"')
        lines += [f"{format_value(L)} {format_value(v)}" for L, v in sorted(blocks[idx])]
        lines += ["", ""]
    return lines


def _dat_wegner(rows, path):
    slope = _num(rows[0], "slope_fit", path) if rows else math.nan
    lines = [f"# slope_fit {format_value(slope)}", "# epsilon mean_count ci_lo ci_hi"]
    for r in rows:
        lines.append(" ".join(format_value(_num(r, k, path)) for k in ("epsilon", "mean_count", "ci_lo", "ci_hi")))
    return lines


def _dat_lift(rows, path):
    lines = ["# t lambda hf_lhs hf_rhs"]
    for r in rows:
        lines.append(" ".join(format_value(_num(r, k, path)) for k in ("t", "lambda", "hf_lhs", "hf_rhs")))
    return lines


BUILDERS = {"ucp": _dat_ucp, "wegner": _dat_wegner, "lift": _dat_lift}


def emit_plot_data(paths, out_dir):
    """Write one ``.dat`` per report plus ``plots.gp``; returns the written paths."""
    os.makedirs(out_dir, exist_ok=True)
    written, recipe = [], []
    for path in paths:
        header, rows = _read(path)
        stem = os.path.splitext(os.path.basename(path))[0]
        if header is None or not rows:
            log.warning("%s is empty; writing an empty data file", path)
            target = os.path.join(out_dir, f"{stem}.dat")
            open(target, "w").close()
            written.append(target)
            continue
        kind = _kind(header, path)
        name, gp = RECIPES[kind]
        target = os.path.join(out_dir, name)
        with open(target, "w", encoding="utf-8", newline="\n") as fh:
            fh.write("\n".join(BUILDERS[kind](rows, path)) + "\n")
        written.append(target)
        recipe.append(f"# {kind}: {os.path.basename(path)}\n{gp}")
    gp_path = os.path.join(out_dir, "plots.gp")
    with open(gp_path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(recipe))
    written.append(gp_path)
    return written
