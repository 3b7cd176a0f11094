"""Deterministic figure rendering for sweep CSVs.

The only coupling to the producing harness is its delimited schema: a
fixed six-column header followed by rows of 17-significant-digit
decimals (or "nan"). Every rendered image gets a sidecar JSON that
echoes the plotted columns as the exact strings read from the file, so
a byte-level comparison proves the figure was drawn from unmodified
data.
"""

import json
import math
from dataclasses import dataclass
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt

EXPECTED_HEADER = "depth,degree,var_ratio,ks_param,eps,ref_bound"

KINDS = ("decay", "ks")


class SchemaMismatch(Exception):
    """The CSV does not match the sweep schema this package renders."""


@dataclass(frozen=True)
class FigureSpec:
    """One figure request: which file, which layout, where to write it."""

    csv_path: str
    kind: str
    log_y: bool
    out_path: str

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown figure kind: {self.kind!r}")


def read_table(path):
    """Header fields and data rows as raw string tokens.

    Validation is strict: the header must equal the canonical schema
    byte for byte and every row must have exactly one token per column.
    """
    lines = Path(path).read_text().splitlines()
    if not lines or lines[0] != EXPECTED_HEADER:
        got = lines[0] if lines else "<empty file>"
        raise SchemaMismatch(f"expected header {EXPECTED_HEADER!r}, got {got!r}")
    header = lines[0].split(",")
    rows = []
    for number, line in enumerate(lines[1:], start=2):
        fields = line.split(",")
        if len(fields) != len(header):
            raise SchemaMismatch(
                f"line {number} has {len(fields)} fields, expected {len(header)}")
        rows.append(fields)
    return header, rows


def _column(header, rows, name):
    at = header.index(name)
    return [row[at] for row in rows]


def _floats(name, tokens):
    """Tokens parsed for drawing; the sidecar keeps the strings themselves."""
    try:
        return [float(token) for token in tokens]
    except ValueError:
        raise SchemaMismatch(f"column {name!r} holds a non-numeric value") from None


def _decay_series(header, rows):
    series = {name: _column(header, rows, name)
              for name in ("depth", "var_ratio")}
    bound = _column(header, rows, "ref_bound")
    if any(math.isfinite(value) for value in _floats("ref_bound", bound)):
        series["ref_bound"] = bound
    return series


def _draw_decay(axes, spec, series):
    depth = _floats("depth", series["depth"])
    axes.plot(depth, _floats("var_ratio", series["var_ratio"]),
              marker="o", color="#1f77b4", label="var_ratio")
    if "ref_bound" in series:
        axes.plot(depth, _floats("ref_bound", series["ref_bound"]),
                  linestyle="--", color="#7f7f7f", label="ref_bound")
    if spec.log_y:
        axes.set_yscale("log")
    axes.set_xlabel("depth")
    axes.set_ylabel("var_ratio")
    axes.legend(loc="best")


def _ks_series(header, rows):
    return {name: _column(header, rows, name)
            for name in ("ks_param", "var_ratio")}


def _draw_ks(axes, spec, series):
    index = range(len(series["ks_param"]))
    axes.plot(index, _floats("ks_param", series["ks_param"]),
              marker="o", color="#d62728", label="ks_param")
    axes.plot(index, _floats("var_ratio", series["var_ratio"]),
              marker="s", color="#1f77b4", label="var_ratio")
    axes.axhline(1.0, linestyle=":", color="black", linewidth=1.0)
    if spec.log_y:
        axes.set_yscale("log")
    axes.set_xlabel("grid row")
    axes.set_ylabel("value")
    axes.legend(loc="best")


def render_figure(spec: FigureSpec) -> str:
    """Write the image and its sidecar JSON; returns the image path.

    The sidecar maps each plotted column name to the verbatim strings
    from the CSV, in row order, so consumers can check the round trip
    without reparsing floats. Styles are fixed and nothing time- or
    host-dependent is embedded, so equal inputs give equal bytes.
    """
    header, rows = read_table(spec.csv_path)
    if spec.kind == "decay":
        series, draw = _decay_series(header, rows), _draw_decay
    else:
        series, draw = _ks_series(header, rows), _draw_ks
    figure, axes = plt.subplots(figsize=(6.4, 4.2), dpi=144)
    try:
        draw(axes, spec, series)
        figure.tight_layout()
        figure.savefig(spec.out_path, metadata={"Software": None})
    finally:
        plt.close(figure)
    sidecar = {"kind": spec.kind, "series": series}
    Path(spec.out_path).with_suffix(".json").write_text(
        json.dumps(sidecar, indent=2, sort_keys=True) + "\n")
    return spec.out_path
