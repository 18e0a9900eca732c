"""Delimited-text data files and structured reports.

Files are comma-separated with one header row.  Leading ``# key=value``
comment lines carry metadata.  Frequencies are stored in hertz and
converted to angular frequency when read, never elsewhere.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from .errors import ParseError, ValidationError
from .estimation import KerrPoints, RawSweep
from .s21 import TraceS21

TWO_PI = 2.0 * math.pi

TRACE_COLUMNS = ("freq_hz", "re_s21", "im_s21")
DATASET_COLUMNS = ("bias_a", "freq_hz", "direction", "field_t")
KERR_COLUMNS = ("field_t", "flux_wb", "freq_hz", "zeta_kerr_hz", "sigma_hz", "pump_freq_hz")
STARK_COLUMNS = ("point", "field_t", "flux_wb", "freq_hz", "pump_freq_hz", "detuning_hz",
                 "n_over_zeta", "shift_hz")


def format_value(value) -> str:
    """Shortest text that reads back to the same float; other values via ``str``."""
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return str(value)


@dataclass
class Table:
    columns: dict
    meta: dict = field(default_factory=dict)
    source: str = "<table>"
    lines: tuple = ()

    def column(self, name: str) -> np.ndarray:
        if name not in self.columns:
            raise ParseError(f"{self.source}: missing column {name!r}")
        return self.columns[name]

    def __len__(self):
        return len(next(iter(self.columns.values()))) if self.columns else 0


def _parse_cell(text: str, source: str, line: int, col: int, name: str, kind):
    try:
        return kind(text)
    except ValueError:
        raise ParseError(
            f"{source}:{line}:{col}: cannot read {text.strip()!r} in column {name!r}"
        ) from None


def read_table(path, required=(), text_columns=()) -> Table:
    """Read a header-row CSV; ``text_columns`` are kept as strings, the rest as floats.

    Errors name the file, the 1-based line and the 1-based column.
    """
    source = os.fspath(path)
    with open(path, encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    meta, header, rows = {}, None, []
    for number, raw in enumerate(lines, start=1):
        stripped = raw.strip()
        if not stripped:
            continue
        if stripped.startswith("#"):
            body = stripped[1:].strip()
            if header is None and "=" in body:
                key, _, value = body.partition("=")
                meta[key.strip()] = value.strip()
            continue
        cells = [c.strip() for c in raw.split(",")]
        if header is None:
            header = cells
            if len(set(header)) != len(header) or any(not h for h in header):
                raise ParseError(f"{source}:{number}:1: header has empty or repeated column names")
            continue
        if len(cells) != len(header):
            col = min(len(cells), len(header)) + 1
            raise ParseError(f"{source}:{number}:{col}: expected {len(header)} columns, found {len(cells)}")
        rows.append((number, cells))
    if header is None:
        raise ParseError(f"{source}:1:1: no header row")
    for name in required:
        if name not in header:
            raise ParseError(f"{source}: missing column {name!r}")
    columns = {}
    for j, name in enumerate(header):
        if name in text_columns:
            columns[name] = np.array([cells[j] for _, cells in rows], dtype=object)
            continue
        values = [_parse_cell(cells[j], source, number, j + 1, name, float) for number, cells in rows]
        columns[name] = np.array(values, dtype=float)
    return Table(columns=columns, meta=meta, source=source, lines=tuple(n for n, _ in rows))


def write_table(path, columns: dict, meta: dict | None = None) -> None:
    """Write columns of equal length with optional ``# key=value`` metadata."""
    names = list(columns)
    data = [np.asarray(columns[n]) for n in names]
    if len({d.shape for d in data}) > 1 or any(d.ndim != 1 for d in data):
        raise ValidationError("table columns must be 1-d and of equal length")
    out = []
    for key, value in (meta or {}).items():
        out.append(f"# {key}={format_value(value)}")
    out.append(",".join(names))
    for i in range(data[0].size if data else 0):
        out.append(",".join(format_value(d[i].item() if hasattr(d[i], "item") else d[i]) for d in data))
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(out) + "\n")


# ---------------------------------------------------------------- traces

def read_trace(path) -> TraceS21:
    t = read_table(path, required=TRACE_COLUMNS)
    omega = TWO_PI * t.column("freq_hz")
    return TraceS21(omega, t.column("re_s21") + 1j * t.column("im_s21"), dict(t.meta))


def write_trace(path, trace: TraceS21) -> None:
    write_table(path, {"freq_hz": trace.omega / TWO_PI, "re_s21": trace.s21.real,
                       "im_s21": trace.s21.imag}, trace.metadata)


# ---------------------------------------------------------------- arc datasets

def _direction_cell(text: str, source: str, line: int, col: int) -> int:
    t = text.strip().lower()
    if t in ("up", "+1", "1"):
        return 1
    if t in ("down", "-1"):
        return -1
    raise ParseError(f"{source}:{line}:{col}: direction must be up/down or +1/-1, got {text!r}")


def read_dataset(path) -> list[RawSweep]:
    """One :class:`RawSweep` per field, in order of first appearance."""
    t = read_table(path, required=DATASET_COLUMNS, text_columns=("direction",))
    col = list(t.columns).index("direction") + 1
    direction = np.array([_direction_cell(d, t.source, line, col)
                          for line, d in zip(t.lines, t.column("direction"))], dtype=int)
    fields = t.column("field_t")
    out = []
    for B in dict.fromkeys(fields.tolist()):
        m = fields == B
        out.append(RawSweep(field=float(B), bias_current=t.column("bias_a")[m],
                            omega_0=TWO_PI * t.column("freq_hz")[m], direction=direction[m]))
    return out


def write_dataset(path, sweeps, meta: dict | None = None) -> None:
    cols = {n: [] for n in DATASET_COLUMNS}
    for s in sweeps:
        cols["bias_a"].append(s.bias_current)
        cols["freq_hz"].append(s.omega_0 / TWO_PI)
        cols["direction"].append(np.where(s.direction > 0, "up", "down"))
        cols["field_t"].append(np.full(len(s), float(s.field)))
    write_table(path, {k: np.concatenate(v) for k, v in cols.items()}, meta)


def read_overrides(path) -> dict:
    """Manual jump positions: rows of ``field_t`` followed by any number of indices."""
    source = os.fspath(path)
    out = {}
    header_seen = False
    with open(path, encoding="utf-8") as fh:
        for number, raw in enumerate(fh, start=1):
            s = raw.strip()
            if not s or s.startswith("#"):
                continue
            cells = [c.strip() for c in raw.split(",")]
            if not header_seen:
                header_seen = True
                if cells[0] != "field_t":
                    raise ParseError(f"{source}:{number}:1: override header must start with 'field_t'")
                continue
            B = _parse_cell(cells[0], source, number, 1, "field_t", float)
            idx = [_parse_cell(c, source, number, j + 2, "jump_indices", int)
                   for j, c in enumerate(cells[1:]) if c]
            out[B] = sorted(idx)
    return out


def write_overrides(path, overrides: dict) -> None:
    lines = ["field_t,jump_indices"]
    for B, idx in overrides.items():
        lines.append(",".join([format_value(float(B))] + [str(int(i)) for i in idx]))
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


# ---------------------------------------------------------------- Kerr and Stark points

def read_kerr_points(path) -> list[KerrPoints]:
    t = read_table(path, required=KERR_COLUMNS)
    fields = t.column("field_t")
    out = []
    for B in dict.fromkeys(fields.tolist()):
        m = fields == B
        out.append(KerrPoints(
            field=float(B),
            shifted_flux=t.column("flux_wb")[m],
            omega_0=TWO_PI * t.column("freq_hz")[m],
            zeta_kerr=TWO_PI * t.column("zeta_kerr_hz")[m],
            sigma=TWO_PI * t.column("sigma_hz")[m],
            omega_p=TWO_PI * t.column("pump_freq_hz")[m],
        ))
    return out


def write_kerr_points(path, points, meta: dict | None = None) -> None:
    cols = {n: [] for n in KERR_COLUMNS}
    for p in points:
        cols["field_t"].append(np.full(p.shifted_flux.size, float(p.field)))
        cols["flux_wb"].append(p.shifted_flux)
        cols["freq_hz"].append(p.omega_0 / TWO_PI)
        cols["zeta_kerr_hz"].append(p.zeta_kerr / TWO_PI)
        cols["sigma_hz"].append(p.sigma / TWO_PI)
        cols["pump_freq_hz"].append(p.omega_p / TWO_PI)
    write_table(path, {k: np.concatenate(v) for k, v in cols.items()}, meta)


def read_stark_points(path) -> Table:
    """Stark-shift points grouped by the integer ``point`` column (angular units)."""
    t = read_table(path, required=STARK_COLUMNS)
    for name in ("freq_hz", "pump_freq_hz", "detuning_hz", "shift_hz"):
        t.columns[name] = TWO_PI * t.columns[name]
    return t


def write_stark_points(path, columns: dict, meta: dict | None = None) -> None:
    """``columns`` in angular units under the file's column names."""
    cols = dict(columns)
    for name in ("freq_hz", "pump_freq_hz", "detuning_hz", "shift_hz"):
        cols[name] = np.asarray(cols[name], dtype=float) / TWO_PI
    write_table(path, {n: cols[n] for n in STARK_COLUMNS}, meta)


# ---------------------------------------------------------------- reports

def _plain(value):
    if isinstance(value, dict):
        return {str(k) if not isinstance(k, (int, float)) else _key(k): _plain(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_plain(v) for v in value]
    if isinstance(value, np.ndarray):
        return [_plain(v) for v in value.tolist()]
    if isinstance(value, (np.floating, float)):
        return float(value)
    if isinstance(value, (np.integer,)):
        return int(value)
    if isinstance(value, (np.bool_,)):
        return bool(value)
    return value


def _key(k):
    return format_value(float(k)) if isinstance(k, float) else str(k)


def write_report(path, report: dict) -> None:
    """Structured YAML report; key order is preserved so output is deterministic."""
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        yaml.safe_dump(_plain(report), fh, sort_keys=False, default_flow_style=False, width=100)


def read_report(path) -> dict:
    with open(path, encoding="utf-8") as fh:
        data = yaml.safe_load(fh)
    if not isinstance(data, dict):
        raise ParseError(f"{os.fspath(path)}:1:1: report is not a mapping")
    return data
