"""Text file formats for MSR series and spectrum dumps.

Every file may start with a provenance comment ``# ringlaw {json}``; readers
skip other ``#`` lines.
"""
from __future__ import annotations

import csv
import io
import json
import math

import numpy as np

from . import rmt
from .errors import FormatError
from .windows import GRID, MsrSeries

MARK = "# ringlaw "


def provenance_line(meta: dict) -> str:
    return MARK + json.dumps(meta, sort_keys=True, separators=(",", ":"))


def read_provenance(text: str) -> dict:
    for line in text.splitlines():
        if line.startswith(MARK):
            return json.loads(line[len(MARK) :])
        if line and not line.startswith("#"):
            break
    return {}


def _num(v: float) -> str:
    return "nan" if math.isnan(v) else format(v, ".17g")


def format_series(series, meta: dict) -> str:
    """CSV with columns time, msr_<scope>..., conformance_grid; all series share one time axis."""
    grid = next(s for s in series if s.scope == GRID)
    others = [s for s in series if s.scope != GRID]
    meta = dict(meta)
    meta.update(
        rows={s.scope: s.n_rows for s in series},
        window_len=grid.window_len,
        factors=grid.factors,
    )
    buf = io.StringIO()
    buf.write(provenance_line(meta) + "\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["time", "msr_grid"] + [f"msr_{s.scope}" for s in others] + ["conformance_grid"])
    conf = grid.conformance or [None] * len(grid)
    for k, t in enumerate(grid.times):
        row = [str(int(t)), _num(grid.values[k])]
        row += [_num(s.values[k]) for s in others]
        row.append(_num(conf[k].fraction) if conf[k] is not None else "nan")
        w.writerow(row)
    return buf.getvalue()


def parse_series(text: str, path: str = "<string>") -> list:
    meta = read_provenance(text)
    if "rows" not in meta or "window_len" not in meta:
        raise FormatError(f"{path}: missing ringlaw provenance header with rows/window_len")
    rows = [r for r in csv.reader(io.StringIO(text)) if r and not r[0].startswith("#")]
    if not rows or rows[0][0] != "time":
        raise FormatError(f"{path}: header must start with 'time'")
    header = rows[0]
    data = []
    for n, r in enumerate(rows[1:], 2):
        if len(r) != len(header):
            raise FormatError(f"{path}: row {n} has {len(r)} fields, expected {len(header)}")
        try:
            data.append([float(x) for x in r])
        except ValueError as exc:
            raise FormatError(f"{path}: row {n}: {exc}") from None
    arr = np.array(data, dtype=float).reshape(len(data), len(header))
    times = arr[:, 0].astype(np.int64)
    out = []
    for j, name in enumerate(header):
        if not name.startswith("msr_"):
            continue
        scope = name[4:]
        if scope not in meta["rows"]:
            raise FormatError(f"{path}: no row count recorded for scope {scope}")
        out.append(
            MsrSeries(
                times=times,
                values=arr[:, j],
                scope=scope,
                n_rows=int(meta["rows"][scope]),
                window_len=int(meta["window_len"]),
                factors=int(meta.get("factors", 1)),
            )
        )
    return out


def format_spectrum(spectrum: rmt.Spectrum, meta: dict) -> str:
    buf = io.StringIO()
    buf.write(provenance_line(meta) + "\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["index", "real", "imag", "radius"])
    for k, (z, r) in enumerate(zip(spectrum.eigenvalues, spectrum.radii)):
        w.writerow([k, _num(z.real), _num(z.imag), _num(r)])
    return buf.getvalue()


def parse_spectrum(text: str) -> tuple:
    meta = read_provenance(text)
    rows = [r for r in csv.reader(io.StringIO(text)) if r and not r[0].startswith("#")]
    ev = np.array([complex(float(r[1]), float(r[2])) for r in rows[1:]])
    return rmt.Spectrum(ev), meta
