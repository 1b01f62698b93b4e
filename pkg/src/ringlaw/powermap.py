"""Power-map frames: per-bus scalars interpolated onto a regular grid.

A frame is the data layer of one animation step; any plotting tool can lift
it to a 3D surface. Frames are written as a JSON grid plus an 8-bit PGM that
shares one value range across the whole animation.
"""
from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.spatial.distance import cdist

from .errors import EmptyPointSet, IoError, TimeNotInSeries, ValidationError
from .gridsim import GridTopology, MeasurementStream

EXACT_DIST = 1e-9
QUANTITIES = ("msr", "voltage")
KEY_FRAMES = (300, 301, 302, 420, 820, 826)


@dataclass(frozen=True)
class MapSpec:
    width: int = 96
    height: int = 96
    bbox: tuple | None = None  # (xmin, ymin, xmax, ymax)
    idw_power: float = 2.0
    neighbors: int | str = "all"

    def __post_init__(self):
        if self.width < 2 or self.height < 2:
            raise ValidationError("map width and height must be >= 2")
        if not self.idw_power > 0:
            raise ValidationError("idw_power must be > 0")
        if self.neighbors != "all" and (not isinstance(self.neighbors, int) or self.neighbors < 1):
            raise ValidationError("neighbors must be a positive integer or 'all'")
        if self.bbox is not None:
            x0, y0, x1, y1 = self.bbox
            if not (x1 > x0 and y1 > y0):
                raise ValidationError(f"degenerate bounding box {self.bbox}")

    def fitted(self, coords, margin: float = 0.05) -> "MapSpec":
        """Copy of this spec whose bounding box encloses ``coords`` with a relative margin."""
        xy = np.asarray(coords, dtype=float)
        lo, hi = xy.min(axis=0), xy.max(axis=0)
        pad = np.maximum((hi - lo) * margin, 1e-6)
        lo, hi = lo - pad, hi + pad
        return replace(self, bbox=(float(lo[0]), float(lo[1]), float(hi[0]), float(hi[1])))

    def cell_centers(self) -> tuple:
        x0, y0, x1, y1 = self.bbox
        xs = np.linspace(x0, x1, self.width)
        # row 0 is the top edge of the image
        ys = np.linspace(y1, y0, self.height)
        return np.meshgrid(xs, ys)


@dataclass(frozen=True)
class MapFrame:
    time: int
    values: np.ndarray
    quantity: str
    value_range: tuple = None
    bbox: tuple = None

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        object.__setattr__(self, "values", v)
        if self.value_range is None:
            object.__setattr__(self, "value_range", (float(v.min()), float(v.max())))

    @property
    def shape(self):
        return self.values.shape


def _as_points(points) -> np.ndarray:
    if isinstance(points, np.ndarray):
        arr = points.astype(float)
    else:
        rows = []
        for p in points:
            if isinstance(p, dict):
                rows.append((p["x"], p["y"], p["value"]))
            else:
                rows.append(tuple(p))
        arr = np.array(rows, dtype=float)
    if arr.size == 0:
        raise EmptyPointSet("no points to interpolate")
    if arr.ndim != 2 or arr.shape[1] != 3:
        raise ValidationError("points must be (x, y, value) triples")
    return arr


def idw_interpolate(points, spec: MapSpec, time: int = 0, quantity: str = "msr") -> MapFrame:
    """Inverse-distance-weighted field over the grid of ``spec``.

    Cells within 1e-9 of a data point take that point's value exactly.
    """
    pts = _as_points(points)
    xy, val = pts[:, :2], pts[:, 2]
    if len({(a, b) for a, b in xy}) != len(xy):
        raise ValidationError("interpolation points must have distinct coordinates")
    if spec.bbox is None:
        spec = spec.fitted(xy)
    x0, y0, x1, y1 = spec.bbox
    if xy[:, 0].min() < x0 or xy[:, 0].max() > x1 or xy[:, 1].min() < y0 or xy[:, 1].max() > y1:
        raise ValidationError("bounding box does not contain every point")

    gx, gy = spec.cell_centers()
    cells = np.column_stack([gx.ravel(), gy.ravel()])
    d = cdist(cells, xy)
    k = len(xy) if spec.neighbors == "all" else min(int(spec.neighbors), len(xy))
    if k < len(xy):
        nearest = np.argpartition(d, k - 1, axis=1)[:, :k]
        dk = np.take_along_axis(d, nearest, axis=1)
        vk = val[nearest]
    else:
        dk, vk = d, np.broadcast_to(val, d.shape)
    with np.errstate(divide="ignore"):
        w = 1.0 / np.power(dk, spec.idw_power)
    exact = dk < EXACT_DIST
    hit = exact.any(axis=1)
    w[hit] = exact[hit]
    # scaling by the largest weight keeps constant inputs exactly constant
    w /= w.max(axis=1, keepdims=True)
    out =(w * vk).sum(axis=1) / w.sum(axis=1)
    # exact hits bypass the weighted sum so node values are reproduced bit-for-bit
    first = np.argmax(exact[hit], axis=1)
    out[hit] = vk[hit][np.arange(first.size), first]
    return MapFrame(int(time), out.reshape(spec.height, spec.width), quantity, bbox=spec.bbox)


def _series_by_scope(series) -> dict:
    return {s.scope: s for s in series}


def partition_points(series, topology: GridTopology, time: int, missing=(), relative: bool = True) -> np.ndarray:
    """(x, y, value) rows where every bus carries its partition's MSR at ``time``."""
    by_scope = _series_by_scope(series)
    rows = []
    for name, members in topology.partitions.items():
        if name in missing or name not in by_scope:
            continue
        s = by_scope[name]
        hit = np.flatnonzero(s.times == time)
        if not hit.size:
            raise TimeNotInSeries(f"t={time} not in series for {name}")
        vals = s.relative() if relative else s.values
        v = float(vals[hit[0]])
        for b in topology.buses:
            if b.partition == name:
                rows.append((b.x, b.y, v))
    if not rows:
        raise EmptyPointSet(f"no partition has an MSR value at t={time}")
    return np.array(rows, dtype=float)


def partition_frame(
    series, topology: GridTopology, time: int, spec: MapSpec, missing=(), relative: bool = True
) -> MapFrame:
    pts = partition_points(series, topology, time, missing, relative)
    return idw_interpolate(pts, _fit(spec, topology), time, "msr")


def voltage_frame(
    stream: MeasurementStream, topology: GridTopology, time: int, spec: MapSpec, missing=()
) -> MapFrame:
    hit = np.flatnonzero(stream.times == time)
    if not hit.size:
        raise TimeNotInSeries(f"t={time} not in stream")
    row = stream.values[hit[0]]
    pos = {b: i for i, b in enumerate(stream.bus_ids)}
    pts = [
        (b.x, b.y, row[pos[b.id]])
        for b in topology.buses
        if b.id in pos and b.partition not in missing
    ]
    return idw_interpolate(pts, _fit(spec, topology), time, "voltage")


def _fit(spec: MapSpec, topology: GridTopology) -> MapSpec:
    return spec if spec.bbox is not None else spec.fitted(topology.coords)


def build_frames(
    source, topology: GridTopology, spec: MapSpec, times, quantity: str, missing=(), threads: int = 1
) -> list:
    """Frames for ``times``; ``source`` is a MeasurementStream for voltage or MSR series for msr."""
    if quantity not in QUANTITIES:
        raise ValidationError(f"unknown quantity {quantity!r}; expected one of {QUANTITIES}")
    spec = _fit(spec, topology)
    if quantity == "voltage":
        if not isinstance(source, MeasurementStream):
            raise ValidationError("voltage frames need a measurement stream")

        def one(t):
            return voltage_frame(source, topology, t, spec, missing)

    else:

        def one(t):
            return partition_frame(source, topology, t, spec, missing)

    times = [int(t) for t in times]
    if threads > 1 and len(times) > 1:
        with ThreadPoolExecutor(threads) as pool:
            return list(pool.map(one, times))
    return [one(t) for t in times]


def shared_range(frames: Sequence[MapFrame]) -> tuple:
    if not frames:
        return (0.0, 1.0)
    return (
        float(min(f.values.min() for f in frames)),
        float(max(f.values.max() for f in frames)),
    )


def to_gray(values: np.ndarray, value_range: tuple) -> np.ndarray:
    lo, hi = value_range
    if hi <= lo:
        return np.zeros(values.shape, dtype=np.uint8)
    scaled = (np.asarray(values) - lo) / (hi - lo) * 255.0
    return np.clip(np.rint(scaled), 0, 255).astype(np.uint8)


def write_pgm(frame: MapFrame, path, value_range: tuple, comment: str | None = None) -> None:
    h, w = frame.shape
    head = b"P5\n"
    if comment:
        head += b"# " + comment.encode() + b"\n"
    head += f"{w} {h}\n255\n".encode()
    Path(path).write_bytes(head + to_gray(frame.values, value_range).tobytes())


def read_pgm(path) -> np.ndarray:
    data = Path(path).read_bytes()
    tokens, pos = [], 0
    while len(tokens) < 4:
        while data[pos : pos + 1].isspace():
            pos += 1
        if data[pos : pos + 1] == b"#":
            pos = data.index(b"\n", pos) + 1
            continue
        end = pos
        while not data[end : end + 1].isspace():
            end += 1
        tokens.append(data[pos:end])
        pos = end
    if tokens[0] != b"P5":
        raise ValidationError(f"{path} is not a binary PGM")
    w, h = int(tokens[1]), int(tokens[2])
    pixels = np.frombuffer(data[pos + 1 : pos + 1 + w * h], dtype=np.uint8)
    return pixels.reshape(h, w)


def frame_record(frame: MapFrame, value_range: tuple, provenance: dict | None = None) -> dict:
    h, w = frame.shape
    rec = {
        "time": frame.time,
        "quantity": frame.quantity,
        "width": w,
        "height": h,
        "bbox": list(frame.bbox) if frame.bbox is not None else None,
        "value_range": list(value_range),
        "values": [float(v) for v in frame.values.ravel()],
    }
    if provenance:
        rec["provenance"] = provenance
    return rec


def frame_name(quantity: str, time: int) -> str:
    return f"{quantity}_t{int(time):05d}"


def write_frames(frames: Sequence[MapFrame], out_dir, value_range=None, provenance: dict | None = None) -> list:
    """Write JSON + PGM per frame with one shared value range; returns the written paths."""
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise IoError(f"cannot create {out}: {exc}") from exc
    vr = tuple(value_range) if value_range is not None else shared_range(frames)
    comment = None
    if provenance:
        comment = " ".join(f"{k}={provenance[k]}" for k in sorted(provenance) if k in ("config_hash", "seed"))
    paths = []
    for f in frames:
        stem = out / frame_name(f.quantity, f.time)
        try:
            stem.with_suffix(".json").write_text(json.dumps(frame_record(f, vr, provenance), sort_keys=True) + "\n")
            write_pgm(f, stem.with_suffix(".pgm"), vr, comment)
        except OSError as exc:
            raise IoError(f"cannot write {stem}: {exc}") from exc
        paths += [stem.with_suffix(".json"), stem.with_suffix(".pgm")]
    return paths


def render_frames(
    source,
    topology: GridTopology,
    spec: MapSpec,
    times,
    quantity: str,
    out_dir,
    missing=(),
    value_range=None,
    provenance: dict | None = None,
    threads: int = 1,
) -> list:
    frames = build_frames(source, topology, spec, times, quantity, missing, threads)
    return write_frames(frames, out_dir, value_range, provenance)


def frame_l1_change(a: MapFrame, b: MapFrame, value_range: tuple) -> float:
    """Mean absolute cell change between two frames, in units of the shared value range."""
    lo, hi = value_range
    if hi <= lo:
        return 0.0
    return float(np.mean(np.abs(a.values - b.values)) / (hi - lo))
