"""Synthetic 118-bus voltage streams driven by scripted load events.

Voltages respond linearly to bus loads through a hop-distance attenuated
influence matrix; measurement noise is white and seeded.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import shortest_path

from .errors import (
    DisconnectedGraph,
    FormatError,
    IoError,
    ParseError,
    UnknownBus,
    ValidationError,
)

BUILTIN = "builtin"


@dataclass(frozen=True)
class Bus:
    id: int
    x: float
    y: float
    partition: str


@dataclass(frozen=True)
class GridTopology:
    buses: tuple
    lines: tuple
    partitions: dict = field(default_factory=dict)

    @property
    def bus_ids(self) -> tuple:
        return tuple(b.id for b in self.buses)

    @property
    def coords(self) -> np.ndarray:
        return np.array([[b.x, b.y] for b in self.buses], dtype=float)

    def index(self) -> dict:
        return {b.id: i for i, b in enumerate(self.buses)}

    def partition_of(self, bus_id) -> str:
        for b in self.buses:
            if b.id == bus_id:
                return b.partition
        raise UnknownBus(f"bus {bus_id} not in topology")

    def __eq__(self, other):
        if not isinstance(other, GridTopology):
            return NotImplemented
        return (
            self.buses == other.buses
            and self.lines == other.lines
            and {k: tuple(v) for k, v in self.partitions.items()}
            == {k: tuple(v) for k, v in other.partitions.items()}
        )


def _sections(text: str, path: str):
    """Split ``[name]`` sectioned text into {name: [(lineno, fields), ...]}."""
    out, current = {}, None
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("[") and line.endswith("]"):
            current = line[1:-1].strip().lower()
            out.setdefault(current, [])
            continue
        if current is None:
            raise ParseError(f"{path}:{lineno}: data outside of a [section]")
        out[current].append((lineno, [f.strip() for f in line.split(",")]))
    return out


def parse_topology(text: str, path: str = "<string>") -> GridTopology:
    sec = _sections(text, path)
    if "buses" not in sec:
        raise ParseError(f"{path}: missing [buses] section")
    buses = []
    for lineno, f in sec["buses"]:
        if len(f) < 3 or len(f) > 4:
            raise ParseError(f"{path}:{lineno}: expected 'id, x, y, partition', got {len(f)} fields")
        try:
            bid, x, y = int(f[0]), float(f[1]), float(f[2])
        except ValueError as exc:
            raise ParseError(f"{path}:{lineno}: {exc}") from None
        part = f[3] if len(f) == 4 else ""
        if not part:
            raise ValidationError(f"{path}:{lineno}: bus {bid} has no partition assignment")
        buses.append(Bus(bid, x, y, part))
    lines = []
    for lineno, f in sec.get("lines", []):
        if len(f) != 2:
            raise ParseError(f"{path}:{lineno}: expected 'from, to'")
        try:
            lines.append((int(f[0]), int(f[1])))
        except ValueError as exc:
            raise ParseError(f"{path}:{lineno}: {exc}") from None
    parts = {}
    for b in buses:
        parts.setdefault(b.partition, []).append(b.id)
    topo = GridTopology(tuple(buses), tuple(lines), {k: tuple(v) for k, v in parts.items()})
    validate_topology(topo)
    return topo


def validate_topology(topo: GridTopology) -> None:
    ids = topo.bus_ids
    if not ids:
        raise ValidationError("topology has no buses")
    if len(set(ids)) != len(ids):
        raise ValidationError("bus ids are not unique")
    known = set(ids)
    for a, b in topo.lines:
        if a not in known or b not in known:
            raise ValidationError(f"line ({a}, {b}) references an unknown bus")
    covered = [i for members in topo.partitions.values() for i in members]
    if sorted(covered) != sorted(ids):
        raise ValidationError("partitions are not a disjoint cover of the buses")
    xy = topo.coords
    if not np.all(np.isfinite(xy)):
        raise ValidationError("bus coordinates must be finite")
    if len({(x, y) for x, y in xy}) != len(ids):
        raise ValidationError("two buses share the same coordinates")
    hops = hop_distances(topo)
    if not np.all(np.isfinite(hops)):
        raise DisconnectedGraph("line graph is not connected")


def load_topology(source=BUILTIN) -> GridTopology:
    """Load a topology file, or the bundled IEEE 118-bus layout for ``"builtin"``."""
    if source in (None, BUILTIN):
        text = resources.files("ringlaw").joinpath("data/ieee118.topo").read_text()
        return parse_topology(text, "builtin:ieee118")
    path = Path(source)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ParseError(f"cannot read topology {path}: {exc}") from exc
    return parse_topology(text, str(path))


def format_topology(topo: GridTopology) -> str:
    out = ["[buses]", "# id, x, y, partition"]
    out += [f"{b.id}, {b.x!r}, {b.y!r}, {b.partition}" for b in topo.buses]
    out += ["", "[lines]", "# from, to"]
    out += [f"{a}, {b}" for a, b in topo.lines]
    return "\n".join(out) + "\n"


def export_topology(topo: GridTopology, path) -> None:
    Path(path).write_text(format_topology(topo))


def hop_distances(topo: GridTopology) -> np.ndarray:
    idx = topo.index()
    n = len(idx)
    if topo.lines:
        rows = [idx[a] for a, _ in topo.lines]
        cols = [idx[b] for _, b in topo.lines]
        adj = coo_matrix((np.ones(len(rows)), (rows, cols)), shape=(n, n)).tocsr()
    else:
        adj = coo_matrix((n, n)).tocsr()
    return shortest_path(adj, directed=False, unweighted=True)


def influence_matrix(topo: GridTopology, attenuation: float) -> np.ndarray:
    """Entry (i, j) = attenuation ** hops(i, j); the diagonal is 1."""
    if not 0 < attenuation <= 1:
        raise ValidationError(f"attenuation {attenuation} outside (0, 1]")
    d = hop_distances(topo)
    if not np.all(np.isfinite(d)):
        raise DisconnectedGraph("line graph is not connected")
    return np.power(float(attenuation), d)


@dataclass(frozen=True)
class Segment:
    t_start: int
    t_end: int
    kind: str  # "const" or "ramp"
    a: float
    b: float = 0.0

    def load(self, t):
        t = np.asarray(t, dtype=float)
        if self.kind == "const":
            return np.full(t.shape, self.a)
        return self.a * t + self.b


@dataclass(frozen=True)
class EventScript:
    entries: dict = field(default_factory=dict)  # bus id -> tuple of Segment

    def __post_init__(self):
        normalized = {}
        for bus, segs in self.entries.items():
            segs = sorted(segs, key=lambda s: s.t_start)
            for s in segs:
                if s.t_end < s.t_start:
                    raise ValidationError(f"bus {bus}: segment [{s.t_start}, {s.t_end}] is reversed")
                if s.kind not in ("const", "ramp"):
                    raise ValidationError(f"bus {bus}: unknown segment kind {s.kind!r}")
                if not all(math.isfinite(v) for v in (s.a, s.b)):
                    raise ValidationError(f"bus {bus}: non-finite load parameters")
            for prev, nxt in zip(segs, segs[1:]):
                if nxt.t_start != prev.t_end + 1:
                    raise ValidationError(
                        f"bus {bus}: segments [{prev.t_start}, {prev.t_end}] and "
                        f"[{nxt.t_start}, {nxt.t_end}] are not contiguous"
                    )
            normalized[bus] = tuple(segs)
        object.__setattr__(self, "entries", normalized)

    def loads(self, bus_ids, times) -> np.ndarray:
        """Load in MW, shape (len(times), len(bus_ids)); zero outside any segment."""
        times = np.asarray(times)
        idx = {b: i for i, b in enumerate(bus_ids)}
        out = np.zeros((times.size, len(idx)))
        for bus, segs in self.entries.items():
            if bus not in idx:
                raise UnknownBus(f"event script names bus {bus}, which is not in the topology")
            for s in segs:
                mask = (times >= s.t_start) & (times <= s.t_end)
                out[mask, idx[bus]] = s.load(times[mask])
        return out

    def __add__(self, other: "EventScript") -> "EventScript":
        """Superpose two scripts; only valid when their buses do not overlap."""
        overlap = set(self.entries) & set(other.entries)
        if overlap:
            raise ValidationError(f"scripts both schedule buses {sorted(overlap)}")
        return EventScript({**self.entries, **other.entries})


def parse_script(text: str, path: str = "<string>") -> EventScript:
    entries = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        f = [x.strip() for x in line.split(",")]
        if len(f) != 5:
            raise ParseError(f"{path}:{lineno}: expected 'bus, t_start, t_end, kind, params'")
        try:
            bus, t0, t1 = int(f[0]), int(f[1]), int(f[2])
            params = [float(p) for p in f[4].split()]
        except ValueError as exc:
            raise ParseError(f"{path}:{lineno}: {exc}") from None
        kind = f[3].lower()
        if kind == "const" and len(params) == 1:
            seg = Segment(t0, t1, "const", params[0])
        elif kind == "ramp" and len(params) == 2:
            seg = Segment(t0, t1, "ramp", params[0], params[1])
        else:
            raise ParseError(f"{path}:{lineno}: bad kind/params {f[3]!r} {f[4]!r}")
        entries.setdefault(bus, []).append(seg)
    return EventScript(entries)


def load_script(source) -> EventScript:
    """Read an event script; ``"builtin:bus22"`` names the bundled bus-22 schedule."""
    if source == "builtin:bus22":
        text = resources.files("ringlaw").joinpath("data/bus22.events").read_text()
        return parse_script(text, source)
    if source in (None, "none", "empty"):
        return EventScript({})
    path = Path(source)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ParseError(f"cannot read event script {path}: {exc}") from exc
    return parse_script(text, str(path))


@dataclass(frozen=True)
class SimConfig:
    duration: int = 1000
    sample_period: float = 1.0
    noise_sigma: float = 2e-4
    attenuation: float = 0.6
    base_voltage: float = 1.0
    gain: float = 2e-4
    seed: int = 0

    def __post_init__(self):
        if self.duration < 1:
            raise ValidationError("duration must be >= 1")
        if not self.noise_sigma > 0:
            raise ValidationError("noise_sigma must be > 0")
        if not 0 < self.attenuation <= 1:
            raise ValidationError("attenuation must lie in (0, 1]")


@dataclass(frozen=True)
class MeasurementStream:
    """Per-sample bus measurements: ``values[k, i]`` is bus ``bus_ids[i]`` at ``times[k]``."""

    times: np.ndarray
    values: np.ndarray
    bus_ids: tuple

    def __post_init__(self):
        times = np.asarray(self.times, dtype=np.int64)
        values = np.asarray(self.values, dtype=float)
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "bus_ids", tuple(self.bus_ids))
        if values.ndim != 2 or values.shape != (times.size, len(self.bus_ids)):
            raise ValidationError(
                f"values shape {values.shape} does not match {times.size} times x {len(self.bus_ids)} buses"
            )
        if times.size > 1:
            steps = np.diff(times)
            if steps[0] <= 0 or np.any(steps != steps[0]):
                raise ValidationError("timestamps must increase with a constant step")

    def __len__(self):
        return self.times.size

    def __eq__(self, other):
        if not isinstance(other, MeasurementStream):
            return NotImplemented
        return (
            self.bus_ids == other.bus_ids
            and np.array_equal(self.times, other.times)
            and np.array_equal(self.values, other.values)
        )

    def column(self, bus_id) -> np.ndarray:
        try:
            return self.values[:, self.bus_ids.index(bus_id)]
        except ValueError:
            raise UnknownBus(f"bus {bus_id} not in stream") from None

    def select(self, bus_ids) -> "MeasurementStream":
        pos = {b: i for i, b in enumerate(self.bus_ids)}
        missing = [b for b in bus_ids if b not in pos]
        if missing:
            raise UnknownBus(f"buses {missing} not in stream")
        cols = [pos[b] for b in bus_ids]
        return MeasurementStream(self.times, self.values[:, cols], tuple(bus_ids))

    def without(self, bus_ids) -> "MeasurementStream":
        drop = set(bus_ids)
        return self.select([b for b in self.bus_ids if b not in drop])


def simulate(topo: GridTopology, script: EventScript, config: SimConfig = SimConfig()) -> MeasurementStream:
    """v_i(t) = base - gain * sum_j influence(i, j) P_j(t) + noise_i(t), t = 1..duration."""
    ids = topo.bus_ids
    times = np.arange(1, config.duration + 1, dtype=np.int64)
    loads = script.loads(ids, times)
    infl = influence_matrix(topo, config.attenuation)
    rng = np.random.default_rng(config.seed)
    noise = rng.normal(0.0, config.noise_sigma, size=(times.size, len(ids)))
    volts = config.base_voltage - config.gain * (loads @ infl.T) + noise
    return MeasurementStream(times, volts, ids)


def format_stream(stream: MeasurementStream, provenance: str | None = None) -> str:
    buf = io.StringIO()
    if provenance:
        buf.write(f"# {provenance}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["time"] + [f"bus_{b}" for b in stream.bus_ids])
    for t, row in zip(stream.times, stream.values):
        w.writerow([str(int(t))] + [format(v, ".17g") for v in row])
    return buf.getvalue()


def export_stream(stream: MeasurementStream, path, provenance: str | None = None) -> None:
    try:
        Path(path).write_text(format_stream(stream, provenance))
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc


def _bus_id(name: str):
    key = name[4:] if name.startswith("bus_") else name
    try:
        return int(key)
    except ValueError:
        return key


def parse_stream(text: str, path: str = "<string>") -> MeasurementStream:
    rows = [
        (n, r)
        for n, r in enumerate(csv.reader(io.StringIO(text)), 1)
        if r and not r[0].lstrip().startswith("#")
    ]
    if not rows:
        raise FormatError(f"{path}: no header row")
    hline, header = rows[0]
    if header[0].strip() != "time" or len(header) < 2:
        raise FormatError(f"{path}:{hline}: header must start with 'time' followed by bus columns")
    ids = tuple(_bus_id(h.strip()) for h in header[1:])
    times, values = [], []
    for lineno, r in rows[1:]:
        if len(r) != len(header):
            raise FormatError(f"{path}: row {lineno} has {len(r)} fields, expected {len(header)}")
        try:
            times.append(int(r[0]))
        except ValueError:
            raise FormatError(f"{path}: row {lineno}, column 1: bad time {r[0]!r}") from None
        vals = []
        for col, cell in enumerate(r[1:], 2):
            try:
                vals.append(float(cell))
            except ValueError:
                raise FormatError(f"{path}: row {lineno}, column {col}: bad value {cell!r}") from None
        values.append(vals)
    arr = np.array(values, dtype=float).reshape(len(times), len(ids))
    try:
        return MeasurementStream(np.array(times, dtype=np.int64), arr, ids)
    except ValidationError as exc:
        raise FormatError(f"{path}: {exc}") from None


def import_stream(path) -> MeasurementStream:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc}") from exc
    return parse_stream(text, str(path))
