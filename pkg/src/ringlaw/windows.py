"""Sliding split-window analysis of measurement streams.

Every analysis step takes the N x T block ending at one sample, runs the
random-matrix transform on it and records the mean spectral radius. One
grid-wide series is produced plus one per configured partition.
"""
from __future__ import annotations

import zlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from . import rmt
from .errors import (
    InsufficientHistory,
    RingLawError,
    SeriesTooShort,
    UnknownBus,
    ValidationError,
    WindowError,
)
from .gridsim import MeasurementStream

GRID = "grid"
# factor slot reserved for the jitter noise of a window
JITTER_SLOT = 2**32 - 1


@dataclass(frozen=True)
class WindowConfig:
    window_len: int = 240
    hop: int = 1
    factors: int = 1
    seed: int = 0
    partitions: Mapping[str, Sequence] | None = None
    tol: float = 0.05
    identity_unitary: bool = False
    jitter: bool = False
    normalize: str = "column"
    threads: int = 1

    def __post_init__(self):
        if self.window_len < 2:
            raise ValidationError("window_len must be >= 2")
        if self.hop < 1:
            raise ValidationError("hop must be >= 1")
        if self.factors < 1:
            raise ValidationError("factors must be >= 1")
        if self.normalize not in ("column", "row"):
            raise ValidationError("normalize must be 'column' or 'row'")
        if self.threads < 1:
            raise ValidationError("threads must be >= 1")


@dataclass(frozen=True)
class WindowResult:
    spectrum: rmt.Spectrum
    msr: float
    conformance: rmt.ConformanceReport


@dataclass
class MsrSeries:
    times: np.ndarray
    values: np.ndarray
    scope: str = GRID
    n_rows: int = 0
    window_len: int = 0
    factors: int = 1
    conformance: list | None = None

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=np.int64)
        self.values = np.asarray(self.values, dtype=float)
        if self.times.shape != self.values.shape:
            raise ValidationError("times and values differ in length")

    def __len__(self):
        return self.times.size

    def at(self, time) -> float:
        hit = np.flatnonzero(self.times == time)
        if not hit.size:
            raise KeyError(time)
        return float(self.values[hit[0]])

    @property
    def expected(self) -> float:
        return rmt.expected_msr(rmt.RingParams(self.n_rows, self.window_len, self.factors))

    def relative(self) -> np.ndarray:
        """MSR divided by the ring-law expectation for this scope's N, T and L."""
        return self.values / self.expected


@dataclass(frozen=True)
class Event:
    time: int
    severity: float


def unitary_seed(base_seed: int, end_time: int, factor: int, scope: str) -> np.random.SeedSequence:
    """Seed for the unitary of one (end time, factor, scope); stable across runs and platforms."""
    return np.random.SeedSequence([int(base_seed), int(end_time), int(factor), zlib.crc32(scope.encode())])


def window_at(stream: MeasurementStream, end_time: int, config: WindowConfig, rows=None) -> rmt.DataWindow:
    T = config.window_len
    hit = np.flatnonzero(stream.times == end_time)
    if not hit.size:
        raise InsufficientHistory(f"time {end_time} is not in the stream")
    stop = int(hit[0]) + 1
    if stop < T:
        raise InsufficientHistory(f"only {stop} samples up to t={end_time}, window needs {T}")
    if rows is None:
        ids, cols = stream.bus_ids, slice(None)
    else:
        pos = {b: i for i, b in enumerate(stream.bus_ids)}
        missing = [b for b in rows if b not in pos]
        if missing:
            raise UnknownBus(f"buses {missing} not in stream")
        ids, cols = tuple(rows), [pos[b] for b in rows]
    block = stream.values[stop - T : stop][:, cols].T
    period = float(stream.times[1] - stream.times[0]) if len(stream) > 1 else 1.0
    return rmt.DataWindow(block, ids, end_time=int(end_time), sample_period=period)


def analyze_window(window: rmt.DataWindow, config: WindowConfig, scope: str = GRID) -> WindowResult:
    """Transform one window into its ring spectrum, MSR and annulus conformance.

    The L factors reuse the same standardized window, each with its own
    unitary seeded from (config.seed, end_time, factor index, scope).
    """
    n, t = window.shape
    try:
        xs = rmt.standardize_rows(
            window,
            jitter=config.jitter,
            seed=unitary_seed(config.seed, window.end_time, JITTER_SLOT, scope),
        )
        factors = [
            rmt.singular_value_equivalent(
                xs,
                seed=unitary_seed(config.seed, window.end_time, i, scope),
                identity=config.identity_unitary,
            )
            for i in range(config.factors)
        ]
        z = rmt.normalize_product(rmt.ring_product(factors), config.normalize)
        spec = rmt.eigenvalues(z)
    except RingLawError as exc:
        raise WindowError(window.end_time, exc) from exc
    params = rmt.RingParams(n, t, config.factors)
    return WindowResult(spec, rmt.msr(spec), rmt.ring_conformance(spec, params, config.tol))


def scopes(stream: MeasurementStream, config: WindowConfig) -> list:
    """(scope name, row ids) pairs: the grid first, then each partition present in the stream."""
    out = [(GRID, stream.bus_ids)]
    present = set(stream.bus_ids)
    for name, members in (config.partitions or {}).items():
        rows = tuple(b for b in members if b in present)
        if rows:
            out.append((name, rows))
    return out


def analysis_times(stream: MeasurementStream, config: WindowConfig, start=None, stop=None) -> np.ndarray:
    if len(stream) < config.window_len:
        raise InsufficientHistory(f"stream has {len(stream)} samples, window needs {config.window_len}")
    first = stream.times[config.window_len - 1]
    times = stream.times[config.window_len - 1 :: config.hop]
    if start is not None:
        # keep the hop grid anchored at the first full window
        times = times[times >= max(start, first)]
    if stop is not None:
        times = times[times <= stop]
    return times


def msr_series(
    stream: MeasurementStream,
    config: WindowConfig,
    start=None,
    stop=None,
    keep_conformance: bool = True,
    only: Sequence[str] | None = None,
) -> list:
    """Grid-wide and per-partition MSR series, one point every ``hop`` samples."""
    times = analysis_times(stream, config, start, stop)
    jobs = [(name, rows) for name, rows in scopes(stream, config) if only is None or name in only]

    def run(task):
        name, rows, t = task
        res = analyze_window(window_at(stream, t, config, rows), config, name)
        return res.msr, res.conformance

    tasks = [(name, rows, t) for name, rows in jobs for t in times]
    if config.threads > 1 and len(tasks) > 1:
        with ThreadPoolExecutor(config.threads) as pool:
            results = list(pool.map(run, tasks))
    else:
        results = [run(task) for task in tasks]

    out, k = [], 0
    for name, rows in jobs:
        chunk = results[k : k + times.size]
        k += times.size
        out.append(
            MsrSeries(
                times=times.copy(),
                values=np.array([m for m, _ in chunk]),
                scope=name,
                n_rows=len(rows),
                window_len=config.window_len,
                factors=config.factors,
                conformance=[c for _, c in chunk] if keep_conformance else None,
            )
        )
    return out


def detect_events(series: MsrSeries, baseline_window: int = 50, drop_fraction: float = 0.10) -> list:
    """Flag times whose MSR falls below (1 - drop_fraction) x the trailing baseline mean.

    The baseline at index k is the mean of the ``baseline_window`` values
    before k; severity is the relative drop against that mean.
    """
    if baseline_window < 10:
        raise ValidationError("baseline_window must be >= 10")
    if not 0 < drop_fraction < 1:
        raise ValidationError("drop_fraction must lie in (0, 1)")
    v = np.asarray(series.values, dtype=float)
    if v.size <= baseline_window:
        raise SeriesTooShort(f"{v.size} points, need more than {baseline_window}")
    csum = np.concatenate([[0.0], np.cumsum(v)])
    events = []
    for k in range(baseline_window, v.size):
        base = (csum[k] - csum[k - baseline_window]) / baseline_window
        if v[k] < (1.0 - drop_fraction) * base:
            events.append(Event(int(series.times[k]), float((base - v[k]) / base)))
    return events


def event_onsets(events: Sequence[Event], gap: int = 1) -> list:
    """First event of every run of events spaced at most ``gap`` samples apart."""
    out = []
    for e in events:
        if not out or e.time - prev > gap:
            out.append(e)
        prev = e.time
    return out


def recovery_time(series: MsrSeries, onset: int, baseline_window: int = 50, drop_fraction: float = 0.10):
    """Samples from ``onset`` until MSR climbs back above the pre-onset threshold, or None."""
    pre = series.values[(series.times < onset)][-baseline_window:]
    if not pre.size:
        return None
    level = (1.0 - drop_fraction) * pre.mean()
    after = np.flatnonzero((series.times > onset) & (series.values >= level))
    if not after.size:
        return None
    return int(series.times[after[0]] - onset)
