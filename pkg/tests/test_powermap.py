import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ringlaw.errors import EmptyPointSet, TimeNotInSeries, ValidationError
from ringlaw.gridsim import SimConfig, load_script, load_topology, simulate
from ringlaw.powermap import (
    KEY_FRAMES,
    MapSpec,
    build_frames,
    frame_l1_change,
    idw_interpolate,
    partition_frame,
    read_pgm,
    render_frames,
    shared_range,
    to_gray,
)
from ringlaw.windows import MsrSeries

SPEC = MapSpec(16, 12, bbox=(0.0, 0.0, 1.0, 1.0))


@pytest.fixture(scope="module")
def topo():
    return load_topology()


def flat_series(topo, times, value_of):
    """Synthetic per-partition series whose relative MSR is value_of(name)."""
    out = []
    for name, members in topo.partitions.items():
        s = MsrSeries(np.array(times), np.zeros(len(times)), name, len(members), 240, 1)
        s.values = np.full(len(times), value_of(name) * s.expected)
        out.append(s)
    return out


@st.composite
def point_sets(draw, max_points=30):
    n = draw(st.integers(1, max_points))
    seed = draw(st.integers(0, 2**32 - 1))
    rng = np.random.default_rng(seed)
    xy = rng.uniform(0.05, 0.95, (n, 2))
    val = rng.normal(0, 10, n)
    return np.column_stack([xy, val])


def test_single_point_constant():
    f = idw_interpolate([{"x": 0.3, "y": 0.4, "value": 2.5}], SPEC)
    assert f.shape == (12, 16)
    assert np.all(f.values == 2.5)


def test_two_point_midpoint():
    spec = MapSpec(3, 3, bbox=(0.0, 0.0, 2.0, 2.0))
    f = idw_interpolate([(0.0, 1.0, 0.0), (2.0, 1.0, 1.0)], spec)
    # centre cell sits at (1, 1), equidistant from both points
    assert f.values[1, 1] == pytest.approx(0.5, abs=1e-15)
    assert f.values[1, 0] == 0.0 and f.values[1, 2] == 1.0


def test_cell_orientation():
    spec = MapSpec(2, 2, bbox=(0.0, 0.0, 1.0, 1.0))
    f = idw_interpolate([(0, 1, 5.0), (1, 0, 7.0), (0, 0, 1.0), (1, 1, 3.0)], spec)
    # row 0 is the top edge (largest y)
    np.testing.assert_array_equal(f.values, [[5.0, 3.0], [1.0, 7.0]])


def test_empty_and_duplicate_points():
    with pytest.raises(EmptyPointSet):
        idw_interpolate([], SPEC)
    with pytest.raises(ValidationError):
        idw_interpolate([(0.5, 0.5, 1), (0.5, 0.5, 2)], SPEC)
    with pytest.raises(ValidationError):
        idw_interpolate([(2.0, 0.5, 1)], SPEC)


def test_spec_validation():
    with pytest.raises(ValidationError):
        MapSpec(1, 5)
    with pytest.raises(ValidationError):
        MapSpec(4, 4, idw_power=0)
    with pytest.raises(ValidationError):
        MapSpec(4, 4, neighbors=0)


@settings(max_examples=40, deadline=None)
@given(point_sets())
def test_convex_bounds(pts):
    f = idw_interpolate(pts, SPEC)
    assert np.all(np.isfinite(f.values))
    assert f.values.min() >= pts[:, 2].min() - 1e-12
    assert f.values.max() <= pts[:, 2].max() + 1e-12


def test_convex_bounds_118(topo):
    rng = np.random.default_rng(0)
    pts = np.column_stack([topo.coords, rng.normal(size=118)])
    f = idw_interpolate(pts, MapSpec(64, 64).fitted(topo.coords))
    assert pts[:, 2].min() <= f.values.min() and f.values.max() <= pts[:, 2].max()


@settings(max_examples=30, deadline=None)
@given(st.integers(2, 6), st.integers(0, 2**32 - 1))
def test_exact_at_nodes(k, seed):
    spec = MapSpec(7, 7, bbox=(0.0, 0.0, 6.0, 6.0))
    rng = np.random.default_rng(seed)
    cells = rng.choice(49, size=k, replace=False)
    xy = np.column_stack([cells % 7, 6 - cells // 7]).astype(float)
    val = rng.normal(size=k)
    f = idw_interpolate(np.column_stack([xy, val]), spec)
    for (x, y), v in zip(xy, val):
        assert f.values[int(6 - y), int(x)] == v


@settings(max_examples=30, deadline=None)
@given(point_sets(), st.integers(0, 29), st.floats(0.01, 100))
def test_monotone_response(pts, which, bump):
    which %= len(pts)
    before = idw_interpolate(pts, SPEC).values
    up = pts.copy()
    up[which, 2] += bump
    after = idw_interpolate(up, SPEC).values
    assert np.all(after >= before - 1e-9)


def test_nearest_neighbors_option():
    pts = [(0.1, 0.1, 0.0), (0.9, 0.9, 1.0), (0.1, 0.9, 5.0)]
    f = idw_interpolate(pts, MapSpec(5, 5, bbox=(0, 0, 1, 1), neighbors=1))
    assert set(np.unique(f.values)) <= {0.0, 1.0, 5.0}


def test_uniform_partitions_give_constant_frame(topo):
    series = flat_series(topo, [300], lambda name: 0.7)
    f = partition_frame(series, topo, 300, MapSpec(24, 24))
    np.testing.assert_allclose(f.values, 0.7, atol=1e-12)


def test_missing_partition_contributes_nothing(topo):
    series = flat_series(topo, [300], lambda name: 5.0 if name == "A2" else 1.0)
    f = partition_frame(series, topo, 300, MapSpec(24, 24), missing=("A2",))
    np.testing.assert_allclose(f.values, 1.0, atol=1e-12)
    g = partition_frame(series, topo, 300, MapSpec(24, 24))
    assert g.values.max() > 1.5


def test_time_not_in_series(topo):
    with pytest.raises(TimeNotInSeries):
        partition_frame(flat_series(topo, [300], lambda n: 1.0), topo, 301, MapSpec(8, 8))


def test_pre_event_frame_near_one(topo):
    from ringlaw.windows import WindowConfig, msr_series

    stream = simulate(topo, load_script("builtin:bus22"), SimConfig(seed=1))
    series = msr_series(stream, WindowConfig(partitions=topo.partitions), start=300, stop=300)
    f = partition_frame(series, topo, 300, MapSpec(24, 24))
    assert np.all(np.abs(f.values - 1.0) < 0.1)


def test_render_six_key_frames(topo, tmp_path):
    series = flat_series(topo, list(KEY_FRAMES), lambda n: 1.0)
    paths = render_frames(series, topo, MapSpec(20, 20), KEY_FRAMES, "msr", tmp_path / "a")
    assert len(paths) == 12
    names = sorted(p.name for p in paths if p.suffix == ".pgm")
    assert names[0] == "msr_t00300.pgm" and names[-1] == "msr_t00826.pgm"
    rec = json.loads((tmp_path / "a" / "msr_t00420.json").read_text())
    assert rec["time"] == 420 and rec["width"] == 20 and len(rec["values"]) == 400


def test_render_empty_times(topo, tmp_path):
    assert render_frames([], topo, MapSpec(8, 8), [], "msr", tmp_path / "e") == []
    assert list((tmp_path / "e").iterdir()) == []


def test_pgm_is_byte_identical(topo, tmp_path):
    stream = simulate(topo, load_script("builtin:bus22"), SimConfig(seed=1, duration=310))
    for d in ("a", "b"):
        render_frames(stream, topo, MapSpec(20, 20), [300, 301], "voltage", tmp_path / d)
    for name in ("voltage_t00300.pgm", "voltage_t00301.pgm"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_pgm_shared_range(topo, tmp_path):
    stream = simulate(topo, load_script("builtin:bus22"), SimConfig(seed=1, duration=310))
    frames = build_frames(stream, topo, MapSpec(20, 20), [300, 301], "voltage")
    vr = shared_range(frames)
    render_frames(stream, topo, MapSpec(20, 20), [300, 301], "voltage", tmp_path)
    pix = read_pgm(tmp_path / "voltage_t00301.pgm")
    assert pix.shape == (20, 20)
    assert np.array_equal(pix, to_gray(frames[1].values, vr))
    assert 0 <= frame_l1_change(frames[0], frames[1], vr) <= 1


def test_unknown_quantity(topo):
    with pytest.raises(ValidationError):
        build_frames([], topo, MapSpec(8, 8), [300], "current")


def test_gray_mapping():
    g = to_gray(np.array([[0.0, 0.5, 1.0]]), (0.0, 1.0))
    assert g.tolist() == [[0, 128, 255]]
    assert to_gray(np.ones((2, 2)), (1.0, 1.0)).sum() == 0
