#!/usr/bin/env python3
"""
Tests for demonstration loading, preprocessing and synthetic generation
"""

import json
import os
import sys
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

from src.core.dataset import (
    SHAPES,
    DegenerateSamplingError,
    EndpointCorrectionError,
    ProjectionError,
    TrajectoryValidationError,
    DatasetError,
    UnknownShapeError,
    check_endpoints,
    correct_endpoints,
    dataset_from_dict,
    dataset_to_dict,
    differentiate,
    generate_raw,
    generate_synthetic,
    load_csv,
    normalize,
    planarize,
    preprocess,
    replay_preprocessing,
    shift_to_origin,
    to_polar,
    trajectories_to_frame,
    unplanarize,
    wrap_angle,
)
from src.utils.models import Demonstration, RawTrajectory


def _raw(points, t=None, heading=None, demo_id="A"):
    pos = np.asarray(points, dtype=float)
    if t is None:
        t = np.arange(pos.shape[0], dtype=float)
    heading = None if heading is None else np.asarray(heading, dtype=float)
    return RawTrajectory(t=np.asarray(t, dtype=float), pos=pos, heading=heading, demo_id=demo_id)


def _write(tmp_path, name, text):
    path = tmp_path / name
    path.write_text(text, encoding="utf-8")
    return str(path)


def test_load_csv_minimal(tmp_path):
    """A two-row file gives one trajectory of two samples"""
    print("Testing load_csv on a two-row file...")
    path = _write(tmp_path, "two.csv", "demo,t,x1,x2\nA,0,1,1\nA,1,0,0\n")
    trajs = load_csv(path)
    assert len(trajs) == 1
    assert trajs[0].n_samples == 2
    assert trajs[0].demo_id == "A"
    np.testing.assert_array_equal(trajs[0].pos, [[1.0, 1.0], [0.0, 0.0]])
    assert trajs[0].heading is None
    print("✓ load_csv minimal file passed")


def test_load_csv_non_monotone_time(tmp_path):
    """Repeated time stamps are reported with their row number"""
    print("Testing load_csv time ordering...")
    path = _write(tmp_path, "bad.csv", "demo,t,x1,x2\nA,0,1,1\nA,0,0,0\n")
    with pytest.raises(TrajectoryValidationError, match="non-monotone time at row 2"):
        load_csv(path)
    print("✓ non-monotone time rejected")


def test_load_csv_blocks_and_heading(tmp_path):
    """Demo ids split the file into contiguous blocks; headings are wrapped"""
    print("Testing load_csv block splitting...")
    text = (
        "# stableds 0.1.0\n"
        "demo,t,x1,x2,heading\n"
        "A,0,1,0,0.1\nA,1,0,0,0.2\n"
        "B,0,2,0,4.0\nB,1,0,0,0.0\n"
        "C,0,3,0,0.0\nC,1,0,0,0.0\n"
    )
    trajs = load_csv(_write(tmp_path, "three.csv", text))
    assert [traj.demo_id for traj in trajs] == ["A", "B", "C"]
    assert all(traj.n_samples == 2 for traj in trajs)
    assert trajs[1].heading[0] == pytest.approx(4.0 - 2.0 * np.pi)
    print("✓ block splitting passed")


def test_trajectories_frame_round_trip(tmp_path):
    """A frame written from trajectories loads back to the same trajectories"""
    print("Testing trajectories_to_frame...")
    trajs = generate_raw("arc", M=2, N=20, noise_std=0.3, seed=4)
    frame = trajectories_to_frame(trajs)
    assert list(frame.columns) == ["demo", "t", "x1", "x2"]
    assert len(frame) == 40
    path = tmp_path / "demos.csv"
    frame.to_csv(path, index=False, float_format="%.17g")
    loaded = load_csv(str(path))
    assert len(loaded) == 2
    for original, back in zip(trajs, loaded):
        assert back.demo_id == original.demo_id
        np.testing.assert_allclose(back.pos, original.pos, atol=1e-12)
    print("✓ frame round trip passed")


def test_planarize_known_values():
    """Origin maps to zero; 0.001 deg north is about 111.19 m"""
    print("Testing planarize...")
    traj = _raw([[10.0, 0.0], [10.0, 0.001]])
    plane = planarize(traj, (10.0, 0.0))
    np.testing.assert_allclose(plane.pos[0], [0.0, 0.0], atol=1e-12)
    assert plane.pos[1, 1] == pytest.approx(6371000.0 * np.pi / 180.0 * 0.001)
    assert plane.pos[1, 1] == pytest.approx(111.19, abs=0.01)
    with pytest.raises(ProjectionError):
        planarize(_raw([[10.0, 0.0], [12.0, 0.0]]), (10.0, 0.0))
    print("✓ planarize passed")


@settings(max_examples=50, deadline=None)
@given(
    lon0=st.floats(min_value=-170.0, max_value=170.0),
    lat0=st.floats(min_value=-70.0, max_value=70.0),
    dlon=st.floats(min_value=-0.9, max_value=0.9),
    dlat=st.floats(min_value=-0.9, max_value=0.9),
)
def test_planarize_inverse(lon0, lat0, dlon, dlat):
    """unplanarize recovers the raw coordinates"""
    traj = _raw([[lon0, lat0], [lon0 + dlon, lat0 + dlat]])
    back = unplanarize(planarize(traj, (lon0, lat0)), (lon0, lat0))
    np.testing.assert_allclose(back.pos, traj.pos, rtol=0.0, atol=1e-9)


@pytest.mark.parametrize(
    "finals, expected",
    [
        ([[5.0, -3.0]], [5.0, -3.0]),
        ([[1.0, 0.0], [-1.0, 0.0]], [0.0, 0.0]),
        ([[1.0, 1.0], [2.0, 2.0], [3.0, 3.0]], [2.0, 2.0]),
    ],
)
def test_shift_to_origin(finals, expected):
    """The shift is the mean final position"""
    trajs = [_raw([[10.0, 10.0], final], demo_id=str(i)) for i, final in enumerate(finals)]
    shifted, shift = shift_to_origin(trajs)
    np.testing.assert_allclose(shift, expected)
    for original, moved in zip(trajs, shifted):
        np.testing.assert_allclose(moved.pos[-1], np.asarray(original.pos[-1]) - expected)


def test_correct_endpoints():
    """Linear warp moves only the end of a short demonstration"""
    print("Testing correct_endpoints...")
    demo = Demonstration(
        t=np.array([0.0, 1.0]),
        x=np.array([[1.0, 0.0], [0.1, 0.0]]),
        v=np.array([[-0.9, 0.0], [-0.9, 0.0]]),
    )
    fixed = correct_endpoints(demo, [0.0, 0.0])
    np.testing.assert_array_equal(fixed.x[-1], [0.0, 0.0])
    np.testing.assert_allclose(fixed.x[0], [1.0, 0.0])

    exact = Demonstration(t=demo.t, x=np.array([[1.0, 0.0], [0.0, 0.0]]), v=demo.v)
    assert correct_endpoints(exact, [0.0, 0.0]) is exact

    far = Demonstration(t=demo.t, x=np.array([[200.0, 0.0], [100.0, 0.0]]), v=demo.v)
    with pytest.raises(EndpointCorrectionError):
        correct_endpoints(far, [0.0, 0.0], r_corr=5.0)
    print("✓ correct_endpoints passed")


def test_differentiate_linear_motion():
    """Uniform motion gives the exact constant velocity at every sample"""
    print("Testing differentiate...")
    t = np.arange(20) * 0.1
    demo = differentiate(_raw(np.column_stack([t, 2.0 * t]), t=t))
    np.testing.assert_allclose(demo.v, np.tile([1.0, 2.0], (20, 1)), atol=1e-12)
    print("✓ differentiate passed")


def test_differentiate_heading_unwrap():
    """Heading rate across the +-pi seam uses the short way round"""
    traj = _raw([[0.0, 0.0], [1.0, 0.0], [2.0, 0.0]], heading=[3.1, -3.1, -3.0])
    demo = differentiate(traj)
    assert demo.v[0, 2] == pytest.approx(2.0 * np.pi - 6.2)


def test_differentiate_preconditions():
    """Two samples or a zero interval are rejected"""
    with pytest.raises(TrajectoryValidationError):
        differentiate(_raw([[1.0, 0.0], [0.0, 0.0]]))
    with pytest.raises(DegenerateSamplingError):
        differentiate(_raw([[2.0, 0.0], [1.0, 0.0], [0.0, 0.0]], t=[0.0, 1e-12, 1.0]))


def test_to_polar():
    """Radius and heading replace the planar position"""
    print("Testing to_polar...")
    t = np.arange(6, dtype=float)
    along = (5.0 - t)[:, None] * np.array([[0.6, 0.8]])
    heading = np.full((6, 1), 0.5)
    x = np.hstack([along, heading])
    demo = Demonstration(t=t, x=x, v=np.zeros_like(x))
    reduced = to_polar(demo)
    assert reduced.n_points == 6
    assert reduced.x[0, 0] == pytest.approx(5.0)
    assert reduced.x[0, 1] == pytest.approx(0.5)
    assert reduced.x[-1, 0] == 0.0
    np.testing.assert_allclose(reduced.v[:, 0], -1.0, atol=1e-12)
    assert np.all(np.diff(reduced.t) > 0)

    planar = Demonstration(t=t, x=along, v=np.zeros_like(along))
    with pytest.raises(TrajectoryValidationError):
        to_polar(planar)
    print("✓ to_polar passed")


def test_wrap_angle_range():
    """Angles land in (-pi, pi]"""
    wrapped = wrap_angle(np.array([np.pi, -np.pi, 3.0 * np.pi, 0.0, 7.0]))
    assert np.all(wrapped > -np.pi) and np.all(wrapped <= np.pi)
    assert wrapped[0] == pytest.approx(np.pi)
    assert wrapped[1] == pytest.approx(np.pi)


def test_generate_line_zero_noise():
    """Noise-free line samples lie on the segment (100,100)-(0,0)"""
    print("Testing generate_synthetic line...")
    dataset = generate_synthetic("line", M=1, N=10, noise_std=0.0, seed=0)
    x = dataset.demos[0].x
    assert x.shape == (10, 2)
    np.testing.assert_allclose(x[:, 0], x[:, 1], atol=1e-9)
    assert np.all(x >= -1e-9) and np.all(x <= 100.0 + 1e-9)
    np.testing.assert_allclose(x[0], [100.0, 100.0], atol=1e-9)
    print("✓ zero-noise line passed")


def test_generate_deterministic():
    """Equal arguments give bitwise-equal datasets"""
    first = generate_synthetic("s-curve", M=2, N=50, noise_std=0.5, seed=7)
    second = generate_synthetic("s-curve", M=2, N=50, noise_std=0.5, seed=7)
    for a, b in zip(first.demos, second.demos):
        assert np.array_equal(a.x, b.x)
        assert np.array_equal(a.v, b.v)
        assert np.array_equal(a.t, b.t)
    assert first.meta == second.meta


@pytest.mark.parametrize("shape", SHAPES)
def test_generate_endpoints_at_origin(shape):
    """Every generated demonstration ends at the origin"""
    dataset = generate_synthetic(shape, M=3, N=100, noise_std=0.5, seed=1)
    assert dataset.n_demos == 3
    for demo in dataset.demos:
        assert np.linalg.norm(demo.x[-1]) <= 1e-9


def test_generate_heading_dimension():
    """Heading adds a third state coordinate"""
    dataset = generate_synthetic("arc", M=2, N=60, noise_std=0.2, seed=3, heading=True)
    assert dataset.dim == 3
    assert dataset.meta.has_heading
    for demo in dataset.demos:
        np.testing.assert_allclose(demo.x[-1], 0.0, atol=1e-9)


def test_generate_rejects_bad_arguments():
    """Unknown shapes and too few samples are errors"""
    with pytest.raises(UnknownShapeError):
        generate_raw("bogus", M=1, N=10, noise_std=0.0, seed=0)
    with pytest.raises(ValueError):
        generate_raw("line", M=1, N=4, noise_std=0.0, seed=0)
    with pytest.raises(ValueError):
        generate_raw("line", M=0, N=10, noise_std=0.0, seed=0)


@settings(max_examples=20, deadline=None)
@given(
    seed=st.integers(min_value=0, max_value=10_000),
    shape=st.sampled_from(SHAPES),
    noise=st.floats(min_value=0.0, max_value=1.0),
)
def test_preprocess_ends_at_origin(seed, shape, noise):
    """After preprocessing every demonstration ends at the origin"""
    rng = np.random.default_rng(seed)
    trajs = generate_raw(shape, M=2, N=30, noise_std=noise, seed=seed)
    offset = rng.uniform(-500.0, 500.0, size=2)
    moved = [RawTrajectory(t=traj.t, pos=traj.pos + offset, demo_id=traj.demo_id) for traj in trajs]
    dataset = preprocess(moved)
    for demo in dataset.demos:
        assert np.linalg.norm(demo.x[-1]) <= 1e-9
    np.testing.assert_allclose(dataset.meta.shift, offset, atol=1e-9)


def test_preprocess_polar_meta():
    """Polar reduction records itself and yields dimension 2"""
    trajs = generate_raw("spiral", M=2, N=80, noise_std=0.1, seed=2, heading=True)
    dataset = preprocess(trajs, polar=True)
    assert dataset.dim == 2
    assert dataset.meta.polar
    assert dataset.meta.has_heading
    assert np.all(dataset.states()[:, 0] >= 0.0)


def test_replay_preprocessing_matches_fit_shift():
    """Replaying the recorded shift on the same recordings reproduces the dataset"""
    trajs = generate_raw("s-curve", M=2, N=40, noise_std=0.3, seed=5)
    dataset = preprocess(trajs)
    replayed = replay_preprocessing(trajs, dataset.meta)
    for a, b in zip(dataset.demos, replayed.demos):
        np.testing.assert_allclose(a.x, b.x, atol=1e-9)

    with_heading = generate_raw("s-curve", M=1, N=40, noise_std=0.3, seed=5, heading=True)
    with pytest.raises(TrajectoryValidationError, match="dimension mismatch"):
        replay_preprocessing(with_heading, dataset.meta)


def test_normalize_records_scales():
    """Normalized states have unit std per axis and record the scales"""
    dataset = normalize(generate_synthetic("arc", M=2, N=50, noise_std=0.2, seed=0))
    assert len(dataset.meta.scales) == 2
    np.testing.assert_allclose(np.std(dataset.states(), axis=0), 1.0, atol=1e-12)


def test_check_endpoints_tolerance():
    """Corrected demonstrations must end within tol_target of the origin"""
    t = np.array([0.0, 1.0])
    v = np.zeros((2, 2))
    on_target = Demonstration(t=t, x=np.array([[1.0, 0.0], [0.0, 0.0]]), v=v, demo_id="ok")
    near = Demonstration(t=t, x=np.array([[1.0, 0.0], [1e-3, 0.0]]), v=v, demo_id="near")
    check_endpoints([on_target], tol_target=0.0)
    check_endpoints([near], tol_target=1e-2)
    with pytest.raises(EndpointCorrectionError, match="near"):
        check_endpoints([on_target, near], tol_target=1e-6)
    with pytest.raises(ValueError):
        check_endpoints([on_target], tol_target=-1.0)

    trajs = generate_raw("arc", M=2, N=30, noise_std=0.2, seed=4)
    assert preprocess(trajs, tol_target=0.0).n_demos == 2
    with pytest.raises(ValueError):
        preprocess(trajs, tol_target=-1.0)
    with pytest.raises(ValueError):
        replay_preprocessing(trajs, preprocess(trajs).meta, tol_target=-1.0)


def test_dataset_dict_round_trip():
    """The JSON export keeps dimension, preprocessing record, states and velocities"""
    print("Testing dataset JSON export...")
    dataset = normalize(generate_synthetic("s-curve", M=2, N=25, noise_std=0.3, seed=6))
    meta = replace(dataset.meta, projection="local-equirectangular", origin_lonlat=(10.0, 54.0))
    dataset = replace(dataset, meta=meta)

    data = json.loads(json.dumps(dataset_to_dict(dataset)))
    assert data["dim"] == 2
    assert len(data["demos"]) == 2
    assert set(data["demos"][0][0]) == {"x", "v"}

    back = dataset_from_dict(data)
    assert back.dim == dataset.dim
    assert back.meta.projection == "local-equirectangular"
    assert back.meta.origin_lonlat == (10.0, 54.0)
    np.testing.assert_allclose(back.meta.shift, dataset.meta.shift)
    np.testing.assert_allclose(back.meta.scales, dataset.meta.scales)
    assert back.meta.polar == dataset.meta.polar
    for a, b in zip(dataset.demos, back.demos):
        np.testing.assert_allclose(b.x, a.x)
        np.testing.assert_allclose(b.v, a.v)
        np.testing.assert_array_equal(b.t, np.arange(a.n_points, dtype=float))

    with pytest.raises(DatasetError):
        dataset_from_dict({"dim": 2})
    with pytest.raises(TrajectoryValidationError):
        dataset_from_dict({"dim": 2, "demos": []})
    print("✓ dataset JSON export passed")


def run_all_tests():
    """Run all dataset tests"""
    print("Running dataset tests...\n")
    return pytest.main([__file__, "-v"])


if __name__ == "__main__":
    sys.exit(run_all_tests())
