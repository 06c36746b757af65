"""
Demonstration loading, synthetic generation and preprocessing.

Raw recordings go through planarization (lon/lat to metres), a common shift
that puts the target at the origin, heading alignment, finite-difference
velocities, endpoint correction and, optionally, the polar reduction.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, replace
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from ..utils.logger import get_logger
from ..utils.models import Dataset, DatasetMeta, Demonstration, RawTrajectory

R_EARTH = 6371000.0  # metres
PROJECTION_NAME = "local-equirectangular"
MAX_ORIGIN_OFFSET_DEG = 1.0
MIN_DT = 1e-9

SHAPES = ("line", "arc", "s-curve", "port-approach", "spiral")


class DatasetError(ValueError):
    """Base class for demonstration data errors."""


class CsvSchemaError(DatasetError):
    """A required column is missing or not numeric."""


class TrajectoryValidationError(DatasetError):
    """A trajectory violates its ordering, size or finiteness invariants."""


class ProjectionError(DatasetError):
    """Samples are too far from the projection origin."""


class EndpointCorrectionError(DatasetError):
    """A demonstration ends too far from the target to be corrected."""


class DegenerateSamplingError(DatasetError):
    """Two samples are closer in time than the differentiation floor."""


class UnknownShapeError(DatasetError):
    """Requested synthetic shape does not exist."""


@dataclass(frozen=True)
class CsvSchema:
    """Column mapping of the demonstration CSV."""

    demo_col: str = "demo"
    time_col: str = "t"
    pos_cols: Optional[Tuple[str, ...]] = None  # None -> x1..xd detected from the header
    heading_col: str = "heading"


def wrap_angle(angle: np.ndarray) -> np.ndarray:
    """Wrap angles to (-pi, pi]."""
    return np.pi - np.mod(np.pi - np.asarray(angle, dtype=float), 2.0 * np.pi)


def validate_trajectory(traj: RawTrajectory, min_samples: int = 2, row_offset: int = 0) -> None:
    """Check time ordering, sample count and finiteness.

    ``row_offset`` is the 1-based file row of the first sample, used in messages.
    """
    if traj.n_samples < min_samples:
        raise TrajectoryValidationError(
            f"trajectory '{traj.demo_id}' has {traj.n_samples} samples, at least {min_samples} required"
        )
    if traj.pos.shape[0] != traj.n_samples:
        raise TrajectoryValidationError("time and position arrays differ in length")
    diffs = np.diff(traj.t)
    bad = np.flatnonzero(~(diffs > 0))
    if bad.size:
        raise TrajectoryValidationError(f"non-monotone time at row {row_offset + bad[0] + 1}")
    states = traj.states()
    finite = np.all(np.isfinite(states), axis=1) & np.isfinite(traj.t)
    if not np.all(finite):
        raise TrajectoryValidationError(f"non-finite value at row {row_offset + int(np.argmin(finite))}")


def _position_columns(columns: Sequence[str], schema: CsvSchema) -> Tuple[str, ...]:
    if schema.pos_cols is not None:
        missing = [c for c in schema.pos_cols if c not in columns]
        if missing:
            raise CsvSchemaError(f"missing column(s): {', '.join(missing)}")
        return tuple(schema.pos_cols)

    detected = sorted((c for c in columns if re.fullmatch(r"x\d+", c)), key=lambda c: int(c[1:]))
    expected = [f"x{i}" for i in range(1, len(detected) + 1)]
    if not detected:
        raise CsvSchemaError("missing position columns x1..xd")
    if detected != expected:
        raise CsvSchemaError(f"position columns must be x1..x{len(detected)}, found {detected}")
    return tuple(detected)


def load_csv(path: str, schema: Optional[CsvSchema] = None) -> List[RawTrajectory]:
    """Read a demonstration CSV into one RawTrajectory per contiguous demo block.

    Lines starting with '#' are reproducibility headers and are skipped.
    """
    logger = get_logger()
    schema = schema or CsvSchema()

    df = pd.read_csv(path, comment="#", encoding="utf-8")
    df.columns = [str(c).strip() for c in df.columns]

    if schema.time_col not in df.columns:
        raise CsvSchemaError(f"missing column: {schema.time_col}")
    pos_cols = _position_columns(list(df.columns), schema)
    has_heading = schema.heading_col in df.columns
    numeric_cols = [schema.time_col, *pos_cols] + ([schema.heading_col] if has_heading else [])

    try:
        values = df[numeric_cols].astype(float).to_numpy()
    except ValueError as e:
        raise CsvSchemaError(f"non-numeric value in {numeric_cols}: {e}") from e

    if schema.demo_col in df.columns:
        ids = df[schema.demo_col].astype(str)
        block_ids = (ids != ids.shift()).cumsum().to_numpy()
    else:
        ids = pd.Series([""] * len(df))
        block_ids = np.zeros(len(df), dtype=int)

    trajectories: List[RawTrajectory] = []
    d = len(pos_cols)
    for block in pd.unique(block_ids):
        rows = np.flatnonzero(block_ids == block)
        start = int(rows[0])
        block_values = values[rows]
        traj = RawTrajectory(
            t=block_values[:, 0].copy(),
            pos=block_values[:, 1 : 1 + d].copy(),
            heading=wrap_angle(block_values[:, 1 + d]) if has_heading else None,
            demo_id=str(ids.iloc[start]),
        )
        validate_trajectory(traj, min_samples=1, row_offset=start + 1)
        trajectories.append(traj)

    logger.info(f"Loaded {len(trajectories)} trajectories ({len(df)} rows, d={d}) from {path}")
    return trajectories


def trajectories_to_frame(trajs: Sequence[RawTrajectory]) -> pd.DataFrame:
    """Inverse of load_csv: a `demo,t,x1..xd[,heading]` frame."""
    frames = []
    for i, traj in enumerate(trajs):
        columns: Dict[str, Any] = {
            "demo": traj.demo_id or f"demo{i}",
            "t": traj.t,
        }
        for j in range(traj.dim):
            columns[f"x{j + 1}"] = traj.pos[:, j]
        if traj.heading is not None:
            columns["heading"] = traj.heading
        frames.append(pd.DataFrame(columns))
    return pd.concat(frames, ignore_index=True)


def planarize(traj: RawTrajectory, origin: Tuple[float, float]) -> RawTrajectory:
    """Project lon/lat degrees onto a local tangent plane in metres."""
    if traj.dim != 2:
        raise ProjectionError(f"planarize expects (lon, lat) positions, got dimension {traj.dim}")
    lon0, lat0 = float(origin[0]), float(origin[1])
    lon, lat = traj.pos[:, 0], traj.pos[:, 1]
    offset = np.maximum(np.abs(lon - lon0), np.abs(lat - lat0))
    if np.any(offset > MAX_ORIGIN_OFFSET_DEG):
        raise ProjectionError(
            f"sample {int(np.argmax(offset))} is {offset.max():.3f} deg from the projection origin "
            f"(limit {MAX_ORIGIN_OFFSET_DEG} deg)"
        )
    k = R_EARTH * np.pi / 180.0
    east = (lon - lon0) * np.cos(np.radians(lat0)) * k
    north = (lat - lat0) * k
    return replace(traj, pos=np.column_stack([east, north]))


def unplanarize(traj: RawTrajectory, origin: Tuple[float, float]) -> RawTrajectory:
    """Inverse of planarize."""
    lon0, lat0 = float(origin[0]), float(origin[1])
    k = R_EARTH * np.pi / 180.0
    lon = traj.pos[:, 0] / (np.cos(np.radians(lat0)) * k) + lon0
    lat = traj.pos[:, 1] / k + lat0
    return replace(traj, pos=np.column_stack([lon, lat]))


def shift_to_origin(trajs: Sequence[RawTrajectory]) -> Tuple[List[RawTrajectory], np.ndarray]:
    """Translate every trajectory by minus the mean final position."""
    if not trajs:
        raise TrajectoryValidationError("at least one trajectory is required")
    shift = np.mean([traj.pos[-1] for traj in trajs], axis=0)
    shifted = [replace(traj, pos=traj.pos - shift) for traj in trajs]
    get_logger().debug(f"Target shift: {shift.tolist()}")
    return shifted, shift


def align_heading(trajs: Sequence[RawTrajectory]) -> Tuple[List[RawTrajectory], float]:
    """Rotate headings so the circular mean of final headings becomes 0."""
    if not trajs or trajs[0].heading is None:
        return list(trajs), 0.0
    finals = np.array([np.unwrap(traj.heading)[-1] for traj in trajs])
    heading_shift = float(np.arctan2(np.mean(np.sin(finals)), np.mean(np.cos(finals))))
    aligned = [
        replace(traj, heading=wrap_angle(np.unwrap(traj.heading) - heading_shift)) for traj in trajs
    ]
    return aligned, heading_shift


def _finite_difference(t: np.ndarray, x: np.ndarray, angular: Sequence[int] = ()) -> np.ndarray:
    """Central differences inside, one-sided at both ends; angular columns unwrapped first."""
    x = np.array(x, dtype=float)
    for col in angular:
        x[:, col] = np.unwrap(x[:, col])
    return np.gradient(x, t, axis=0)


def differentiate(traj: RawTrajectory) -> Demonstration:
    """Turn timed positions (and heading) into (state, velocity) pairs."""
    if traj.n_samples < 3:
        raise TrajectoryValidationError(
            f"differentiate needs at least 3 samples, trajectory '{traj.demo_id}' has {traj.n_samples}"
        )
    dt = np.diff(traj.t)
    small = np.flatnonzero(dt < MIN_DT)
    if small.size:
        raise DegenerateSamplingError(
            f"sampling interval {dt[small[0]]:.3g} s below {MIN_DT} s at sample {small[0] + 1}"
        )
    states = traj.states()
    angular = (states.shape[1] - 1,) if traj.heading is not None else ()
    velocities = _finite_difference(traj.t, states, angular)
    return Demonstration(t=traj.t.copy(), x=states.copy(), v=velocities, demo_id=traj.demo_id)


def correct_endpoints(
    demo: Demonstration,
    target: Sequence[float],
    r_corr: float = 5.0,
    angular: Sequence[int] = (),
) -> Demonstration:
    """Warp a demonstration linearly in sample index so it ends exactly at target."""
    target = np.asarray(target, dtype=float)
    offset = target - demo.x[-1]
    distance = float(np.linalg.norm(offset))
    if distance > r_corr:
        raise EndpointCorrectionError(
            f"demonstration '{demo.demo_id}' ends {distance:.3f} from the target (limit {r_corr})"
        )
    if not np.any(offset):
        return demo

    n = demo.n_points
    weights = np.arange(n, dtype=float) / (n - 1)
    x = demo.x + weights[:, None] * offset
    for col in angular:
        x[:-1, col] = wrap_angle(x[:-1, col])
    x[-1] = target
    v = _finite_difference(demo.t, x, angular)
    return Demonstration(t=demo.t, x=x, v=v, demo_id=demo.demo_id)


def to_polar(demo: Demonstration) -> Demonstration:
    """Reduce (x, y, heading) to (|position|, heading)."""
    if demo.dim != 3:
        raise TrajectoryValidationError(f"polar reduction needs position + heading (dim 3), got {demo.dim}")
    rho = np.linalg.norm(demo.x[:, :2], axis=1)
    if np.any(rho[1:-1] == 0.0):
        get_logger().warning(
            f"Demonstration '{demo.demo_id}' passes through the origin mid-trajectory; radius 0 kept"
        )
    reduced = np.column_stack([rho, demo.x[:, 2]])
    v = _finite_difference(demo.t, reduced, angular=(1,))
    return Demonstration(t=demo.t, x=reduced, v=v, demo_id=demo.demo_id)


def check_endpoints(demos: Sequence[Demonstration], tol_target: float = 1e-6) -> None:
    """Every demonstration must end within tol_target of the origin."""
    if not tol_target >= 0:
        raise ValueError(f"tol_target must be non-negative, got {tol_target}")
    for demo in demos:
        miss = float(np.linalg.norm(demo.x[-1]))
        if not miss <= tol_target:
            raise EndpointCorrectionError(
                f"demonstration '{demo.demo_id}' ends {miss:.3g} from the target after correction (tolerance {tol_target})"
            )


def _dataset_meta(demos: Sequence[Demonstration], **fields: Any) -> DatasetMeta:
    states = np.vstack([demo.x for demo in demos])
    return DatasetMeta(
        starts=tuple(tuple(float(c) for c in demo.x[0]) for demo in demos),
        extent=float(np.max(np.linalg.norm(states, axis=1))),
        **fields,
    )


def preprocess(
    trajs: Sequence[RawTrajectory],
    origin: Optional[Tuple[float, float]] = None,
    polar: bool = False,
    r_corr: float = 5.0,
    tol_target: float = 1e-6,
) -> Dataset:
    """Run the full pipeline from raw recordings to the learning dataset."""
    logger = get_logger()
    if not trajs:
        raise TrajectoryValidationError("at least one trajectory is required")
    for traj in trajs:
        validate_trajectory(traj, min_samples=3)

    projection = "none"
    if origin is not None:
        trajs = [planarize(traj, origin) for traj in trajs]
        projection = PROJECTION_NAME

    trajs, shift = shift_to_origin(trajs)
    trajs, heading_shift = align_heading(trajs)
    has_heading = trajs[0].heading is not None

    demos = [differentiate(traj) for traj in trajs]
    dims = {demo.dim for demo in demos}
    if len(dims) != 1:
        raise TrajectoryValidationError(f"demonstrations disagree on dimension: {sorted(dims)}")
    d = dims.pop()
    angular = (d - 1,) if has_heading else ()
    demos = [correct_endpoints(demo, np.zeros(d), r_corr, angular) for demo in demos]

    if polar:
        demos = [to_polar(demo) for demo in demos]
        d = 2
    check_endpoints(demos, tol_target)

    meta = _dataset_meta(
        demos,
        projection=projection,
        origin_lonlat=tuple(origin) if origin is not None else None,
        shift=tuple(float(s) for s in shift),
        heading_shift=heading_shift,
        polar=polar,
        has_heading=has_heading,
    )
    logger.info(
        f"Preprocessed {len(demos)} demonstrations: d={d}, polar={polar}, "
        f"shift={np.round(shift, 3).tolist()}"
    )
    return Dataset(demos=tuple(demos), dim=d, meta=meta)


def replay_preprocessing(
    trajs: Sequence[RawTrajectory],
    meta: DatasetMeta,
    r_corr: float = 5.0,
    tol_target: float = 1e-6,
) -> Dataset:
    """Apply the preprocessing recorded in ``meta`` to new raw recordings."""
    if meta.origin_lonlat is not None:
        trajs = [planarize(traj, meta.origin_lonlat) for traj in trajs]
    shift = np.asarray(meta.shift, dtype=float)
    replayed = []
    for traj in trajs:
        validate_trajectory(traj, min_samples=3)
        if traj.dim != shift.shape[0] or (traj.heading is not None) != meta.has_heading:
            raise TrajectoryValidationError(
                f"dimension mismatch: trajectory '{traj.demo_id}' has {traj.dim} position columns "
                f"(heading={traj.heading is not None}), model expects {shift.shape[0]} (heading={meta.has_heading})"
            )
        heading = traj.heading
        if heading is not None:
            heading = wrap_angle(np.unwrap(heading) - meta.heading_shift)
        replayed.append(replace(traj, pos=traj.pos - shift, heading=heading))

    demos = [differentiate(traj) for traj in replayed]
    d = demos[0].dim
    angular = (d - 1,) if meta.has_heading else ()
    demos = [correct_endpoints(demo, np.zeros(d), r_corr, angular) for demo in demos]
    if meta.polar:
        demos = [to_polar(demo) for demo in demos]
        d = 2
    check_endpoints(demos, tol_target)

    fresh = _dataset_meta(demos)
    return Dataset(
        demos=tuple(demos),
        dim=d,
        meta=replace(meta, starts=fresh.starts, extent=fresh.extent),
    )


def normalize(dataset: Dataset) -> Dataset:
    """Divide every state axis (and its velocity) by the dataset std of that axis."""
    scales = np.std(dataset.states(), axis=0)
    scales[~(scales > 1e-12)] = 1.0
    demos = tuple(replace(demo, x=demo.x / scales, v=demo.v / scales) for demo in dataset.demos)
    return replace(dataset, demos=demos, meta=replace(dataset.meta, scales=tuple(float(s) for s in scales)))


def dataset_to_dict(dataset: Dataset) -> Dict[str, Any]:
    """JSON-ready export of a preprocessed dataset."""
    return {
        "dim": dataset.dim,
        "meta": dataset.meta.to_dict(),
        "demos": [
            [{"x": x.tolist(), "v": v.tolist()} for x, v in zip(demo.x, demo.v)] for demo in dataset.demos
        ],
    }


def dataset_from_dict(data: Dict[str, Any]) -> Dataset:
    """Inverse of dataset_to_dict; sample times are not stored, so t is the sample index."""
    try:
        dim = int(data["dim"])
        demos = []
        for i, samples in enumerate(data["demos"]):
            x = np.array([sample["x"] for sample in samples], dtype=float).reshape(-1, dim)
            v = np.array([sample["v"] for sample in samples], dtype=float).reshape(-1, dim)
            demos.append(Demonstration(t=np.arange(x.shape[0], dtype=float), x=x, v=v, demo_id=str(i)))
        meta = DatasetMeta.from_dict(data.get("meta", {}))
    except (KeyError, TypeError, ValueError) as e:
        raise DatasetError(f"malformed dataset document: {e}") from e
    if not demos:
        raise TrajectoryValidationError("dataset document holds no demonstrations")
    return Dataset(demos=tuple(demos), dim=dim, meta=meta)


def _base_curve(shape: str, s: np.ndarray) -> np.ndarray:
    """Noise-free curve sampled at path parameters s in [0, 1], before the endpoint shift."""
    if shape == "line":
        return np.column_stack([100.0 * (1.0 - s), 100.0 * (1.0 - s)])
    if shape == "arc":
        phi = np.pi / 2.0 + s * np.pi / 2.0
        return np.column_stack([100.0 + 100.0 * np.cos(phi), 100.0 * np.sin(phi)])
    if shape == "s-curve":
        return np.column_stack([120.0 * (1.0 - s), 40.0 * np.sin(2.0 * np.pi * s)])
    if shape == "port-approach":
        # wide outer sweep, then a tightening turn into the basin
        theta = 0.25 + 1.1 * (1.0 - s) ** 2
        radius = 260.0 * (1.0 - s) ** 1.2
        return np.column_stack([radius * np.cos(theta), radius * np.sin(theta)])
    if shape == "spiral":
        theta = 2.5 * np.pi * s
        radius = 120.0 * (1.0 - s)
        return np.column_stack([radius * np.cos(theta), radius * np.sin(theta)])
    raise UnknownShapeError(f"unknown shape '{shape}', expected one of {', '.join(SHAPES)}")


def _smooth_noise(rng: np.random.Generator, s: np.ndarray, std: float) -> np.ndarray:
    """Low-frequency 2-D perturbation with pointwise std close to ``std``."""
    n_modes = 4
    freqs = np.arange(1, n_modes + 1)
    amps = rng.normal(size=(n_modes, 2)) / freqs[:, None]
    phases = rng.uniform(0.0, 2.0 * np.pi, size=(n_modes, 2))
    waves = np.sin(2.0 * np.pi * freqs[None, :, None] * s[:, None, None] + phases[None]) * amps[None]
    noise = waves.sum(axis=1)
    scale = np.sqrt(np.sum(amps ** 2, axis=0) / 2.0)
    return std * noise / scale


def generate_raw(
    shape: str,
    M: int,
    N: int,
    noise_std: float,
    seed: int,
    heading: bool = False,
) -> List[RawTrajectory]:
    """M noisy variants of a named shape, all ending exactly at the origin."""
    if shape not in SHAPES:
        raise UnknownShapeError(f"unknown shape '{shape}', expected one of {', '.join(SHAPES)}")
    if M < 1:
        raise ValueError(f"M must be >= 1, got {M}")
    if N < 8:
        raise ValueError(f"N must be >= 8, got {N}")
    if noise_std < 0:
        raise ValueError(f"noise_std must be non-negative, got {noise_std}")

    rng = np.random.default_rng(seed)
    tau = np.linspace(0.0, 1.0, N)
    # ease-out: speed falls linearly to zero at the target
    s = 1.0 - (1.0 - tau) ** 2
    base = _base_curve(shape, s) - _base_curve(shape, np.ones(1))
    length = float(np.sum(np.linalg.norm(np.diff(base, axis=0), axis=1)))
    t = tau * max(length, 1.0)

    taper = (1.0 - s)[:, None]
    trajs = []
    for m in range(M):
        offset = rng.normal(size=2) * 10.0 * noise_std
        wiggle = _smooth_noise(rng, s, noise_std) if noise_std > 0 else np.zeros_like(base)
        pos = base + taper * (offset[None, :] + wiggle)
        pos[-1] = 0.0
        course = None
        if heading:
            tangent = np.gradient(pos, axis=0)
            course = np.arctan2(tangent[:, 1], tangent[:, 0])
        trajs.append(RawTrajectory(t=t.copy(), pos=pos, heading=course, demo_id=f"{shape}-{m}"))
    return trajs


def generate_synthetic(
    shape: str,
    M: int,
    N: int,
    noise_std: float,
    seed: int,
    heading: bool = False,
) -> Dataset:
    """Synthetic demonstrations run through the standard preprocessing pipeline."""
    return preprocess(generate_raw(shape, M, N, noise_std, seed, heading=heading))
