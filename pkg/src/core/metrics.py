"""
Reproduction quality: swept error area (SEA), velocity RMSE and control effort.
"""

from __future__ import annotations

from typing import Any, Dict, List, Optional

import numpy as np

from ..utils.logger import get_logger
from ..utils.models import Dataset, RolloutTrace, SeaResult, StableModel
from .controller import ClosedLoopField
from .sim import DEFAULT_MAX_HALVINGS, DIVERGENCE_FACTOR, rollout

ENDPOINT_TOL = 1e-6
M2_PER_KM2 = 1e6


class SeaValidationError(ValueError):
    """A polyline passed to the swept error area is too short or malformed."""

    pass


def _cross(a: np.ndarray, b: np.ndarray) -> float:
    return float(a[0] * b[1] - a[1] * b[0])


def _shoelace(*points: np.ndarray) -> float:
    area = 0.0
    for i in range(len(points)):
        area += _cross(points[i], points[(i + 1) % len(points)])
    return 0.5 * abs(area)


def _proper_intersection(a: np.ndarray, b: np.ndarray, c: np.ndarray, d: np.ndarray) -> Optional[np.ndarray]:
    """Crossing point of segments ab and cd when they cross in their interiors."""
    r = b - a
    s = d - c
    denom = _cross(r, s)
    if abs(denom) < 1e-300:
        return None
    t = _cross(c - a, s) / denom
    u = _cross(c - a, r) / denom
    if 0.0 < t < 1.0 and 0.0 < u < 1.0:
        return a + t * r
    return None


def tetragon_area(p1, p2, q2, q1) -> float:
    """Unsigned area of the quadrilateral p1 -> p2 -> q2 -> q1.

    A self-intersecting (bowtie) quadrilateral is split at the crossing point
    and its two triangles are summed.
    """
    p1, p2, q2, q1 = (np.asarray(p, dtype=float)[:2] for p in (p1, p2, q2, q1))

    crossing = _proper_intersection(p1, p2, q2, q1)
    if crossing is not None:
        return _shoelace(p1, crossing, q1) + _shoelace(crossing, p2, q2)
    crossing = _proper_intersection(p2, q2, q1, p1)
    if crossing is not None:
        return _shoelace(p1, p2, crossing) + _shoelace(crossing, q2, q1)
    return _shoelace(p1, p2, q2, q1)


def _as_polyline(points, name: str) -> np.ndarray:
    curve = np.asarray(points, dtype=float)
    if curve.ndim != 2 or curve.shape[0] < 2:
        raise SeaValidationError(f"{name} needs at least 2 points, got shape {curve.shape}")
    if curve.shape[1] < 2:
        raise SeaValidationError(f"{name} must have at least 2 coordinates per point")
    if not np.all(np.isfinite(curve[:, :2])):
        raise SeaValidationError(f"{name} contains non-finite coordinates")
    curve = curve[:, :2]
    # repeated points carry no arc length
    keep = np.concatenate([[True], np.any(np.diff(curve, axis=0) != 0, axis=1)])
    curve = curve[keep]
    if curve.shape[0] == 1:
        curve = np.vstack([curve, curve])
    return curve


def _arc_parameters(curve: np.ndarray) -> np.ndarray:
    lengths = np.linalg.norm(np.diff(curve, axis=0), axis=1)
    cumulative = np.concatenate([[0.0], np.cumsum(lengths)])
    if cumulative[-1] <= 0:
        return np.linspace(0.0, 1.0, curve.shape[0])
    return cumulative / cumulative[-1]


def _resample(curve: np.ndarray, params: np.ndarray, grid: np.ndarray) -> np.ndarray:
    return np.column_stack([np.interp(grid, params, curve[:, j]) for j in range(curve.shape[1])])


def sea(demo, estimate, resolution: Optional[int] = None) -> SeaResult:
    """Swept error area between two polylines on their 2D position projection.

    Both curves are paired by normalized arc length on a grid of
    ``resolution + 1`` uniform parameters (default: longest curve's segment
    count) merged with every vertex parameter of both curves, and the
    tetragons between consecutive pairs are summed.
    """
    a = _as_polyline(demo, "demonstration")
    b = _as_polyline(estimate, "estimate")

    mismatch = max(np.linalg.norm(a[0] - b[0]), np.linalg.norm(a[-1] - b[-1]))
    if mismatch > ENDPOINT_TOL:
        get_logger().debug(f"SEA curves differ at their endpoints by {mismatch:.3g}")

    if resolution is None:
        resolution = max(a.shape[0], b.shape[0]) - 1
    if resolution < 1:
        raise SeaValidationError(f"resolution must be >= 1, got {resolution}")

    sa = _arc_parameters(a)
    sb = _arc_parameters(b)
    grid = np.unique(np.concatenate([np.linspace(0.0, 1.0, resolution + 1), sa, sb]))
    A = _resample(a, sa, grid)
    B = _resample(b, sb, grid)

    per_segment = np.array([tetragon_area(A[i], A[i + 1], B[i + 1], B[i]) for i in range(grid.size - 1)])
    return SeaResult(area=float(np.sum(per_segment)), per_segment=per_segment, pairing=grid)


def velocity_rmse(model: StableModel, dataset: Dataset, demo_index: Optional[int] = None) -> float:
    """Root mean squared closed-loop velocity error, over one demonstration or all."""
    if dataset.dim != model.dim:
        raise ValueError(f"dataset dimension {dataset.dim} does not match model dimension {model.dim}")
    if demo_index is None:
        X, V = dataset.states(), dataset.velocities()
    else:
        demo = dataset.demos[demo_index]
        X, V = demo.x, demo.v
    predicted = ClosedLoopField.from_model(model).evaluate_batch(X).v_total
    return float(np.sqrt(np.mean(np.sum((V - predicted) ** 2, axis=1))))


def control_effort(trace: RolloutTrace) -> Dict[str, float]:
    """Fraction of steps with nonzero control and the integral of |u| over time."""
    active = np.any(trace.u != 0.0, axis=1)
    dt = float(trace.t[1] - trace.t[0]) if trace.t.size > 1 else 0.0
    return {
        "fraction": float(np.mean(active)) if active.size else 0.0,
        "integral": float(np.sum(np.linalg.norm(trace.u, axis=1)) * dt),
    }


def evaluate(
    model: StableModel,
    dataset: Dataset,
    dt: float = 0.1,
    max_steps: int = 10000,
    resolution: Optional[int] = None,
    max_halvings: int = DEFAULT_MAX_HALVINGS,
    divergence_factor: float = DIVERGENCE_FACTOR,
) -> Dict[str, Any]:
    """Roll out from every demonstration start and score each reproduction."""
    if dataset.dim != model.dim:
        raise ValueError(f"dataset dimension {dataset.dim} does not match model dimension {model.dim}")
    planar_metres = not model.meta.polar

    field = ClosedLoopField.from_model(model)
    rows: List[Dict[str, Any]] = []
    for i, demo in enumerate(dataset.demos):
        trace = rollout(
            model,
            demo.x[0],
            dt=dt,
            max_steps=max_steps,
            max_halvings=max_halvings,
            field=field,
            divergence_factor=divergence_factor,
        )
        area = sea(demo.x, trace.x, resolution).area
        rows.append(
            {
                "demo": demo.demo_id or str(i),
                "sea": area,
                "sea_km2": area / M2_PER_KM2 if planar_metres else None,
                "rmse": velocity_rmse(model, dataset, i),
                "reached_target": trace.reached_target,
                "steps": trace.steps_used,
                "control_fraction": control_effort(trace)["fraction"],
            }
        )

    total_sea = float(sum(row["sea"] for row in rows))
    totals = {
        "n_demos": len(rows),
        "sea": total_sea,
        "sea_km2": total_sea / M2_PER_KM2 if planar_metres else None,
        "rmse": velocity_rmse(model, dataset),
        "reached": int(sum(row["reached_target"] for row in rows)),
    }
    return {"trajectories": rows, "totals": totals}
