"""
Explicit-Euler rollouts of a learned model, energy grids and streamlines.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from typing import List, Optional, Sequence, Tuple

import numpy as np
from tqdm import tqdm

from ..utils.logger import get_logger
from ..utils.models import Disturbance, EnergyGrid, RolloutTrace, StableModel
from .controller import ClosedLoopField

DESCENT_TOL = 1e-6
DIVERGENCE_FACTOR = 1e3
DEFAULT_MAX_HALVINGS = 8


def parse_disturbance(text: Optional[str]) -> Disturbance:
    """Parse a disturbance description.

    Accepted forms, optionally followed by ``+noise:STD``::

        none
        noise:STD
        drift:VX,VY,...
        localized:T0,DURATION,VX,VY,...
        engine-off:T0,DURATION,VX,VY,...

    ``engine-off`` replaces the nominal dynamics by the drift during the window.
    """
    if text is None or not text.strip():
        return Disturbance()

    noise_std = 0.0
    parts = [part.strip() for part in text.strip().split("+")]
    main = parts[0]
    for extra in parts[1:]:
        name, _, value = extra.partition(":")
        if name != "noise" or not value:
            raise ValueError(f"unknown disturbance modifier: {extra!r}")
        noise_std = float(value)

    name, _, args = main.partition(":")
    try:
        values = [float(v) for v in args.split(",")] if args else []
    except ValueError as e:
        raise ValueError(f"malformed disturbance arguments in {text!r}") from e

    if name == "none":
        return Disturbance(noise_std=noise_std)
    if name == "noise":
        if len(values) != 1:
            raise ValueError("noise needs one standard deviation, e.g. noise:0.05")
        return Disturbance(noise_std=values[0])
    if name == "drift":
        if not values:
            raise ValueError("drift needs a vector, e.g. drift:0.2,0.0")
        return Disturbance(kind="constant_drift", vector=tuple(values), noise_std=noise_std)
    if name in ("localized", "engine-off"):
        if len(values) < 3:
            raise ValueError(f"{name} needs T0,DURATION and a vector")
        return Disturbance(
            kind="localized",
            t_start=values[0],
            duration=values[1],
            vector=tuple(values[2:]),
            mode="freeze_dynamics" if name == "engine-off" else "drift",
            noise_std=noise_std,
        )
    raise ValueError(f"unknown disturbance kind: {name!r}")


def _disturbance_at(disturbance: Disturbance, t: float, dim: int) -> Tuple[np.ndarray, bool, bool]:
    """(drift vector, window active, dynamics frozen) at time t."""
    if disturbance.kind == "none":
        return np.zeros(dim), False, False
    vector = np.zeros(dim)
    n = min(dim, len(disturbance.vector))
    vector[:n] = disturbance.vector[:n]
    if disturbance.kind == "constant_drift":
        return vector, True, False
    inside = disturbance.t_start <= t < disturbance.t_start + disturbance.duration
    if not inside:
        return np.zeros(dim), False, False
    return vector, True, disturbance.mode == "freeze_dynamics"


def _euler_step(
    field: ClosedLoopField,
    x: np.ndarray,
    v: np.ndarray,
    dt: float,
    V_now: float,
    guard_descent: bool,
    max_halvings: int,
    control_enabled: bool,
) -> np.ndarray:
    x_next = x + dt * v
    if not guard_descent or field.energy(x_next) <= V_now + DESCENT_TOL:
        return x_next

    # a full step overshoots the energy decrease: retry with 2^k sub-steps
    for halving in range(1, max_halvings + 1):
        n_sub = 2 ** halving
        h = dt / n_sub
        x_sub = x.copy()
        for _ in range(n_sub):
            x_sub = x_sub + h * field.closed_loop_velocity(x_sub, control_enabled)
        if field.energy(x_sub) <= V_now + DESCENT_TOL:
            return x_sub
    get_logger().debug(f"Energy still increases after {max_halvings} step halvings at x={x}")
    return x_sub


def rollout(
    model: StableModel,
    x0: Sequence[float],
    dt: float = 0.1,
    max_steps: int = 10000,
    disturbance: Optional[Disturbance] = None,
    control_enabled: bool = True,
    seed: int = 0,
    max_halvings: int = DEFAULT_MAX_HALVINGS,
    field: Optional[ClosedLoopField] = None,
    divergence_factor: float = DIVERGENCE_FACTOR,
) -> RolloutTrace:
    """Integrate the closed loop from x0 until the target ball, divergence or max_steps.

    Args:
        model: Learned model
        x0: Start state in model (preprocessed) coordinates
        dt: Time step in seconds
        max_steps: Maximum number of recorded states
        disturbance: Additive drift, localized window and/or velocity noise
        control_enabled: False integrates the bare mixture regression
        seed: Seed of the noise generator
        max_halvings: Maximum step halvings used to keep the energy decreasing
        field: Prebuilt closed-loop field (built from model when omitted)
        divergence_factor: Divergence is declared past this multiple of the demonstration extent

    Returns:
        RolloutTrace with one row per visited state
    """
    x = np.asarray(x0, dtype=float).copy()
    d = model.dim
    if x.shape != (d,):
        raise ValueError(f"start state has shape {x.shape}, model dimension is {d}")
    if not np.all(np.isfinite(x)):
        raise ValueError("start state must be finite")
    if not dt > 0:
        raise ValueError(f"dt must be positive, got {dt}")
    if max_steps < 1:
        raise ValueError(f"max_steps must be >= 1, got {max_steps}")
    if not divergence_factor > 0:
        raise ValueError(f"divergence_factor must be positive, got {divergence_factor}")

    disturbance = disturbance or Disturbance()
    field = field or ClosedLoopField.from_model(model)
    rng = np.random.default_rng(seed)
    extent = model.meta.extent if model.meta.extent > 0 else max(float(np.linalg.norm(x)), 1.0)
    limit = divergence_factor * extent
    target_radius = model.cfg.target_radius

    rows_t: List[float] = []
    rows_x, rows_gmr, rows_u, rows_total = [], [], [], []
    rows_V: List[float] = []
    rows_dist: List[bool] = []
    trace_error = None
    diverged = False
    reached = False

    for step in range(max_steps):
        t = step * dt
        if not np.all(np.isfinite(x)):
            diverged = True
            trace_error = f"non-finite state at t={t:.3f}s"
            get_logger().warning(f"Rollout diverged: {trace_error}")
            break
        ev = field.evaluate_batch(x[None, :], control_enabled)
        drift, window, frozen = _disturbance_at(disturbance, t, d)
        if frozen:
            v_gmr = np.zeros(d)
            u = np.zeros(d)
            v_applied = drift.copy()
        else:
            v_gmr = ev.v_gmr[0]
            u = ev.u[0]
            v_applied = ev.v_total[0] + drift
        if disturbance.noise_std > 0:
            v_applied = v_applied + rng.normal(scale=disturbance.noise_std, size=d)
        V_now = float(ev.V[0])

        rows_t.append(t)
        rows_x.append(x.copy())
        rows_gmr.append(v_gmr)
        rows_u.append(u)
        rows_total.append(v_applied)
        rows_V.append(V_now)
        rows_dist.append(window)

        norm = float(np.linalg.norm(x))
        if norm <= target_radius:
            reached = True
            break
        if norm > limit:
            diverged = True
            trace_error = f"state norm {norm:.3g} exceeded {limit:.3g} at t={t:.3f}s"
            get_logger().warning(f"Rollout diverged: {trace_error}")
            break
        if step == max_steps - 1:
            break

        guard = control_enabled and not window and disturbance.noise_std == 0
        x = _euler_step(field, x, v_applied, dt, V_now, guard, max_halvings, control_enabled)

    if not reached and not diverged:
        get_logger().info(f"Rollout stopped after {len(rows_t)} steps without reaching the target")

    return RolloutTrace(
        t=np.asarray(rows_t),
        x=np.vstack(rows_x),
        v_gmr=np.vstack(rows_gmr),
        u=np.vstack(rows_u),
        v_total=np.vstack(rows_total),
        V=np.asarray(rows_V),
        disturbed=np.asarray(rows_dist, dtype=bool),
        reached_target=reached,
        diverged=diverged,
        error=trace_error,
    )


def streamline_bundle(
    model: StableModel,
    starts: Sequence[Sequence[float]],
    dt: float = 0.1,
    max_steps: int = 10000,
    disturbance: Optional[Disturbance] = None,
    control_enabled: bool = True,
    seed: int = 0,
    workers: int = 1,
    progress: bool = False,
    max_halvings: int = DEFAULT_MAX_HALVINGS,
    divergence_factor: float = DIVERGENCE_FACTOR,
) -> List[RolloutTrace]:
    """Independent rollouts from several start states, returned in input order."""
    field = ClosedLoopField.from_model(model)

    def _one(indexed: Tuple[int, Sequence[float]]) -> RolloutTrace:
        i, x0 = indexed
        return rollout(
            model,
            x0,
            dt,
            max_steps,
            disturbance,
            control_enabled,
            seed + i,
            max_halvings=max_halvings,
            field=field,
            divergence_factor=divergence_factor,
        )

    indexed = list(enumerate(starts))
    if workers <= 1 or len(indexed) <= 1:
        return [_one(item) for item in tqdm(indexed, desc="Rollouts", disable=not progress)]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_one, indexed))


def random_starts(model: StableModel, count: int, seed: int = 0) -> np.ndarray:
    """Random convex combinations of the demonstrated start states."""
    if count < 1:
        raise ValueError(f"count must be >= 1, got {count}")
    starts = np.asarray(model.meta.starts, dtype=float)
    if starts.size == 0:
        raise ValueError("model carries no demonstration start states")
    rng = np.random.default_rng(seed)
    weights = rng.dirichlet(np.ones(starts.shape[0]), size=count)
    return weights @ starts


def energy_grid(
    model: StableModel,
    bounds: Sequence[Tuple[float, float]],
    resolution: Sequence[int],
) -> EnergyGrid:
    """V and the closed-loop velocity on a regular grid, flattened row-major."""
    if len(bounds) != model.dim or len(resolution) != model.dim:
        raise ValueError(f"need bounds and resolution for {model.dim} axes")
    axes = []
    for (lo, hi), n in zip(bounds, resolution):
        if not (np.isfinite(lo) and np.isfinite(hi)) or not hi > lo:
            raise ValueError(f"degenerate bounds: [{lo}, {hi}]")
        if int(n) < 2:
            raise ValueError(f"resolution must be >= 2 per axis, got {n}")
        axes.append(np.linspace(lo, hi, int(n)))

    mesh = np.meshgrid(*axes, indexing="ij")
    points = np.column_stack([m.ravel() for m in mesh])
    ev = ClosedLoopField.from_model(model).evaluate_batch(points)
    return EnergyGrid(axes=tuple(axes), points=points, V=ev.V, v=ev.v_total)
