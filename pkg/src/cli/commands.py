"""
Command implementations for the ``stableds`` entry point.

Each ``cmd_*`` function takes the parsed argparse namespace and the active
ConfigManager, writes its outputs through ExportManager, prints a short
summary on stdout and returns the process exit code.
"""

from __future__ import annotations

import argparse
import itertools
import math
import platform
from dataclasses import replace
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
import psutil
from tqdm import tqdm

from .. import __version__
from ..core.dataset import (
    dataset_to_dict,
    generate_raw,
    generate_synthetic,
    load_csv,
    preprocess,
    replay_preprocessing,
    trajectories_to_frame,
)
from ..core.learn import build_objective, fit, load_model, save_model
from ..core.gmm import fit_em
from ..core.clf import init_identity
from ..core.metrics import evaluate
from ..core.sim import energy_grid, parse_disturbance, random_starts, streamline_bundle
from ..utils.config_manager import ConfigManager
from ..utils.export_manager import ExportManager
from ..utils.logger import get_logger
from ..utils.models import EnergyGrid, LearnConfig, RolloutTrace, StableModel
from ..utils.path_utils import indexed_path, normalize_path
from ..utils.performance_profiler import PerformanceProfiler

COMPLEXITY_NOTE = (
    "Complexity note: one objective evaluation costs O(K*M*N*d^3), linear in K*M*N for fixed d. "
    "A published bound of O(8 d^21 K M N) per iteration reads as a typo for a low-order polynomial "
    "in d times K*M*N; compare against the measured slope above, not that bound."
)


class UsageError(Exception):
    """Invalid command-line input; reported with exit code 2."""

    pass


def parse_floats(text: str, flag: str, length: Optional[int] = None) -> List[float]:
    try:
        values = [float(v) for v in text.split(",")]
    except ValueError as e:
        raise UsageError(f"{flag}: expected comma-separated numbers, got {text!r}") from e
    if length is not None and len(values) != length:
        raise UsageError(f"{flag}: expected {length} values, got {len(values)}")
    if not all(math.isfinite(v) for v in values):
        raise UsageError(f"{flag}: values must be finite")
    return values


def parse_ints(text: str, flag: str) -> List[int]:
    try:
        values = [int(v) for v in text.split(",")]
    except ValueError as e:
        raise UsageError(f"{flag}: expected comma-separated integers, got {text!r}") from e
    if not values or any(v < 1 for v in values):
        raise UsageError(f"{flag}: values must be positive")
    return values


def parse_bounds(text: str, dim: int) -> List[Tuple[float, float]]:
    values = parse_floats(text, "--bounds", 2 * dim)
    bounds = [(values[2 * i], values[2 * i + 1]) for i in range(dim)]
    for lo, hi in bounds:
        if not hi > lo:
            raise UsageError(f"--bounds: degenerate interval [{lo}, {hi}]")
    return bounds


def parse_resolution(text: str, dim: int) -> List[int]:
    """'50' or '50x40' -> one count per axis."""
    try:
        counts = [int(v) for v in text.lower().split("x")]
    except ValueError as e:
        raise UsageError(f"--resolution: expected N or NxM, got {text!r}") from e
    if len(counts) == 1:
        counts = counts * dim
    if len(counts) != dim or any(n < 2 for n in counts):
        raise UsageError(f"--resolution: need {dim} counts >= 2, got {text!r}")
    return counts


def _effective_config(config: Dict[str, Any], command: str, **params: Any) -> Dict[str, Any]:
    return {"command": command, **params, "settings": config}


def learn_config_from(settings: Dict[str, Any], K: int, seed: int) -> LearnConfig:
    learning = settings["learning"]
    controller = settings["controller"]
    try:
        return LearnConfig(
            K=K,
            L=int(learning["L"]),
            seed=seed,
            rho0=float(controller["rho0"]),
            target_radius=float(controller["target_radius"]),
            b_floor=float(controller["b_floor"]),
            threshold=learning["threshold"],
            max_outer_iters=int(learning["max_outer_iters"]),
            stagnation_iters=int(learning["stagnation_iters"]),
            em_tol=float(learning["em_tol"]),
            em_max_iter=int(learning["em_max_iter"]),
            scale_normalization=bool(learning["scale_normalization"]),
        )
    except ValueError as e:
        raise UsageError(f"infeasible learning configuration: {e}") from e


def trace_to_frame(trace: RolloutTrace) -> pd.DataFrame:
    """`t,x1..xd,vgmr1..,u1..,vtot1..,V,disturbed` table of one rollout."""
    d = trace.x.shape[1]
    columns: Dict[str, Any] = {"t": trace.t}
    for prefix, block in (("x", trace.x), ("vgmr", trace.v_gmr), ("u", trace.u), ("vtot", trace.v_total)):
        for j in range(d):
            columns[f"{prefix}{j + 1}"] = block[:, j]
    columns["V"] = trace.V
    columns["disturbed"] = trace.disturbed.astype(int)
    return pd.DataFrame(columns)


def grid_to_frame(grid: EnergyGrid) -> pd.DataFrame:
    d = grid.points.shape[1]
    columns: Dict[str, Any] = {f"x{j + 1}": grid.points[:, j] for j in range(d)}
    columns["V"] = grid.V
    for j in range(d):
        columns[f"f{j + 1}"] = grid.v[:, j]
    return pd.DataFrame(columns)


def cmd_generate(args: argparse.Namespace, config_manager: ConfigManager) -> int:
    trajs = generate_raw(args.shape, args.M, args.N, args.noise, args.seed, heading=args.heading)
    frame = trajectories_to_frame(trajs)
    exporter = ExportManager(
        _effective_config(
            {},
            "generate",
            shape=args.shape,
            M=args.M,
            N=args.N,
            noise=args.noise,
            seed=args.seed,
            heading=args.heading,
        )
    )
    exporter.write_csv(frame, args.out)

    d = trajs[0].states().shape[1]
    extent = max(float(np.max(np.linalg.norm(traj.pos - traj.pos[-1], axis=1))) for traj in trajs)
    print(f"M={len(trajs)} N={args.N} d={d} extent={extent:.3f}")
    return 0


def cmd_fit(args: argparse.Namespace, config_manager: ConfigManager) -> int:
    logger = get_logger()
    config_manager.apply_overrides(
        {
            "learning": {
                "K": args.K,
                "L": args.L,
                "threshold": args.threshold,
                "max_outer_iters": args.max_iters,
                "scale_normalization": False if args.no_normalize else None,
            },
            "controller": {"rho0": args.rho0, "target_radius": args.target_radius},
            "preprocessing": {"polar": True if args.polar else None},
        }
    )
    settings = config_manager.get_config()
    origin = tuple(parse_floats(args.origin, "--origin", 2)) if args.origin else None

    trajs = load_csv(normalize_path(args.input))
    dataset = preprocess(
        trajs,
        origin=origin,
        polar=bool(settings["preprocessing"]["polar"]),
        r_corr=float(settings["preprocessing"]["r_corr"]),
        tol_target=float(settings["preprocessing"]["tol_target"]),
    )
    if args.K is not None:
        K = args.K
    elif dataset.meta.has_heading:
        K = int(settings["learning"]["K_heading"])
    else:
        K = int(settings["learning"]["K"])
    cfg = learn_config_from(settings, K, args.seed)

    provenance = _effective_config(settings, "fit", K=K, seed=args.seed, origin=list(origin) if origin else None)
    profiler = PerformanceProfiler()
    with profiler.time_operation("fit"):
        model = fit(dataset, cfg, provenance=provenance)
    save_model(model, args.out)
    if args.dataset_json:
        ExportManager(provenance).write_json(dataset_to_dict(replace(dataset, meta=model.meta)), args.dataset_json)

    wall_time = profiler.get_stats("fit")["last"]
    print(
        f"J_init={model.J_init:.6g} J_final={model.J_final:.6g} iterations={model.iterations} "
        f"converged={str(model.converged).lower()} wall_time={wall_time:.2f}s"
    )
    if not model.converged:
        logger.warning("converged:false - threshold not reached; model saved with the best parameters found")
    return 0


def _rollout_starts(args: argparse.Namespace, model: StableModel) -> np.ndarray:
    starts: List[np.ndarray] = []
    if args.x0:
        starts.append(np.asarray(parse_floats(args.x0, "--x0", model.dim)))
    if args.from_demo_starts:
        starts.extend(np.asarray(start, dtype=float) for start in model.meta.starts)
    if args.random_starts:
        starts.extend(random_starts(model, args.random_starts, args.seed))
    if not starts:
        raise UsageError("give --x0, --from-demo-starts or --random-starts")
    return np.vstack(starts)


def cmd_rollout(args: argparse.Namespace, config_manager: ConfigManager) -> int:
    config_manager.apply_overrides({"simulation": {"dt": args.dt, "max_steps": args.steps}})
    settings = config_manager.get_config()
    simulation = settings["simulation"]
    if not float(simulation["dt"]) > 0:
        raise UsageError("--dt must be positive")
    try:
        disturbance = parse_disturbance(args.disturbance)
    except ValueError as e:
        raise UsageError(f"--disturbance: {e}") from e

    model = load_model(normalize_path(args.model))
    starts = _rollout_starts(args, model)
    traces = streamline_bundle(
        model,
        starts,
        dt=float(simulation["dt"]),
        max_steps=int(simulation["max_steps"]),
        disturbance=disturbance,
        control_enabled=not args.no_control,
        seed=args.seed,
        workers=args.workers,
        progress=not args.quiet,
        max_halvings=int(simulation["max_halvings"]),
        divergence_factor=float(simulation["divergence_factor"]),
    )

    exporter = ExportManager(
        _effective_config(
            simulation,
            "rollout",
            disturbance=args.disturbance,
            control=not args.no_control,
            seed=args.seed,
            starts=starts.tolist(),
        )
    )
    for i, trace in enumerate(traces):
        exporter.write_csv(trace_to_frame(trace), indexed_path(args.out, i, len(traces)))
        if trace.reached_target:
            status = "reached"
        elif trace.diverged:
            status = "diverged"
        else:
            status = "not reached"
        print(f"trace {i}: {status} ({trace.steps_used} steps)")
    return 0


def cmd_eval(args: argparse.Namespace, config_manager: ConfigManager) -> int:
    config_manager.apply_overrides(
        {
            "simulation": {"dt": args.dt, "max_steps": args.steps},
            "evaluation": {"sea_resolution": args.resolution},
        }
    )
    settings = config_manager.get_config()
    model = load_model(normalize_path(args.model))
    raw = load_csv(normalize_path(args.input))
    dataset = replay_preprocessing(
        raw,
        model.meta,
        r_corr=float(settings["preprocessing"]["r_corr"]),
        tol_target=float(settings["preprocessing"]["tol_target"]),
    )

    report = evaluate(
        model,
        dataset,
        dt=float(settings["simulation"]["dt"]),
        max_steps=int(settings["simulation"]["max_steps"]),
        resolution=settings["evaluation"]["sea_resolution"],
        max_halvings=int(settings["simulation"]["max_halvings"]),
        divergence_factor=float(settings["simulation"]["divergence_factor"]),
    )
    exporter = ExportManager(
        _effective_config(
            {"simulation": settings["simulation"], "evaluation": settings["evaluation"]}, "eval"
        )
    )
    exporter.write_json(report, args.out)

    table = pd.DataFrame(report["trajectories"])
    if args.xlsx:
        exporter.write_excel({"evaluation": table, "totals": pd.DataFrame([report["totals"]])}, args.xlsx)
    print(table.to_string(index=False))
    totals = report["totals"]
    print(f"total SEA={totals['sea']:.6g} RMSE={totals['rmse']:.6g} reached={totals['reached']}/{totals['n_demos']}")
    return 0


def cmd_field(args: argparse.Namespace, config_manager: ConfigManager) -> int:
    model = load_model(normalize_path(args.model))
    bounds = parse_bounds(args.bounds, model.dim)
    resolution = parse_resolution(args.resolution, model.dim)
    grid = energy_grid(model, bounds, resolution)
    exporter = ExportManager(
        _effective_config({}, "field", bounds=[list(b) for b in bounds], resolution=resolution)
    )
    exporter.write_csv(grid_to_frame(grid), args.out)

    i_min = int(np.argmin(grid.V))
    print(f"grid points={grid.points.shape[0]} min V={grid.V[i_min]:.6g} at {grid.points[i_min].tolist()}")
    return 0


def machine_metadata() -> Dict[str, Any]:
    freq = psutil.cpu_freq()
    return {
        "platform": platform.platform(),
        "python": platform.python_version(),
        "numpy": np.__version__,
        "cpu_logical": psutil.cpu_count(logical=True),
        "cpu_physical": psutil.cpu_count(logical=False),
        "cpu_max_mhz": round(freq.max, 1) if freq else None,
        "memory_gb": round(psutil.virtual_memory().total / 1024 ** 3, 2),
    }


def scaling_slope(sizes: Sequence[float], times: Sequence[float]) -> Optional[float]:
    """Slope of log(time) against log(size); None with fewer than 2 distinct sizes."""
    sizes = np.asarray(sizes, dtype=float)
    times = np.asarray(times, dtype=float)
    if np.unique(sizes).size < 2 or np.any(times <= 0):
        return None
    return float(np.polyfit(np.log(sizes), np.log(times), 1)[0])


def cmd_bench(args: argparse.Namespace, config_manager: ConfigManager) -> int:
    K_list = parse_ints(args.K, "--K")
    N_list = parse_ints(args.N, "--N")
    d_list = parse_ints(args.d, "--d")
    if any(d not in (2, 3) for d in d_list):
        raise UsageError("--d: supported dimensions are 2 (planar) and 3 (planar + heading)")
    settings = config_manager.get_config()

    profiler = PerformanceProfiler(log_level_info=False)
    rows = []
    combos = list(itertools.product(K_list, N_list, d_list, range(args.reps)))
    for K, N, d, rep in tqdm(combos, desc="Benchmark", disable=args.quiet):
        seed = args.seed + rep
        dataset = generate_synthetic("s-curve", M=args.M, N=N, noise_std=0.5, seed=seed, heading=(d == 3))
        cfg = replace(learn_config_from(settings, K, seed), max_outer_iters=args.iters)

        objective, work = build_objective(dataset, cfg)
        gmm, _ = fit_em(work.joint(), K, seed, cfg.em_tol, cfg.em_max_iter)
        theta = objective.codec.encode(gmm, init_identity(d, cfg.L))
        eval_s = profiler.time_call(f"objective K={K} N={N} d={d}", lambda: objective(theta), repeats=args.evals)

        with profiler.time_operation(f"fit K={K} N={N} d={d} rep={rep}"):
            model = fit(dataset, cfg)
        rows.append(
            {
                "K": K,
                "N": N,
                "d": d,
                "M": args.M,
                "rep": rep,
                "n_params": objective.codec.size,
                "objective_ms": eval_s * 1e3,
                "fit_s": profiler.get_stats(f"fit K={K} N={N} d={d} rep={rep}")["last"],
                "iterations": model.iterations,
            }
        )

    table = pd.DataFrame(rows)
    slopes = {}
    for d, group in table.groupby("d"):
        slope = scaling_slope(group["K"] * group["M"] * group["N"], group["objective_ms"])
        slopes[int(d)] = slope

    print(table.to_string(index=False))
    for d, slope in slopes.items():
        shown = f"{slope:.2f}" if slope is not None else "n/a"
        print(f"d={d}: log-log slope of objective time vs K*M*N = {shown}")
    machine = machine_metadata()
    print("machine: " + ", ".join(f"{key}={value}" for key, value in machine.items()))
    print(COMPLEXITY_NOTE)

    if args.out:
        exporter = ExportManager(
            _effective_config(
                {},
                "bench",
                K=K_list,
                N=N_list,
                d=d_list,
                M=args.M,
                reps=args.reps,
                iters=args.iters,
                machine=machine,
                version=__version__,
            )
        )
        exporter.write_csv(table, args.out)
    return 0


COMMANDS: Dict[str, Callable[[argparse.Namespace, ConfigManager], int]] = {
    "generate": cmd_generate,
    "fit": cmd_fit,
    "rollout": cmd_rollout,
    "eval": cmd_eval,
    "field": cmd_field,
    "bench": cmd_bench,
}
