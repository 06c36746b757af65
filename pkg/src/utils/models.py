from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Tuple

import numpy as np


def _as_float_array(values: Any, ndim: int) -> np.ndarray:
    array = np.asarray(values, dtype=float)
    if array.ndim != ndim:
        raise ValueError(f"expected a {ndim}-d array, got shape {array.shape}")
    return array


@dataclass(frozen=True)
class RawTrajectory:
    """Time-stamped positions (and optional heading) of one demonstration."""

    t: np.ndarray  # (n,) seconds
    pos: np.ndarray  # (n, d) metres, or lon/lat degrees before planarization
    heading: Optional[np.ndarray] = None  # (n,) radians
    demo_id: str = ""

    @property
    def n_samples(self) -> int:
        return int(self.t.shape[0])

    @property
    def dim(self) -> int:
        return int(self.pos.shape[1])

    def states(self) -> np.ndarray:
        """Position with heading appended as the last column, when present."""
        if self.heading is None:
            return self.pos
        return np.column_stack([self.pos, self.heading])


@dataclass(frozen=True)
class Demonstration:
    """One demonstration as (state, velocity) pairs on a time grid."""

    t: np.ndarray  # (N,)
    x: np.ndarray  # (N, d)
    v: np.ndarray  # (N, d)
    demo_id: str = ""

    @property
    def n_points(self) -> int:
        return int(self.x.shape[0])

    @property
    def dim(self) -> int:
        return int(self.x.shape[1])


@dataclass(frozen=True)
class DatasetMeta:
    """Preprocessing record, sufficient to invert the target shift and scaling."""

    projection: str = "none"
    origin_lonlat: Optional[Tuple[float, float]] = None
    shift: Tuple[float, ...] = ()
    heading_shift: float = 0.0
    scales: Tuple[float, ...] = ()
    polar: bool = False
    has_heading: bool = False
    starts: Tuple[Tuple[float, ...], ...] = ()
    extent: float = 0.0

    def to_dict(self) -> Dict[str, Any]:
        return {
            "projection": self.projection,
            "origin_lonlat": list(self.origin_lonlat) if self.origin_lonlat is not None else None,
            "shift": [float(s) for s in self.shift],
            "heading_shift": float(self.heading_shift),
            "scales": [float(s) for s in self.scales],
            "polar": self.polar,
            "has_heading": self.has_heading,
            "starts": [[float(c) for c in start] for start in self.starts],
            "extent": float(self.extent),
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "DatasetMeta":
        origin = data.get("origin_lonlat")
        return cls(
            projection=data.get("projection", "none"),
            origin_lonlat=tuple(origin) if origin is not None else None,
            shift=tuple(data.get("shift", ())),
            heading_shift=float(data.get("heading_shift", 0.0)),
            scales=tuple(data.get("scales", ())),
            polar=bool(data.get("polar", False)),
            has_heading=bool(data.get("has_heading", False)),
            starts=tuple(tuple(start) for start in data.get("starts", ())),
            extent=float(data.get("extent", 0.0)),
        )


@dataclass(frozen=True)
class Dataset:
    """The canonical learning dataset: M demonstrations of dimension d."""

    demos: Tuple[Demonstration, ...]
    dim: int
    meta: DatasetMeta = field(default_factory=DatasetMeta)

    @property
    def n_demos(self) -> int:
        return len(self.demos)

    def states(self) -> np.ndarray:
        return np.vstack([demo.x for demo in self.demos])

    def velocities(self) -> np.ndarray:
        return np.vstack([demo.v for demo in self.demos])

    def joint(self) -> np.ndarray:
        """Stacked (x, v) rows of every demonstration, shape (MN, 2d)."""
        return np.hstack([self.states(), self.velocities()])


@dataclass(frozen=True)
class GmmModel:
    """K-component mixture over joint (x, v) with partitioned blocks."""

    priors: np.ndarray  # (K,)
    means: np.ndarray  # (K, 2d)
    covs: np.ndarray  # (K, 2d, 2d)
    dim: int

    @property
    def n_components(self) -> int:
        return int(self.priors.shape[0])

    @property
    def mu_x(self) -> np.ndarray:
        return self.means[:, : self.dim]

    @property
    def mu_v(self) -> np.ndarray:
        return self.means[:, self.dim :]

    @property
    def sigma_x(self) -> np.ndarray:
        return self.covs[:, : self.dim, : self.dim]

    @property
    def sigma_xv(self) -> np.ndarray:
        return self.covs[:, : self.dim, self.dim :]

    @property
    def sigma_vx(self) -> np.ndarray:
        return self.covs[:, self.dim :, : self.dim]

    @property
    def sigma_v(self) -> np.ndarray:
        return self.covs[:, self.dim :, self.dim :]

    def to_dict(self) -> Dict[str, Any]:
        return {
            "K": self.n_components,
            "dim": self.dim,
            "priors": self.priors.tolist(),
            "means": self.means.tolist(),
            "covs": self.covs.tolist(),
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "GmmModel":
        return cls(
            priors=_as_float_array(data["priors"], 1),
            means=_as_float_array(data["means"], 2),
            covs=_as_float_array(data["covs"], 3),
            dim=int(data["dim"]),
        )


@dataclass
class EmReport:
    """Convergence record of one EM run."""

    loglik_history: List[float] = field(default_factory=list)
    iterations: int = 0
    converged: bool = False
    frozen_components: List[int] = field(default_factory=list)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "iterations": self.iterations,
            "converged": self.converged,
            "final_loglik": self.loglik_history[-1] if self.loglik_history else None,
            "frozen_components": list(self.frozen_components),
        }


@dataclass(frozen=True)
class ClfParams:
    """WSAQF energy function parameters.

    ``factors[l]`` is the lower-triangular G_l with P_l = G_l G_l^T + eps I,
    so any real factor values give a positive definite P_l. ``factors[0]``
    belongs to the pure quadratic term; ``centers`` holds mu_1..mu_L.
    """

    factors: np.ndarray  # (L+1, d, d)
    centers: np.ndarray  # (L, d)
    eps: float = 1e-8

    @property
    def n_asymmetric(self) -> int:
        return int(self.centers.shape[0])

    @property
    def dim(self) -> int:
        return int(self.factors.shape[1])

    @property
    def P(self) -> np.ndarray:
        G = np.tril(self.factors)
        return G @ np.swapaxes(G, 1, 2) + self.eps * np.eye(self.dim)

    @classmethod
    def from_matrices(cls, P: np.ndarray, centers: np.ndarray, eps: float = 1e-8) -> "ClfParams":
        """Build params whose reconstructed P_l equal the given SPD matrices."""
        P = np.asarray(P, dtype=float)
        d = P.shape[1]
        factors = np.stack([np.linalg.cholesky(P_l - eps * np.eye(d)) for P_l in P])
        return cls(factors=factors, centers=np.asarray(centers, dtype=float).reshape(-1, d), eps=eps)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "L": self.n_asymmetric,
            "dim": self.dim,
            "eps": self.eps,
            "G_factors": np.tril(self.factors).tolist(),
            "centers": self.centers.tolist(),
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "ClfParams":
        dim = int(data["dim"])
        return cls(
            factors=_as_float_array(data["G_factors"], 3),
            centers=np.asarray(data["centers"], dtype=float).reshape(-1, dim),
            eps=float(data.get("eps", 1e-8)),
        )


@dataclass(frozen=True)
class ControllerConfig:
    """Sontag controller gain and the target ball where control is switched off."""

    rho0: float = 0.05
    target_radius: float = 0.5
    b_floor: float = 1e-10

    def __post_init__(self) -> None:
        if not self.rho0 > 0:
            raise ValueError(f"rho0 must be positive, got {self.rho0}")
        if self.target_radius < 0:
            raise ValueError(f"target_radius must be non-negative, got {self.target_radius}")

    def to_dict(self) -> Dict[str, Any]:
        return {"rho0": self.rho0, "target_radius": self.target_radius, "b_floor": self.b_floor}

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "ControllerConfig":
        return cls(
            rho0=float(data["rho0"]),
            target_radius=float(data["target_radius"]),
            b_floor=float(data.get("b_floor", 1e-10)),
        )


@dataclass(frozen=True)
class LearnConfig:
    """Inputs of the stable estimator fit."""

    K: int = 5
    L: int = 1
    seed: int = 0
    rho0: float = 0.05
    target_radius: float = 0.5
    b_floor: float = 1e-10
    threshold: Optional[float] = None  # None -> 1% of the mean squared speed
    max_outer_iters: int = 100
    stagnation_iters: int = 20
    em_tol: float = 1e-6
    em_max_iter: int = 500
    scale_normalization: bool = True
    gradient_step: float = 1e-6
    armijo_c1: float = 1e-4

    def __post_init__(self) -> None:
        if self.K < 1:
            raise ValueError(f"K must be >= 1, got {self.K}")
        if self.L < 0:
            raise ValueError(f"L must be >= 0, got {self.L}")
        if self.threshold is not None and not self.threshold > 0:
            raise ValueError(f"threshold must be positive, got {self.threshold}")


@dataclass(frozen=True)
class StableModel:
    """The serialized artifact of learning."""

    gmm: GmmModel
    clf: ClfParams
    cfg: ControllerConfig
    meta: DatasetMeta
    J_final: float
    J_init: float = float("nan")
    history: Tuple[float, ...] = ()
    converged: bool = False
    iterations: int = 0
    em: Dict[str, Any] = field(default_factory=dict)
    provenance: Dict[str, Any] = field(default_factory=dict)  # effective config of the fit

    @property
    def dim(self) -> int:
        return self.gmm.dim

    @property
    def scales(self) -> np.ndarray:
        if self.meta.scales:
            return np.asarray(self.meta.scales, dtype=float)
        return np.ones(self.dim)


@dataclass(frozen=True)
class Disturbance:
    """Additive disturbance applied during a rollout.

    kind: "none", "constant_drift" or "localized"; localized windows either add
    the drift ("drift") or replace the nominal dynamics by it ("freeze_dynamics").
    """

    kind: str = "none"
    vector: Tuple[float, ...] = ()
    t_start: float = 0.0
    duration: float = 0.0
    mode: str = "drift"
    noise_std: float = 0.0

    def __post_init__(self) -> None:
        if self.kind not in ("none", "constant_drift", "localized"):
            raise ValueError(f"unknown disturbance kind: {self.kind}")
        if self.kind == "localized" and not self.duration > 0:
            raise ValueError("localized disturbance needs a positive duration")
        if self.mode not in ("drift", "freeze_dynamics"):
            raise ValueError(f"unknown disturbance mode: {self.mode}")
        if not np.all(np.isfinite(self.vector)):
            raise ValueError("disturbance vector must be finite")
        if self.noise_std < 0:
            raise ValueError("noise_std must be non-negative")


@dataclass
class RolloutTrace:
    """Integrator output, one row per visited state."""

    t: np.ndarray
    x: np.ndarray
    v_gmr: np.ndarray
    u: np.ndarray
    v_total: np.ndarray
    V: np.ndarray
    disturbed: np.ndarray
    reached_target: bool = False
    diverged: bool = False
    error: Optional[str] = None

    @property
    def steps_used(self) -> int:
        return int(self.t.shape[0])


@dataclass(frozen=True)
class EnergyGrid:
    """Energy and closed-loop velocity sampled on a row-major meshgrid."""

    axes: Tuple[np.ndarray, ...]
    points: np.ndarray  # (n, d)
    V: np.ndarray  # (n,)
    v: np.ndarray  # (n, d)


@dataclass(frozen=True)
class SeaResult:
    """Swept error area between a demonstration and its reproduction."""

    area: float
    per_segment: np.ndarray
    pairing: np.ndarray  # common normalized arc-length parameters
