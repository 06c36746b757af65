"""
Closed-loop velocity field: GMR estimate corrected by a Sontag-type
stabilizing control whenever the estimate would not decrease the energy.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from ..utils.models import ClfParams, ControllerConfig, StableModel
from . import clf as clf_ops
from .gmr import GmrCache


@dataclass(frozen=True)
class FieldEvaluation:
    """Batch evaluation of the closed loop; velocities in the caller's coordinates."""

    v_gmr: np.ndarray  # (n, d)
    u: np.ndarray  # (n, d)
    v_total: np.ndarray  # (n, d)
    a: np.ndarray  # (n,) grad V . f in model coordinates
    b_norm_sq: np.ndarray  # (n,)
    rho: np.ndarray  # (n,)
    active: np.ndarray  # (n,) bool, control applied
    V: np.ndarray  # (n,)


class ClosedLoopField:
    """v(x) = v_hat(x) + u(x) for a learned mixture and energy function.

    The public methods take physical states; the mixture and the energy
    function live in model coordinates x / scales, and returned velocities
    are mapped back by the same scales.
    """

    def __init__(
        self,
        gmr: GmrCache,
        clf: ClfParams,
        cfg: ControllerConfig,
        scales: Optional[np.ndarray] = None,
    ):
        if gmr.dim != clf.dim:
            raise ValueError(f"mixture dimension {gmr.dim} does not match energy function dimension {clf.dim}")
        self.gmr = gmr
        self.clf = clf
        self.cfg = cfg
        self.dim = gmr.dim
        self.scales = np.ones(self.dim) if scales is None else np.asarray(scales, dtype=float)

    @classmethod
    def from_model(cls, model: StableModel) -> "ClosedLoopField":
        return cls(GmrCache.from_model(model.gmm), model.clf, model.cfg, model.scales)

    def evaluate_model_batch(self, Z: np.ndarray, control_enabled: bool = True) -> FieldEvaluation:
        """Evaluate at model-space states Z; all outputs stay in model coordinates."""
        Z = np.atleast_2d(np.asarray(Z, dtype=float))
        f = self.gmr.estimate_batch(Z)
        b = clf_ops.gradient_batch(self.clf, Z)
        a = np.sum(b * f, axis=1)
        b_norm_sq = np.sum(b * b, axis=1)
        rho = self.cfg.rho0 * np.sqrt(a * a + b_norm_sq * b_norm_sq)

        outside_target = np.linalg.norm(Z * self.scales, axis=1) > self.cfg.target_radius
        active = (a + rho > 0) & (b_norm_sq >= self.cfg.b_floor) & outside_target
        if not control_enabled:
            active = np.zeros_like(active)

        u = np.zeros_like(f)
        if np.any(active):
            u[active] = -((a[active] + rho[active]) / b_norm_sq[active])[:, None] * b[active]
        # inactive rows keep the estimate bit-for-bit
        v_total = np.where(active[:, None], f + u, f)
        return FieldEvaluation(
            v_gmr=f,
            u=u,
            v_total=v_total,
            a=a,
            b_norm_sq=b_norm_sq,
            rho=rho,
            active=active,
            V=clf_ops.value_batch(self.clf, Z),
        )

    def evaluate_batch(self, X: np.ndarray, control_enabled: bool = True) -> FieldEvaluation:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        ev = self.evaluate_model_batch(X / self.scales, control_enabled)
        return FieldEvaluation(
            v_gmr=ev.v_gmr * self.scales,
            u=ev.u * self.scales,
            v_total=ev.v_total * self.scales,
            a=ev.a,
            b_norm_sq=ev.b_norm_sq,
            rho=ev.rho,
            active=ev.active,
            V=ev.V,
        )

    def a_b_terms(self, x: np.ndarray) -> Tuple[float, np.ndarray]:
        """a(x) = grad V . v_hat and b(x) = grad V, in model coordinates."""
        z = np.asarray(x, dtype=float) / self.scales
        b = clf_ops.gradient(self.clf, z)
        f = self.gmr.estimate(z)
        return float(b @ f), b

    def rho(self, x: np.ndarray) -> float:
        return float(self.evaluate_batch(np.asarray(x, dtype=float)[None, :]).rho[0])

    def control(self, x: np.ndarray) -> np.ndarray:
        return self.evaluate_batch(np.asarray(x, dtype=float)[None, :]).u[0]

    def closed_loop_velocity(self, x: np.ndarray, control_enabled: bool = True) -> np.ndarray:
        return self.evaluate_batch(np.asarray(x, dtype=float)[None, :], control_enabled).v_total[0]

    def energy(self, x: np.ndarray) -> float:
        return clf_ops.value(self.clf, np.asarray(x, dtype=float) / self.scales)
