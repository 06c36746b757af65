"""
Joint learning of the mixture and the energy function.

The mixture is initialized by EM, the energy function starts from the
identity, and both are refined together by BFGS on the closed-loop velocity
error until it drops below the target threshold.
"""

from __future__ import annotations

import json
from dataclasses import replace
from typing import Any, Dict, Optional, Tuple

import numpy as np
from scipy.special import softmax

from .. import TOOL_NAME, __version__
from ..utils.export_manager import ExportManager
from ..utils.logger import get_logger
from ..utils.models import (
    ClfParams,
    ControllerConfig,
    Dataset,
    DatasetMeta,
    GmmModel,
    LearnConfig,
    StableModel,
)
from ..utils.performance_profiler import PerformanceProfiler
from .clf import init_identity
from .controller import ClosedLoopField
from .dataset import normalize
from .gmm import fit_em
from .gmr import GmrCache
from .optimizer import minimize_bfgs

MODEL_FORMAT = "stable-model/1"
THRESHOLD_FRACTION = 0.01


class ModelFormatError(ValueError):
    """A model file is missing fields or has an unknown format tag."""

    pass


class LearningError(RuntimeError):
    """The optimizer cannot start, e.g. the initial objective is not finite."""

    pass


class ThetaCodec:
    """Maps (mixture, energy function) to one flat unconstrained vector and back.

    Layout: K prior logits, K*2d means, K lower-triangular covariance factors
    with log-diagonal, L+1 lower-triangular energy factors, L*d centers.
    """

    def __init__(self, n_components: int, dim: int, n_asymmetric: int, eps: float = 1e-8):
        self.K = n_components
        self.d = dim
        self.L = n_asymmetric
        self.eps = eps
        D = 2 * dim
        self._joint_tril = np.tril_indices(D)
        self._joint_diag = self._joint_tril[0] == self._joint_tril[1]
        self._state_tril = np.tril_indices(dim)

        sizes = [
            ("logits", self.K),
            ("means", self.K * D),
            ("cov_factors", self.K * len(self._joint_tril[0])),
            ("clf_factors", (self.L + 1) * len(self._state_tril[0])),
            ("centers", self.L * dim),
        ]
        self._slices: Dict[str, slice] = {}
        offset = 0
        for name, size in sizes:
            self._slices[name] = slice(offset, offset + size)
            offset += size
        self.size = offset

    def encode(self, gmm: GmmModel, clf: ClfParams) -> np.ndarray:
        theta = np.empty(self.size)
        theta[self._slices["logits"]] = np.log(gmm.priors)
        theta[self._slices["means"]] = gmm.means.ravel()

        n_tril = len(self._joint_tril[0])
        factors = np.empty((self.K, n_tril))
        for k in range(self.K):
            entries = np.linalg.cholesky(gmm.covs[k])[self._joint_tril]
            entries[self._joint_diag] = np.log(entries[self._joint_diag])
            factors[k] = entries
        theta[self._slices["cov_factors"]] = factors.ravel()

        G = np.tril(clf.factors)
        theta[self._slices["clf_factors"]] = np.stack([G_l[self._state_tril] for G_l in G]).ravel()
        theta[self._slices["centers"]] = clf.centers.ravel()
        return theta

    def decode(self, theta: np.ndarray) -> Tuple[GmmModel, ClfParams]:
        theta = np.asarray(theta, dtype=float)
        if theta.shape != (self.size,):
            raise ValueError(f"expected a parameter vector of length {self.size}, got shape {theta.shape}")
        D = 2 * self.d

        priors = softmax(theta[self._slices["logits"]])
        means = theta[self._slices["means"]].reshape(self.K, D)

        covs = np.empty((self.K, D, D))
        for k, entries in enumerate(theta[self._slices["cov_factors"]].reshape(self.K, -1)):
            entries = entries.copy()
            entries[self._joint_diag] = np.exp(entries[self._joint_diag])
            L = np.zeros((D, D))
            L[self._joint_tril] = entries
            covs[k] = L @ L.T

        factors = np.zeros((self.L + 1, self.d, self.d))
        for l, entries in enumerate(theta[self._slices["clf_factors"]].reshape(self.L + 1, -1)):
            factors[l][self._state_tril] = entries
        centers = theta[self._slices["centers"]].reshape(self.L, self.d)

        gmm = GmmModel(priors=priors, means=means, covs=covs, dim=self.d)
        return gmm, ClfParams(factors=factors, centers=centers, eps=self.eps)


class StableObjective:
    """J(theta) = sum |v - v_closed_loop(x)|^2 / (2 * number of datapoints).

    Returns +inf for parameters where the closed loop cannot be evaluated.
    """

    def __init__(
        self,
        states: np.ndarray,
        velocities: np.ndarray,
        codec: ThetaCodec,
        cfg: ControllerConfig,
        scales: Optional[np.ndarray] = None,
        gradient_step: float = 1e-6,
    ):
        self.states = np.asarray(states, dtype=float)
        self.velocities = np.asarray(velocities, dtype=float)
        self.codec = codec
        self.cfg = cfg
        self.scales = scales
        self.gradient_step = gradient_step
        self.evaluations = 0
        self._last: Optional[Tuple[np.ndarray, float]] = None

    def field(self, theta: np.ndarray) -> ClosedLoopField:
        gmm, clf = self.codec.decode(theta)
        return ClosedLoopField(GmrCache(gmm), clf, self.cfg, self.scales)

    def _evaluate(self, theta: np.ndarray) -> float:
        self.evaluations += 1
        try:
            with np.errstate(over="ignore", invalid="ignore", divide="ignore", under="ignore"):
                ev = self.field(theta).evaluate_model_batch(self.states)
                J = 0.5 * float(np.mean(np.sum((self.velocities - ev.v_total) ** 2, axis=1)))
        except (np.linalg.LinAlgError, ValueError, FloatingPointError):
            return np.inf
        return J if np.isfinite(J) else np.inf

    def __call__(self, theta: np.ndarray) -> float:
        theta = np.asarray(theta, dtype=float)
        # the optimizer asks for J and its gradient at the same point
        if self._last is not None and np.array_equal(self._last[0], theta):
            return self._last[1]
        J = self._evaluate(theta)
        self._last = (theta.copy(), J)
        return J

    def gradient(self, theta: np.ndarray, f0: Optional[float] = None) -> np.ndarray:
        """Central differences with step gradient_step * max(1, |theta_i|).

        Falls back to a one-sided difference when one neighbour is infeasible.
        """
        theta = np.asarray(theta, dtype=float)
        if f0 is None:
            f0 = self(theta)
        grad = np.zeros_like(theta)
        for i in range(theta.size):
            h = self.gradient_step * max(1.0, abs(theta[i]))
            shifted = theta.copy()
            shifted[i] = theta[i] + h
            f_plus = self._evaluate(shifted)
            shifted[i] = theta[i] - h
            f_minus = self._evaluate(shifted)
            if np.isfinite(f_plus) and np.isfinite(f_minus):
                grad[i] = (f_plus - f_minus) / (2.0 * h)
            elif np.isfinite(f_plus) and np.isfinite(f0):
                grad[i] = (f_plus - f0) / h
            elif np.isfinite(f_minus) and np.isfinite(f0):
                grad[i] = (f0 - f_minus) / h
        return grad


def _training_arrays(dataset: Dataset, scale_normalization: bool) -> Tuple[Dataset, np.ndarray]:
    if scale_normalization:
        work = normalize(dataset)
    else:
        work = replace(dataset, meta=replace(dataset.meta, scales=tuple(1.0 for _ in range(dataset.dim))))
    return work, np.asarray(work.meta.scales, dtype=float)


def build_objective(dataset: Dataset, cfg: LearnConfig) -> Tuple[StableObjective, Dataset]:
    """Objective over the (optionally normalized) dataset, plus that working dataset."""
    work, scales = _training_arrays(dataset, cfg.scale_normalization)
    codec = ThetaCodec(cfg.K, dataset.dim, cfg.L)
    ctrl = ControllerConfig(rho0=cfg.rho0, target_radius=cfg.target_radius, b_floor=cfg.b_floor)
    objective = StableObjective(work.states(), work.velocities(), codec, ctrl, scales, cfg.gradient_step)
    return objective, work


def objective(theta: np.ndarray, dataset: Dataset, cfg: Optional[LearnConfig] = None) -> float:
    """Training objective at theta on dataset (normalized as the fit would)."""
    obj, _ = build_objective(dataset, cfg or LearnConfig())
    return obj(theta)


def objective_gradient(theta: np.ndarray, dataset: Dataset, cfg: Optional[LearnConfig] = None) -> np.ndarray:
    obj, _ = build_objective(dataset, cfg or LearnConfig())
    return obj.gradient(theta)


def default_threshold(dataset: Dataset) -> float:
    """1% of the mean squared demonstrated speed."""
    return THRESHOLD_FRACTION * float(np.mean(np.sum(dataset.velocities() ** 2, axis=1)))


def fit(dataset: Dataset, cfg: LearnConfig, provenance: Optional[Dict[str, Any]] = None) -> StableModel:
    """Learn a globally stable model from a preprocessed dataset.

    Args:
        dataset: Preprocessed demonstrations (target at the origin)
        cfg: Learning configuration
        provenance: Effective configuration stored with the model

    Returns:
        The learned StableModel; ``converged`` is False when the optimizer
        stopped above the threshold
    """
    logger = get_logger()
    profiler = PerformanceProfiler()

    obj, work = build_objective(dataset, cfg)
    threshold = cfg.threshold if cfg.threshold is not None else default_threshold(work)
    logger.info(
        f"Fitting K={cfg.K}, L={cfg.L} on {work.n_demos} demonstrations "
        f"({work.states().shape[0]} points, d={work.dim}); threshold={threshold:.6g}"
    )

    with profiler.time_operation("EM initialization"):
        gmm, em_report = fit_em(work.joint(), cfg.K, cfg.seed, cfg.em_tol, cfg.em_max_iter)
    theta0 = obj.codec.encode(gmm, init_identity(work.dim, cfg.L))

    J_init = obj(theta0)
    if not np.isfinite(J_init):
        raise LearningError("initial objective is not finite; the mixture cannot be evaluated")
    logger.info(f"Initial objective J={J_init:.6g}")

    def _report(iteration: int, J: float) -> None:
        logger.debug(f"Iteration {iteration}: J={J:.6g}")

    with profiler.time_operation("Stability optimization"):
        result = minimize_bfgs(
            obj,
            obj.gradient,
            theta0,
            threshold=threshold,
            max_iter=cfg.max_outer_iters,
            stagnation_iters=cfg.stagnation_iters,
            c1=cfg.armijo_c1,
            callback=_report,
        )

    gmm_best, clf_best = obj.codec.decode(result.x)
    if result.reached_threshold:
        logger.info(f"Converged after {result.nit} iterations: J={result.fun:.6g}")
    else:
        logger.warning(
            f"Stopped above threshold after {result.nit} iterations ({result.message}): "
            f"J={result.fun:.6g} > {threshold:.6g}"
        )

    return StableModel(
        gmm=gmm_best,
        clf=clf_best,
        cfg=obj.cfg,
        meta=work.meta,
        J_final=float(result.fun),
        J_init=float(J_init),
        history=tuple(float(J) for J in result.history),
        converged=bool(result.reached_threshold),
        iterations=int(result.nit),
        em=em_report.to_dict(),
        provenance=dict(provenance or {}),
    )


def model_to_dict(model: StableModel) -> Dict[str, Any]:
    return {
        "format": MODEL_FORMAT,
        "tool": {"name": TOOL_NAME, "version": __version__},
        "config": model.provenance,
        "gmm": model.gmm.to_dict(),
        "clf": model.clf.to_dict(),
        "controller": model.cfg.to_dict(),
        "meta": model.meta.to_dict(),
        "J_init": model.J_init,
        "J_final": model.J_final,
        "converged": model.converged,
        "iterations": model.iterations,
        "history": list(model.history),
        "em": model.em,
    }


def model_from_dict(data: Dict[str, Any]) -> StableModel:
    if data.get("format") != MODEL_FORMAT:
        raise ModelFormatError(f"unsupported model format: {data.get('format')!r}")
    try:
        gmm = GmmModel.from_dict(data["gmm"])
        clf = ClfParams.from_dict(data["clf"])
        return StableModel(
            gmm=gmm,
            clf=clf,
            cfg=ControllerConfig.from_dict(data["controller"]),
            meta=DatasetMeta.from_dict(data["meta"]),
            J_final=float(data["J_final"]),
            J_init=float(data.get("J_init", float("nan"))),
            history=tuple(float(J) for J in data.get("history", ())),
            converged=bool(data.get("converged", False)),
            iterations=int(data.get("iterations", 0)),
            em=dict(data.get("em", {})),
            provenance=dict(data.get("config", {})),
        )
    except (KeyError, TypeError, ValueError) as e:
        raise ModelFormatError(f"malformed model file: {e}") from e


def dumps_model(model: StableModel) -> str:
    return json.dumps(model_to_dict(model), indent=2) + "\n"


def save_model(model: StableModel, path: str) -> str:
    """Write the model as JSON; returns the written path."""
    return ExportManager(model.provenance).write_text(dumps_model(model), path)


def load_model(path: str) -> StableModel:
    try:
        with open(path, "r", encoding="utf-8") as f:
            data = json.load(f)
    except json.JSONDecodeError as e:
        raise ModelFormatError(f"model file is not valid JSON: {e}") from e
    model = model_from_dict(data)
    get_logger().debug(f"Loaded model from {path}: K={model.gmm.n_components}, d={model.dim}")
    return model
