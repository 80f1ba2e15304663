"""Plug-and-play ADMM solvers with full per-iteration instrumentation.

The linearized solver replaces the data-term proximal step with one explicit
gradient step (quadratic surrogate with coefficient alpha), so each iteration
costs one gradient, one projection, and one denoiser call; hard constraints
come for free through the projection. The baseline standard PnP-ADMM solves
the quadratic x-subproblem with conjugate gradients each iteration and is
kept for wall-clock comparisons on super-resolution.

Denoiser schedules: 'nlm' and 'dsg-adaptive' recompute weights from the
current denoiser input every iteration; 'dsg-fixed' does so until freeze_at
and then reuses that iteration's weights, making the regularization step a
fixed linear operator for the remaining iterations; 'identity' passes the
input through.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .denoise import PatchParams, dsg_nlm_denoise, freeze_guide, nlm_denoise
from .forward import (
    QisCounts,
    QisModel,
    SuperResOp,
    power_iteration_lipschitz,
    qis_data_term,
    qis_gradient,
    qis_initial_estimate,
    sr_adjoint,
    sr_apply,
    sr_data_term,
    sr_gradient,
    QIS_FLOOR,
)
from .image import Constraint, UNCONSTRAINED, project, psnr, validate_image

DENOISERS = ("identity", "nlm", "dsg-adaptive", "dsg-fixed")


class DivergenceError(RuntimeError):
    """An iterate picked up non-finite values; the run was aborted."""


class CgBreakdownError(RuntimeError):
    """Conjugate gradients met nonpositive curvature (operator not SPD)."""


@dataclass
class SolverConfig:
    """Hyperparameters shared by both solvers.

    bandwidth=None derives the denoiser bandwidth as sqrt(lam/rho), the noise
    level the regularization step nominally operates at. lam=0 bypasses the
    denoiser entirely (the bandwidth would be 0).
    """

    rho: float = 1.0
    lam: float = 0.02
    alpha: float = 1.1
    max_iters: int = 250
    freeze_at: int | None = 15
    constraint: Constraint = UNCONSTRAINED
    denoiser: str = "dsg-fixed"
    patch_side: int = 7
    window_radius: int = 10
    bandwidth: float | None = None
    stop_tol: float | None = None
    cg_tol: float = 1e-6
    cg_max_iters: int = 200
    cg_warm_start: bool = False

    def __post_init__(self) -> None:
        if not self.rho > 0:
            raise ValueError(f"rho must be > 0, got {self.rho}")
        if self.lam < 0:
            raise ValueError(f"lam must be >= 0, got {self.lam}")
        if not self.alpha > 0:
            raise ValueError(f"alpha must be > 0, got {self.alpha}")
        if self.max_iters < 1:
            raise ValueError(f"max_iters must be >= 1, got {self.max_iters}")
        if self.freeze_at is not None and self.freeze_at < 1:
            raise ValueError(f"freeze_at must be >= 1, got {self.freeze_at}")
        if self.denoiser not in DENOISERS:
            raise ValueError(f"denoiser must be one of {DENOISERS}, got {self.denoiser!r}")
        if self.bandwidth is not None and not self.bandwidth > 0:
            raise ValueError(f"bandwidth must be > 0, got {self.bandwidth}")
        if not self.cg_tol > 0:
            raise ValueError(f"cg_tol must be > 0, got {self.cg_tol}")
        if self.cg_max_iters < 1:
            raise ValueError(f"cg_max_iters must be >= 1, got {self.cg_max_iters}")

    def effective_bandwidth(self) -> float:
        if self.bandwidth is not None:
            return self.bandwidth
        return math.sqrt(self.lam / self.rho)


@dataclass
class Problem:
    """Data-term oracles plus optional extras for logging and the CG baseline."""

    shape: tuple[int, int]
    gradient: Callable[[np.ndarray], np.ndarray]
    x0: np.ndarray
    objective: Callable[[np.ndarray], float] | None = None
    ground_truth: np.ndarray | None = None
    gram: Callable[[np.ndarray], np.ndarray] | None = None  # x -> A^T A x
    atb: np.ndarray | None = None  # A^T y


@dataclass
class IterationRecord:
    index: int
    primal: float
    dual: float
    psnr: float
    time_ms: float
    objective: float


CSV_HEADER = "iter,primal,dual,psnr,time_ms,objective"


def write_log_csv(records: list[IterationRecord], path, include_time: bool = True) -> None:
    """One row per iteration, LF endings, dot decimals, shortest float repr.

    include_time=False writes 0.0 in the time column so repeated runs of the
    same configuration produce byte-identical files.
    """
    lines = [CSV_HEADER]
    for r in records:
        t = r.time_ms if include_time else 0.0
        lines.append(
            f"{r.index},{float(r.primal)!r},{float(r.dual)!r},"
            f"{float(r.psnr)!r},{float(t)!r},{float(r.objective)!r}"
        )
    with open(path, "w", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def residuals(x: np.ndarray, v: np.ndarray, v_prev: np.ndarray, rho: float) -> tuple[float, float]:
    """Mean-square primal gap ||x-v||^2/n and dual change ||rho (v-v_prev)||^2/n."""
    if x.shape != v.shape or v.shape != v_prev.shape:
        raise ValueError(f"dimension mismatch: {x.shape}, {v.shape}, {v_prev.shape}")
    primal = float(np.mean((x - v) ** 2))
    dual = float(np.mean((rho * (v - v_prev)) ** 2))
    return primal, dual


def _make_denoiser(config: SolverConfig) -> Callable[[np.ndarray, int], np.ndarray]:
    """Schedule closure mapping (denoiser input, iteration index) to v."""
    if config.denoiser == "identity" or config.lam == 0.0:
        return lambda img, k: img.copy()
    params = PatchParams(config.patch_side, config.window_radius,
                         config.effective_bandwidth())
    if config.denoiser == "nlm":
        return lambda img, k: nlm_denoise(img, params)
    if config.denoiser == "dsg-adaptive":
        return lambda img, k: dsg_nlm_denoise(img, params)

    frozen = None

    def fixed(img: np.ndarray, k: int) -> np.ndarray:
        nonlocal frozen
        if config.freeze_at is None or k < config.freeze_at:
            return dsg_nlm_denoise(img, params)
        if frozen is None:
            frozen = freeze_guide(img, params)
        return frozen.apply(img)

    return fixed


def _check_finite(k: int, *arrays: np.ndarray) -> None:
    for arr in arrays:
        if not np.all(np.isfinite(arr)):
            raise DivergenceError(f"non-finite iterate at iteration {k}")


def _record(k: int, x: np.ndarray, v: np.ndarray, v_prev: np.ndarray,
            problem: Problem, config: SolverConfig, t0: float) -> IterationRecord:
    primal, dual = residuals(x, v, v_prev, config.rho)
    quality = math.nan
    if problem.ground_truth is not None:
        quality = psnr(problem.ground_truth, v)
    objective = math.nan
    if problem.objective is not None:
        objective = float(problem.objective(x))
    return IterationRecord(k, primal, dual, quality,
                           (time.perf_counter() - t0) * 1e3, objective)


def linearized_pnp_admm(
    problem: Problem,
    config: SolverConfig,
    denoiser: Callable[[np.ndarray, int], np.ndarray] | None = None,
    callback: Callable[[int, np.ndarray, np.ndarray, np.ndarray], None] | None = None,
) -> tuple[np.ndarray, list[IterationRecord]]:
    """Gradient-step PnP-ADMM; returns the final denoised iterate and the log.

    Per iteration: x <- proj(mu (alpha x + rho (v - u) - grad f(x))) with
    mu = 1/(alpha + rho), then v <- D(x + u), then u <- u + (x - v).
    """
    if denoiser is None:
        denoiser = _make_denoiser(config)
    x = project(problem.x0, config.constraint)
    v = x.copy()
    u = np.zeros(problem.shape)
    mu = 1.0 / (config.alpha + config.rho)
    records: list[IterationRecord] = []
    t0 = time.perf_counter()
    for k in range(1, config.max_iters + 1):
        grad = problem.gradient(x)
        x = mu * (config.alpha * x + config.rho * (v - u) - grad)
        _check_finite(k, x)
        x = project(x, config.constraint)
        v_prev = v
        denoiser_input = x + u
        _check_finite(k, denoiser_input)
        v = denoiser(denoiser_input, k)
        u = u + (x - v)
        _check_finite(k, v, u)
        rec = _record(k, x, v, v_prev, problem, config, t0)
        records.append(rec)
        if callback is not None:
            callback(k, x, v, u)
        if config.stop_tol is not None and rec.primal < config.stop_tol and rec.dual < config.stop_tol:
            break
    return v, records


@dataclass
class CgResult:
    x: np.ndarray
    iterations: int
    residual: float
    converged: bool


def cg_solve(apply: Callable[[np.ndarray], np.ndarray], rhs: np.ndarray,
             tol: float, max_iters: int, x0: np.ndarray | None = None) -> CgResult:
    """Conjugate gradients for an SPD operator on images.

    Stops when the relative residual ||rhs - Op(x)|| / ||rhs|| drops to tol
    or after max_iters; the result reports which.
    """
    if not tol > 0:
        raise ValueError(f"tol must be > 0, got {tol}")
    if max_iters < 1:
        raise ValueError(f"max_iters must be >= 1, got {max_iters}")
    rhs = validate_image(rhs, "rhs")
    bnorm = math.sqrt(float((rhs * rhs).sum()))
    if bnorm == 0.0:
        return CgResult(np.zeros_like(rhs), 0, 0.0, True)
    x = np.zeros_like(rhs) if x0 is None else x0.copy()
    r = rhs - apply(x)
    p = r.copy()
    rs = float((r * r).sum())
    iterations = 0
    for _ in range(max_iters):
        if math.sqrt(rs) / bnorm <= tol:
            break
        ap = apply(p)
        p_ap = float((p * ap).sum())
        if not math.isfinite(p_ap):
            raise DivergenceError("non-finite value inside conjugate gradients")
        if p_ap <= 0.0:
            raise CgBreakdownError(f"nonpositive curvature {p_ap!r}")
        step = rs / p_ap
        x += step * p
        r -= step * ap
        rs_new = float((r * r).sum())
        p = r + (rs_new / rs) * p
        rs = rs_new
        iterations += 1
    residual = math.sqrt(rs) / bnorm
    return CgResult(x, iterations, residual, residual <= tol)


def standard_pnp_admm_cg(
    problem: Problem,
    config: SolverConfig,
    denoiser: Callable[[np.ndarray, int], np.ndarray] | None = None,
    callback: Callable[[int, np.ndarray, np.ndarray, np.ndarray], None] | None = None,
) -> tuple[np.ndarray, list[IterationRecord]]:
    """Standard PnP-ADMM baseline: exact quadratic x-update via CG.

    Solves (A^T A + rho I) x = A^T y + rho (v - u) each iteration, from
    scratch unless config.cg_warm_start reuses the previous x. The constraint
    set is ignored inside the update; the returned image is projected once at
    the end.
    """
    if problem.gram is None or problem.atb is None:
        raise ValueError("standard ADMM baseline needs problem.gram and problem.atb")
    if denoiser is None:
        denoiser = _make_denoiser(config)
    gram, atb = problem.gram, problem.atb
    rho = config.rho
    x = problem.x0.copy()
    v = x.copy()
    u = np.zeros(problem.shape)
    records: list[IterationRecord] = []
    t0 = time.perf_counter()
    for k in range(1, config.max_iters + 1):
        rhs = atb + rho * (v - u)
        x = cg_solve(lambda z: gram(z) + rho * z, rhs,
                     config.cg_tol, config.cg_max_iters,
                     x0=x if config.cg_warm_start else None).x
        _check_finite(k, x)
        v_prev = v
        denoiser_input = x + u
        _check_finite(k, denoiser_input)
        v = denoiser(denoiser_input, k)
        u = u + (x - v)
        _check_finite(k, v, u)
        rec = _record(k, x, v, v_prev, problem, config, t0)
        records.append(rec)
        if callback is not None:
            callback(k, x, v, u)
        if config.stop_tol is not None and rec.primal < config.stop_tol and rec.dual < config.stop_tol:
            break
    return project(v, config.constraint), records


# ---------------------------------------------------------------------------
# Problem builders
# ---------------------------------------------------------------------------

def make_sr_problem(op: SuperResOp, observed: np.ndarray,
                    ground_truth: np.ndarray | None = None) -> Problem:
    """Super-resolution problem; starts from the blurred zero-fill upsample
    of the observation, scaled by factor^2 so flat regions keep their level."""
    observed = validate_image(observed, "observation")
    x0 = (op.factor ** 2) * sr_adjoint(op, observed)
    return Problem(
        shape=x0.shape,
        gradient=lambda x: sr_gradient(op, x, observed),
        x0=x0,
        objective=lambda x: sr_data_term(op, x, observed),
        ground_truth=ground_truth,
        gram=lambda x: sr_adjoint(op, sr_apply(op, x)),
        atb=sr_adjoint(op, observed),
    )


def make_qis_problem(counts: QisCounts, model: QisModel,
                     ground_truth: np.ndarray | None = None,
                     floor: float = QIS_FLOOR) -> Problem:
    """Single-photon problem; starts from the clamped fired-jot fraction."""
    return Problem(
        shape=counts.shape,
        gradient=lambda x: qis_gradient(x, counts, model, floor),
        x0=qis_initial_estimate(counts, floor),
        objective=lambda x: qis_data_term(x, counts, model, floor),
        ground_truth=ground_truth,
    )


def default_sr_alpha(op: SuperResOp, hr_shape: tuple[int, int],
                     iters: int = 200, seed: int = 0) -> float:
    """1.05 x the power-iteration estimate of the gradient Lipschitz constant."""
    return 1.05 * power_iteration_lipschitz(op, hr_shape, iters, seed)


def default_qis_alpha(counts: QisCounts, model: QisModel) -> float:
    """Heuristic 2 * gain * max(K0) / K; the likelihood gradient has no
    global Lipschitz bound, so this is a working default, not a guarantee."""
    return 2.0 * model.gain * float(counts.zeros.max()) / model.oversampling
