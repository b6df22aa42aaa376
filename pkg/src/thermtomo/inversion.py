"""Online phase: regularized nonlinear least squares over the surrogate.

The objective || data - U(theta) ||^2 + delta^2 || G theta ||^2 is minimized
by Levenberg-Marquardt on the stacked residual with the analytic surrogate
Jacobian.  G is block diagonal: the conductivity and capacity blocks carry the
upper Cholesky factor of the inverse covariance of a squared-exponential
smoothness prior evaluated at the pixel centers of the reference disk; the
conductance and shape blocks are unregularized.  The module also provides the
data-simulation utilities (multiplicative-scale Gaussian noise, truncated
log-normal field sampling) and surrogate error metrics.
"""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_factor, cho_solve, cholesky

from thermtomo.geometry import BodyParametrization, pixel_centers, radius
from thermtomo.sparsegrid import Surrogate

log = logging.getLogger(__name__)

__all__ = [
    "CovarianceSpec",
    "Regularizer",
    "InversionResult",
    "FieldSummary",
    "build_regularizer",
    "add_noise",
    "sample_lognormal_parameters",
    "sample_parameters",
    "solve_lsq",
    "error_metrics",
    "reconstruct_fields",
]


@dataclass(frozen=True)
class CovarianceSpec:
    """Squared-exponential covariance on a set of pixel centers."""

    variance: float  # prefactor of the kernel
    corr_length: float
    centers: tuple  # ((x, y), ...) in the reference disk

    def matrix(self) -> np.ndarray:
        pts = np.asarray(self.centers)
        d2 = np.sum((pts[:, None, :] - pts[None, :, :]) ** 2, axis=-1)
        return self.variance * np.exp(-d2 / (2.0 * self.corr_length**2))


@dataclass
class Regularizer:
    """Block-diagonal weight matrix G and the scalar delta of the penalty."""

    matrix: np.ndarray  # (N, N); rows outside the a/b blocks are zero
    delta: float
    jitter: float = 0.0

    def penalty(self, theta) -> float:
        return float(np.linalg.norm(self.matrix @ np.asarray(theta)))


def _chol_inverse_factor(K: np.ndarray, variance: float):
    """Upper-triangular G with G^T G = K^{-1}; adds the documented jitter when
    K is numerically singular."""
    jitter = 0.0
    try:
        c = cho_factor(K, lower=True)
    except np.linalg.LinAlgError:
        jitter = 1e-10 * variance
        warnings.warn(
            f"covariance numerically singular; adding diagonal jitter {jitter:.1e}",
            RuntimeWarning,
        )
        c = cho_factor(K + jitter * np.eye(len(K)), lower=True)
    k_inv = cho_solve(c, np.eye(len(K)))
    k_inv = 0.5 * (k_inv + k_inv.T)
    try:
        g = cholesky(k_inv, lower=False)
    except np.linalg.LinAlgError:
        # roundoff from the solve; lift the spectrum minimally and retry
        bump = 1e-12 * float(np.trace(k_inv)) / len(K)
        jitter = max(jitter, bump)
        warnings.warn(
            f"inverse covariance lost definiteness; adding {bump:.1e}", RuntimeWarning
        )
        g = cholesky(k_inv + bump * np.eye(len(K)), lower=False)
    return g, jitter


def build_regularizer(
    param: BodyParametrization,
    delta: float = 1e-2,
    variance: float = 0.5,
    corr_length: float = 1.0 / 3.0,
) -> Regularizer:
    """Smoothness prior for the pixel fields: chol(K^{-1}) blocks for the
    conductivity and capacity, empty rows for the conductance and shape."""
    centers = pixel_centers(param.pixel_layout, param.shape.rho0)
    cov = CovarianceSpec(variance, corr_length, tuple(map(tuple, centers)))
    g_block, jitter = _chol_inverse_factor(cov.matrix(), variance)
    sizes = param.block_sizes()
    n = param.dim
    G = np.zeros((n, n))
    pos = 0
    for name in ("a", "b"):
        size = sizes[name]
        if size:
            if size != len(g_block):
                raise ValueError("pixel layout does not match the covariance block")
            G[pos : pos + size, pos : pos + size] = g_block
        pos += size
    return Regularizer(matrix=G, delta=delta, jitter=jitter)


def add_noise(clean: np.ndarray, seed: int, rel_std: float = 5e-3) -> np.ndarray:
    """Component m gets zero-mean Gaussian noise with std rel_std * |U_m|."""
    rng = np.random.default_rng(seed)
    clean = np.asarray(clean, dtype=float)
    return clean + rel_std * np.abs(clean) * rng.standard_normal(clean.shape)


def sample_lognormal_parameters(
    param: BodyParametrization,
    seed: int,
    sigma: float = 0.5,
    corr_length: float = 1.0 / 3.0,
    mean: float | None = None,
):
    """Draw the conductivity and capacity blocks as mutually independent
    discrete log-normal fields, truncated to the representable range.

    The underlying normal field has the given pointwise standard deviation
    and squared-exponential correlation over the pixel centers; pixel values
    exp(z) are converted back to parameter coordinates and clamped to Xi.
    """
    centers = pixel_centers(param.pixel_layout, param.shape.rho0)
    cov = CovarianceSpec(sigma**2, corr_length, tuple(map(tuple, centers)))
    K = cov.matrix()
    try:
        L = cholesky(K, lower=True)
    except np.linalg.LinAlgError:
        jitter = 1e-10 * sigma**2
        warnings.warn(
            f"sampler covariance numerically singular; adding jitter {jitter:.1e}",
            RuntimeWarning,
        )
        L = cholesky(K + jitter * np.eye(len(K)), lower=True)
    rng = np.random.default_rng(seed)
    blocks = []
    for mean_level, amp in ((param.a_mean, param.a_amp), (param.b_mean, param.b_amp)):
        mu = math.log(mean_level) if mean is None else mean
        z = mu + L @ rng.standard_normal(len(K))
        vals = np.exp(z)
        theta = (vals - mean_level) / (2.0 * amp)
        blocks.append(np.clip(theta, -0.5, 0.5))
    return blocks[0], blocks[1]


def sample_parameters(
    param: BodyParametrization,
    distribution: str,
    size: int,
    seed: int,
    sigma: float = 0.5,
    corr_length: float = 1.0 / 3.0,
) -> np.ndarray:
    """Validation sample of flat parameter vectors: either all-uniform on the
    hypercube, or log-normal pixel fields with the other blocks uniform."""
    rng = np.random.default_rng(seed)
    sizes = param.block_sizes()
    out = np.empty((size, param.dim))
    if distribution == "uniform":
        out[:] = rng.uniform(-0.5, 0.5, out.shape)
        return out
    if distribution != "lognormal":
        raise ValueError(f"unknown distribution {distribution!r}")
    if sizes["a"] == 0 or sizes["b"] == 0:
        raise ValueError("log-normal sampling needs active conductivity/capacity blocks")
    tail = sizes["c"] + sizes["shape"]
    child_seeds = rng.integers(0, 2**63 - 1, size)
    for q in range(size):
        a_blk, b_blk = sample_lognormal_parameters(
            param, int(child_seeds[q]), sigma=sigma, corr_length=corr_length
        )
        rest = rng.uniform(-0.5, 0.5, tail)
        out[q] = np.concatenate([a_blk, b_blk, rest])
    return out


@dataclass
class FieldSummary:
    """Physical fields reconstructed from a parameter vector."""

    a_pixels: np.ndarray
    b_pixels: np.ndarray
    c_gaps: np.ndarray
    boundary_angles: np.ndarray
    boundary_radii: np.ndarray
    clamped: bool


def reconstruct_fields(theta_flat, param: BodyParametrization, n_angles: int = 512) -> FieldSummary:
    """Pixel values of a and b, gap values of c, and a boundary polyline.

    Parameter values outside Xi are clamped for reporting only; the event is
    logged.
    """
    theta_flat = np.asarray(theta_flat, dtype=float)
    clamped = bool(np.any((theta_flat < -0.5) | (theta_flat > 0.5)))
    if clamped:
        log.warning(
            "parameter vector left the hypercube (max excess %.3g); clamped for reporting",
            float(np.max(np.abs(theta_flat)) - 0.5),
        )
    theta = param.split(np.clip(theta_flat, -0.5, 0.5))
    angles = np.linspace(0.0, 2.0 * math.pi, n_angles, endpoint=False)
    radii = np.asarray(radius(angles, theta.shape, param.shape))
    return FieldSummary(
        a_pixels=param.a_values(theta.a),
        b_pixels=param.b_values(theta.b),
        c_gaps=param.c_values(theta.c),
        boundary_angles=angles,
        boundary_radii=radii,
        clamped=clamped,
    )


@dataclass
class InversionResult:
    theta: np.ndarray
    residual_norm: float
    regularization_norm: float
    objective: float
    iterations: int
    converged: bool
    message: str
    objective_history: list | None = None  # objective after each accepted step
    fields: FieldSummary | None = None


def solve_lsq(
    surrogate: Surrogate,
    data: np.ndarray,
    regularizer: Regularizer,
    theta0: np.ndarray | None = None,
    max_iterations: int = 500,
    gradient_tol: float = 1e-8,
    step_tol: float = 1e-10,
    param: BodyParametrization | None = None,
) -> InversionResult:
    """Levenberg-Marquardt on the stacked residual
    [data - U(theta); delta * G theta], unconstrained, from theta0 = 0.

    Standard damping schedule: accept -> lambda / 10, reject -> lambda * 10,
    starting at 1e-3.  Returns when the gradient norm or step norm drops
    below tolerance or the iteration budget is exhausted.
    """
    data = np.asarray(data, dtype=float)
    if data.shape != (surrogate.out_dim,):
        raise ValueError(
            f"data has shape {data.shape}, surrogate expects ({surrogate.out_dim},)"
        )
    n = surrogate.dim
    if regularizer.matrix.shape != (n, n):
        raise ValueError("regularizer dimension does not match the surrogate")
    theta = np.zeros(n) if theta0 is None else np.asarray(theta0, dtype=float).copy()
    delta = regularizer.delta
    G = regularizer.matrix

    def residual(t):
        pred = surrogate.eval(t)
        if not np.all(np.isfinite(pred)):
            raise FloatingPointError(f"surrogate returned non-finite values at {t!r}")
        return np.concatenate([data - pred, delta * (G @ t)])

    r = residual(theta)
    obj = float(r @ r)
    history = [obj]
    lam = 1e-3
    message = "iteration budget exhausted"
    converged = False
    iterations = 0
    for iterations in range(1, max_iterations + 1):
        jac = np.vstack([-surrogate.jacobian(theta), delta * G])
        grad = jac.T @ r
        if np.linalg.norm(grad) < gradient_tol:
            message, converged = "gradient norm below tolerance", True
            iterations -= 1
            break
        jtj = jac.T @ jac
        accepted = False
        while lam < 1e12:
            try:
                step = np.linalg.solve(jtj + lam * np.eye(n), -grad)
            except np.linalg.LinAlgError:
                lam *= 10.0
                continue
            trial = theta + step
            r_trial = residual(trial)
            obj_trial = float(r_trial @ r_trial)
            if obj_trial < obj:
                theta, r, obj = trial, r_trial, obj_trial
                history.append(obj)
                lam = max(lam / 10.0, 1e-15)
                accepted = True
                break
            lam *= 10.0
        if not accepted:
            message, converged = "damping exhausted without descent", True
            break
        if np.linalg.norm(step) < step_tol:
            message, converged = "step norm below tolerance", True
            break

    residual_norm = float(np.linalg.norm(data - surrogate.eval(theta)))
    reg_norm = regularizer.penalty(theta)
    fields = reconstruct_fields(theta, param) if param is not None else None
    return InversionResult(
        theta=theta,
        residual_norm=residual_norm,
        regularization_norm=reg_norm,
        objective=residual_norm**2 + delta**2 * reg_norm**2,
        iterations=iterations,
        converged=converged,
        message=message,
        objective_history=history,
        fields=fields,
    )


def error_metrics(surrogate: Surrogate, forward, thetas: np.ndarray):
    """Pointwise Euclidean errors against the forward solver used for
    training, their mean, and the unbiased sample variance."""
    thetas = np.atleast_2d(np.asarray(thetas, dtype=float))
    if len(thetas) < 2:
        raise ValueError("error metrics need at least two sample points")
    errs = np.empty(len(thetas))
    for q, theta in enumerate(thetas):
        errs[q] = np.linalg.norm(np.asarray(forward(theta)) - surrogate.eval(theta))
    return errs, float(errs.mean()), float(errs.var(ddof=1))
