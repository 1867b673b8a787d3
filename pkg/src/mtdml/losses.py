"""Scalar training objectives and their analytic gradients.

The Tweedie deviance kernel is the workhorse: for power rho in (1, 2) it is
strictly convex in the prediction, minimized at the observed value, and
defined for zero outcomes, which is what makes it fit zero-inflated,
long-tailed targets. Only the kernel is implemented; the rho-dependent
normalizing series of the full density is irrelevant for fitting.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DimensionError, DomainError, NumericError

DEFAULT_RHO = 1.9
DEFAULT_LAMBDA_ORTHO = 0.1
DEFAULT_LAMBDA_SENS = 0.001


@dataclass
class LossWeights:
    """Multipliers for the two penalty terms plus the Tweedie power."""

    lambda_ortho: float = DEFAULT_LAMBDA_ORTHO
    lambda_sens: float = DEFAULT_LAMBDA_SENS
    rho: float = DEFAULT_RHO

    def __post_init__(self):
        if not 1.0 < self.rho < 2.0:
            raise ConfigError(f"tweedie power must lie in (1, 2), got {self.rho}")
        if self.lambda_ortho < 0 or self.lambda_sens < 0:
            raise ConfigError("penalty weights must be non-negative")


def treatment_loss(t: np.ndarray, t_hat: np.ndarray) -> float:
    """Mean over samples of the summed squared per-dimension residuals."""
    t = np.asarray(t, dtype=np.float64)
    t_hat = np.asarray(t_hat, dtype=np.float64)
    if t.shape != t_hat.shape:
        raise DimensionError(f"shape mismatch {t.shape} vs {t_hat.shape}")
    diff = t - t_hat
    return float(np.sum(diff * diff) / t.shape[0])


def treatment_loss_grad(t: np.ndarray, t_hat: np.ndarray) -> np.ndarray:
    """d treatment_loss / d t_hat."""
    t = np.asarray(t, dtype=np.float64)
    t_hat = np.asarray(t_hat, dtype=np.float64)
    if t.shape != t_hat.shape:
        raise DimensionError(f"shape mismatch {t.shape} vs {t_hat.shape}")
    return -2.0 * (t - t_hat) / t.shape[0]


def tweedie_nll(y, y_hat, rho: float = DEFAULT_RHO) -> tuple[float, np.ndarray]:
    """Tweedie deviance kernel (sign chosen so minimization is correct).

    Returns the mean loss and its gradient w.r.t. y_hat. Per sample the
    loss is -y * y_hat^(1-rho)/(1-rho) + y_hat^(2-rho)/(2-rho); the
    gradient of the mean is (-y * y_hat^(-rho) + y_hat^(1-rho)) / n, which
    vanishes exactly at y_hat == y.
    """
    if not 1.0 < rho < 2.0:
        raise ConfigError(f"tweedie power must lie in (1, 2), got {rho}")
    y = np.asarray(y, dtype=np.float64).ravel()
    y_hat = np.asarray(y_hat, dtype=np.float64).ravel()
    if y.shape != y_hat.shape:
        raise DimensionError(f"shape mismatch {y.shape} vs {y_hat.shape}")
    if np.any(y < 0):
        raise DomainError("observed outcomes must be non-negative")
    if np.any(y_hat <= 0):
        raise DomainError("tweedie predictions must be strictly positive")
    n = y.size
    value = np.sum(-y * y_hat ** (1.0 - rho) / (1.0 - rho)
                   + y_hat ** (2.0 - rho) / (2.0 - rho)) / n
    grad = (-y * y_hat ** (-rho) + y_hat ** (1.0 - rho)) / n
    if not np.isfinite(value):
        raise NumericError("tweedie loss is non-finite")
    return float(value), grad


def squared_loss(y, y_hat) -> tuple[float, np.ndarray]:
    """Mean squared error and its gradient; the non-Tweedie fallback."""
    y = np.asarray(y, dtype=np.float64).ravel()
    y_hat = np.asarray(y_hat, dtype=np.float64).ravel()
    if y.shape != y_hat.shape:
        raise DimensionError(f"shape mismatch {y.shape} vs {y_hat.shape}")
    diff = y_hat - y
    n = y.size
    return float(np.sum(diff * diff) / n), 2.0 * diff / n


def cosine(u: np.ndarray, v: np.ndarray) -> float:
    """Cosine similarity of two vectors, rejecting zero-norm inputs."""
    u = np.asarray(u, dtype=np.float64).ravel()
    v = np.asarray(v, dtype=np.float64).ravel()
    if u.shape != v.shape:
        raise DimensionError(f"shape mismatch {u.shape} vs {v.shape}")
    nu, nv = np.linalg.norm(u), np.linalg.norm(v)
    if nu == 0.0 or nv == 0.0:
        raise DomainError("cosine of a zero-norm vector is undefined")
    return float(np.dot(u, v) / (nu * nv))


def _cosine_grad(u: np.ndarray, v: np.ndarray) -> np.ndarray:
    """d cos(u, v) / d u."""
    nu, nv = np.linalg.norm(u), np.linalg.norm(v)
    c = np.dot(u, v) / (nu * nv)
    return v / (nu * nv) - c * u / (nu * nu)


def rlo_penalty(w_i: np.ndarray, w_c: np.ndarray, w_a: np.ndarray) -> float:
    """Pairwise cosine sum pushing the three factor directions apart."""
    return cosine(w_i, w_c) + cosine(w_c, w_a) + cosine(w_a, w_i)


def rlo_penalty_grads(
    w_i: np.ndarray, w_c: np.ndarray, w_a: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Gradients of rlo_penalty w.r.t. each of the three vectors."""
    w_i = np.asarray(w_i, dtype=np.float64).ravel()
    w_c = np.asarray(w_c, dtype=np.float64).ravel()
    w_a = np.asarray(w_a, dtype=np.float64).ravel()
    for v in (w_i, w_c, w_a):
        if np.linalg.norm(v) == 0.0:
            raise DomainError("cosine of a zero-norm vector is undefined")
    g_i = _cosine_grad(w_i, w_c) + _cosine_grad(w_i, w_a)
    g_c = _cosine_grad(w_c, w_a) + _cosine_grad(w_c, w_i)
    g_a = _cosine_grad(w_a, w_i) + _cosine_grad(w_a, w_c)
    return g_i, g_c, g_a


def k_reg(kappa: np.ndarray) -> float:
    """Mean squared row norm of the sensitivity matrix."""
    kappa = np.asarray(kappa, dtype=np.float64)
    if kappa.ndim != 2:
        raise DimensionError(f"kappa must be 2-D, got shape {kappa.shape}")
    return float(np.sum(kappa * kappa) / kappa.shape[0])


def k_reg_grad(kappa: np.ndarray) -> np.ndarray:
    kappa = np.asarray(kappa, dtype=np.float64)
    return 2.0 * kappa / kappa.shape[0]


def total_loss(
    l_treat: float,
    l_out: float,
    l_final: float,
    l_rlo: float,
    l_kreg: float,
    w: LossWeights,
) -> float:
    """Weighted sum of all five objective components."""
    parts = {
        "treatment": l_treat,
        "outcome": l_out,
        "final": l_final,
        "orthogonality": l_rlo,
        "sensitivity_reg": l_kreg,
    }
    for name, val in parts.items():
        if not np.isfinite(val):
            raise NumericError(f"loss component {name!r} is non-finite ({val})")
    return float(
        l_treat + l_out + l_final + w.lambda_ortho * l_rlo + w.lambda_sens * l_kreg
    )
