"""Closed-form probability-flow trajectories for Gaussian data.

With a Gaussian score the flow ODE is linear and decouples along the
eigenvectors of the covariance.  Each on-manifold coefficient c_k is scaled
by ``psi``; the off-manifold remainder shrinks proportionally to the noise
level.  Two parameterizations are covered: EDM (sigma(t) = t, no data
scaling) and variance-preserving, where the data is scaled by alpha_t and
alpha_t^2 + sigma_t^2 = 1.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dataset_stats import GaussianModel


def _check_levels(sigma_t, sigma_T, lam):
    sigma_t = np.asarray(sigma_t, dtype=float)
    lam = np.asarray(lam, dtype=float)
    if not sigma_T > 0:
        raise ValueError(f"sigma_T must be positive, got {sigma_T!r}")
    if np.any(lam < 0):
        raise ValueError("eigenvalues must be nonnegative")
    if np.any(sigma_t < 0) or np.any(sigma_t > sigma_T * (1 + 1e-12)):
        raise ValueError(f"sigma_t must lie in [0, sigma_T={sigma_T}], got {sigma_t}")
    return sigma_t, float(sigma_T), lam


def psi(sigma_t, sigma_T, lam):
    """Per-mode contraction sqrt((sigma_t^2 + lam) / (sigma_T^2 + lam))."""
    sigma_t, sigma_T, lam = _check_levels(sigma_t, sigma_T, lam)
    return np.sqrt((sigma_t**2 + lam) / (sigma_T**2 + lam))


def xi(sigma_t, sigma_T, lam):
    """Per-mode denoiser weight lam / sqrt((lam + sigma_t^2)(lam + sigma_T^2))."""
    sigma_t, sigma_T, lam = _check_levels(sigma_t, sigma_T, lam)
    denom = np.sqrt((lam + sigma_t**2) * (lam + sigma_T**2))
    return np.divide(lam, denom, out=np.zeros(np.broadcast(lam, denom).shape), where=denom > 0)


@dataclass(frozen=True)
class TrajectoryBasis:
    """Initial condition x_T at noise level sigma_T, split against a model.

    ``coeffs`` holds c_k(T) = u_k^T (x_T - mu) and ``off_manifold`` the
    remainder (I - U U^T)(x_T - mu).  A batch of initial conditions (B, D)
    gives coeffs of shape (B, r).
    """

    model: GaussianModel
    x_T: np.ndarray
    sigma_T: float
    coeffs: np.ndarray
    off_manifold: np.ndarray

    @classmethod
    def from_initial(cls, model: GaussianModel, x_T, sigma_T: float) -> "TrajectoryBasis":
        x_T = np.asarray(x_T, dtype=float)
        if x_T.shape[-1] != model.ambient_dim:
            raise ValueError(f"x_T has dimension {x_T.shape[-1]}, model has {model.ambient_dim}")
        if not sigma_T > 0:
            raise ValueError("sigma_T must be positive")
        centered = x_T - model.mean
        coeffs = centered @ model.basis
        off = centered - coeffs @ model.basis.T
        return cls(model, x_T, float(sigma_T), coeffs, off)

    def reconstruct(self) -> np.ndarray:
        return self.model.mean + self.off_manifold + self.coeffs @ self.model.basis.T


def solve_state(tb: TrajectoryBasis, sigma_t: float) -> np.ndarray:
    """State x at noise level sigma_t on the trajectory through tb.x_T."""
    g = tb.model
    weights = psi(sigma_t, tb.sigma_T, g.eigenvalues)
    return g.mean + (sigma_t / tb.sigma_T) * tb.off_manifold + (tb.coeffs * weights) @ g.basis.T


def solve_denoiser(tb: TrajectoryBasis, sigma_t: float) -> np.ndarray:
    """Ideal denoiser output D(x_t, sigma_t) along the same trajectory."""
    g = tb.model
    weights = xi(sigma_t, tb.sigma_T, g.eigenvalues)
    out = g.mean + (tb.coeffs * weights) @ g.basis.T
    return np.broadcast_to(out, np.shape(tb.x_T)).copy()


# ------------------------------------------------------- variance preserving


@dataclass(frozen=True)
class VPSchedule:
    """Linear beta family, beta(t) = beta_min + (beta_max - beta_min) t / T.

    Here beta is the signal decay rate of dx = -beta x dt + g dW with
    g^2 = 2 beta, so alpha_t = exp(-int_0^t beta) and sigma_t^2 = 1 - alpha_t^2.
    beta_min = beta_max = 0 gives the degenerate alpha = 1 schedule.
    """

    beta_min: float = 0.1
    beta_max: float = 19.9
    T: float = 1.0

    def __post_init__(self):
        if self.beta_min < 0 or self.beta_max < 0:
            raise ValueError("beta must be nonnegative")
        if not self.T > 0:
            raise ValueError("T must be positive")

    def _check_t(self, t):
        t = np.asarray(t, dtype=float)
        if np.any(t < 0) or np.any(t > self.T * (1 + 1e-12)):
            raise ValueError(f"t must lie in [0, {self.T}], got {t}")
        return t

    def beta(self, t):
        t = self._check_t(t)
        return self.beta_min + (self.beta_max - self.beta_min) * t / self.T

    def g2(self, t):
        return 2.0 * self.beta(t)

    def integral_beta(self, t):
        t = self._check_t(t)
        return self.beta_min * t + 0.5 * (self.beta_max - self.beta_min) * t**2 / self.T

    def alpha(self, t):
        return np.exp(-self.integral_beta(t))

    def sigma(self, t):
        return np.sqrt(-np.expm1(-2.0 * self.integral_beta(t)))


def scaled_psi(sigma_t, alpha_t, sigma_T, alpha_T, lam):
    """sqrt((sigma_t^2 + lam alpha_t^2) / (sigma_T^2 + lam alpha_T^2))."""
    lam = np.asarray(lam, dtype=float)
    return np.sqrt((sigma_t**2 + lam * alpha_t**2) / (sigma_T**2 + lam * alpha_T**2))


def vp_psi(t, lam, sched: VPSchedule, T: float | None = None):
    T = sched.T if T is None else T
    if np.any(np.asarray(t) > T * (1 + 1e-12)):
        raise ValueError(f"t must not exceed T={T}")
    return scaled_psi(sched.sigma(t), sched.alpha(t), sched.sigma(T), sched.alpha(T), lam)


def _vp_split(model: GaussianModel, x_T, sched: VPSchedule, T: float):
    x_T = np.asarray(x_T, dtype=float)
    y = x_T - sched.alpha(T) * model.mean
    coeffs = y @ model.basis
    return x_T, coeffs, y - coeffs @ model.basis.T


def vp_solve_state(model: GaussianModel, x_T, sched: VPSchedule, T: float, t: float):
    """State at time t of the VP probability-flow trajectory started at (x_T, T)."""
    if not 0 <= t <= T:
        raise ValueError(f"t must lie in [0, T={T}], got {t}")
    x_T, coeffs, perp = _vp_split(model, x_T, sched, T)
    a_t, s_t = sched.alpha(t), sched.sigma(t)
    s_T = sched.sigma(T)
    w = vp_psi(t, model.eigenvalues, sched, T)
    return a_t * model.mean + (s_t / s_T) * perp + (coeffs * w) @ model.basis.T


def vp_solve_denoiser(model: GaussianModel, x_T, sched: VPSchedule, T: float, t: float):
    """(x_t + sigma_t^2 s(x_t, t)) / alpha_t along the VP trajectory."""
    if not 0 <= t <= T:
        raise ValueError(f"t must lie in [0, T={T}], got {t}")
    x_T, coeffs, _ = _vp_split(model, x_T, sched, T)
    a_t, s_t = sched.alpha(t), sched.sigma(t)
    a_T, s_T = sched.alpha(T), sched.sigma(T)
    lam = model.eigenvalues
    w = a_t * lam / np.sqrt((a_t**2 * lam + s_t**2) * (a_T**2 * lam + s_T**2))
    out = model.mean + (coeffs * w) @ model.basis.T
    return np.broadcast_to(out, x_T.shape).copy()
