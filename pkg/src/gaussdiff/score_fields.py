"""Analytical score fields of noise-smoothed distributions.

Every field evaluates grad_x log p(x, sigma) for the data distribution smoothed
by N(0, sigma^2 I) and accepts either a single point of shape (D,) or a batch
of shape (B, D).  ``denoise`` is always derived from ``evaluate`` through
D(x, sigma) = x + sigma^2 * score.

Mixture and point-cloud weights are computed in log space with the maximum
subtracted, so they stay finite for tiny sigma or very distant queries.
"""

from __future__ import annotations

import numpy as np
from scipy.special import logsumexp, softmax

from .dataset_stats import GaussianMixture, GaussianModel, PointCloud

SIGMA_FLOOR = 1e-12
_LOG_2PI = np.log(2.0 * np.pi)
# caps the (B, N, D) difference tensor built by the point-cloud field
_CHUNK_ELEMS = 1 << 22


def check_sigma(sigma) -> float:
    sigma = float(sigma)
    if not np.isfinite(sigma) or sigma < SIGMA_FLOOR:
        raise ValueError(f"sigma must be >= {SIGMA_FLOOR:g}, got {sigma!r}")
    return sigma


def _as_points(x, dim: int) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.shape[-1:] != (dim,) or x.ndim not in (1, 2):
        raise ValueError(f"expected points of dimension {dim}, got shape {x.shape}")
    return x


class ScoreField:
    """Base class: subclasses implement ``evaluate`` and ``ambient_dim``."""

    name = "field"

    @property
    def ambient_dim(self) -> int:
        raise NotImplementedError

    def evaluate(self, x, sigma) -> np.ndarray:
        raise NotImplementedError

    def denoise(self, x, sigma) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return x + float(sigma) ** 2 * self.evaluate(x, sigma)

    def log_density(self, x, sigma) -> np.ndarray:
        raise NotImplementedError(f"{type(self).__name__} has no closed-form log density")

    def scaled(self, alpha: float) -> "ScoreField":
        """Field of the alpha-scaled data distribution (signal scale of VP diffusion)."""
        raise NotImplementedError(f"{type(self).__name__} does not support data scaling")

    def scaled_evaluate(self, x, alpha, sigma) -> np.ndarray:
        return self.scaled(alpha).evaluate(x, sigma) if alpha != 1.0 else self.evaluate(x, sigma)

    def __call__(self, x, sigma):
        return self.evaluate(x, sigma)


class IsotropicScore(ScoreField):
    name = "iso"

    def __init__(self, mean):
        self.mean = np.array(mean, dtype=float).reshape(-1)
        self.mean.setflags(write=False)

    @property
    def ambient_dim(self):
        return self.mean.size

    def evaluate(self, x, sigma):
        sigma = check_sigma(sigma)
        x = _as_points(x, self.ambient_dim)
        return (self.mean - x) / sigma**2

    def log_density(self, x, sigma):
        sigma = check_sigma(sigma)
        x = _as_points(x, self.ambient_dim)
        d = self.ambient_dim
        sq = np.sum((x - self.mean) ** 2, axis=-1)
        return -0.5 * (d * _LOG_2PI + d * np.log(sigma**2) + sq / sigma**2)

    def scaled(self, alpha):
        return IsotropicScore(alpha * self.mean)


class GaussianScore(ScoreField):
    """Score of N(mu, Sigma + sigma^2 I) through the Woodbury identity.

    Only D x r matrix-vector products are used; the D x D inverse is never
    formed.  With r = 0 this is the isotropic field.
    """

    name = "gauss"

    def __init__(self, model: GaussianModel):
        self.model = model

    @property
    def ambient_dim(self):
        return self.model.ambient_dim

    def _parts(self, x, sigma):
        sigma = check_sigma(sigma)
        x = _as_points(x, self.ambient_dim)
        diff = self.model.mean - x
        proj = diff @ self.model.basis
        return sigma, diff, proj

    def evaluate(self, x, sigma):
        sigma, diff, proj = self._parts(x, sigma)
        lam = self.model.eigenvalues
        shrink = lam / (lam + sigma**2)
        return (diff - (proj * shrink) @ self.model.basis.T) / sigma**2

    def log_density(self, x, sigma):
        sigma, diff, proj = self._parts(x, sigma)
        g = self.model
        lam = g.eigenvalues
        var = lam + sigma**2
        perp = diff - proj @ g.basis.T
        maha = np.sum(perp**2, axis=-1) / sigma**2 + np.sum(proj**2 / var, axis=-1)
        logdet = np.sum(np.log(var)) + (g.ambient_dim - g.rank) * np.log(sigma**2)
        return -0.5 * (g.ambient_dim * _LOG_2PI + logdet + maha)

    def scaled(self, alpha):
        return GaussianScore(self.model.scaled(alpha))

    def scaled_evaluate(self, x, alpha, sigma):
        sigma = check_sigma(sigma)
        x = _as_points(x, self.ambient_dim)
        diff = alpha * self.model.mean - x
        lam = alpha**2 * self.model.eigenvalues
        proj = diff @ self.model.basis
        return (diff - (proj * (lam / (lam + sigma**2))) @ self.model.basis.T) / sigma**2


class GMMScore(ScoreField):
    """Posterior-weighted sum of per-component Gaussian scores."""

    name = "gmm"

    def __init__(self, mixture: GaussianMixture):
        self.mixture = mixture
        self._fields = [GaussianScore(c) for c in mixture.components]
        with np.errstate(divide="ignore"):
            self._log_weights = np.log(mixture.weights)

    @property
    def ambient_dim(self):
        return self.mixture.ambient_dim

    def _log_joint(self, x, sigma):
        return np.stack(
            [lw + f.log_density(x, sigma) for lw, f in zip(self._log_weights, self._fields)],
            axis=-1,
        )

    def responsibilities(self, x, sigma) -> np.ndarray:
        return softmax(self._log_joint(x, sigma), axis=-1)

    def evaluate(self, x, sigma):
        x = _as_points(x, self.ambient_dim)
        w = self.responsibilities(x, sigma)
        out = np.zeros_like(x)
        for i, f in enumerate(self._fields):
            out += w[..., i, None] * f.evaluate(x, sigma)
        return out

    def log_density(self, x, sigma):
        return logsumexp(self._log_joint(x, sigma), axis=-1)

    def scaled(self, alpha):
        return GMMScore(self.mixture.scaled(alpha))


class PointCloudScore(ScoreField):
    """Exact score of the empirical distribution (a mixture of delta modes)."""

    name = "pointcloud"

    def __init__(self, pc: PointCloud):
        self.pc = pc

    @property
    def ambient_dim(self):
        return self.pc.dim

    def _logits(self, x, sigma):
        y = self.pc.data
        x2 = np.atleast_2d(x)
        step = max(1, _CHUNK_ELEMS // (y.shape[0] * y.shape[1]))
        out = np.empty((x2.shape[0], y.shape[0]))
        for s in range(0, x2.shape[0], step):
            d = x2[s : s + step, None, :] - y[None, :, :]
            out[s : s + step] = np.einsum("bnd,bnd->bn", d, d)
        out *= -0.5 / sigma**2
        return out if x.ndim == 2 else out[0]

    def weights(self, x, sigma) -> np.ndarray:
        sigma = check_sigma(sigma)
        x = _as_points(x, self.ambient_dim)
        return softmax(self._logits(x, sigma), axis=-1)

    def endpoint(self, x, sigma) -> np.ndarray:
        """Softmax-weighted average of the data points (the ideal denoiser)."""
        return self.weights(x, sigma) @ self.pc.data

    def evaluate(self, x, sigma):
        sigma = check_sigma(sigma)
        x = _as_points(x, self.ambient_dim)
        return (self.endpoint(x, sigma) - x) / sigma**2

    def log_density(self, x, sigma):
        sigma = check_sigma(sigma)
        x = _as_points(x, self.ambient_dim)
        n, d = self.pc.data.shape
        return (
            logsumexp(self._logits(x, sigma), axis=-1)
            - np.log(n)
            - 0.5 * d * (_LOG_2PI + np.log(sigma**2))
        )

    def scaled(self, alpha):
        return PointCloudScore(self.pc.scaled(alpha))


def as_field(model) -> ScoreField:
    """Wrap a model object in the matching score field."""
    if isinstance(model, ScoreField):
        return model
    if isinstance(model, GaussianModel):
        return GaussianScore(model)
    if isinstance(model, GaussianMixture):
        return GMMScore(model)
    if isinstance(model, PointCloud):
        return PointCloudScore(model)
    raise TypeError(f"no score field for {type(model).__name__}")


# ------------------------------------------------------- functional forms


def isotropic_score(mu, x, sigma):
    return IsotropicScore(mu).evaluate(x, sigma)


def gaussian_score(g: GaussianModel, x, sigma):
    return GaussianScore(g).evaluate(x, sigma)


def gmm_score(m: GaussianMixture, x, sigma):
    return GMMScore(m).evaluate(x, sigma)


def point_cloud_score(pc: PointCloud, x, sigma):
    return PointCloudScore(pc).evaluate(x, sigma)


def point_cloud_endpoint(pc: PointCloud, x, sigma):
    return PointCloudScore(pc).endpoint(x, sigma)


def vp_scaled_score(model, x, alpha, sigma):
    """Score of the alpha-scaled model smoothed by N(0, sigma^2 I).

    For a Gaussian this is -(sigma^2 I + alpha^2 Sigma)^-1 (x - alpha mu); mixtures
    and point clouds get the same transformation per mode.
    """
    alpha = float(alpha)
    if not alpha > 0:
        raise ValueError(f"alpha must be positive, got {alpha!r}")
    return as_field(model).scaled_evaluate(x, alpha, sigma)
