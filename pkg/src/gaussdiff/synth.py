"""Synthetic point clouds for experiments that need no external data.

Specs look like ``"gmm:k=4,d=16,n=512,seed=0"``; see :data:`GENERATORS` for
the kinds and their defaults.
"""

from __future__ import annotations

import numpy as np

from .dataset_stats import PointCloud


def _rotation(rng, d):
    q, r = np.linalg.qr(rng.standard_normal((d, d)))
    return q * np.sign(np.diag(r))


def gmm_cloud(k=4, d=16, n=512, seed=0, sep=4.0, scale=1.0) -> PointCloud:
    """Labeled mixture of k anisotropic Gaussian blobs, equal class sizes (up to rounding)."""
    rng = np.random.default_rng(seed)
    means = sep * rng.standard_normal((k, d)) / np.sqrt(2.0)
    labels = np.arange(n) % k
    data = np.empty((n, d))
    for c in range(k):
        idx = np.flatnonzero(labels == c)
        stds = scale * np.exp(rng.uniform(np.log(0.2), 0.0, d))
        rot = _rotation(rng, d)
        z = rng.standard_normal((idx.size, d)) * stds
        data[idx] = means[c] + z @ rot.T
    return PointCloud(data, labels, f"gmm-k{k}-d{d}-n{n}-s{seed}")


def gauss_cloud(d=8, r=None, n=512, seed=0, lam_min=0.1, lam_max=10.0) -> PointCloud:
    """Samples of a random rank-r Gaussian with log-uniform spectrum."""
    rng = np.random.default_rng(seed)
    r = d if r is None else int(r)
    basis = _rotation(rng, d)[:, :r]
    lam = np.exp(rng.uniform(np.log(lam_min), np.log(lam_max), r))
    mean = rng.standard_normal(d)
    data = mean + (rng.standard_normal((n, r)) * np.sqrt(lam)) @ basis.T
    return PointCloud(data, None, f"gauss-d{d}-r{r}-n{n}-s{seed}")


def skew_cloud(d=8, n=256, seed=0, shape=1.0) -> PointCloud:
    """Bounded-support asymmetric cloud: rotated, anisotropically scaled gamma variates."""
    rng = np.random.default_rng(seed)
    z = rng.gamma(shape, 1.0, size=(n, d)) - shape
    scales = np.exp(rng.uniform(np.log(0.3), 0.0, d))
    return PointCloud((z * scales) @ _rotation(rng, d).T, None, f"skew-d{d}-n{n}-s{seed}")


def box_cloud(d=8, n=256, seed=0) -> PointCloud:
    """Uniform points in a rotated anisotropic box."""
    rng = np.random.default_rng(seed)
    scales = np.exp(rng.uniform(np.log(0.2), 0.0, d))
    z = rng.uniform(-1.0, 1.0, size=(n, d)) * scales
    return PointCloud(z @ _rotation(rng, d).T, None, f"box-d{d}-n{n}-s{seed}")


def point_cloud_constant(d=4, n=8, value=1.0) -> PointCloud:
    """n copies of one point: zero covariance."""
    return PointCloud(np.full((n, d), float(value)), None, f"point-d{d}-n{n}")


GENERATORS = {
    "gmm": gmm_cloud,
    "gauss": gauss_cloud,
    "skew": skew_cloud,
    "box": box_cloud,
    "point": point_cloud_constant,
}

_INT_KEYS = {"k", "d", "n", "seed", "r"}


def parse_synth(spec: str) -> PointCloud:
    kind, _, rest = spec.partition(":")
    if kind not in GENERATORS:
        raise ValueError(f"unknown synthetic kind {kind!r}; choose from {sorted(GENERATORS)}")
    kwargs = {}
    for item in filter(None, rest.split(",")):
        key, eq, val = item.partition("=")
        if not eq:
            raise ValueError(f"bad synthetic parameter {item!r}; expected key=value")
        kwargs[key.strip()] = int(val) if key.strip() in _INT_KEYS else float(val)
    try:
        return GENERATORS[kind](**kwargs)
    except TypeError as exc:
        raise ValueError(f"bad parameters for {kind!r}: {exc}") from None
