"""Point-cloud ingestion and moment fitting.

A :class:`PointCloud` is the empirical dataset; :func:`fit_gaussian` and
:func:`fit_gmm_by_label` turn it into the analytical models consumed by the
score fields and the closed-form solutions.  Covariances use the population
(1/N) convention throughout.
"""

from __future__ import annotations

import csv
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

DEFAULT_RANK_TOL = 1e-10

_MAGIC = b"PCLD"
_VERSION = 1
_HEADER = struct.Struct("<4sIQQI")


class DatasetError(ValueError):
    """Raised for malformed, non-finite or inconsistent dataset input."""


def _frozen(a, dtype=float):
    a = np.array(a, dtype=dtype)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class PointCloud:
    data: np.ndarray
    labels: np.ndarray | None = None
    name: str = ""

    def __post_init__(self):
        data = np.asarray(self.data, dtype=float)
        if data.ndim == 1:
            data = data[:, None]
        if data.ndim != 2 or data.shape[0] < 1 or data.shape[1] < 1:
            raise DatasetError(f"point cloud must be an N x D matrix, got shape {data.shape}")
        bad = np.flatnonzero(~np.isfinite(data).all(axis=1))
        if bad.size:
            raise DatasetError(f"non-finite entry in row {bad[0]}")
        object.__setattr__(self, "data", _frozen(data))
        if self.labels is not None:
            labels = np.asarray(self.labels)
            if labels.shape != (data.shape[0],):
                raise DatasetError(
                    f"labels length {labels.shape} does not match N={data.shape[0]}"
                )
            if labels.size and not np.issubdtype(labels.dtype, np.integer):
                if not np.all(labels == np.round(labels)):
                    raise DatasetError("labels must be integers")
            object.__setattr__(self, "labels", _frozen(labels, dtype=np.int64))

    @property
    def n_points(self) -> int:
        return self.data.shape[0]

    @property
    def dim(self) -> int:
        return self.data.shape[1]

    def scaled(self, alpha: float) -> "PointCloud":
        return PointCloud(alpha * self.data, self.labels, self.name)


@dataclass(frozen=True)
class GaussianModel:
    """Gaussian N(mean, basis @ diag(eigenvalues) @ basis.T) in compact form.

    ``basis`` is D x r with orthonormal columns and ``eigenvalues`` are sorted
    in descending order and strictly positive.  r = 0 is allowed and describes
    a point mass at ``mean``.
    """

    mean: np.ndarray
    basis: np.ndarray
    eigenvalues: np.ndarray

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=float).reshape(-1)
        basis = np.asarray(self.basis, dtype=float)
        lam = np.asarray(self.eigenvalues, dtype=float).reshape(-1)
        if basis.size == 0:
            basis = np.zeros((mean.size, 0))
        if basis.ndim != 2 or basis.shape[0] != mean.size:
            raise ValueError(f"basis shape {basis.shape} incompatible with D={mean.size}")
        if basis.shape[1] != lam.size:
            raise ValueError("basis columns and eigenvalues disagree on the rank")
        if lam.size:
            if np.any(lam <= 0):
                raise ValueError("eigenvalues must be strictly positive")
            if np.any(np.diff(lam) > 0):
                raise ValueError("eigenvalues must be sorted in descending order")
            gram = basis.T @ basis
            if not np.allclose(gram, np.eye(lam.size), rtol=0, atol=1e-10):
                raise ValueError("basis columns are not orthonormal")
        object.__setattr__(self, "mean", _frozen(mean))
        object.__setattr__(self, "basis", _frozen(basis))
        object.__setattr__(self, "eigenvalues", _frozen(lam))

    @property
    def ambient_dim(self) -> int:
        return self.mean.size

    @property
    def rank(self) -> int:
        return self.eigenvalues.size

    @property
    def covariance(self) -> np.ndarray:
        return (self.basis * self.eigenvalues) @ self.basis.T

    def scaled(self, alpha: float) -> "GaussianModel":
        """Law of ``alpha * X``: mean alpha*mu, eigenvalues alpha^2*lambda."""
        return GaussianModel(alpha * self.mean, self.basis, alpha**2 * self.eigenvalues)

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        z = rng.standard_normal((n, self.rank))
        return self.mean + (z * np.sqrt(self.eigenvalues)) @ self.basis.T


@dataclass(frozen=True)
class GaussianMixture:
    weights: np.ndarray
    components: tuple[GaussianModel, ...]
    labels: tuple[int, ...] = field(default=())

    def __post_init__(self):
        comps = tuple(self.components)
        w = np.asarray(self.weights, dtype=float).reshape(-1)
        if not comps:
            raise ValueError("mixture needs at least one component")
        if w.size != len(comps):
            raise ValueError("one weight per component required")
        if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-12:
            raise ValueError("mixture weights must be nonnegative and sum to 1")
        dims = {c.ambient_dim for c in comps}
        if len(dims) != 1:
            raise ValueError(f"components disagree on ambient dimension: {sorted(dims)}")
        object.__setattr__(self, "components", comps)
        object.__setattr__(self, "weights", _frozen(w))
        object.__setattr__(self, "labels", tuple(int(v) for v in self.labels))

    @property
    def k(self) -> int:
        return len(self.components)

    @property
    def ambient_dim(self) -> int:
        return self.components[0].ambient_dim

    def scaled(self, alpha: float) -> "GaussianMixture":
        return GaussianMixture(
            self.weights, tuple(c.scaled(alpha) for c in self.components), self.labels
        )


@dataclass(frozen=True)
class ThirdMoment:
    gamma: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "gamma", _frozen(self.gamma))


def compute_moments(pc: PointCloud) -> tuple[np.ndarray, np.ndarray]:
    """Population mean and covariance, (1/N) sum y y^T - mu mu^T."""
    y = pc.data
    mu = y.mean(axis=0)
    centered = y - mu
    cov = centered.T @ centered / y.shape[0]
    return mu, 0.5 * (cov + cov.T)


def _fix_signs(vectors: np.ndarray) -> np.ndarray:
    # largest-magnitude entry of each column positive; argmax takes the lowest index on ties
    if vectors.shape[1] == 0:
        return vectors
    idx = np.argmax(np.abs(vectors), axis=0)
    signs = np.sign(vectors[idx, np.arange(vectors.shape[1])])
    signs[signs == 0] = 1.0
    return vectors * signs


def fit_gaussian(pc: PointCloud, rank_tolerance: float = DEFAULT_RANK_TOL) -> GaussianModel:
    """Fit mean and compact eigendecomposition of the population covariance.

    Eigenpairs with ``lambda_k <= rank_tolerance * lambda_1`` are dropped.  The
    decomposition is taken from the thin SVD of the centered data, which is
    cheaper than forming the D x D covariance when N < D.
    """
    if rank_tolerance <= 0:
        raise ValueError("rank_tolerance must be positive")
    y = pc.data
    n, d = y.shape
    mu = y.mean(axis=0)
    if n == 1:
        return GaussianModel(mu, np.zeros((d, 0)), np.zeros(0))
    _, s, vt = np.linalg.svd(y - mu, full_matrices=False)
    lam = s**2 / n
    if lam.size == 0 or lam[0] <= 0:
        return GaussianModel(mu, np.zeros((d, 0)), np.zeros(0))
    keep = lam > rank_tolerance * lam[0]
    basis = _fix_signs(vt[keep].T.copy())
    # re-orthonormalize against roundoff so the 1e-10 gram check is robust
    q, r = np.linalg.qr(basis)
    basis = _fix_signs(q * np.sign(np.diag(r)))
    return GaussianModel(mu, basis, lam[keep])


def fit_gmm_by_label(pc: PointCloud, rank_tolerance: float = DEFAULT_RANK_TOL) -> GaussianMixture:
    """One Gaussian component per distinct label, weighted by class frequency."""
    if pc.labels is None:
        raise DatasetError("fit_gmm_by_label requires a labeled point cloud")
    classes, counts = np.unique(pc.labels, return_counts=True)
    comps = tuple(
        fit_gaussian(PointCloud(pc.data[pc.labels == c]), rank_tolerance) for c in classes
    )
    weights = counts / counts.sum()
    weights = weights / weights.sum()
    return GaussianMixture(weights, comps, tuple(classes.tolist()))


def third_central_moment(pc: PointCloud) -> ThirdMoment:
    """gamma = (1/N) sum ||y_i - mu||^2 (y_i - mu)."""
    centered = pc.data - pc.data.mean(axis=0)
    sq = np.einsum("ij,ij->i", centered, centered)
    return ThirdMoment(sq @ centered / pc.n_points)


# --------------------------------------------------------------------- I/O


def load_point_cloud(path, format: str = "csv", labeled: bool = False) -> PointCloud:
    """Read a point cloud from CSV or the little-endian "PCLD" binary format.

    For CSV, ``labeled=True`` treats the final column of every row as an
    integer class label.  Binary files carry their own label flag.
    """
    path = Path(path)
    if not path.exists():
        raise DatasetError(f"no such file: {path}")
    if format == "csv":
        return _load_csv(path, labeled)
    if format in ("raw", "raw-binary", "binary", "pcld"):
        return _load_binary(path)
    raise DatasetError(f"unknown format {format!r}")


def _load_csv(path: Path, labeled: bool) -> PointCloud:
    rows, labels = [], []
    width = None
    with open(path, newline="") as fh:
        for i, rec in enumerate(csv.reader(fh)):
            if not rec or all(not c.strip() for c in rec):
                continue
            if labeled:
                if len(rec) < 2:
                    raise DatasetError(f"row {i}: labeled row needs at least one value and a label")
                try:
                    labels.append(int(rec[-1]))
                except ValueError:
                    raise DatasetError(f"row {i}: label {rec[-1]!r} is not an integer") from None
                rec = rec[:-1]
            try:
                vals = [float(c) for c in rec]
            except ValueError as exc:
                raise DatasetError(f"row {i}: {exc}") from None
            if not all(np.isfinite(vals)):
                raise DatasetError(f"non-finite entry in row {i}")
            if width is None:
                width = len(vals)
            elif len(vals) != width:
                raise DatasetError(f"row {i}: expected {width} columns, found {len(vals)}")
            rows.append(vals)
    if not rows:
        raise DatasetError(f"{path}: no data rows")
    return PointCloud(np.array(rows), np.array(labels) if labeled else None, path.stem)


def _load_binary(path: Path) -> PointCloud:
    raw = path.read_bytes()
    if len(raw) < _HEADER.size:
        raise DatasetError(f"{path}: truncated header")
    magic, version, n, d, flag = _HEADER.unpack_from(raw)
    if magic != _MAGIC:
        raise DatasetError(f"{path}: bad magic {magic!r}")
    if version != _VERSION:
        raise DatasetError(f"{path}: unsupported version {version}")
    if flag not in (0, 1):
        raise DatasetError(f"{path}: bad label flag {flag}")
    expected = _HEADER.size + 8 * n * d + (4 * n if flag else 0)
    if len(raw) != expected:
        raise DatasetError(f"{path}: expected {expected} bytes for N={n}, D={d}, got {len(raw)}")
    data = np.frombuffer(raw, dtype="<f8", count=n * d, offset=_HEADER.size).reshape(n, d)
    bad = np.flatnonzero(~np.isfinite(data).all(axis=1))
    if bad.size:
        raise DatasetError(f"non-finite entry in row {bad[0]}")
    labels = None
    if flag:
        labels = np.frombuffer(raw, dtype="<u4", count=n, offset=_HEADER.size + 8 * n * d)
        labels = labels.astype(np.int64)
    return PointCloud(data.copy(), labels, path.stem)


def save_point_cloud(pc: PointCloud, path, format: str = "raw-binary") -> None:
    path = Path(path)
    if format == "csv":
        with open(path, "w", newline="") as fh:
            for i, row in enumerate(pc.data):
                cells = [repr(float(v)) for v in row]
                if pc.labels is not None:
                    cells.append(str(int(pc.labels[i])))
                fh.write(",".join(cells) + "\n")
        return
    flag = 0 if pc.labels is None else 1
    n, d = pc.data.shape
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(_MAGIC, _VERSION, n, d, flag))
        fh.write(np.ascontiguousarray(pc.data, dtype="<f8").tobytes())
        if flag:
            if np.any(pc.labels < 0) or np.any(pc.labels > 0xFFFFFFFF):
                raise DatasetError("binary labels must fit in u32")
            fh.write(pc.labels.astype("<u4").tobytes())
