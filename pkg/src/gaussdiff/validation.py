"""Score-approximation and trajectory-deviation measurements.

The residual metric is the fraction of unexplained variance of a reference
field by an approximant over query points drawn from N(0, sigma^2 I); the
denominator is the batch-centered variance of the reference, so a constant
approximant scores about 1.  Each noise level draws its points from its own
``SeedSequence(seed, spawn_key=(level,))`` stream, which keeps approximants
comparable on identical points and makes reports order-independent.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .dataset_stats import (
    DEFAULT_RANK_TOL,
    GaussianModel,
    PointCloud,
    compute_moments,
    fit_gaussian,
    third_central_moment,
)
from .samplers import NoiseSchedule, SampleRun
from .score_fields import GaussianScore, ScoreField, _as_points, check_sigma

DEFAULT_N_POINTS = 1024


class DegenerateReferenceError(ValueError):
    """The reference field is constant over the query batch."""


class MisalignedRunsError(ValueError):
    pass


def level_stream(seed, level: int) -> np.random.SeedSequence:
    return np.random.SeedSequence(int(seed), spawn_key=(int(level),))


def query_points(dim: int, sigma: float, n_points: int, seed) -> np.ndarray:
    """n_points i.i.d. draws from N(0, sigma^2 I_dim)."""
    rng = np.random.default_rng(seed)
    return sigma * rng.standard_normal((n_points, dim))


def residual_fraction(ref_values: np.ndarray, approx_values: np.ndarray) -> tuple[float, float]:
    """Unexplained-variance fraction and its delta-method standard error."""
    ref_values = np.asarray(ref_values, dtype=float)
    n = ref_values.shape[0]
    a = np.sum((ref_values - approx_values) ** 2, axis=1)
    b = np.sum((ref_values - ref_values.mean(axis=0)) ** 2, axis=1)
    denom = b.sum()
    if not denom > 0:
        raise DegenerateReferenceError("reference field is constant over the query batch")
    frac = a.sum() / denom
    se = np.sqrt(n / max(n - 1, 1) * np.sum((a - frac * b) ** 2)) / denom
    return float(frac), float(se)


def unexplained_variance(reference: ScoreField, approx: ScoreField, sigma: float,
                         n_points: int = DEFAULT_N_POINTS, seed=0) -> float:
    if reference.ambient_dim != approx.ambient_dim:
        raise ValueError("reference and approximant disagree on the ambient dimension")
    if n_points < 2:
        raise ValueError("n_points must be >= 2")
    sigma = check_sigma(sigma)
    x = query_points(reference.ambient_dim, sigma, n_points, seed)
    return residual_fraction(reference.evaluate(x, sigma), approx.evaluate(x, sigma))[0]


@dataclass
class DeviationReport:
    reference: str
    approximant: str
    noise_levels: np.ndarray
    residual_fraction: np.ndarray
    std_error: np.ndarray
    sample_count: np.ndarray
    seed: int
    centered: bool = True

    def rows(self) -> list[dict]:
        return [
            {
                "approximant": self.approximant,
                "level": i,
                "sigma": float(s),
                "residual_fraction": float(r),
                "std_error": float(e),
                "n_points": int(n),
            }
            for i, (s, r, e, n) in enumerate(
                zip(self.noise_levels, self.residual_fraction, self.std_error, self.sample_count)
            )
        ]


def _named(approximants) -> dict[str, ScoreField]:
    if isinstance(approximants, dict):
        return dict(approximants)
    out = {}
    for f in approximants:
        name = getattr(f, "name", type(f).__name__)
        while name in out:
            name += "'"
        out[name] = f
    return out


def sweep_unexplained_variance(reference: ScoreField, approximants, sched: NoiseSchedule,
                               n_points: int = DEFAULT_N_POINTS, seed: int = 0,
                               reference_name: str | None = None) -> list[DeviationReport]:
    """Residual curve of every approximant over the positive schedule levels."""
    approx = _named(approximants)
    if not approx:
        raise ValueError("at least one approximant is required")
    for f in approx.values():
        if f.ambient_dim != reference.ambient_dim:
            raise ValueError("approximant dimension does not match the reference")
    sigmas = np.asarray(sched.levels[: sched.n_step], dtype=float)
    frac = {k: np.empty(sigmas.size) for k in approx}
    se = {k: np.empty(sigmas.size) for k in approx}
    for i, s in enumerate(sigmas):
        x = query_points(reference.ambient_dim, s, n_points, level_stream(seed, i))
        ref = reference.evaluate(x, s)
        for k, f in approx.items():
            frac[k][i], se[k][i] = residual_fraction(ref, f.evaluate(x, s))
    ref_name = reference_name or getattr(reference, "name", "reference")
    counts = np.full(sigmas.size, n_points)
    return [
        DeviationReport(ref_name, k, sigmas.copy(), frac[k], se[k], counts.copy(), int(seed))
        for k in approx
    ]


# ------------------------------------------------------ trajectory deviation


@dataclass
class TrajectoryDeviation:
    sigmas: np.ndarray
    mean: np.ndarray
    q25: np.ndarray
    q75: np.ndarray
    per_pair: np.ndarray = field(repr=False)

    def rows(self) -> list[dict]:
        return [
            {"step": i, "sigma": float(s), "mse_mean": float(m), "mse_q25": float(a), "mse_q75": float(b)}
            for i, (s, m, a, b) in enumerate(zip(self.sigmas, self.mean, self.q25, self.q75))
        ]


def _stack(runs, attr):
    arrs = []
    for run in runs:
        v = np.asarray(getattr(run, attr), dtype=float)
        arrs.append(v[:, None, :] if v.ndim == 2 else v)
    return np.concatenate(arrs, axis=1)


def _deviation(runs_a, runs_b, attr: str) -> TrajectoryDeviation:
    runs_a, runs_b = list(runs_a), list(runs_b)
    if not runs_a or not runs_b:
        raise MisalignedRunsError("need at least one run on each side")
    ref = runs_a[0]
    for ra, rb in zip(runs_a, runs_b):
        for r in (ra, rb):
            if r.start_index != ref.start_index or not np.array_equal(r.levels, ref.levels):
                raise MisalignedRunsError("runs do not share a schedule and start index")
    a, b = _stack(runs_a, attr), _stack(runs_b, attr)
    if a.shape != b.shape:
        raise MisalignedRunsError(f"paired trajectories differ in shape: {a.shape} vs {b.shape}")
    per_pair = np.mean((a - b) ** 2, axis=-1)
    sigmas = np.asarray(ref.sigmas[: a.shape[0]], dtype=float)
    q25, q75 = np.quantile(per_pair, [0.25, 0.75], axis=1)
    return TrajectoryDeviation(sigmas, per_pair.mean(axis=1), q25, q75, per_pair)


def trajectory_deviation(runs_a, runs_b) -> TrajectoryDeviation:
    """Per-step (1/D)||x_a - x_b||^2 over paired runs, with 25/75% quantiles.

    Each side may be any mix of single and batched runs; initial conditions
    are paired in stacking order.
    """
    return _deviation(runs_a, runs_b, "states")


def denoiser_deviation(runs_a, runs_b) -> TrajectoryDeviation:
    return _deviation(runs_a, runs_b, "denoised")


# --------------------------------------------------------- series expansions


class GaussianSeriesScore(ScoreField):
    """First ``order`` terms of the power series of the Gaussian score in Sigma / sigma^2."""

    def __init__(self, model: GaussianModel, order: int):
        if order < 1:
            raise ValueError("order must be >= 1")
        self.model = model
        self.order = int(order)
        self.name = f"series:{self.order}"

    @property
    def ambient_dim(self):
        return self.model.ambient_dim

    def evaluate(self, x, sigma):
        sigma = check_sigma(sigma)
        x = _as_points(x, self.ambient_dim)
        diff = self.model.mean - x
        ratio = -self.model.eigenvalues / sigma**2
        coef = np.zeros_like(ratio)
        term = np.ones_like(ratio)
        for _ in range(1, self.order):
            term = term * ratio
            coef = coef + term
        return (diff + ((diff @ self.model.basis) * coef) @ self.model.basis.T) / sigma**2


def gaussian_series_score(g: GaussianModel, x, sigma, order: int):
    return GaussianSeriesScore(g, order).evaluate(x, sigma)


class PointCloudExpansionScore(ScoreField):
    """(mu - x)/sigma^2 + Sigma (x - mu)/sigma^4 - gamma / (2 sigma^4)."""

    def __init__(self, pc: PointCloud, include_gamma: bool = True):
        self.mean, self.cov = compute_moments(pc)
        self.gamma = third_central_moment(pc).gamma if include_gamma else np.zeros(pc.dim)
        self.include_gamma = include_gamma
        self.name = "expansion" if include_gamma else "expansion-nogamma"

    @property
    def ambient_dim(self):
        return self.mean.size

    def evaluate(self, x, sigma):
        sigma = check_sigma(sigma)
        x = _as_points(x, self.ambient_dim)
        d = x - self.mean
        return -d / sigma**2 + (d @ self.cov) / sigma**4 - self.gamma / (2 * sigma**4)


def pointcloud_expansion_score(pc: PointCloud, x, sigma, include_gamma: bool = True):
    return PointCloudExpansionScore(pc, include_gamma).evaluate(x, sigma)


def mean_relative_error(approx_values, exact_values) -> float:
    num = np.linalg.norm(approx_values - exact_values, axis=-1)
    den = np.linalg.norm(exact_values, axis=-1)
    return float(np.mean(num / den))


def loglog_slope(sigmas, errors) -> float:
    """Least-squares slope of log(error) against log(sigma); NaN if any error is not positive."""
    errors = np.asarray(errors, dtype=float)
    if np.any(~np.isfinite(errors)) or np.any(errors <= 0):
        return float("nan")
    return float(np.polyfit(np.log(sigmas), np.log(errors), 1)[0])


@dataclass
class ExpansionReport:
    sigmas: np.ndarray
    orders: tuple[int, ...]
    series_errors: np.ndarray
    slopes: np.ndarray
    pc_error_with_gamma: np.ndarray
    pc_error_without_gamma: np.ndarray
    seed: int
    n_points: int

    def slope_rows(self) -> list[dict]:
        return [
            {"order": o, "slope": (None if np.isnan(s) else float(s))}
            for o, s in zip(self.orders, self.slopes)
        ]

    def error_rows(self) -> list[dict]:
        rows = []
        for j, s in enumerate(self.sigmas):
            row = {"sigma": float(s)}
            for i, o in enumerate(self.orders):
                row[f"series_{o}"] = float(self.series_errors[i, j])
            row["pc_with_gamma"] = float(self.pc_error_with_gamma[j])
            row["pc_without_gamma"] = float(self.pc_error_without_gamma[j])
            rows.append(row)
        return rows


def expansion_order_check(pc: PointCloud, sigma_grid, seed: int = 0, orders=(1, 2, 3),
                          n_points: int = DEFAULT_N_POINTS,
                          rank_tolerance: float = DEFAULT_RANK_TOL) -> ExpansionReport:
    """Truncation error of the Gaussian score series and of the point-cloud expansion.

    Errors are mean relative errors over query points from N(0, sigma^2 I);
    series truncations are measured against the exact Gaussian score, the
    point-cloud expansion (with and without the third-moment term) against
    the exact point-cloud score.  A zero error curve gives a NaN slope.
    """
    sigmas = np.asarray(sigma_grid, dtype=float)
    if sigmas.ndim != 1 or sigmas.size < 3:
        raise ValueError("need at least 3 grid points for a slope fit")
    if np.any(np.diff(sigmas) <= 0) or sigmas[0] <= 0:
        raise ValueError("sigma grid must be positive and strictly increasing")
    from .score_fields import PointCloudScore

    model = fit_gaussian(pc, rank_tolerance)
    exact = GaussianScore(model)
    series = [GaussianSeriesScore(model, o) for o in orders]
    pc_field = PointCloudScore(pc)
    with_g, without_g = PointCloudExpansionScore(pc, True), PointCloudExpansionScore(pc, False)
    errs = np.zeros((len(orders), sigmas.size))
    pc_w, pc_wo = np.zeros(sigmas.size), np.zeros(sigmas.size)
    for j, s in enumerate(sigmas):
        x = query_points(pc.dim, s, n_points, level_stream(seed, j))
        ref = exact.evaluate(x, s)
        for i, f in enumerate(series):
            errs[i, j] = mean_relative_error(f.evaluate(x, s), ref)
        ref_pc = pc_field.evaluate(x, s)
        pc_w[j] = mean_relative_error(with_g.evaluate(x, s), ref_pc)
        pc_wo[j] = mean_relative_error(without_g.evaluate(x, s), ref_pc)
    slopes = np.array([loglog_slope(sigmas, e) for e in errs])
    return ExpansionReport(sigmas, tuple(orders), errs, slopes, pc_w, pc_wo, int(seed), n_points)


# ----------------------------------------------------------- teleport sweep


def data_rms_scale(pc: PointCloud) -> float:
    """sqrt(trace(Sigma) / D): per-coordinate RMS spread of the data."""
    _, cov = compute_moments(pc)
    return float(np.sqrt(np.trace(cov) / pc.dim))


@dataclass
class TeleportSweep:
    """Final-sample deviation of hybrid runs from the full (n_skip = 0) run.

    ``deviation_rms`` is the RMS over all pairs and coordinates,
    ``deviation_max`` the largest per-pair RMS, and ``deviation_rel`` the
    RMS divided by ``scale``.  ``gauss_residual`` is the unexplained
    variance of the sampling field by the Gaussian model at sigma_skip
    (NaN where it was not requested).
    """

    n_skips: np.ndarray
    nfe: np.ndarray
    sigma_skip: np.ndarray
    deviation_rms: np.ndarray
    deviation_max: np.ndarray
    deviation_rel: np.ndarray
    gauss_residual: np.ndarray
    scale: float

    def rows(self) -> list[dict]:
        return [
            {
                "n_skip": int(k),
                "nfe": int(n),
                "sigma_skip": float(s),
                "deviation_rms": float(d),
                "deviation_max": float(m),
                "deviation_rel": float(r),
                "gauss_residual": float(g),
            }
            for k, n, s, d, m, r, g in zip(
                self.n_skips, self.nfe, self.sigma_skip, self.deviation_rms,
                self.deviation_max, self.deviation_rel, self.gauss_residual,
            )
        ]


def teleport_sweep(model: GaussianModel, field: ScoreField, x_T, sched: NoiseSchedule, skips,
                   scale: float = 1.0, residual_points: int = 0, seed: int = 0) -> TeleportSweep:
    """Run hybrid_sample for every n_skip on shared initial conditions.

    With ``residual_points > 0`` the Gaussian residual at each sigma_skip is
    measured on that many query points from the per-level stream of ``seed``.
    """
    from .samplers import hybrid_sample

    skips = [int(k) for k in skips]
    if any(not 0 <= k < sched.n_step for k in skips):
        raise ValueError(f"n_skip entries must lie in [0, {sched.n_step})")
    x_T = np.atleast_2d(np.asarray(x_T, dtype=float))
    base = hybrid_sample(model, field, x_T, sched, 0).final
    gauss = GaussianScore(model)
    rms, mx, resid = [], [], []
    for k in skips:
        final = base if k == 0 else hybrid_sample(model, field, x_T, sched, k).final
        per_pair = np.sqrt(np.mean((final - base) ** 2, axis=-1))
        rms.append(np.sqrt(np.mean(per_pair**2)))
        mx.append(per_pair.max())
        if residual_points > 0:
            s = float(sched.levels[k])
            x = query_points(field.ambient_dim, s, residual_points, level_stream(seed, k))
            resid.append(residual_fraction(field.evaluate(x, s), gauss.evaluate(x, s))[0])
        else:
            resid.append(np.nan)
    rms = np.array(rms)
    return TeleportSweep(
        n_skips=np.array(skips),
        nfe=np.array([sched.nfe(k) for k in skips]),
        sigma_skip=np.array([sched.levels[k] for k in skips], dtype=float),
        deviation_rms=rms,
        deviation_max=np.array(mx),
        deviation_rel=rms / scale if scale > 0 else np.full(rms.size, np.nan),
        gauss_residual=np.array(resid, dtype=float),
        scale=float(scale),
    )
