"""Deterministic probability-flow samplers, generic over a :class:`ScoreField`.

Time is the noise level itself (sigma(t) = t), so the flow ODE reads
dx/dsigma = -sigma * score(x, sigma).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .dataset_stats import GaussianModel
from .gaussian_solution import TrajectoryBasis, VPSchedule, solve_denoiser, solve_state
from .score_fields import SIGMA_FLOOR, ScoreField, as_field, vp_scaled_score


class NonFiniteStateError(FloatingPointError):
    def __init__(self, step: int):
        super().__init__(f"non-finite state at step {step}")
        self.step = step


@dataclass(frozen=True)
class NoiseSchedule:
    sigma_min: float
    sigma_max: float
    rho: float
    n_step: int
    levels: np.ndarray = field(repr=False)

    def nfe(self, n_skip: int = 0) -> int:
        """Score evaluations of a Heun run that skips the first ``n_skip`` steps."""
        return 2 * (self.n_step - n_skip) - 1


def build_schedule(sigma_min=0.002, sigma_max=80.0, rho=7.0, n_step=18) -> NoiseSchedule:
    """rho-power interpolation between sigma_max and sigma_min, then a final 0."""
    if not 0 < sigma_min < sigma_max:
        raise ValueError("need 0 < sigma_min < sigma_max")
    if not rho > 0:
        raise ValueError("rho must be positive")
    if int(n_step) != n_step or n_step < 2:
        raise ValueError("n_step must be an integer >= 2")
    n_step = int(n_step)
    i = np.arange(n_step)
    lo, hi = sigma_min ** (1 / rho), sigma_max ** (1 / rho)
    levels = (hi + i / (n_step - 1) * (lo - hi)) ** rho
    levels[0], levels[-1] = sigma_max, sigma_min
    levels = np.append(levels, 0.0)
    levels.setflags(write=False)
    return NoiseSchedule(float(sigma_min), float(sigma_max), float(rho), n_step, levels)


@dataclass
class SampleRun:
    """One sampler run; a batch of initial conditions shares one run.

    ``states[j]`` is the state at ``levels[start_index + j]`` and
    ``denoised[j]`` the denoiser output evaluated there (the last level,
    sigma = 0, has no denoiser entry).
    """

    x_T: np.ndarray
    levels: np.ndarray
    start_index: int
    states: np.ndarray
    denoised: np.ndarray
    nfe: int
    n_skip: int = 0
    sigma_skip: float | None = None

    @property
    def final(self) -> np.ndarray:
        return self.states[-1]

    @property
    def sigmas(self) -> np.ndarray:
        return self.levels[self.start_index :]


def heun_sample(field: ScoreField, x_T, sched: NoiseSchedule, start_index: int = 0) -> SampleRun:
    """Second-order Heun integration down the schedule.

    ``x_T`` is the state at ``levels[start_index]``.  Every interval gets an
    Euler predictor and a trapezoidal corrector except the last one
    (sigma_min -> 0), which is a plain Euler step with the sigma_min slope.
    """
    if not 0 <= start_index < sched.n_step:
        raise ValueError(f"start_index must lie in [0, {sched.n_step})")
    levels = sched.levels
    x = np.array(x_T, dtype=float)
    states, denoised = [x.copy()], []
    nfe = 0
    for i in range(start_index, sched.n_step):
        s_cur, s_next = levels[i], levels[i + 1]
        score = field.evaluate(x, s_cur)
        nfe += 1
        denoised.append(x + s_cur**2 * score)
        d_cur = -s_cur * score
        x_next = x + (s_next - s_cur) * d_cur
        if s_next > 0:
            d_next = -s_next * field.evaluate(x_next, s_next)
            nfe += 1
            x_next = x + (s_next - s_cur) * (0.5 * d_cur + 0.5 * d_next)
        if not np.all(np.isfinite(x_next)):
            raise NonFiniteStateError(i)
        x = x_next
        states.append(x.copy())
    return SampleRun(
        x_T=np.array(x_T, dtype=float),
        levels=levels,
        start_index=start_index,
        states=np.stack(states),
        denoised=np.stack(denoised),
        nfe=nfe,
    )


def rk4_integrate(rhs, x0, t_from: float, t_to: float, n_substeps: int) -> np.ndarray:
    """Classic fixed-step Runge-Kutta 4 for dx/dt = rhs(x, t)."""
    if n_substeps < 1:
        raise ValueError("n_substeps must be >= 1")
    x = np.array(x0, dtype=float)
    if t_from == t_to:
        return x
    h = (t_to - t_from) / n_substeps
    for k in range(n_substeps):
        t = t_from + k * h
        t_end = t_from + (k + 1) * h if k + 1 < n_substeps else t_to
        k1 = rhs(x, t)
        k2 = rhs(x + 0.5 * h * k1, t + 0.5 * h)
        k3 = rhs(x + 0.5 * h * k2, t + 0.5 * h)
        k4 = rhs(x + h * k3, t_end)
        x = x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        if not np.all(np.isfinite(x)):
            raise NonFiniteStateError(k)
    return x


def edm_flow_rhs(field: ScoreField):
    """dx/dsigma = -sigma * score; a stage landing on sigma = 0 is evaluated at SIGMA_FLOOR."""

    def rhs(x, sigma):
        sigma = max(sigma, SIGMA_FLOOR)
        return -sigma * field.evaluate(x, sigma)

    return rhs


def reference_integrate(field: ScoreField, x_T, sigma_from: float, sigma_to: float,
                        n_substeps: int) -> np.ndarray:
    """High-order oracle: uniform-step RK4 of the flow ODE from sigma_from to sigma_to."""
    if sigma_to < 0 or sigma_from < sigma_to:
        raise ValueError("need sigma_from >= sigma_to >= 0")
    return rk4_integrate(edm_flow_rhs(as_field(field)), x_T, sigma_from, sigma_to, n_substeps)


def hybrid_sample(model: GaussianModel, field: ScoreField, x_T, sched: NoiseSchedule,
                  n_skip: int) -> SampleRun:
    """Teleport to levels[n_skip] with the Gaussian solution, then continue with Heun.

    n_skip = 0 is exactly :func:`heun_sample`.  Skipping ``n_skip`` steps saves
    ``2 * n_skip`` score evaluations.
    """
    if not 0 <= n_skip < sched.n_step:
        raise ValueError(f"n_skip must lie in [0, {sched.n_step})")
    x_T = np.asarray(x_T, dtype=float)
    sigma_skip = float(sched.levels[n_skip])
    if n_skip == 0:
        start = x_T
    else:
        tb = TrajectoryBasis.from_initial(model, x_T, sched.sigma_max)
        start = solve_state(tb, sigma_skip)
    run = heun_sample(field, start, sched, n_skip)
    run.x_T = x_T.copy()
    run.n_skip = n_skip
    run.sigma_skip = sigma_skip
    return run


def analytic_run(model: GaussianModel, x_T, sched: NoiseSchedule, start_index: int = 0) -> SampleRun:
    """Closed-form Gaussian trajectory sampled at the schedule levels (no score calls)."""
    x_T = np.asarray(x_T, dtype=float)
    sig_T = float(sched.levels[start_index])
    tb = TrajectoryBasis.from_initial(model, x_T, sig_T)
    lv = sched.levels[start_index:]
    states = np.stack([x_T.copy()] + [solve_state(tb, s) for s in lv[1:]])
    denoised = np.stack([solve_denoiser(tb, s) for s in lv[:-1]])
    return SampleRun(x_T, sched.levels, start_index, states, denoised, nfe=0)


def vp_flow_rhs(field, x, t: float, sched: VPSchedule) -> np.ndarray:
    """Right-hand side -beta(t) x - g(t)^2 / 2 * s(x, t) of the VP flow ODE."""
    beta = float(sched.beta(t))
    x = np.asarray(x, dtype=float)
    if beta == 0.0:
        return np.zeros_like(x)
    score = vp_scaled_score(field, x, float(sched.alpha(t)), float(sched.sigma(t)))
    return -beta * x - 0.5 * (2.0 * beta) * score
