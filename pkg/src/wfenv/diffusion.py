"""Euler-Maruyama sampler for the Wright-Fisher diffusion in a jump environment.

Between environment jumps the fit frequency follows

    dX = (theta nu0 (1-X) - theta nu1 X + sigma X (1-X)) dt + sqrt(2 X (1-X)) dB,

and at a jump of size ``dp`` it moves to ``X + X (1-X) dp``. Steps are split
so that every jump (and every observation time) lands on the grid exactly.
Jumps at ``t = 0`` are not applied: the initial value is taken to be the
post-jump state.

Two boundary policies are available. ``"clip"`` is plain Euler-Maruyama with
the state clipped to [0, 1]; the clipping biases moments by O(sqrt(dt)) when
a boundary is accessible. ``"beta"`` (default) keeps the Gaussian step in the
interior but, when the step could leave [0, 1] (the nearer boundary within
six standard deviations), draws the new state from the Beta law with the same
mean ``x + drift * dt`` and variance ``2 x (1-x) dt``. Each step then has the
Euler conditional mean and variance and never leaves [0, 1].
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numba import njit

from .errors import DomainError
from .model import (Environment, LevyMeasure, ModelParams, as_generator, env_sample,
                    env_sample_batch)
from .records import PathSample

BOUNDARY_POLICIES = ("beta", "clip")
_GAUSS_ZONE = 6.0


@dataclass(frozen=True)
class DiffusionConfig:
    params: ModelParams
    dt: float = 1e-4
    horizon: float = 1.0
    boundary: str = "beta"
    noise: bool = True

    def __post_init__(self):
        if not (self.dt > 0 and math.isfinite(self.dt)):
            raise DomainError(f"dt: must be positive, got {self.dt}")
        if not (self.horizon > 0 and math.isfinite(self.horizon)):
            raise DomainError(f"horizon: must be positive, got {self.horizon}")
        if not self.dt < self.horizon:
            raise DomainError(f"dt: must be smaller than the horizon ({self.dt} >= {self.horizon})")
        if self.boundary not in BOUNDARY_POLICIES:
            raise DomainError(f"boundary: unknown policy {self.boundary!r}")

    @property
    def policy(self) -> int:
        return BOUNDARY_POLICIES.index(self.boundary)


def diffusion_jump(x: float, dp: float) -> float:
    """Jump map ``x -> x + x (1 - x) dp``."""
    if not 0.0 <= x <= 1.0:
        raise DomainError(f"x: {x} outside [0, 1]")
    if not 0.0 < dp < 1.0:
        raise DomainError(f"dp: {dp} outside (0, 1)")
    return x + x * (1.0 - x) * dp


@njit(cache=True)
def _em_step(x, h, sigma, th0, th1, noise, policy, rng):
    v = x * (1.0 - x)
    m = x + (th0 * (1.0 - x) - th1 * x + sigma * v) * h
    if not noise or v <= 0.0:
        return min(max(m, 0.0), 1.0)
    var = 2.0 * v * h
    sd = math.sqrt(var)
    if policy == 1:
        y = m + sd * rng.standard_normal()
        return min(max(y, 0.0), 1.0)
    if m <= 0.0:
        return 0.0
    if m >= 1.0:
        return 1.0
    if min(m, 1.0 - m) > _GAUSS_ZONE * sd:
        return m + sd * rng.standard_normal()
    c = m * (1.0 - m) / var - 1.0
    if c <= 1e-12:
        # variance too large for a Beta law: two-point law with the same mean
        return 1.0 if rng.random() < m else 0.0
    g1 = rng.standard_gamma(m * c)
    g2 = rng.standard_gamma((1.0 - m) * c)
    if g1 + g2 <= 0.0:
        return m
    return g1 / (g1 + g2)


@njit(cache=True)
def _em_ensemble(x0, horizon, dt, sigma, th0, th1, env_t, env_p, env_off, shared,
                 noise, policy, obs, rng):
    n = x0.size
    n_obs = obs.size
    final = np.empty(n)
    out = np.empty((n, n_obs))
    for p in range(n):
        if shared:
            e = 0
            e1 = env_t.size
        else:
            e = env_off[p]
            e1 = env_off[p + 1]
        while e < e1 and env_t[e] <= 0.0:
            e += 1
        x = x0[p]
        t = 0.0
        o = 0
        while o < n_obs and obs[o] <= 0.0:
            out[p, o] = x
            o += 1
        while t < horizon:
            t_next = t + dt
            if t_next > horizon:
                t_next = horizon
            if e < e1 and env_t[e] < t_next:
                t_next = env_t[e]
            if o < n_obs and obs[o] < t_next:
                t_next = obs[o]
            h = t_next - t
            if h > 0.0:
                x = _em_step(x, h, sigma, th0, th1, noise, policy, rng)
            t = t_next
            while e < e1 and env_t[e] <= t:
                x = x + x * (1.0 - x) * env_p[e]
                e += 1
            while o < n_obs and obs[o] <= t:
                out[p, o] = x
                o += 1
        final[p] = x
    return final, out


@njit(cache=True)
def _em_record(x0, horizon, dt, sigma, th0, th1, env_t, env_p, noise, policy, rng):
    ts = [0.0]
    xs = [x0]
    e = 0
    while e < env_t.size and env_t[e] <= 0.0:
        e += 1
    x = x0
    t = 0.0
    while t < horizon:
        t_next = t + dt
        if t_next > horizon:
            t_next = horizon
        if e < env_t.size and env_t[e] < t_next:
            t_next = env_t[e]
        h = t_next - t
        if h > 0.0:
            x = _em_step(x, h, sigma, th0, th1, noise, policy, rng)
        t = t_next
        if e < env_t.size and env_t[e] <= t:
            # keep the pre-jump value visible in the record
            ts.append(t)
            xs.append(x)
            while e < env_t.size and env_t[e] <= t:
                x = x + x * (1.0 - x) * env_p[e]
                e += 1
        ts.append(t)
        xs.append(x)
    return ts, xs


def _check_x0(x0) -> np.ndarray:
    arr = np.atleast_1d(np.asarray(x0, dtype=float))
    if np.any((arr < 0.0) | (arr > 1.0)) or not np.all(np.isfinite(arr)):
        raise DomainError("x0: must lie in [0, 1]")
    return arr


def _check_env(cfg: DiffusionConfig, omega: Environment) -> None:
    if not omega.is_forward:
        raise DomainError("the diffusion runs forward; pass a forward-oriented environment")
    if omega.horizon < cfg.horizon:
        raise DomainError(f"environment horizon {omega.horizon} shorter than run horizon {cfg.horizon}")


def diffusion_run_quenched(cfg: DiffusionConfig, omega: Environment, x0: float, rng) -> PathSample:
    """One path in a fixed environment; at a jump both the pre- and post-jump values are recorded."""
    x = float(_check_x0(x0)[0])
    _check_env(cfg, omega)
    p = cfg.params
    ts, xs = _em_record(x, cfg.horizon, cfg.dt, p.sigma, p.theta0, p.theta1,
                        omega.time_array(), omega.peak_array(), cfg.noise, cfg.policy,
                        as_generator(rng))
    return PathSample(np.asarray(ts), np.asarray(xs), "t", "x")


def diffusion_run_annealed(cfg: DiffusionConfig, mu: LevyMeasure, x0: float, rng) -> tuple[PathSample, Environment]:
    """Sample an environment from ``mu`` then run the quenched sampler in it."""
    rng = as_generator(rng)
    omega = env_sample(mu, cfg.horizon, rng)
    return diffusion_run_quenched(cfg, omega, x0, rng), omega


@dataclass(frozen=True)
class DiffusionEnsemble:
    final: np.ndarray
    obs_times: np.ndarray
    values: np.ndarray
    jump_total: np.ndarray  # J(T) per path, sum of applied peaks


def diffusion_ensemble(cfg: DiffusionConfig, x0, replicates: int, rng, omega: Environment | None = None,
                       mu: LevyMeasure | None = None, obs_times=None) -> DiffusionEnsemble:
    """Independent paths, quenched (``omega``) or annealed (``mu``).

    ``x0`` is a scalar or an array of length ``replicates``.
    """
    if omega is not None and mu is not None:
        raise DomainError("give either omega (quenched) or mu (annealed), not both")
    if replicates < 1:
        raise DomainError("replicates: must be positive")
    rng = as_generator(rng)
    x = _check_x0(x0)
    if x.size == 1:
        x = np.full(replicates, x[0])
    elif x.size != replicates:
        raise DomainError("x0: one value or one per replicate")
    obs = np.asarray([] if obs_times is None else obs_times, dtype=float)
    if obs.size and (np.any(np.diff(obs) < 0) or obs[-1] > cfg.horizon):
        raise DomainError("obs_times must be sorted and within the horizon")
    T = cfg.horizon
    if mu is not None:
        env_t, env_p, env_off = env_sample_batch(mu, T, replicates, rng)
        shared = False
        live = (env_t > 0.0) & (env_t <= T)
        owner = np.repeat(np.arange(replicates), np.diff(env_off))
        jtot = np.bincount(owner[live], weights=env_p[live], minlength=replicates)
    else:
        omega = omega if omega is not None else Environment(T)
        _check_env(cfg, omega)
        env_t, env_p = omega.time_array(), omega.peak_array()
        env_off = np.zeros(replicates + 1, dtype=np.int64)
        shared = True
        live = (env_t > 0.0) & (env_t <= T)
        jtot = np.full(replicates, float(env_p[live].sum()))
    p = cfg.params
    final, out = _em_ensemble(x, T, cfg.dt, p.sigma, p.theta0, p.theta1, env_t, env_p,
                              env_off, shared, cfg.noise, cfg.policy, obs, rng)
    return DiffusionEnsemble(final, obs, out, jtot)
