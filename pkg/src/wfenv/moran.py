"""Exact-event Moran model in a simple environment.

Two backends share one parametrisation:

* an aggregate chain on the fit count ``k`` with birth rate
  ``N(1+s)x(1-x) + N t nu0 (1-x)`` and death rate ``N x(1-x) + N t nu1 x``
  (``x = k/N``, ``s = sigma_N``, ``t = theta_N``);
* an individual-level background with explicit arrows, mutations and
  per-individual environmental uniforms, used to couple the model in an
  environment with the model in its large-jump part.

At an environment jump of size ``dp`` every individual reproduces
independently with probability ``dp``; offspring of fit parents replace
uniformly chosen distinct individuals. At the aggregate level this is
``B ~ Bin(k, dp)`` followed by ``H ~ Hyp(N, N-k, B)`` new fit individuals.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numba import njit

from .errors import DomainError
from .model import Environment, ModelParams, as_generator, env_split
from .records import PathSample


@dataclass(frozen=True)
class MoranParams:
    """Population size and per-individual selection and mutation rates."""

    N: int
    sigma_N: float = 0.0
    theta_N: float = 0.0
    nu0: float = 0.5

    def __post_init__(self):
        if int(self.N) != self.N or self.N < 1:
            raise DomainError(f"N: must be a positive integer, got {self.N}")
        for name in ("sigma_N", "theta_N"):
            v = getattr(self, name)
            if not (v >= 0 and math.isfinite(v)):
                raise DomainError(f"{name}: must be nonnegative, got {v}")
        if not 0.0 <= self.nu0 <= 1.0:
            raise DomainError(f"nu0: {self.nu0} outside [0, 1]")
        object.__setattr__(self, "N", int(self.N))

    @property
    def nu1(self) -> float:
        return 1.0 - self.nu0

    @classmethod
    def diffusion_scaled(cls, params: ModelParams, N: int) -> "MoranParams":
        """Rates ``sigma/N`` and ``theta/N``; time must then be sped up by ``N``."""
        return cls(N, params.sigma / N, params.theta / N, params.nu0)

    def to_dict(self) -> dict:
        return {"N": self.N, "sigma_N": self.sigma_N, "theta_N": self.theta_N, "nu0": self.nu0}

    @classmethod
    def from_dict(cls, d: dict) -> "MoranParams":
        for key in ("N", "sigma_N", "theta_N", "nu0"):
            if key not in d:
                raise DomainError(f"MoranParams: missing key {key!r}")
        return cls(d["N"], d["sigma_N"], d["theta_N"], d["nu0"])


@dataclass(frozen=True)
class MoranState:
    N: int
    fit_count: int
    time: float = 0.0

    def __post_init__(self):
        if not 0 <= self.fit_count <= self.N:
            raise DomainError(f"fit_count {self.fit_count} outside [0, {self.N}]")

    @property
    def x(self) -> float:
        return self.fit_count / self.N


def fit_count_of(x0: float, N: int) -> int:
    """Index of ``x0`` in ``{0, 1/N, ..., 1}``; rejects values off the grid."""
    k = round(x0 * N)
    if not 0 <= k <= N or abs(k - x0 * N) > 1e-9 * max(N, 1):
        raise DomainError(f"x0={x0} is not of the form k/{N}")
    return int(k)


@njit(cache=True)
def _hypergeometric(N, marked, draws, rng):
    # sequential urn: number of marked items among `draws` taken without replacement
    h = 0
    left = N
    for _ in range(draws):
        if rng.random() * left < marked - h:
            h += 1
        left -= 1
    return h


@njit(cache=True)
def _env_jump(k, N, dp, rng):
    b = rng.binomial(k, dp)
    return k + _hypergeometric(N, N - k, b, rng)


@njit(cache=True)
def _moran_rates(k, N, s, th0, th1):
    x = k / N
    up = N * (1.0 + s) * x * (1.0 - x) + N * th0 * (1.0 - x)
    down = N * x * (1.0 - x) + N * th1 * x
    return up, down


@njit(cache=True)
def _moran_ensemble(k0, N, s, th0, th1, horizon, env_t, env_p, env_off, shared, obs, rng):
    n = k0.size
    n_obs = obs.size
    final = np.empty(n, dtype=np.int64)
    out = np.empty((n, n_obs), dtype=np.int64)
    for p in range(n):
        if shared:
            e = 0
            e1 = env_t.size
        else:
            e = env_off[p]
            e1 = env_off[p + 1]
        while e < e1 and env_t[e] <= 0.0:
            e += 1
        k = k0[p]
        t = 0.0
        o = 0
        while True:
            up, down = _moran_rates(k, N, s, th0, th1)
            total = up + down
            t_cand = t + rng.exponential(1.0 / total) if total > 0.0 else np.inf
            t_env = env_t[e] if e < e1 else np.inf
            t_next = min(t_cand, t_env)
            if t_next > horizon:
                break
            while o < n_obs and obs[o] < t_next:
                out[p, o] = k
                o += 1
            t = t_next
            if t_env <= t_cand:
                k = _env_jump(k, N, env_p[e], rng)
                e += 1
            elif rng.random() * total < up:
                k += 1
            else:
                k -= 1
            while o < n_obs and obs[o] <= t:
                out[p, o] = k
                o += 1
        while o < n_obs:
            out[p, o] = k
            o += 1
        final[p] = k
    return final, out


@njit(cache=True)
def _moran_record(k0, N, s, th0, th1, horizon, env_t, env_p, rng):
    ts = [0.0]
    ks = [k0]
    e = 0
    while e < env_t.size and env_t[e] <= 0.0:
        e += 1
    k = k0
    t = 0.0
    while True:
        up, down = _moran_rates(k, N, s, th0, th1)
        total = up + down
        t_cand = t + rng.exponential(1.0 / total) if total > 0.0 else np.inf
        t_env = env_t[e] if e < env_t.size else np.inf
        t_next = min(t_cand, t_env)
        if t_next > horizon:
            break
        t = t_next
        if t_env <= t_cand:
            k = _env_jump(k, N, env_p[e], rng)
            e += 1
        elif rng.random() * total < up:
            k += 1
        else:
            k -= 1
        ts.append(t)
        ks.append(k)
    return ts, ks


def moran_env_jump(state: MoranState, dp: float, rng) -> MoranState:
    """Binomial-hypergeometric update of the fit count at an environment jump."""
    if not 0.0 < dp < 1.0:
        raise DomainError(f"dp: {dp} outside (0, 1)")
    rng = as_generator(rng)
    k = state.fit_count
    b = rng.binomial(k, dp)
    h = rng.hypergeometric(state.N - k, k, b) if b > 0 else 0
    return MoranState(state.N, k + int(h), state.time)


def _check_env(omega: Environment, horizon: float) -> None:
    if not omega.is_forward:
        raise DomainError("the Moran model runs forward; pass a forward-oriented environment")
    if omega.horizon < horizon:
        raise DomainError(f"environment horizon {omega.horizon} shorter than run horizon {horizon}")


def moran_run(params: MoranParams, omega: Environment, x0: float, horizon: float, rng) -> PathSample:
    """One exact path of the frequency ``X_N``; jumps at ``t = 0`` are not applied."""
    _check_env(omega, horizon)
    k0 = fit_count_of(x0, params.N)
    ts, ks = _moran_record(k0, params.N, params.sigma_N, params.theta_N * params.nu0,
                           params.theta_N * params.nu1, float(horizon), omega.time_array(),
                           omega.peak_array(), as_generator(rng))
    return PathSample(np.asarray(ts), np.asarray(ks) / params.N, "t", "x")


def moran_terminal(params: MoranParams, x0: float, horizon: float, replicates: int, rng,
                   omega: Environment | None = None, env_batch=None, obs_times=None):
    """Fit frequencies at ``horizon`` (and at ``obs_times``) for independent paths.

    Pass ``omega`` to share one environment, or ``env_batch=(times, peaks,
    offsets)`` for one environment per path. Returns ``(final, values)``.
    """
    rng = as_generator(rng)
    k0 = np.full(replicates, fit_count_of(x0, params.N), dtype=np.int64)
    obs = np.asarray([] if obs_times is None else obs_times, dtype=float)
    if env_batch is not None:
        env_t, env_p, env_off = env_batch
        shared = False
    else:
        omega = omega if omega is not None else Environment(horizon)
        _check_env(omega, horizon)
        env_t, env_p = omega.time_array(), omega.peak_array()
        env_off = np.zeros(replicates + 1, dtype=np.int64)
        shared = True
    final, out = _moran_ensemble(k0, params.N, params.sigma_N, params.theta_N * params.nu0,
                                 params.theta_N * params.nu1, float(horizon), env_t, env_p,
                                 env_off, shared, obs, rng)
    return final / params.N, out / params.N


# ----------------------------------------------------------------------------
# individual-level coupling
# ----------------------------------------------------------------------------

@njit(cache=True)
def _coupled(k0, N, s, th0, th1, horizon, env_t, env_p, env_big, record, rng):
    # types: 0 fit, 1 unfit; model a sees every jump, model b only the big ones
    a = np.ones(N, dtype=np.int8)
    a[:k0] = 0
    b = a.copy()
    ka = k0
    kb = k0
    sup = 0
    zmax = 0
    ts = [0.0]
    xa = [k0]
    xb = [k0]
    r_neutral = N - 1.0
    r_sel = (N - 1.0) * s
    r_m0 = N * th0
    r_m1 = N * th1
    total = r_neutral + r_sel + r_m0 + r_m1
    perm = np.arange(N)
    u = np.empty(N)
    old_a = np.empty(N, dtype=np.int8)
    old_b = np.empty(N, dtype=np.int8)
    e = 0
    while e < env_t.size and env_t[e] <= 0.0:
        e += 1
    t = 0.0
    while True:
        t_cand = t + rng.exponential(1.0 / total) if total > 0.0 else np.inf
        t_env = env_t[e] if e < env_t.size else np.inf
        t_next = min(t_cand, t_env)
        if t_next > horizon:
            break
        t = t_next
        if t_env <= t_cand:
            p = env_p[e]
            big = env_big[e]
            e += 1
            old_a[:] = a
            old_b[:] = b
            for i in range(N):
                u[i] = rng.random()
            m = 0
            for i in range(N):
                if u[i] <= p:
                    m += 1
            # uniform injection of the m reproducing individuals into [N]
            for j in range(m):
                r = j + rng.integers(0, N - j)
                tmp = perm[j]
                perm[j] = perm[r]
                perm[r] = tmp
            j = 0
            for i in range(N):
                if u[i] <= p:
                    tgt = perm[j]
                    j += 1
                    if old_a[i] == 0:
                        a[tgt] = 0
                    if big and old_b[i] == 0:
                        b[tgt] = 0
            ka = 0
            kb = 0
            for i in range(N):
                if a[i] == 0:
                    ka += 1
                if b[i] == 0:
                    kb += 1
        else:
            w = rng.random() * total
            if w < r_neutral + r_sel:
                i = rng.integers(0, N)
                j = rng.integers(0, N - 1)
                if j >= i:
                    j += 1
                if w < r_neutral:
                    ka += a[j] - a[i]
                    kb += b[j] - b[i]
                    a[j] = a[i]
                    b[j] = b[i]
                else:
                    if a[i] == 0:
                        ka += a[j]
                        a[j] = 0
                    if b[i] == 0:
                        kb += b[j]
                        b[j] = 0
            else:
                i = rng.integers(0, N)
                typ = 0 if w < r_neutral + r_sel + r_m0 else 1
                ka += a[i] - typ
                kb += b[i] - typ
                a[i] = typ
                b[i] = typ
        d = abs(ka - kb)
        if d > sup:
            sup = d
        if record:
            z = 0
            for i in range(N):
                if a[i] != b[i]:
                    z += 1
            if z > zmax:
                zmax = z
            ts.append(t)
            xa.append(ka)
            xb.append(kb)
    return sup, zmax, ka, kb, ts, xa, xb


def moran_coupled_run(params: MoranParams, omega: Environment, delta: float, x0: float,
                      horizon: float, rng):
    """Couple the model in ``omega`` with the model in its jumps of size at least ``delta``.

    Both populations share arrows, mutations and, at common jumps, the
    individual uniforms and the offspring placement. Returns the two frequency
    paths and ``sup_t |X_N(omega, t) - X_N(omega^delta, t)|``.
    """
    if not 0.0 < delta < 1.0:
        raise DomainError(f"delta: {delta} outside (0, 1)")
    _check_env(omega, horizon)
    k0 = fit_count_of(x0, params.N)
    big = omega.peak_array() >= delta
    sup, _, _, _, ts, xa, xb = _coupled(k0, params.N, params.sigma_N, params.theta_N * params.nu0,
                                        params.theta_N * params.nu1, float(horizon),
                                        omega.time_array(), omega.peak_array(), big, True,
                                        as_generator(rng))
    t = np.asarray(ts)
    N = params.N
    return (PathSample(t, np.asarray(xa) / N, "t", "x"), PathSample(t, np.asarray(xb) / N, "t", "x"),
            sup / N)


def coupled_sup_discrepancies(params: MoranParams, omega: Environment, delta: float, x0: float,
                              horizon: float, replicates: int, rng) -> np.ndarray:
    """``sup |X_N(omega) - X_N(omega^delta)|`` over independent coupled replicates."""
    if not 0.0 < delta < 1.0:
        raise DomainError(f"delta: {delta} outside (0, 1)")
    _check_env(omega, horizon)
    rng = as_generator(rng)
    k0 = fit_count_of(x0, params.N)
    big = omega.peak_array() >= delta
    out = np.empty(replicates)
    for r in range(replicates):
        sup, *_ = _coupled(k0, params.N, params.sigma_N, params.theta_N * params.nu0,
                           params.theta_N * params.nu1, float(horizon), omega.time_array(),
                           omega.peak_array(), big, False, rng)
        out[r] = sup / params.N
    return out


def individual_terminal(params: MoranParams, omega: Environment, x0: float, horizon: float,
                        replicates: int, rng) -> np.ndarray:
    """Fit frequencies at ``horizon`` from the individual-level backend."""
    _check_env(omega, horizon)
    rng = as_generator(rng)
    k0 = fit_count_of(x0, params.N)
    big = np.ones(omega.n_jumps, dtype=np.bool_)
    out = np.empty(replicates)
    for r in range(replicates):
        _, _, ka, _, _, _, _ = _coupled(k0, params.N, params.sigma_N, params.theta_N * params.nu0,
                                        params.theta_N * params.nu1, float(horizon),
                                        omega.time_array(), omega.peak_array(), big, False, rng)
        out[r] = ka / params.N
    return out


def coupling_bound(omega: Environment, delta: float, sigma_N: float, horizon: float) -> float:
    """``omega_delta(T) exp((1 + sigma_N) T + omega(T))``."""
    _, small = env_split(omega, delta)
    return small.omega(horizon) * math.exp((1.0 + sigma_N) * horizon + omega.omega(horizon))
