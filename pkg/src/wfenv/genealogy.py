"""Line-counting processes of the ancestral graphs.

Three continuous-time chains are simulated here, all in backward time ``beta``:

``R``  the killed ASG. States ``0, 1, 2, ...`` and the cemetery ``DAGGER``.
``L``  the pruned lookdown ASG. States ``1, 2, ...``.
``D``  the Siegmund dual of ``L``. States ``1, 2, ...``, ``DAGGER`` and an
       overflow state standing for "beyond the cap", which is treated as
       absorbing. ``D`` is explosive, so overflow plays the role of ``+inf``.

Environmental branching in the annealed chains picks an atom with probability
proportional to ``c_a (1 - (1 - p_a)^m)`` and then draws ``k ~ Bin(m, p_a)``
conditioned on ``k >= 1``. In the quenched chains each jump ``dp`` of the
reversed environment adds ``Bin(value, dp)`` lines.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numba import njit

from .errors import DomainError, StateCapError
from .model import BACKWARD, Environment, LevyMeasure, ModelParams, SigmaTable, as_generator
from .records import DAGGER, PathSample

KINDS = {"R": 0, "L": 1, "D": 2}
DEFAULT_CAP = 10_000
DEFAULT_D_CAP = 256

_END = 2
_ENV = 1
_EVENT = 0


# ----------------------------------------------------------------------------
# rate maps
# ----------------------------------------------------------------------------

def _table_for(table_or_mu, m: int) -> SigmaTable:
    if isinstance(table_or_mu, SigmaTable):
        if not table_or_mu.covers(m):
            raise StateCapError(f"state {m} beyond sigma table range {table_or_mu.m_max}")
        return table_or_mu
    if isinstance(table_or_mu, LevyMeasure):
        return SigmaTable(table_or_mu, max(m, 1))
    raise DomainError("expected a SigmaTable or LevyMeasure")


def _add(rates: dict, j, r: float) -> None:
    if r > 0.0:
        rates[j] = rates.get(j, 0.0) + r


def killed_asg_rates(i: int, params: ModelParams, sigma_table) -> dict:
    """Positive jump rates of ``R`` out of ``i >= 1``; the cemetery is keyed ``DAGGER``."""
    if i < 1:
        raise DomainError("killed_asg_rates: need i >= 1")
    tab = _table_for(sigma_table, i)
    rates: dict = {}
    _add(rates, i - 1, i * (i - 1) + i * params.theta1)
    _add(rates, i + 1, i * params.sigma)
    for k in range(1, i + 1):
        _add(rates, i + k, float(tab.weighted[i, k]))
    _add(rates, DAGGER, i * params.theta0)
    return rates


def pruned_ldasg_rates(i: int, params: ModelParams, sigma_table) -> dict:
    """Positive jump rates of ``L`` out of ``i >= 1``."""
    if i < 1:
        raise DomainError("pruned_ldasg_rates: need i >= 1")
    tab = _table_for(sigma_table, i)
    rates: dict = {}
    if i >= 2:
        _add(rates, i - 1, i * (i - 1) + (i - 1) * params.theta1 + params.theta0)
        for j in range(1, i - 1):
            _add(rates, j, params.theta0)
    _add(rates, i + 1, i * params.sigma)
    for k in range(1, i + 1):
        _add(rates, i + k, float(tab.weighted[i, k]))
    return rates


def siegmund_rates(i: int, params: ModelParams, sigma_table) -> dict:
    """Positive jump rates of ``D`` out of ``i >= 1``.

    Downward environmental moves ``i -> j`` (``1 <= j <= i-1``) occur at rate
    ``gamma_{i,j} - gamma_{i,j-1}``; the selective part of ``i -> i-1`` is
    ``(i-1) sigma``.
    """
    if i < 1:
        raise DomainError("siegmund_rates: need i >= 1")
    rates: dict = {}
    if i == 1:
        return rates
    tab = _table_for(sigma_table, i - 1)
    _add(rates, i - 1, (i - 1) * params.sigma)
    prev = 0.0
    for j in range(1, i):
        g = tab.gamma(i, j)
        _add(rates, j, g - prev)
        prev = g
    _add(rates, i + 1, (i - 1) * params.theta1 + i * (i - 1))
    _add(rates, DAGGER, (i - 1) * params.theta0)
    return rates


def diagonal(kind: str, i: int, params: ModelParams, sigma_table) -> float:
    """Closed-form diagonal entry ``Q[i, i]`` of each chain."""
    s, th = params.sigma, params.theta
    if kind == "R":
        return -i * (i - 1 + th + s) - _table_for(sigma_table, i).lam(i)
    if kind == "L":
        return -(i - 1) * (i + th) - i * s - _table_for(sigma_table, i).lam(i)
    if kind == "D":
        if i == 1:
            return 0.0
        lam = _table_for(sigma_table, i - 1).lam(i - 1)
        return -(i - 1) * (s + th + i) - lam
    raise DomainError(f"unknown chain kind {kind!r}")


def rate_map(kind: str, i: int, params: ModelParams, sigma_table) -> dict:
    return {"R": killed_asg_rates, "L": pruned_ldasg_rates,
            "D": siegmund_rates}[kind](i, params, sigma_table)


def generator_matrix(kind: str, params: ModelParams, mu: LevyMeasure, size: int) -> tuple[np.ndarray, list]:
    """Dense generator on a truncated state space, for oracles.

    Returns ``(Q, states)``. Moves leaving the truncated range are kept on the
    diagonal, so rows sum to minus the mass lost to truncation. For ``R`` the
    states are ``0..size`` then ``DAGGER``; for ``L`` and ``D`` they are
    ``1..size`` (``D`` adds ``DAGGER``).
    """
    if kind == "R":
        states = list(range(size + 1)) + [DAGGER]
    elif kind == "L":
        states = list(range(1, size + 1))
    elif kind == "D":
        states = list(range(1, size + 1)) + [DAGGER]
    else:
        raise DomainError(f"unknown chain kind {kind!r}")
    index = {s: a for a, s in enumerate(states)}
    tab = SigmaTable(mu, max(size, 1))
    Q = np.zeros((len(states), len(states)))
    for s in states:
        if s == DAGGER or (kind == "R" and s == 0):
            continue
        a = index[s]
        rates = rate_map(kind, s, params, tab)
        for j, r in rates.items():
            Q[a, a] -= r
            if j in index:
                Q[a, index[j]] += r
    return Q, states


# ----------------------------------------------------------------------------
# numba kernels
# ----------------------------------------------------------------------------

@njit(cache=True)
def _binom_at_least_one(m, p, rng):
    # position of the first success given at least one, then the rest freely
    tot = -math.expm1(m * math.log1p(-p))
    u = rng.random()
    j = int(math.ceil(math.log1p(-u * tot) / math.log1p(-p)))
    if j < 1:
        j = 1
    elif j > m:
        j = m
    if m - j > 0:
        return 1 + rng.binomial(m - j, p)
    return 1


@njit(cache=True)
def _env_total(i, masses, peaks):
    tot = 0.0
    for a in range(masses.size):
        tot += masses[a] * (-math.expm1(i * math.log1p(-peaks[a])))
    return tot


@njit(cache=True)
def _env_branch(i, masses, peaks, lam, rng):
    u = rng.random() * lam
    acc = 0.0
    a = masses.size - 1
    for b in range(masses.size):
        acc += masses[b] * (-math.expm1(i * math.log1p(-peaks[b])))
        if u < acc:
            a = b
            break
    return _binom_at_least_one(i, peaks[a], rng)


@njit(cache=True)
def _total_rate(kind, i, cap, sigma, th0, th1, masses, peaks, gtab):
    if i == -1 or i > cap:
        return 0.0
    if kind == 0:
        if i == 0:
            return 0.0
        return i * (i - 1) + i * th1 + i * sigma + i * th0 + _env_total(i, masses, peaks)
    if kind == 1:
        r = i * sigma + _env_total(i, masses, peaks)
        if i >= 2:
            r += i * (i - 1) + (i - 1) * th1 + (i - 1) * th0
        return r
    if i <= 1:
        return 0.0
    return (i - 1) * sigma + gtab[i, i - 1] + (i - 1) * th1 + i * (i - 1) + (i - 1) * th0


@njit(cache=True)
def _pick(kind, i, total, sigma, th0, th1, masses, peaks, gtab, rng):
    u = rng.random() * total
    if kind == 0:
        r = i * (i - 1) + i * th1
        if u < r:
            return i - 1
        u -= r
        r = i * sigma
        if u < r:
            return i + 1
        u -= r
        r = i * th0
        if u < r:
            return -1
        return i + _env_branch(i, masses, peaks, _env_total(i, masses, peaks), rng)
    if kind == 1:
        if i >= 2:
            r = i * (i - 1) + (i - 1) * th1 + th0
            if u < r:
                return i - 1
            u -= r
            r = (i - 2) * th0
            if u < r:
                return min(1 + int(u / th0), i - 2)
            u -= r
        r = i * sigma
        if u < r:
            return i + 1
        lam = _env_total(i, masses, peaks)
        return i + _env_branch(i, masses, peaks, lam, rng)
    # Siegmund dual
    r = (i - 1) * th1 + i * (i - 1)
    if u < r:
        return i + 1
    u -= r
    r = (i - 1) * th0
    if u < r:
        return -1
    u -= r
    r = (i - 1) * sigma
    if u < r:
        return i - 1
    u -= r
    # environmental drop: P(j) proportional to gamma_{i,j} - gamma_{i,j-1}
    for j in range(1, i):
        if u < gtab[i, j]:
            return j
    return i - 1


@njit(cache=True)
def _step(kind, i, t, t_env, horizon, cap, sigma, th0, th1, masses, peaks, gtab, rng):
    """Advance to the next event; returns (time, state, flag)."""
    total = _total_rate(kind, i, cap, sigma, th0, th1, masses, peaks, gtab)
    if total > 0.0:
        t_cand = t + rng.exponential(1.0 / total)
    else:
        t_cand = np.inf
    t_next = min(t_cand, t_env)
    if t_next >= horizon:
        return min(t_next, horizon), i, _END
    if t_env <= t_cand:
        return t_env, i, _ENV
    return t_cand, _pick(kind, i, total, sigma, th0, th1, masses, peaks, gtab, rng), _EVENT


@njit(cache=True)
def _chain_ensemble(kind, starts, horizon, obs, sigma, th0, th1, masses, peaks, gtab,
                    env_t, env_p, env_off, shared, cap, absorb_overflow, rng):
    n = starts.size
    n_obs = obs.size
    out = np.empty((n, n_obs), dtype=np.int64)
    final = np.empty(n, dtype=np.int64)
    final_t = np.empty(n)
    for p in range(n):
        if shared:
            e0 = 0
            e1 = env_t.size
        else:
            e0 = env_off[p]
            e1 = env_off[p + 1]
        e = e0
        i = starts[p]
        t = 0.0
        o = 0
        while True:
            t_env = env_t[e] if e < e1 else np.inf
            t_new, i_new, flag = _step(kind, i, t, t_env, horizon, cap, sigma, th0, th1,
                                       masses, peaks, gtab, rng)
            while o < n_obs and obs[o] <= t_new:
                out[p, o] = i
                o += 1
            if flag == _END:
                stuck = _total_rate(kind, i, cap, sigma, th0, th1, masses, peaks, gtab) == 0.0
                if stuck and (e >= e1 or i < 1 or i > cap):
                    final_t[p] = t
                else:
                    final_t[p] = t_new
                break
            t = t_new
            if flag == _ENV:
                if i >= 1 and i <= cap:
                    i = i + rng.binomial(i, env_p[e])
                e += 1
            else:
                i = i_new
            if i > cap:
                if absorb_overflow:
                    i = cap + 1
                else:
                    final[p] = i
                    return out, final, final_t, p + 1
        while o < n_obs:
            out[p, o] = i
            o += 1
        final[p] = i
    return out, final, final_t, 0


@njit(cache=True)
def _chain_record(kind, start, horizon, sigma, th0, th1, masses, peaks, gtab,
                  env_t, env_p, cap, absorb_overflow, rng):
    ts = [0.0]
    vs = [start]
    i = start
    t = 0.0
    e = 0
    status = 0
    while True:
        t_env = env_t[e] if e < env_t.size else np.inf
        t_new, i_new, flag = _step(kind, i, t, t_env, horizon, cap, sigma, th0, th1,
                                   masses, peaks, gtab, rng)
        if flag == _END:
            break
        t = t_new
        if flag == _ENV:
            if i >= 1 and i <= cap:
                i = i + rng.binomial(i, env_p[e])
            e += 1
        else:
            i = i_new
        if i > cap:
            if absorb_overflow:
                i = cap + 1
            else:
                status = 1
        ts.append(t)
        vs.append(i)
        if status:
            break
    return ts, vs, status


# ----------------------------------------------------------------------------
# public simulators
# ----------------------------------------------------------------------------

@dataclass(frozen=True)
class ChainEnsemble:
    """Replicates of a chain: states at observation times and at the end.

    ``final_time`` is the absorption time when the chain was absorbed before
    the horizon (and ``horizon`` otherwise). ``overflow`` is the value used for
    ``D`` paths that exceeded the cap.
    """

    kind: str
    obs_times: np.ndarray
    values: np.ndarray
    final: np.ndarray
    final_time: np.ndarray
    overflow: int

    def absorption_summary(self) -> dict:
        f = self.final
        if self.kind == "R":
            zero = int(np.sum(f == 0))
            dead = int(np.sum(f == DAGGER))
        elif self.kind == "D":
            zero = int(np.sum(f == 1))
            dead = int(np.sum(f == DAGGER))
        else:
            zero, dead = 0, 0
        return {"absorbed_at_0": zero, "absorbed_at_dagger": dead, "alive": int(f.size - zero - dead)}


def _atoms(mu) -> tuple[np.ndarray, np.ndarray]:
    if isinstance(mu, SigmaTable):
        mu = mu.mu
    if mu is None:
        return np.zeros(0), np.zeros(0)
    return mu.masses, mu.peaks


def _mu_of(table_or_mu) -> LevyMeasure:
    if isinstance(table_or_mu, SigmaTable):
        return table_or_mu.mu
    if table_or_mu is None:
        return LevyMeasure()
    return table_or_mu


def _gtab(kind: int, mu: LevyMeasure, cap: int) -> np.ndarray:
    if kind != 2:
        return np.zeros((1, 1))
    G = SigmaTable(mu, cap).gamma_table(cap)
    # the sampler walks cumulative gamma values, so store them directly
    return G


def _check_start(kind: str, start: int) -> None:
    if kind == "L" and start < 1:
        raise DomainError("L starts from a positive number of lines")
    if kind in ("R", "D") and start < 0 and start != DAGGER:
        raise DomainError(f"{kind}: invalid start state {start}")
    if kind == "D" and start == 0:
        raise DomainError("D lives on {1, 2, ...} and the cemetery")


def _resolve_cap(kind: str, cap):
    if cap is None:
        cap = DEFAULT_D_CAP if kind == "D" else DEFAULT_CAP
    return int(cap)


def chain_run_annealed(kind: str, start: int, horizon: float, params: ModelParams,
                       sigma_table, rng, cap: int | None = None) -> PathSample:
    """One annealed path of ``R``, ``L`` or ``D`` (Gillespie)."""
    if kind not in KINDS:
        raise DomainError(f"unknown chain kind {kind!r}")
    _check_start(kind, start)
    cap = _resolve_cap(kind, cap)
    mu = _mu_of(sigma_table)
    masses, peaks = _atoms(mu)
    k = KINDS[kind]
    ts, vs, status = _chain_record(k, int(start), float(horizon), params.sigma, params.theta0,
                                   params.theta1, masses, peaks, _gtab(k, mu, cap),
                                   np.zeros(0), np.zeros(0), cap, kind == "D", as_generator(rng))
    if status:
        raise StateCapError(f"{kind} exceeded the state cap {cap}")
    return PathSample(np.asarray(ts), np.asarray(vs, dtype=np.int64), "beta", "value")


def chain_run_quenched(kind: str, start: int, omega_reversed: Environment, horizon: float,
                       params: ModelParams, rng, cap: int | None = None) -> PathSample:
    """One quenched path of ``R`` or ``L`` through a backward-oriented environment.

    Jumps at backward times ``beta < horizon`` are applied; one at ``beta = 0``
    acts on the initial lines.
    """
    if kind not in ("R", "L"):
        raise DomainError("quenched chains are R or L")
    if omega_reversed.orientation != BACKWARD:
        raise DomainError("chain_run_quenched needs a backward-oriented environment (env_reverse)")
    _check_start(kind, start)
    cap = _resolve_cap(kind, cap)
    k = KINDS[kind]
    ts, vs, status = _chain_record(k, int(start), float(horizon), params.sigma, params.theta0,
                                   params.theta1, np.zeros(0), np.zeros(0), np.zeros((1, 1)),
                                   omega_reversed.time_array(), omega_reversed.peak_array(),
                                   cap, False, as_generator(rng))
    if status:
        raise StateCapError(f"{kind} exceeded the state cap {cap}")
    return PathSample(np.asarray(ts), np.asarray(vs, dtype=np.int64), "beta", "value")


def chain_ensemble(kind: str, starts, horizon: float, params: ModelParams, rng,
                   mu=None, env=None, obs_times=None, cap: int | None = None,
                   env_batch=None) -> ChainEnsemble:
    """Many independent paths.

    ``starts`` is an int or an array of start states (one per path). Supply
    ``mu`` for the annealed chain, or ``env`` for the quenched one: either a
    single backward ``Environment`` shared by all paths or a list of them, one
    per path. ``env_batch=(times, peaks, offsets)`` gives one backward
    environment per path in flat form (see ``reverse_batch``). ``horizon``
    may be ``inf`` for chains that are absorbed a.s.
    """
    if kind not in KINDS:
        raise DomainError(f"unknown chain kind {kind!r}")
    if mu is not None and env is not None:
        raise DomainError("give either mu (annealed) or env (quenched), not both")
    starts = np.atleast_1d(np.asarray(starts, dtype=np.int64))
    for s in np.unique(starts):
        _check_start(kind, int(s))
    cap = _resolve_cap(kind, cap)
    obs = np.asarray([] if obs_times is None else obs_times, dtype=float)
    if obs.size and (np.any(np.diff(obs) < 0) or obs[-1] > horizon):
        raise DomainError("obs_times must be sorted and within the horizon")
    k = KINDS[kind]
    shared = True
    env_t = np.zeros(0)
    env_p = np.zeros(0)
    env_off = np.zeros(starts.size + 1, dtype=np.int64)
    if env is not None:
        if kind == "D":
            raise DomainError("the Siegmund dual is simulated annealed only")
        envs = [env] if isinstance(env, Environment) else list(env)
        for e in envs:
            if e.orientation != BACKWARD:
                raise DomainError("quenched chains need backward-oriented environments (env_reverse)")
        if len(envs) == 1:
            env_t, env_p = envs[0].time_array(), envs[0].peak_array()
        else:
            if len(envs) != starts.size:
                if starts.size == 1:
                    starts = np.full(len(envs), starts[0], dtype=np.int64)
                else:
                    raise DomainError("one environment per path is required")
            shared = False
            counts = np.array([e.n_jumps for e in envs], dtype=np.int64)
            env_off = np.concatenate([[0], np.cumsum(counts)]).astype(np.int64)
            env_t = np.concatenate([e.time_array() for e in envs]) if counts.sum() else np.zeros(0)
            env_p = np.concatenate([e.peak_array() for e in envs]) if counts.sum() else np.zeros(0)
    if env_batch is not None:
        if env is not None or mu is not None or kind == "D":
            raise DomainError("env_batch excludes mu and env, and needs kind R or L")
        env_t, env_p, env_off = (np.asarray(a) for a in env_batch)
        if starts.size == 1:
            starts = np.full(env_off.size - 1, starts[0], dtype=np.int64)
        if env_off.size != starts.size + 1:
            raise DomainError("env_batch: one environment per path is required")
        env_off = env_off.astype(np.int64)
        shared = False
    mu_ = _mu_of(mu)
    masses, peaks = _atoms(mu_)
    out, final, final_t, failed = _chain_ensemble(
        k, starts, float(horizon), obs, params.sigma, params.theta0, params.theta1,
        masses, peaks, _gtab(k, mu_, cap), env_t, env_p, env_off, shared, cap,
        kind == "D", as_generator(rng))
    if failed:
        raise StateCapError(f"{kind} exceeded the state cap {cap} (path {failed - 1})")
    return ChainEnsemble(kind, obs, out, final, final_t, cap + 1)


def reverse_batch(times: np.ndarray, peaks: np.ndarray, offsets: np.ndarray,
                  horizon: float) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Time-reverse a flat batch of forward environments (``beta = horizon - t``)."""
    times = np.asarray(times, dtype=float)
    peaks = np.asarray(peaks, dtype=float)
    offsets = np.asarray(offsets, dtype=np.int64)
    owner = np.repeat(np.arange(offsets.size - 1), np.diff(offsets))
    beta = horizon - times
    order = np.lexsort((beta, owner))
    return beta[order], peaks[order], offsets.copy()


def sample_env_branching(mu: LevyMeasure, m: int, size: int, rng, method: str = "atom") -> np.ndarray:
    """Draw ``size`` environmental branching sizes ``k`` from ``m`` lines.

    ``method="atom"`` uses the atom-then-conditioned-binomial sampler of the
    simulators; ``method="channel"`` samples ``k`` directly from the channel
    rates ``C(m,k) sigma_{m,k}``. The two laws coincide.
    """
    rng = as_generator(rng)
    if mu.is_null:
        raise DomainError("no environmental branching without atoms")
    if method == "channel":
        w = SigmaTable(mu, m).weighted[m, 1:m + 1]
        return 1 + rng.choice(m, size=size, p=w / w.sum())
    if method == "atom":
        return _atom_draws(m, mu.masses, mu.peaks, size, rng)
    raise DomainError(f"unknown method {method!r}")


@njit(cache=True)
def _atom_draws(m, masses, peaks, size, rng):
    out = np.empty(size, dtype=np.int64)
    lam = _env_total(m, masses, peaks)
    for s in range(size):
        out[s] = _env_branch(m, masses, peaks, lam, rng)
    return out
