"""Monte Carlo checks of the duality relations and of the deterministic solvers.

Each check estimates two quantities that should coincide, one per side,
from independent random streams, and reports a z-statistic. The default rule
passes a cell when ``|z| <= 3``. Bound checks (the coupling experiment) use the
one-sided rule ``estimate <= bound + 3 SE``.

Streams are derived from a single integer seed as ``stream(seed, side, cell)``
with ``side`` 0 for the forward (or left) estimate and 1 for the backward (or
right) one, so every report is reproducible from its seed and config.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .diffusion import DiffusionConfig, diffusion_ensemble
from .errors import DomainError
from .genealogy import chain_ensemble, reverse_batch
from .model import (Environment, LevyMeasure, ModelParams, env_reverse, env_sample_batch,
                    stream)
from .moran import MoranParams, coupled_sup_discrepancies, coupling_bound, moran_terminal
from .records import DAGGER, MomentEstimate, estimate, z_score
from .recursions import h_series, solve_fearnhead, solve_wn
from .spectral import KILLED, build_decomposition, mixed_env_moments

CHECK_DT = 2e-3
Z_LIMIT = 3.0
TWO_SIDED = "two-sided"
UPPER = "upper"


@dataclass(frozen=True)
class DualityReport:
    lhs: MomentEstimate
    rhs: MomentEstimate
    z: float
    passed: bool
    seeds: dict
    config: dict
    rule: str = TWO_SIDED
    note: str = ""

    def to_dict(self) -> dict:
        d = {"lhs": self.lhs.to_dict(), "rhs": self.rhs.to_dict(), "z": self.z, "pass": self.passed,
             "seeds": self.seeds, "config": self.config, "rule": self.rule}
        if self.note:
            d["note"] = self.note
        return d


def _report(lhs: MomentEstimate, rhs: MomentEstimate, seeds: dict, config: dict,
            rule: str = TWO_SIDED, note: str = "") -> DualityReport:
    z = z_score(lhs, rhs)
    if rule == TWO_SIDED:
        passed = abs(z) <= Z_LIMIT
    else:
        passed = z <= Z_LIMIT
    return DualityReport(lhs, rhs, z, bool(passed), seeds, config, rule, note)


def _exact(value: float, tag: str = "solver") -> MomentEstimate:
    return MomentEstimate(float(value), 0.0, 0, tag)


def pass_fraction(reports) -> float:
    reports = list(reports)
    if not reports:
        raise DomainError("pass_fraction: no reports")
    return sum(r.passed for r in reports) / len(reports)


def dual_power(R: np.ndarray, x: float) -> np.ndarray:
    """``(1 - x)^R`` with ``(1 - x)^dagger = 0``."""
    R = np.asarray(R)
    alive = R != DAGGER
    out = np.zeros(R.shape)
    out[alive] = (1.0 - x) ** R[alive]
    return out


def _check_nx(ns, xs):
    for n in ns:
        if int(n) != n or n < 1:
            raise DomainError(f"n: must be a positive integer, got {n}")
    for x in xs:
        if not 0.0 <= x <= 1.0:
            raise DomainError(f"x: {x} outside [0, 1]")


# ----------------------------------------------------------------------------
# moment duality
# ----------------------------------------------------------------------------

def annealed_grid(params: ModelParams, mu: LevyMeasure | None, ns, xs, T: float, replicates: int,
                  seed: int, dt: float = CHECK_DT) -> list[DualityReport]:
    """Annealed duality on an ``n x x`` grid.

    One forward ensemble per ``x`` serves every ``n`` and one backward
    ensemble per ``n`` serves every ``x``; cells within a row or column share
    randomness, cells on different sides never do.
    """
    _check_nx(ns, xs)
    mu = mu if mu is not None else LevyMeasure()
    cfg = DiffusionConfig(params, dt=dt, horizon=T)
    fwd = {}
    for ix, x in enumerate(xs):
        fwd[x] = diffusion_ensemble(cfg, x, replicates, stream(seed, 0, ix), mu=mu).final
    bwd = {}
    for i_n, n in enumerate(ns):
        bwd[n] = chain_ensemble("R", np.full(replicates, n), T, params, stream(seed, 1, i_n), mu=mu).final
    out = []
    for ix, x in enumerate(xs):
        for i_n, n in enumerate(ns):
            lhs = estimate((1.0 - fwd[x]) ** n, "forward-X")
            rhs = estimate(dual_power(bwd[n], x), "backward-R")
            config = {"check": "annealed", "params": params.to_dict(), "mu": mu.to_dict(), "n": n,
                      "x": x, "T": T, "replicates": replicates, "dt": dt}
            seeds = {"seed": seed, "lhs_stream": [0, ix], "rhs_stream": [1, i_n]}
            out.append(_report(lhs, rhs, seeds, config))
    return out


def duality_check_annealed(params: ModelParams, mu: LevyMeasure | None, n: int, x: float, T: float,
                           replicates: int, seed: int, dt: float = CHECK_DT) -> DualityReport:
    """``E[(1 - X(T))^n | x]`` against ``E[(1 - x)^R(T) | n]``, annealed."""
    return annealed_grid(params, mu, [n], [x], T, replicates, seed, dt)[0]


def quenched_grid(params: ModelParams, omega: Environment, ns, xs, T: float, replicates: int,
                  seed: int, dt: float = CHECK_DT) -> list[DualityReport]:
    """Quenched duality in the forward environment ``omega`` over ``[0, T]``.

    The backward chain runs in the reversal of ``omega`` restricted to
    ``(0, T]``; a jump at ``T`` itself acts on the initial lines.
    """
    _check_nx(ns, xs)
    if not omega.is_forward:
        raise DomainError("omega: pass the forward environment")
    if omega.horizon < T:
        raise DomainError(f"environment horizon {omega.horizon} shorter than T={T}")
    window = omega.restricted(0.0, T)
    back = env_reverse(window)
    cfg = DiffusionConfig(params, dt=dt, horizon=T)
    fwd = {}
    for ix, x in enumerate(xs):
        fwd[x] = diffusion_ensemble(cfg, x, replicates, stream(seed, 0, ix), omega=window).final
    bwd = {}
    for i_n, n in enumerate(ns):
        bwd[n] = chain_ensemble("R", np.full(replicates, n), T, params, stream(seed, 1, i_n), env=back).final
    out = []
    for ix, x in enumerate(xs):
        for i_n, n in enumerate(ns):
            lhs = estimate((1.0 - fwd[x]) ** n, "forward-X")
            rhs = estimate(dual_power(bwd[n], x), "backward-R")
            config = {"check": "quenched", "params": params.to_dict(), "omega": window.to_dict(),
                      "n": n, "x": x, "T": T, "replicates": replicates, "dt": dt}
            seeds = {"seed": seed, "lhs_stream": [0, ix], "rhs_stream": [1, i_n]}
            out.append(_report(lhs, rhs, seeds, config))
    return out


def duality_check_quenched(params: ModelParams, omega: Environment, n: int, x: float, T: float,
                           replicates: int, seed: int, dt: float = CHECK_DT) -> DualityReport:
    """``E^omega[(1 - X(T))^n | x]`` against the quenched killed chain in the reversed environment."""
    return quenched_grid(params, omega, [n], [x], T, replicates, seed, dt)[0]


def reinforced_duality_check(params: ModelParams, mu: LevyMeasure, n: int, x: float, T: float,
                             edges, replicates: int, seed: int,
                             dt: float = CHECK_DT) -> list[DualityReport]:
    """Moment duality weighted by indicators of ``J(T)`` falling in each bin.

    Bins are ``[edges[i], edges[i+1])``. Indicators stand in for smooth test
    functions of the total environmental increment, so this is partial
    coverage of the weighted relation only.
    """
    _check_nx([n], [x])
    edges = np.asarray(edges, dtype=float)
    if edges.size < 2 or np.any(np.diff(edges) <= 0):
        raise DomainError("edges: need at least two increasing values")
    cfg = DiffusionConfig(params, dt=dt, horizon=T)
    fwd = diffusion_ensemble(cfg, x, replicates, stream(seed, 0, 0), mu=mu)
    t, p, off = env_sample_batch(mu, T, replicates, stream(seed, 1, 1))
    bt, bp, boff = reverse_batch(t, p, off, T)
    owner = np.repeat(np.arange(replicates), np.diff(off))
    jb = np.bincount(owner, weights=p, minlength=replicates)
    R = chain_ensemble("R", np.full(replicates, n), T, params, stream(seed, 1, 0),
                       env_batch=(bt, bp, boff)).final
    dual = dual_power(R, x)
    out = []
    for b in range(edges.size - 1):
        lo, hi = edges[b], edges[b + 1]
        in_f = (fwd.jump_total >= lo) & (fwd.jump_total < hi)
        in_b = (jb >= lo) & (jb < hi)
        lhs = estimate((1.0 - fwd.final) ** n * in_f, "forward-X")
        rhs = estimate(dual * in_b, "backward-R")
        config = {"check": "reinforced", "params": params.to_dict(), "mu": mu.to_dict(), "n": n,
                  "x": x, "T": T, "bin": [float(lo), float(hi)], "replicates": replicates, "dt": dt}
        seeds = {"seed": seed, "lhs_stream": [0, 0], "rhs_stream": [1, 0], "env_stream": [1, 1]}
        out.append(_report(lhs, rhs, seeds, config, note="binned-indicator surrogate for smooth f"))
    return out


# ----------------------------------------------------------------------------
# ancestral type distribution
# ----------------------------------------------------------------------------

def _default_long_horizon(params: ModelParams) -> float:
    if params.theta0 <= 0:
        raise DomainError("a long-run horizon needs theta * nu0 > 0")
    return max(20.0, 12.0 / params.theta0)


def ancestral_check(params: ModelParams, mu: LevyMeasure | None, x: float, T: float | None,
                    replicates: int, seed: int, dt: float = CHECK_DT, K: int = 64) -> DualityReport:
    """Ancestral type distribution from the pruned lookdown chain.

    With ``theta = 0`` the forward mean ``E[X(T) | x]`` is compared with
    ``1 - E[(1 - x)^L(T) | L(0) = 1]``. Otherwise the chain at a long horizon
    (default ``max(20, 12 / (theta nu0))``) is compared with the series built
    from the solved tails ``a_n``.
    """
    _check_nx([1], [x])
    mu = mu if mu is not None else LevyMeasure()
    if params.theta == 0:
        if T is None:
            raise DomainError("T is required when theta = 0")
        cfg = DiffusionConfig(params, dt=dt, horizon=T)
        X = diffusion_ensemble(cfg, x, replicates, stream(seed, 0, 0), mu=mu).final
        L = chain_ensemble("L", np.ones(replicates, dtype=np.int64), T, params, stream(seed, 1, 0), mu=mu).final
        lhs = estimate(X, "forward-X")
        rhs = estimate(1.0 - (1.0 - x) ** L, "backward-L")
        seeds = {"seed": seed, "lhs_stream": [0, 0], "rhs_stream": [1, 0]}
    else:
        T = _default_long_horizon(params) if T is None else T
        L = chain_ensemble("L", np.ones(replicates, dtype=np.int64), T, params, stream(seed, 0, 0), mu=mu).final
        lhs = estimate(1.0 - (1.0 - x) ** L, "backward-L")
        a = solve_fearnhead(params, mu, K=K)
        rhs = _exact(h_series(a, x))
        seeds = {"seed": seed, "lhs_stream": [0, 0]}
    config = {"check": "ancestral", "params": params.to_dict(), "mu": mu.to_dict(), "x": x, "T": T,
              "replicates": replicates, "dt": dt}
    return _report(lhs, rhs, seeds, config)


def fearnhead_check(params: ModelParams, mu: LevyMeasure | None, ns, replicates: int, seed: int,
                    horizon: float | None = None, K: int = 64) -> list[DualityReport]:
    """Tails ``P(L > n)`` of the chain started from 1 at a long horizon against the solved ``a_n``."""
    mu = mu if mu is not None else LevyMeasure()
    H = _default_long_horizon(params) if horizon is None else horizon
    L = chain_ensemble("L", np.ones(replicates, dtype=np.int64), H, params, stream(seed, 0, 0), mu=mu).final
    a = solve_fearnhead(params, mu, K=K)
    out = []
    for n in ns:
        lhs = estimate(L > n, "backward-L")
        rhs = _exact(a.values[n])
        config = {"check": "fearnhead", "params": params.to_dict(), "mu": mu.to_dict(), "n": int(n),
                  "horizon": H, "replicates": replicates, "K": K}
        out.append(_report(lhs, rhs, {"seed": seed, "lhs_stream": [0, 0]}, config))
    return out


def absorption_check(params: ModelParams, mu: LevyMeasure | None, ns, replicates: int, seed: int,
                     K: int = 64) -> list[DualityReport]:
    """Frequency of absorption of the killed chain at 0 from ``n`` against the solved ``w_n``."""
    mu = mu if mu is not None else LevyMeasure()
    w = solve_wn(params, mu, K=K)
    out = []
    for i_n, n in enumerate(ns):
        R = chain_ensemble("R", np.full(replicates, n), math.inf, params, stream(seed, 0, i_n), mu=mu).final
        lhs = estimate(R == 0, "backward-R")
        rhs = _exact(w.values[n])
        config = {"check": "absorption", "params": params.to_dict(), "mu": mu.to_dict(), "n": int(n),
                  "replicates": replicates, "K": K}
        out.append(_report(lhs, rhs, {"seed": seed, "lhs_stream": [0, i_n]}, config))
    return out


# ----------------------------------------------------------------------------
# Siegmund duality
# ----------------------------------------------------------------------------

def siegmund_grid(params: ModelParams, mu: LevyMeasure | None, ells, ds, times, replicates: int,
                  seed: int) -> list[DualityReport]:
    """``P(L(t) >= d | L(0) = l)`` against ``P(D(t) <= l | D(0) = d)``.

    The cemetery and the overflow state of ``D`` both count as ``> l``.
    """
    mu = mu if mu is not None else LevyMeasure()
    times = np.asarray(sorted(times), dtype=float)
    T = float(times[-1])
    Ls = {}
    for i, ell in enumerate(ells):
        Ls[ell] = chain_ensemble("L", np.full(replicates, ell), T, params, stream(seed, 0, i), mu=mu,
                                 obs_times=times).values
    Ds = {}
    for i, d in enumerate(ds):
        Ds[d] = chain_ensemble("D", np.full(replicates, d), T, params, stream(seed, 1, i), mu=mu,
                               obs_times=times).values
    out = []
    for i, ell in enumerate(ells):
        for j, d in enumerate(ds):
            for o, t in enumerate(times):
                lhs = estimate(Ls[ell][:, o] >= d, "backward-L")
                Dv = Ds[d][:, o]
                rhs = estimate((Dv >= 1) & (Dv <= ell), "siegmund-D")
                config = {"check": "siegmund", "params": params.to_dict(), "mu": mu.to_dict(),
                          "ell": int(ell), "d": int(d), "t": float(t), "replicates": replicates}
                seeds = {"seed": seed, "lhs_stream": [0, i], "rhs_stream": [1, j]}
                out.append(_report(lhs, rhs, seeds, config))
    return out


# ----------------------------------------------------------------------------
# mixed environment, Moran limit, coupling
# ----------------------------------------------------------------------------

def mixed_env_check(params: ModelParams, mu: LevyMeasure, zeta: Environment, ns, replicates: int,
                    seed: int, burn_in: float = 10.0, x_init: float = 0.5, dt: float = CHECK_DT,
                    K: int = 64, kdim: int = 64) -> list[DualityReport]:
    """Mixed-environment moments against a two-stage simulation.

    The simulation runs the annealed diffusion for ``burn_in`` from
    ``x_init``, then the quenched diffusion through ``zeta``. The burn-in
    leaves a bias of at most ``exp(-theta nu0 burn_in)``.
    """
    if params.sigma != 0:
        raise DomainError("the mixed-environment formula needs sigma = 0")
    if not zeta.is_forward:
        raise DomainError("zeta: pass the forward environment")
    w = solve_wn(params, mu, K=K)
    dec = build_decomposition(KILLED, params.theta, params.nu0, K_dim=kdim)
    formula = mixed_env_moments(dec, zeta, w, max(ns))
    past = DiffusionConfig(params, dt=dt, horizon=burn_in)
    x0 = diffusion_ensemble(past, x_init, replicates, stream(seed, 0, 0), mu=mu).final
    recent = DiffusionConfig(params, dt=dt, horizon=zeta.horizon)
    X = diffusion_ensemble(recent, x0, replicates, stream(seed, 0, 1), omega=zeta).final
    out = []
    for n in ns:
        lhs = estimate((1.0 - X) ** n, "forward-X")
        rhs = _exact(formula[n])
        config = {"check": "mixed-env", "params": params.to_dict(), "mu": mu.to_dict(),
                  "zeta": zeta.to_dict(), "n": int(n), "burn_in": burn_in, "x_init": x_init,
                  "replicates": replicates, "dt": dt, "K": K, "kdim": kdim}
        out.append(_report(lhs, rhs, {"seed": seed, "lhs_stream": [0, 0]}, config))
    return out


def moran_diffusion_check(params: ModelParams, mu: LevyMeasure | None, ns, x: float, t: float,
                          N: int, replicates: int, seed: int, moran_replicates: int | None = None,
                          dt: float = CHECK_DT) -> list[DualityReport]:
    """Moran model with rates scaled by ``1/N`` and time sped up by ``N`` against the diffusion."""
    _check_nx(ns, [x])
    mu = mu if mu is not None else LevyMeasure()
    mp = MoranParams.diffusion_scaled(params, N)
    m_reps = replicates if moran_replicates is None else moran_replicates
    et, ep, eo = env_sample_batch(mu, t, m_reps, stream(seed, 0, 1))
    XN, _ = moran_terminal(mp, x, N * t, m_reps, stream(seed, 0, 0), env_batch=(et * N, ep, eo))
    cfg = DiffusionConfig(params, dt=dt, horizon=t)
    X = diffusion_ensemble(cfg, x, replicates, stream(seed, 1, 0), mu=mu).final
    out = []
    for n in ns:
        lhs = estimate((1.0 - XN) ** n, "moran")
        rhs = estimate((1.0 - X) ** n, "forward-X")
        config = {"check": "moran-diffusion", "params": params.to_dict(), "mu": mu.to_dict(), "n": int(n),
                  "x": x, "t": t, "N": N, "replicates": replicates, "moran_replicates": m_reps, "dt": dt}
        seeds = {"seed": seed, "lhs_stream": [0, 0], "env_stream": [0, 1], "rhs_stream": [1, 0]}
        out.append(_report(lhs, rhs, seeds, config))
    return out


def coupling_check(params: MoranParams, omega: Environment, delta: float, x0: float, T: float,
                   replicates: int, seed: int) -> DualityReport:
    """Mean ``sup_t |X_N(omega) - X_N(omega^delta)|`` against the exponential bound."""
    sups = coupled_sup_discrepancies(params, omega, delta, x0, T, replicates, stream(seed, 0, 0))
    lhs = estimate(sups, "coupled-moran")
    rhs = _exact(coupling_bound(omega, delta, params.sigma_N, T), "bound")
    config = {"check": "coupling", "params": params.to_dict(), "omega": omega.to_dict(), "delta": delta,
              "x0": x0, "T": T, "replicates": replicates}
    return _report(lhs, rhs, {"seed": seed, "lhs_stream": [0, 0]}, config, rule=UPPER)
