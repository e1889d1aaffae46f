"""``wfenv`` command line entry point.

Every subcommand writes its result to ``--out`` and a manifest next to it
(``<out>.manifest.json``) holding the argv, the resolved configuration, the
input-file digests and the output digests. No timestamps are recorded, so
identical argv and inputs give byte-identical files, and
``wfenv replay <manifest>`` re-runs a manifest and checks the digests.

Exit codes: 0 success, 1 domain or configuration error, 2 numerical
convergence failure (including truncation and state-cap breaches), 3 a
duality check that ran to completion but failed its rule.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import math
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .diffusion import BOUNDARY_POLICIES, DiffusionConfig, diffusion_ensemble, diffusion_run_quenched
from .duality import (absorption_check, ancestral_check, annealed_grid, coupling_check,
                      fearnhead_check, pass_fraction, quenched_grid, reinforced_duality_check,
                      siegmund_grid)
from .errors import ConvergenceError, DomainError, StateCapError
from .genealogy import KINDS, chain_ensemble, chain_run_annealed, chain_run_quenched
from .model import (BACKWARD, Environment, LevyMeasure, ModelParams, env_reverse, env_sample,
                    env_sample_batch, stream)
from .moran import MoranParams, moran_coupled_run, moran_run, moran_terminal
from .records import csv_text, estimate, json_text, write_text
from .recursions import h_series, simpson_index, solve_fearnhead, solve_wn
from .spectral import (KILLED, PLDASG, build_decomposition, mixed_env_moments,
                       quenched_ancestral_coeffs, quenched_ancestral_eval, quenched_moment_coeffs,
                       quenched_moment_eval, quenched_wn)

EXIT_OK = 0
EXIT_DOMAIN = 1
EXIT_NUMERIC = 2
EXIT_CHECK_FAILED = 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


# ----------------------------------------------------------------------------
# flag validators
# ----------------------------------------------------------------------------

def _number(text: str) -> float:
    try:
        v = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a number: {text!r}") from None
    if math.isnan(v):
        raise argparse.ArgumentTypeError("NaN is not allowed")
    return v


def positive_int(text: str) -> int:
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from None
    if v < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {v}")
    return v


def nonneg_int(text: str) -> int:
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from None
    if v < 0:
        raise argparse.ArgumentTypeError(f"must be >= 0, got {v}")
    return v


def positive_float(text: str) -> float:
    v = _number(text)
    if not (v > 0 and math.isfinite(v)):
        raise argparse.ArgumentTypeError(f"must be positive and finite, got {text}")
    return v


def horizon(text: str) -> float:
    """Positive time; ``inf`` allowed."""
    v = _number(text)
    if not v > 0:
        raise argparse.ArgumentTypeError(f"must be positive, got {text}")
    return v


def nonneg_float(text: str) -> float:
    v = _number(text)
    if not (v >= 0 and math.isfinite(v)):
        raise argparse.ArgumentTypeError(f"must be nonnegative and finite, got {text}")
    return v


def unit_closed(text: str) -> float:
    v = _number(text)
    if not 0.0 <= v <= 1.0:
        raise argparse.ArgumentTypeError(f"must lie in [0, 1], got {text}")
    return v


def unit_open(text: str) -> float:
    v = _number(text)
    if not 0.0 < v < 1.0:
        raise argparse.ArgumentTypeError(f"must lie in (0, 1), got {text}")
    return v


def _listed(item):
    def parse(text: str):
        parts = [p for p in text.split(",") if p.strip()]
        if not parts:
            raise argparse.ArgumentTypeError("empty list")
        return [item(p.strip()) for p in parts]
    parse.__name__ = f"list of {item.__name__}"
    return parse


def atom(text: str) -> tuple[float, float]:
    mass, sep, peak = text.partition(":")
    if not sep:
        raise argparse.ArgumentTypeError(f"expected MASS:PEAK, got {text!r}")
    return positive_float(mass), unit_open(peak)


def chain_state(text: str) -> int:
    if text in ("dagger", "-1"):
        return -1
    return nonneg_int(text)


# ----------------------------------------------------------------------------
# inputs
# ----------------------------------------------------------------------------

class Inputs:
    """Reads JSON inputs and remembers their digests for the manifest."""

    def __init__(self):
        self.digests: dict[str, str] = {}

    def load(self, path: str, what: str) -> dict:
        p = Path(path)
        try:
            raw = p.read_bytes()
        except FileNotFoundError:
            raise DomainError(f"{what}: file not found: {path}") from None
        self.digests[path] = hashlib.sha256(raw).hexdigest()
        try:
            d = json.loads(raw.decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise DomainError(f"{what}: malformed JSON in {path}: {exc}") from None
        if not isinstance(d, dict):
            raise DomainError(f"{what}: expected a JSON object in {path}")
        return d

    def params(self, args, **defaults) -> ModelParams:
        d = dict(defaults)
        if args.params:
            d.update(self.load(args.params, "params"))
        for key in ("sigma", "theta", "nu0"):
            flag = getattr(args, key)
            if flag is not None:
                d[key] = flag
        try:
            return ModelParams.from_dict(d)
        except TypeError as exc:
            raise DomainError(f"params: {exc}") from None

    def moran(self, args) -> MoranParams:
        d = self.load(args.moran_params, "moran-params") if args.moran_params else {}
        for key, flag in (("N", args.N), ("sigma_N", args.sigma_N), ("theta_N", args.theta_N),
                          ("nu0", args.nu0)):
            if flag is not None:
                d[key] = flag
        return MoranParams.from_dict(d)

    def mu(self, args) -> LevyMeasure | None:
        if args.mu and args.atom:
            raise DomainError("mu: give --mu or --atom, not both")
        if args.mu:
            return LevyMeasure.from_dict(self.load(args.mu, "mu"))
        if args.atom:
            return LevyMeasure(tuple(args.atom))
        return None

    def env(self, args, required: bool = False) -> Environment | None:
        if not args.env:
            if required:
                raise DomainError("env: --env is required")
            return None
        return Environment.from_dict(self.load(args.env, "env"))


# ----------------------------------------------------------------------------
# parser
# ----------------------------------------------------------------------------

def _out(p):
    p.add_argument("--out", required=True, help="result file")
    p.add_argument("--plot-data", dest="plot_data", help="tidy CSV (series, coordinate, value)")


def _params(p):
    p.add_argument("--params", help="ModelParams JSON {sigma, theta, nu0}")
    p.add_argument("--sigma", type=nonneg_float)
    p.add_argument("--theta", type=nonneg_float)
    p.add_argument("--nu0", type=unit_closed)


def _moran(p):
    p.add_argument("--moran-params", dest="moran_params", help="MoranParams JSON {N, sigma_N, theta_N, nu0}")
    p.add_argument("--N", type=positive_int)
    p.add_argument("--sigma-N", dest="sigma_N", type=nonneg_float)
    p.add_argument("--theta-N", dest="theta_N", type=nonneg_float)
    p.add_argument("--nu0", type=unit_closed)


def _mu(p):
    p.add_argument("--mu", help="LevyMeasure JSON {atoms: [{mass, peak}]}")
    p.add_argument("--atom", type=atom, action="append", help="MASS:PEAK, repeatable")


def _seed(p):
    p.add_argument("--seed", type=nonneg_int, default=0)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="wfenv", description="Wright-Fisher populations in a jump environment")
    parser.add_argument("--version", action="version", version=f"wfenv {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("simulate-moran", help="exact Moran paths or terminal values")
    _moran(p); _mu(p); _seed(p); _out(p)
    p.add_argument("--env", help="forward Environment JSON")
    p.add_argument("--x0", type=unit_closed, required=True)
    p.add_argument("--T", type=positive_float, required=True)
    p.add_argument("--replicates", type=positive_int, default=1)
    p.add_argument("--format", choices=("path", "terminal", "moments"))
    p.add_argument("--n-max", dest="n_max", type=positive_int, default=2)

    p = sub.add_parser("simulate-diffusion", help="Euler paths of the diffusion")
    _params(p); _mu(p); _seed(p); _out(p)
    p.add_argument("--env", help="forward Environment JSON")
    p.add_argument("--x0", type=unit_closed, required=True)
    p.add_argument("--T", type=positive_float, required=True)
    p.add_argument("--dt", type=positive_float, default=1e-4)
    p.add_argument("--boundary", choices=BOUNDARY_POLICIES, default="beta")
    p.add_argument("--no-noise", dest="noise", action="store_false")
    p.add_argument("--replicates", type=positive_int, default=1)
    p.add_argument("--format", choices=("path", "terminal", "moments"))
    p.add_argument("--n-max", dest="n_max", type=positive_int, default=2)

    p = sub.add_parser("simulate-chain", help="line-counting chains R, L, D")
    _params(p); _mu(p); _seed(p); _out(p)
    p.add_argument("--kind", choices=tuple(KINDS), required=True)
    p.add_argument("--env", help="backward Environment JSON (quenched R or L)")
    p.add_argument("--start", type=chain_state, required=True)
    p.add_argument("--T", type=horizon, required=True)
    p.add_argument("--cap", type=positive_int)
    p.add_argument("--replicates", type=positive_int, default=1)
    p.add_argument("--format", choices=("path", "terminal", "summary"))

    for name, text in (("solve-wn", "stationary moments w_n"), ("solve-fearnhead", "tails a_n and h(x)")):
        p = sub.add_parser(name, help=text)
        _params(p); _mu(p); _out(p)
        p.add_argument("--K", type=positive_int, default=64)
        p.add_argument("--tol", type=positive_float, default=1e-10)
        if name == "solve-fearnhead":
            p.add_argument("--x", type=_listed(unit_closed), help="comma list of x for h(x)")

    def spectral(p):
        _params(p); _out(p)
        p.add_argument("--env", required=True, help="forward Environment JSON")
        p.add_argument("--kdim", type=positive_int, default=256)
        p.add_argument("--tol", type=positive_float, default=1e-8)

    p = sub.add_parser("quenched-moments", help="coefficients C(omega, T) and moments")
    spectral(p)
    p.add_argument("--n-max", dest="n_max", type=nonneg_int, default=3)
    p.add_argument("--T", type=positive_float)
    p.add_argument("--x", type=_listed(unit_closed))

    p = sub.add_parser("quenched-wn", help="absorption limits W_n(omega)")
    spectral(p)
    p.add_argument("--n-max", dest="n_max", type=nonneg_int, default=3)

    p = sub.add_parser("quenched-ancestral", help="quenched ancestral type distribution")
    spectral(p)
    p.add_argument("--T", type=positive_float, help="omit for the limit T -> inf")
    p.add_argument("--x", type=_listed(unit_closed))

    p = sub.add_parser("mixed-env", help="annealed past followed by a fixed recent environment")
    spectral(p); _mu(p)
    p.add_argument("--n-max", dest="n_max", type=positive_int, default=2)
    p.add_argument("--K", type=positive_int, default=64)

    p = sub.add_parser("duality-check", help="Monte Carlo duality checks")
    _params(p); _mu(p); _seed(p); _out(p)
    p.add_argument("--mode", required=True, choices=("annealed", "quenched", "reinforced", "ancestral",
                                                     "absorption", "fearnhead", "siegmund"))
    p.add_argument("--env", help="forward Environment JSON (quenched mode)")
    p.add_argument("--n", type=_listed(positive_int), default=[1])
    p.add_argument("--x", type=_listed(unit_closed), default=[0.5])
    p.add_argument("--T", type=horizon, default=1.0)
    p.add_argument("--dt", type=positive_float, default=2e-3)
    p.add_argument("--replicates", type=positive_int, default=100_000)
    p.add_argument("--bins", type=_listed(nonneg_float), help="J(T) bin edges (reinforced mode)")
    p.add_argument("--ell", type=_listed(positive_int), default=[1, 2, 3])
    p.add_argument("--d", type=_listed(positive_int), default=[1, 2, 3])
    p.add_argument("--t", type=_listed(positive_float), default=[0.5, 1.0])
    p.add_argument("--K", type=positive_int, default=64)
    p.add_argument("--min-pass", dest="min_pass", type=unit_closed, default=0.95,
                   help="fraction of grid cells that must pass")

    p = sub.add_parser("coupling-experiment", help="coupled Moran runs in omega and its big jumps")
    _moran(p); _seed(p); _out(p)
    p.add_argument("--env", required=True, help="forward Environment JSON")
    p.add_argument("--delta", type=unit_open, required=True)
    p.add_argument("--x0", type=unit_closed, required=True)
    p.add_argument("--T", type=positive_float, required=True)
    p.add_argument("--replicates", type=positive_int, default=10_000)

    p = sub.add_parser("env-sample", help="draw an environment from a Levy measure")
    _mu(p); _seed(p); _out(p)
    p.add_argument("--T", type=positive_float, required=True)
    p.add_argument("--reverse", action="store_true", help="emit the backward orientation")

    p = sub.add_parser("replay", help="re-run a manifest and compare output digests")
    p.add_argument("manifest")
    return parser


# ----------------------------------------------------------------------------
# handlers: each returns (payload text, plot rows or None, resolved config, exit code)
# ----------------------------------------------------------------------------

def _moments(samples: np.ndarray, n_max: int, tag: str) -> list[dict]:
    out = []
    for n in range(1, n_max + 1):
        e = estimate((1.0 - samples) ** n, tag)
        out.append({"n": n, "mean": e.value, "stderr": e.stderr, "replicates": e.replicates})
    return out


def _path_rows(path, series: str):
    return [(series, t, v) for t, v in zip(path.times.tolist(), path.values.tolist())]


def _ensemble_output(fmt, final, n_max, tag, config, label):
    if fmt == "terminal":
        text = csv_text(["replicate", label], enumerate(final.tolist()))
        return text, None, config, EXIT_OK
    payload = {"moments": _moments(final, n_max, tag), "config": config}
    return json_text(payload), [("moment", m["n"], m["mean"]) for m in payload["moments"]], config, EXIT_OK


def run_simulate_moran(args, inp: Inputs):
    mp = inp.moran(args)
    mu = inp.mu(args)
    omega = inp.env(args)
    if mu is not None and omega is not None:
        raise DomainError("give --env (quenched) or a Levy measure (annealed), not both")
    fmt = args.format or ("path" if args.replicates == 1 else "terminal")
    config = {"params": mp.to_dict(), "x0": args.x0, "T": args.T, "replicates": args.replicates,
              "seed": args.seed, "format": fmt, "mu": mu.to_dict() if mu else None,
              "env": omega.to_dict() if omega else None}
    if fmt == "path":
        if args.replicates != 1:
            raise DomainError("format path needs --replicates 1")
        if mu is not None:
            omega = env_sample(mu, args.T, stream(args.seed, 1))
            config["env"] = omega.to_dict()
        omega = omega if omega is not None else Environment(args.T)
        path = moran_run(mp, omega, args.x0, args.T, stream(args.seed, 0))
        return path.to_csv(), _path_rows(path, "x"), config, EXIT_OK
    if mu is not None:
        batch = env_sample_batch(mu, args.T, args.replicates, stream(args.seed, 1))
        final, _ = moran_terminal(mp, args.x0, args.T, args.replicates, stream(args.seed, 0), env_batch=batch)
    else:
        final, _ = moran_terminal(mp, args.x0, args.T, args.replicates, stream(args.seed, 0), omega=omega)
    return _ensemble_output(fmt, final, args.n_max, "moran", config, "x_at_T")


def run_simulate_diffusion(args, inp: Inputs):
    params = inp.params(args)
    mu = inp.mu(args)
    omega = inp.env(args)
    if mu is not None and omega is not None:
        raise DomainError("give --env (quenched) or a Levy measure (annealed), not both")
    cfg = DiffusionConfig(params, dt=args.dt, horizon=args.T, boundary=args.boundary, noise=args.noise)
    fmt = args.format or ("path" if args.replicates == 1 else "terminal")
    config = {"params": params.to_dict(), "x0": args.x0, "T": args.T, "dt": args.dt,
              "boundary": args.boundary, "noise": args.noise, "replicates": args.replicates,
              "seed": args.seed, "format": fmt, "mu": mu.to_dict() if mu else None,
              "env": omega.to_dict() if omega else None}
    if fmt == "path":
        if args.replicates != 1:
            raise DomainError("format path needs --replicates 1")
        if mu is not None:
            omega = env_sample(mu, args.T, stream(args.seed, 1))
            config["env"] = omega.to_dict()
        omega = omega if omega is not None else Environment(args.T)
        path = diffusion_run_quenched(cfg, omega, args.x0, stream(args.seed, 0))
        return path.to_csv(), _path_rows(path, "x"), config, EXIT_OK
    ens = diffusion_ensemble(cfg, args.x0, args.replicates, stream(args.seed, 0), omega=omega, mu=mu)
    return _ensemble_output(fmt, ens.final, args.n_max, "forward-X", config, "x_at_T")


def run_simulate_chain(args, inp: Inputs):
    params = inp.params(args)
    mu = inp.mu(args)
    omega = inp.env(args)
    if mu is not None and omega is not None:
        raise DomainError("give --env (quenched) or a Levy measure (annealed), not both")
    if omega is not None and omega.orientation != BACKWARD:
        raise DomainError("env: quenched chains need a backward environment (env-sample --reverse)")
    fmt = args.format or ("path" if args.replicates == 1 else "summary")
    if fmt == "path" and not math.isfinite(args.T):
        raise DomainError("T: a path record needs a finite horizon")
    config = {"kind": args.kind, "params": params.to_dict(), "start": args.start, "T": args.T,
              "cap": args.cap, "replicates": args.replicates, "seed": args.seed, "format": fmt,
              "mu": mu.to_dict() if mu else None, "env": omega.to_dict() if omega else None}
    rng = stream(args.seed, 0)
    if fmt == "path":
        if args.replicates != 1:
            raise DomainError("format path needs --replicates 1")
        if omega is not None:
            path = chain_run_quenched(args.kind, args.start, omega, args.T, params, rng, cap=args.cap)
        else:
            path = chain_run_annealed(args.kind, args.start, args.T, params, mu, rng, cap=args.cap)
        return path.to_csv(), _path_rows(path, args.kind), config, EXIT_OK
    ens = chain_ensemble(args.kind, np.full(args.replicates, args.start), args.T, params, rng,
                         mu=mu, env=omega, cap=args.cap)
    if fmt == "terminal":
        return csv_text(["replicate", "value"], enumerate(ens.final.tolist())), None, config, EXIT_OK
    summary = ens.absorption_summary()
    values, counts = np.unique(ens.final, return_counts=True)
    payload = {"summary": summary, "final_counts": {str(int(v)): int(c) for v, c in zip(values, counts)},
               "config": config}
    rows = [("final", int(v), int(c)) for v, c in zip(values, counts)]
    return json_text(payload), rows, config, EXIT_OK


def run_solve_wn(args, inp: Inputs):
    params = inp.params(args)
    mu = inp.mu(args)
    w = solve_wn(params, mu, K=args.K, tol=args.tol)
    payload = w.to_dict()
    payload["simpson_index"] = simpson_index(w)
    config = {"params": params.to_dict(), "mu": mu.to_dict() if mu else None, "K": args.K, "tol": args.tol}
    rows = [("w", n, v) for n, v in enumerate(w.values.tolist())]
    return json_text(payload), rows, config, EXIT_OK


def run_solve_fearnhead(args, inp: Inputs):
    params = inp.params(args)
    mu = inp.mu(args)
    a = solve_fearnhead(params, mu, K=args.K, tol=args.tol)
    payload = a.to_dict()
    rows = [("a", n, v) for n, v in enumerate(a.values.tolist())]
    if args.x:
        payload["h"] = [{"x": x, "value": h_series(a, x), "tail_bound": (1.0 - x) ** (args.K + 1)}
                        for x in args.x]
        rows += [("h", e["x"], e["value"]) for e in payload["h"]]
    config = {"params": params.to_dict(), "mu": mu.to_dict() if mu else None, "K": args.K, "tol": args.tol,
              "x": args.x}
    return json_text(payload), rows, config, EXIT_OK


def _sigma_zero(params: ModelParams) -> None:
    if params.sigma != 0:
        raise DomainError("sigma: the spectral formulas need sigma = 0")


def run_quenched_moments(args, inp: Inputs):
    params = inp.params(args, sigma=0.0)
    _sigma_zero(params)
    omega = inp.env(args, required=True)
    dec = build_decomposition(KILLED, params.theta, params.nu0, K_dim=args.kdim)
    coeffs = quenched_moment_coeffs(dec, omega, args.n_max, T=args.T, tol=args.tol)
    payload = coeffs.to_dict()
    rows = []
    if args.x:
        payload["moments"] = [{"n": n, "x": x, "value": quenched_moment_eval(coeffs, dec, n, x)}
                              for n in range(args.n_max + 1) for x in args.x]
        rows = [(f"moment_{m['n']}", m["x"], m["value"]) for m in payload["moments"]]
    config = {"params": params.to_dict(), "env": omega.to_dict(), "n_max": args.n_max, "T": args.T,
              "kdim": args.kdim, "tol": args.tol, "x": args.x}
    return json_text(payload), rows or None, config, EXIT_OK


def run_quenched_wn(args, inp: Inputs):
    params = inp.params(args, sigma=0.0)
    _sigma_zero(params)
    omega = inp.env(args, required=True)
    dec = build_decomposition(KILLED, params.theta, params.nu0, K_dim=args.kdim)
    W = quenched_wn(dec, omega, args.n_max, tol=args.tol)
    payload = {"W": W.tolist(), "env_digest": omega.digest(), "kdim": args.kdim}
    config = {"params": params.to_dict(), "env": omega.to_dict(), "n_max": args.n_max, "kdim": args.kdim,
              "tol": args.tol}
    return json_text(payload), [("W", n, v) for n, v in enumerate(W.tolist())], config, EXIT_OK


def run_quenched_ancestral(args, inp: Inputs):
    params = inp.params(args, sigma=0.0)
    _sigma_zero(params)
    omega = inp.env(args, required=True)
    dec = build_decomposition(PLDASG, params.theta, params.nu0, K_dim=args.kdim)
    coeffs = quenched_ancestral_coeffs(dec, omega, T=args.T, tol=args.tol)
    payload = coeffs.to_dict()
    rows = None
    if args.x:
        payload["h"] = [{"x": x, "value": quenched_ancestral_eval(coeffs, dec, x)} for x in args.x]
        rows = [("h", e["x"], e["value"]) for e in payload["h"]]
    config = {"params": params.to_dict(), "env": omega.to_dict(), "T": args.T, "kdim": args.kdim,
              "tol": args.tol, "x": args.x}
    return json_text(payload), rows, config, EXIT_OK


def run_mixed_env(args, inp: Inputs):
    params = inp.params(args, sigma=0.0)
    _sigma_zero(params)
    mu = inp.mu(args)
    zeta = inp.env(args, required=True)
    w = solve_wn(params, mu, K=args.K)
    dec = build_decomposition(KILLED, params.theta, params.nu0, K_dim=args.kdim)
    m = mixed_env_moments(dec, zeta, w, args.n_max, tol=args.tol)
    payload = {"moments": [{"n": n, "value": float(m[n])} for n in range(args.n_max + 1)],
               "env_digest": zeta.digest(), "w_defect": w.defect}
    config = {"params": params.to_dict(), "mu": mu.to_dict() if mu else None, "env": zeta.to_dict(),
              "n_max": args.n_max, "K": args.K, "kdim": args.kdim, "tol": args.tol}
    return json_text(payload), [("moment", n, float(m[n])) for n in range(args.n_max + 1)], config, EXIT_OK


def run_duality_check(args, inp: Inputs):
    params = inp.params(args)
    mu = inp.mu(args)
    omega = inp.env(args, required=args.mode == "quenched")
    if args.dt >= args.T and args.mode in ("annealed", "quenched", "reinforced"):
        raise DomainError(f"dt: must be smaller than T ({args.dt} >= {args.T})")
    if not math.isfinite(args.T) and args.mode not in ("ancestral", "fearnhead"):
        raise DomainError("T: must be finite for this mode")
    reps, seed = args.replicates, args.seed
    if args.mode == "annealed":
        reports = annealed_grid(params, mu, args.n, args.x, args.T, reps, seed, args.dt)
    elif args.mode == "quenched":
        reports = quenched_grid(params, omega, args.n, args.x, args.T, reps, seed, args.dt)
    elif args.mode == "reinforced":
        if mu is None or not args.bins:
            raise DomainError("reinforced mode needs a Levy measure and --bins")
        reports = []
        for n in args.n:
            for x in args.x:
                reports += reinforced_duality_check(params, mu, n, x, args.T, args.bins, reps, seed, args.dt)
    elif args.mode == "ancestral":
        T = None if not math.isfinite(args.T) else args.T
        reports = [ancestral_check(params, mu, x, T, reps, seed, args.dt, K=args.K) for x in args.x]
    elif args.mode == "absorption":
        reports = absorption_check(params, mu, args.n, reps, seed, K=args.K)
    elif args.mode == "fearnhead":
        H = None if not math.isfinite(args.T) else args.T
        reports = fearnhead_check(params, mu, args.n, reps, seed, horizon=H, K=args.K)
    else:
        reports = siegmund_grid(params, mu, args.ell, args.d, args.t, reps, seed)
    frac = pass_fraction(reports)
    ok = reports[0].passed if len(reports) == 1 else frac >= args.min_pass
    payload = {"mode": args.mode, "pass": ok, "pass_fraction": frac,
               "reports": [r.to_dict() for r in reports]}
    rows = [("z", i, r.z) for i, r in enumerate(reports)]
    config = {"mode": args.mode, "params": params.to_dict(), "mu": mu.to_dict() if mu else None,
              "env": omega.to_dict() if omega else None, "n": args.n, "x": args.x, "T": args.T,
              "dt": args.dt, "replicates": reps, "seed": seed, "min_pass": args.min_pass}
    return json_text(payload), rows, config, EXIT_OK if ok else EXIT_CHECK_FAILED


def run_coupling(args, inp: Inputs):
    mp = inp.moran(args)
    omega = inp.env(args, required=True)
    report = coupling_check(mp, omega, args.delta, args.x0, args.T, args.replicates, args.seed)
    a, b, sup = moran_coupled_run(mp, omega, args.delta, args.x0, args.T, stream(args.seed, 2, 0))
    rows = _path_rows(a, "omega") + _path_rows(b, "omega_delta")
    payload = {"report": report.to_dict(), "pass": report.passed, "example_sup": sup}
    config = {"params": mp.to_dict(), "env": omega.to_dict(), "delta": args.delta, "x0": args.x0,
              "T": args.T, "replicates": args.replicates, "seed": args.seed}
    return json_text(payload), rows, config, EXIT_OK if report.passed else EXIT_CHECK_FAILED


def run_env_sample(args, inp: Inputs):
    mu = inp.mu(args)
    if mu is None:
        raise DomainError("env-sample: give --mu or --atom")
    omega = env_sample(mu, args.T, stream(args.seed, 0))
    rows = [("omega", t, omega.omega(t)) for t in omega.times]
    if args.reverse:
        omega = env_reverse(omega)
    config = {"mu": mu.to_dict(), "T": args.T, "seed": args.seed, "reverse": args.reverse}
    return json_text(omega.to_dict()), rows, config, EXIT_OK


HANDLERS = {
    "simulate-moran": run_simulate_moran,
    "simulate-diffusion": run_simulate_diffusion,
    "simulate-chain": run_simulate_chain,
    "solve-wn": run_solve_wn,
    "solve-fearnhead": run_solve_fearnhead,
    "quenched-moments": run_quenched_moments,
    "quenched-wn": run_quenched_wn,
    "quenched-ancestral": run_quenched_ancestral,
    "mixed-env": run_mixed_env,
    "duality-check": run_duality_check,
    "coupling-experiment": run_coupling,
    "env-sample": run_env_sample,
}

_COORD = {"simulate-moran": "t", "simulate-diffusion": "t", "simulate-chain": "beta",
          "solve-wn": "n", "solve-fearnhead": "n", "quenched-moments": "x", "quenched-wn": "n",
          "quenched-ancestral": "x", "mixed-env": "n", "duality-check": "cell",
          "coupling-experiment": "t", "env-sample": "t"}


def _sha(path: str) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def manifest_path(out: str) -> str:
    return out + ".manifest.json"


def _execute(argv: list[str]) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "replay":
        return _replay(args.manifest)
    inp = Inputs()
    text, rows, config, code = HANDLERS[args.command](args, inp)
    write_text(args.out, text)
    outputs = {args.out: _sha(args.out)}
    if args.plot_data:
        coord = _COORD[args.command]
        write_text(args.plot_data, csv_text(["series", coord, "value"], rows or []))
        outputs[args.plot_data] = _sha(args.plot_data)
    manifest = {"tool": "wfenv", "version": __version__, "subcommand": args.command, "argv": list(argv),
                "config": config, "seed": getattr(args, "seed", None), "inputs": inp.digests,
                "outputs": outputs, "exit_code": code}
    write_text(manifest_path(args.out), json_text(manifest))
    return code


def _replay(path: str) -> int:
    try:
        manifest = json.loads(Path(path).read_text(encoding="utf-8"))
        argv = manifest["argv"]
        expected = manifest["outputs"]
    except FileNotFoundError:
        raise DomainError(f"manifest: file not found: {path}") from None
    except (json.JSONDecodeError, KeyError, TypeError) as exc:
        raise DomainError(f"manifest: unreadable {path}: {exc}") from None
    code = _execute(argv)
    bad = [p for p, digest in expected.items() if not Path(p).exists() or _sha(p) != digest]
    if bad:
        raise DomainError(f"replay: outputs differ from the manifest: {', '.join(bad)}")
    return code


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        return _execute(argv)
    except UsageError as exc:
        print(f"wfenv: error: {exc}", file=sys.stderr)
        return EXIT_DOMAIN
    except DomainError as exc:
        print(f"wfenv: error: {exc}", file=sys.stderr)
        return EXIT_DOMAIN
    except (ConvergenceError, StateCapError) as exc:
        print(f"wfenv: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
