"""Model parameters, Lévy measures, environments and the branching-rate table.

Conventions
-----------
* Type 0 is the fit type; ``x`` is always the frequency of type 0.
* An :class:`Environment` lives on ``[0, horizon]``. In forward orientation a
  jump at ``t`` acts on the population at time ``t``. The reversed
  environment places the same peak at backward time ``beta = horizon - t``.
* Lévy measures are finite lists of atoms ``(mass, peak)``.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
from scipy import stats

from .errors import DomainError

FORWARD = "forward"
BACKWARD = "backward"


def _check_real(name: str, value: float, lo: float = -math.inf, hi: float = math.inf,
                lo_open: bool = False, hi_open: bool = False) -> float:
    try:
        v = float(value)
    except (TypeError, ValueError):
        raise DomainError(f"{name}: expected a real number, got {value!r}") from None
    if not math.isfinite(v):
        raise DomainError(f"{name}: must be finite, got {v}")
    if v < lo or (lo_open and v == lo) or v > hi or (hi_open and v == hi):
        left = "(" if lo_open else "["
        right = ")" if hi_open else "]"
        raise DomainError(f"{name}: {v} outside {left}{lo}, {hi}{right}")
    return v


@dataclass(frozen=True)
class ModelParams:
    """Selection rate ``sigma``, mutation rate ``theta`` and mutation bias ``nu0``.

    ``nu1`` is derived as ``1 - nu0`` so the two always sum to one.
    """

    sigma: float = 0.0
    theta: float = 0.0
    nu0: float = 0.5
    nu1: float = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "sigma", _check_real("sigma", self.sigma, lo=0.0))
        object.__setattr__(self, "theta", _check_real("theta", self.theta, lo=0.0))
        object.__setattr__(self, "nu0", _check_real("nu0", self.nu0, 0.0, 1.0))
        object.__setattr__(self, "nu1", 1.0 - self.nu0)

    @property
    def theta0(self) -> float:
        """Rate of mutation to the fit type, ``theta * nu0``."""
        return self.theta * self.nu0

    @property
    def theta1(self) -> float:
        return self.theta * self.nu1

    def to_dict(self) -> dict:
        return {"sigma": self.sigma, "theta": self.theta, "nu0": self.nu0}

    @classmethod
    def from_dict(cls, d: dict) -> "ModelParams":
        _require_keys(d, ("sigma", "theta", "nu0"), "ModelParams")
        return cls(sigma=d["sigma"], theta=d["theta"], nu0=d["nu0"])


@dataclass(frozen=True)
class LevyMeasure:
    """Finite atomic measure on (0, 1): ``sum_i c_i * delta_{p_i}``.

    ``truncation_delta`` records that atoms below it were removed from a richer
    measure; ``first_moment_below_delta`` is the removed mass ``sum c_i p_i``.
    """

    atoms: tuple[tuple[float, float], ...] = ()
    truncation_delta: float | None = None
    first_moment_below_delta: float = 0.0

    def __post_init__(self):
        atoms = []
        for idx, atom in enumerate(self.atoms):
            if len(atom) != 2:
                raise DomainError(f"atoms[{idx}]: expected (mass, peak)")
            c = _check_real(f"atoms[{idx}].mass", atom[0], lo=0.0, lo_open=True)
            p = _check_real(f"atoms[{idx}].peak", atom[1], 0.0, 1.0, True, True)
            atoms.append((c, p))
        peaks = [p for _, p in atoms]
        if len(set(peaks)) != len(peaks):
            raise DomainError("atoms: peaks must be distinct")
        object.__setattr__(self, "atoms", tuple(atoms))
        if self.truncation_delta is not None:
            object.__setattr__(self, "truncation_delta",
                               _check_real("truncation_delta", self.truncation_delta,
                                           0.0, 1.0, True, True))
        object.__setattr__(self, "first_moment_below_delta",
                           _check_real("first_moment_below_delta",
                                       self.first_moment_below_delta, lo=0.0))

    @property
    def masses(self) -> np.ndarray:
        return np.array([c for c, _ in self.atoms], dtype=float)

    @property
    def peaks(self) -> np.ndarray:
        return np.array([p for _, p in self.atoms], dtype=float)

    @property
    def total_mass(self) -> float:
        return math.fsum(c for c, _ in self.atoms)

    @property
    def first_moment(self) -> float:
        return math.fsum(c * p for c, p in self.atoms)

    @property
    def is_null(self) -> bool:
        return not self.atoms

    def truncated(self, delta: float) -> "LevyMeasure":
        """Drop atoms with peak below ``delta`` and record the dropped first moment."""
        delta = _check_real("delta", delta, 0.0, 1.0, True, True)
        keep = tuple(a for a in self.atoms if a[1] >= delta)
        lost = math.fsum(c * p for c, p in self.atoms if p < delta)
        return LevyMeasure(keep, truncation_delta=delta,
                           first_moment_below_delta=self.first_moment_below_delta + lost)

    def to_dict(self) -> dict:
        d: dict = {"atoms": [{"mass": c, "peak": p} for c, p in self.atoms]}
        if self.truncation_delta is not None:
            d["truncation_delta"] = self.truncation_delta
            d["first_moment_below_delta"] = self.first_moment_below_delta
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "LevyMeasure":
        _require_keys(d, ("atoms",), "LevyMeasure")
        atoms = []
        for idx, a in enumerate(d["atoms"]):
            _require_keys(a, ("mass", "peak"), f"LevyMeasure.atoms[{idx}]")
            atoms.append((a["mass"], a["peak"]))
        return cls(tuple(atoms), truncation_delta=d.get("truncation_delta"),
                   first_moment_below_delta=d.get("first_moment_below_delta", 0.0))


@dataclass(frozen=True)
class Environment:
    """A simple environment: finitely many jumps ``(t_k, dp_k)`` on ``[0, horizon]``."""

    horizon: float
    times: tuple[float, ...] = ()
    peaks: tuple[float, ...] = ()
    orientation: str = FORWARD

    def __post_init__(self):
        T = _check_real("horizon", self.horizon, lo=0.0, lo_open=True)
        object.__setattr__(self, "horizon", T)
        if len(self.times) != len(self.peaks):
            raise DomainError("jumps: times and peaks differ in length")
        times = tuple(_check_real(f"jumps[{i}].t", t, 0.0, T) for i, t in enumerate(self.times))
        peaks = tuple(_check_real(f"jumps[{i}].dp", p, 0.0, 1.0, True, True)
                      for i, p in enumerate(self.peaks))
        for i in range(1, len(times)):
            if not times[i] > times[i - 1]:
                raise DomainError(f"jumps[{i}].t: times must be strictly increasing")
        if self.orientation not in (FORWARD, BACKWARD):
            raise DomainError(f"orientation: expected 'forward' or 'backward', got {self.orientation!r}")
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "peaks", peaks)

    @classmethod
    def from_jumps(cls, horizon: float, jumps: Iterable[tuple[float, float]],
                   orientation: str = FORWARD) -> "Environment":
        """Build from unsorted ``(t, dp)`` pairs; equal times are rejected."""
        jumps = sorted((float(t), float(p)) for t, p in jumps)
        return cls(horizon, tuple(t for t, _ in jumps), tuple(p for _, p in jumps), orientation)

    @property
    def n_jumps(self) -> int:
        return len(self.times)

    @property
    def jumps(self) -> list[tuple[float, float]]:
        return list(zip(self.times, self.peaks))

    @property
    def is_forward(self) -> bool:
        return self.orientation == FORWARD

    def omega(self, t: float) -> float:
        """Cumulative peak sum ``sum_{t_k <= t} dp_k``."""
        return math.fsum(p for s, p in zip(self.times, self.peaks) if s <= t)

    def total(self) -> float:
        return math.fsum(self.peaks)

    def time_array(self) -> np.ndarray:
        return np.asarray(self.times, dtype=float)

    def peak_array(self) -> np.ndarray:
        return np.asarray(self.peaks, dtype=float)

    def restricted(self, t0: float, t1: float) -> "Environment":
        """Jumps with ``t0 < t <= t1``, shifted so that ``t0`` becomes time 0."""
        if not t1 > t0:
            raise DomainError("restricted: need t1 > t0")
        keep = [(t - t0, p) for t, p in self.jumps if t0 < t <= t1]
        return Environment.from_jumps(t1 - t0, keep, self.orientation)

    def merge(self, other: "Environment") -> "Environment":
        if self.horizon != other.horizon or self.orientation != other.orientation:
            raise DomainError("merge: horizons and orientations must agree")
        return Environment.from_jumps(self.horizon, self.jumps + other.jumps, self.orientation)

    def digest(self) -> str:
        """Short hash identifying the jump list, horizon and orientation."""
        payload = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(payload).hexdigest()[:16]

    def to_dict(self) -> dict:
        d = {"horizon": self.horizon,
             "jumps": [{"t": t, "dp": p} for t, p in zip(self.times, self.peaks)]}
        if self.orientation != FORWARD:
            d["orientation"] = self.orientation
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "Environment":
        _require_keys(d, ("horizon", "jumps"), "Environment")
        jumps = []
        for idx, j in enumerate(d["jumps"]):
            _require_keys(j, ("t", "dp"), f"Environment.jumps[{idx}]")
            jumps.append((j["t"], j["dp"]))
        return cls(d["horizon"], tuple(t for t, _ in jumps), tuple(p for _, p in jumps),
                   d.get("orientation", FORWARD))


def _require_keys(d, keys: Sequence[str], where: str) -> None:
    if not isinstance(d, dict):
        raise DomainError(f"{where}: expected a JSON object")
    for k in keys:
        if k not in d:
            raise DomainError(f"{where}: missing key '{k}'")


def sigma_mk(mu: LevyMeasure, m: int, k: int) -> float:
    """``sigma_{m,k} = sum_i c_i p_i^k (1 - p_i)^(m - k)``."""
    if not (isinstance(m, (int, np.integer)) and isinstance(k, (int, np.integer))):
        raise DomainError("sigma_mk: m and k must be integers")
    if m < 1 or k < 1 or k > m:
        raise DomainError(f"sigma_mk: need 1 <= k <= m, got m={m}, k={k}")
    return math.fsum(c * p**k * (1.0 - p) ** (m - k) for c, p in mu.atoms)


class SigmaTable:
    """Branching rates ``sigma_{m,k}`` and totals ``Lambda_m`` for ``m <= m_max``.

    ``entries[m, k]`` holds ``sigma_{m,k}``; ``weighted[m, k]`` holds
    ``C(m,k) sigma_{m,k}``, the rate at which ``m`` lines jump to ``m + k``.
    Sums over atoms are exactly rounded (``math.fsum``).
    """

    def __init__(self, mu: LevyMeasure, m_max: int):
        if m_max < 1:
            raise DomainError("m_max must be a positive integer")
        self.mu = mu
        self.m_max = int(m_max)
        size = self.m_max + 1
        m = np.arange(size)[:, None]
        k = np.arange(size)[None, :]
        valid = (k >= 1) & (k <= m)
        per_atom = []
        per_atom_w = []
        for c, p in mu.atoms:
            with np.errstate(divide="ignore", invalid="ignore", under="ignore", over="ignore"):
                logt = k * math.log(p) + (m - k) * math.log1p(-p)
                term = np.where(valid, c * np.exp(logt), 0.0)
            per_atom.append(term)
            per_atom_w.append(np.where(valid, c * stats.binom.pmf(k, m, p), 0.0))
        self.entries = _exact_sum(per_atom, (size, size))
        self.weighted = _exact_sum(per_atom_w, (size, size))
        mm = np.arange(size, dtype=float)
        self.row_totals = _exact_sum(
            [c * -np.expm1(mm * math.log1p(-p)) for c, p in mu.atoms], (size,))

    def covers(self, m: int) -> bool:
        return m <= self.m_max

    def lam(self, m: int) -> float:
        """``Lambda_m``, the total rate of environmental branching from ``m`` lines."""
        return float(self.row_totals[m])

    def gamma(self, i: int, j: int) -> float:
        """``gamma_{i,j} = sum_{k=i-j}^{j} C(j,k) sigma_{j,k}``; zero when empty."""
        if j < 1 or j > self.m_max:
            if j < 1:
                return 0.0
            raise DomainError(f"gamma: row {j} beyond table size {self.m_max}")
        lo = max(i - j, 1)
        if lo > j:
            return 0.0
        return math.fsum(self.weighted[j, lo:j + 1])

    def gamma_table(self, i_max: int) -> np.ndarray:
        """Array ``G[i, j] = gamma_{i,j}`` for ``0 <= j < i <= i_max``."""
        if i_max - 1 > self.m_max:
            raise DomainError(f"gamma_table: needs rows up to {i_max - 1}, table has {self.m_max}")
        G = np.zeros((i_max + 1, i_max + 1))
        # suffix sums of the weighted rows: S[j, a] = sum_{k>=a} C(j,k) sigma_{j,k}
        W = self.weighted[: i_max, :]
        S = np.cumsum(W[:, ::-1], axis=1)[:, ::-1]
        for i in range(2, i_max + 1):
            for j in range(1, i):
                lo = max(i - j, 1)
                if lo <= j:
                    G[i, j] = S[j, lo] - (S[j, j + 1] if j + 1 < S.shape[1] else 0.0)
        return G


def _exact_sum(arrays: list, shape) -> np.ndarray:
    if not arrays:
        return np.zeros(shape)
    if len(arrays) == 1:
        return np.array(arrays[0], dtype=float)
    stacked = np.stack(arrays, axis=-1)
    flat = stacked.reshape(-1, stacked.shape[-1])
    return np.array([math.fsum(row) for row in flat]).reshape(shape)


def as_generator(rng) -> np.random.Generator:
    """Accept a Generator, a SeedSequence or an integer seed."""
    if isinstance(rng, np.random.Generator):
        return rng
    return np.random.default_rng(rng)


def stream(seed: int, *stream_id: int) -> np.random.Generator:
    """Generator for the stream ``(seed, stream_id...)``.

    Distinct stream ids give statistically independent generators; the same
    pair always reproduces the same draws.
    """
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(int(s) for s in stream_id))
    return np.random.Generator(np.random.PCG64(ss))


def env_sample(mu: LevyMeasure, horizon: float, rng_seed, require_jump: bool = False) -> Environment:
    """Draw a simple environment on ``[0, horizon]`` from the compound Poisson process."""
    horizon = _check_real("horizon", horizon, lo=0.0, lo_open=True)
    if require_jump and mu.is_null:
        raise DomainError("env_sample: at least one jump requested but mu has no atoms")
    rng = as_generator(rng_seed)
    if mu.is_null:
        return Environment(horizon)
    masses = mu.masses
    count = rng.poisson(mu.total_mass * horizon)
    times = np.sort(rng.uniform(0.0, horizon, size=count))
    which = rng.choice(len(masses), size=count, p=masses / masses.sum())
    return Environment(horizon, tuple(times.tolist()), tuple(mu.peaks[which].tolist()))


def env_split(omega: Environment, delta: float) -> tuple[Environment, Environment]:
    """Partition jumps into ``dp >= delta`` and ``dp < delta``."""
    big = [(t, p) for t, p in omega.jumps if p >= delta]
    small = [(t, p) for t, p in omega.jumps if p < delta]
    return (Environment.from_jumps(omega.horizon, big, omega.orientation),
            Environment.from_jumps(omega.horizon, small, omega.orientation))


def env_reverse(omega: Environment) -> Environment:
    """Time reversal ``beta = horizon - t``; flips the orientation flag."""
    T = omega.horizon
    flipped = BACKWARD if omega.is_forward else FORWARD
    jumps = [(T - t, p) for t, p in omega.jumps]
    return Environment.from_jumps(T, jumps, flipped)


def env_sample_batch(mu: LevyMeasure, horizon: float, n: int, rng) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Flat arrays ``(times, peaks, offsets)`` for ``n`` independent environments.

    Path ``p`` owns jumps ``offsets[p]:offsets[p+1]``, sorted in time.
    """
    rng = as_generator(rng)
    if mu.is_null:
        return np.zeros(0), np.zeros(0), np.zeros(n + 1, dtype=np.int64)
    counts = rng.poisson(mu.total_mass * horizon, size=n)
    total = int(counts.sum())
    owner = np.repeat(np.arange(n), counts)
    times = rng.uniform(0.0, horizon, size=total)
    masses = mu.masses
    which = rng.choice(len(masses), size=total, p=masses / masses.sum())
    order = np.lexsort((times, owner))
    offsets = np.concatenate([[0], np.cumsum(counts)]).astype(np.int64)
    return times[order], mu.peaks[which][order], offsets
