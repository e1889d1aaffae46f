"""Closed-form spectral calculus for the line-counting chains without selection.

With ``sigma = 0`` and no environment the killed ASG and the pruned lookdown
ASG have lower-triangular generators ``Q0`` that diagonalise explicitly as
``Q0 = U D V`` with ``D = -diag(lambda)``, ``U V = V U = I``:

killed   states ``0..K`` and the cemetery; ``lambda_k = k(k-1+theta)``,
         ``gamma_k = k(k-1) + k theta nu1``, ``lambda_dagger = 0``.
pldasg   states ``1..K``; ``lambda_k = (k-1)(k+theta)``,
         ``gamma_k = k(k-1) + (k-1) theta nu1 + theta nu0``.

An environment jump of size ``z`` acts on the line count through the
binomial matrix ``B(z)``, ``B_{i,j} = P(i + Bin(i, z) = j)``. Reading the
environment from the present backwards, the coefficient matrix is

    C = U E(g_1) V B(z_1) U E(g_2) V B(z_2) ... U E(g_last),

with ``E(g) = diag(exp(-lambda g))`` and ``g_m`` the gaps between
consecutive jumps. Moments and the ancestral type distribution follow by
pairing rows of ``C`` with the polynomials ``P_k(y) = sum_i v_{k,i} y^i``.

``U`` and ``V`` have entries of wildly different sizes with alternating
signs, so everything here runs in multiple precision (gmpy2 ``mpfr``) with a
working precision chosen from the observed magnitudes. Products are only
carried over the current support of the row vectors. The state space is
truncated at ``K``; mass that a binomial step pushes above ``K`` is dropped
and accumulated into ``dropped_mass``, which bounds the resulting error of
any moment or of ``h`` in absolute value.

All user-facing routines take environments in forward orientation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import gmpy2
import numpy as np
from gmpy2 import mpfr

from .errors import DomainError, TruncationError
from .model import Environment
from .recursions import MomentVector

KILLED = "killed"
PLDASG = "pldasg"
DEFAULT_KDIM = 256
GUARD_BITS = 64


def _ctx(prec: int):
    return gmpy2.context(gmpy2.get_context(), precision=prec)


def _zeros(shape) -> np.ndarray:
    out = np.empty(shape, dtype=object)
    out.fill(mpfr(0))
    return out


def _log2_max(a: np.ndarray) -> float:
    worst = -math.inf
    for v in a.flat:
        if v != 0:
            worst = max(worst, float(gmpy2.log2(abs(v))))
    return max(worst, 0.0)


class SpectralDecomposition:
    """``U``, ``V`` and eigenvalues of the null-environment generator.

    Arrays are indexed by position; ``states`` maps positions to line counts.
    For the killed kind the last position is the cemetery.
    """

    def __init__(self, kind: str, theta: float, nu0: float, K_dim: int, U, V, lam, gam, precision: int):
        self.kind = kind
        self.theta = float(theta)
        self.nu0 = float(nu0)
        self.K_dim = int(K_dim)
        self.U = U
        self.V = V
        self.lam = lam
        self.gam = gam
        self.precision = precision
        if kind == KILLED:
            self.states = list(range(K_dim + 1)) + ["dagger"]
            self.offset = 0
        else:
            self.states = list(range(1, K_dim + 1))
            self.offset = 1

    @property
    def dim(self) -> int:
        return len(self.states)

    @property
    def has_dagger(self) -> bool:
        return self.kind == KILLED

    def index(self, state: int) -> int:
        i = state - self.offset
        if not 0 <= i <= self.K_dim - self.offset:
            raise DomainError(f"state {state} outside the truncated block")
        return i

    @property
    def lam_float(self) -> np.ndarray:
        return np.array([float(v) for v in self.lam])

    def u(self, i, j) -> float:
        return float(self.U[self._pos(i), self._pos(j)])

    def v(self, i, j) -> float:
        return float(self.V[self._pos(i), self._pos(j)])

    def _pos(self, s) -> int:
        if s == "dagger":
            if not self.has_dagger:
                raise DomainError("no cemetery in this decomposition")
            return self.dim - 1
        return self.index(s)

    def rate_matrix(self) -> np.ndarray:
        """The null-environment generator on the truncated block (float)."""
        th0 = self.theta * self.nu0
        Q = np.zeros((self.dim, self.dim))
        lam = self.lam_float
        gam = np.array([float(g) for g in self.gam])
        for a, s in enumerate(self.states):
            if s == "dagger":
                continue
            Q[a, a] = -lam[a]
            if self.kind == KILLED:
                if s >= 1:
                    Q[a, a - 1] = gam[a]
                    Q[a, -1] = s * th0
            else:
                if s >= 2:
                    Q[a, a - 1] = gam[a]
                    Q[a, : a - 1] = th0
        return Q

    def identity_errors(self) -> dict:
        """Max-abs errors of ``UV - I``, ``VU - I`` and ``U D V - Q0``."""
        with _ctx(self.precision):
            UV = self.U.dot(self.V)
            VU = self.V.dot(self.U)
            UD = self.U * np.array([-l for l in self.lam], dtype=object)[None, :]
            UDV = UD.dot(self.V)
        eye = np.eye(self.dim)
        f = np.vectorize(float, otypes=[float])
        return {"UV": float(np.max(np.abs(f(UV) - eye))),
                "VU": float(np.max(np.abs(f(VU) - eye))),
                "UDV": float(np.max(np.abs(f(UDV) - self.rate_matrix())))}

    def basis(self, y: float) -> np.ndarray:
        """``P_k(y)`` for every position ``k`` (mpfr); ``y^dagger = 0``."""
        with _ctx(self.precision):
            yy = mpfr(y)
            powers = _zeros(self.dim)
            for a, s in enumerate(self.states):
                if s != "dagger":
                    powers[a] = yy ** s
            return self.V.dot(powers)

    def binomial_matrix(self, z: float, support: int | None = None) -> tuple[np.ndarray, np.ndarray]:
        """``B(z)`` on the block (mpfr) and, per row, the mass sent beyond ``K``."""
        return binomial_matrix(z, self.K_dim, self.kind, self.precision, support)


def _build_killed(theta: float, nu0: float, K: int, prec: int):
    with _ctx(prec):
        th = mpfr(theta)
        th0 = th * mpfr(nu0)
        th1 = th - th0
        D = K + 2
        lam = np.array([mpfr(k) * (k - 1 + th) for k in range(K + 1)] + [mpfr(0)], dtype=object)
        gam = np.array([mpfr(k) * (k - 1) + k * th1 for k in range(K + 1)] + [mpfr(0)], dtype=object)
        U = _zeros((D, D))
        V = _zeros((D, D))
        for j in range(K + 1):
            U[j, j] = mpfr(1)
            for i in range(j + 1, K + 1):
                U[i, j] = U[i - 1, j] * gam[i] / (lam[i] - lam[j])
        s = mpfr(0)
        for i in range(1, K + 1):
            s = s * gam[i] / lam[i] + mpfr(i) / lam[i]
            U[i, D - 1] = th0 * s
        U[D - 1, D - 1] = mpfr(1)
        for i in range(K + 1):
            V[i, i] = mpfr(1)
            for j in range(i - 1, -1, -1):
                V[i, j] = V[i, j + 1] * (-gam[j + 1] / (lam[i] - lam[j]))
            if i >= 1:
                acc = gmpy2.fsum([k * V[i, k] for k in range(1, i + 1)])
                V[i, D - 1] = -th0 / lam[i] * acc
        V[D - 1, D - 1] = mpfr(1)
    return U, V, lam, gam


def _build_pldasg(theta: float, nu0: float, K: int, prec: int):
    with _ctx(prec):
        th = mpfr(theta)
        th0 = th * mpfr(nu0)
        th1 = th - th0
        # position a holds state a + 1
        lam = np.array([mpfr(k - 1) * (k + th) for k in range(1, K + 1)], dtype=object)
        gam = np.array([mpfr(k) * (k - 1) + (k - 1) * th1 + th0 for k in range(1, K + 1)], dtype=object)
        U = _zeros((K, K))
        V = _zeros((K, K))
        for j in range(K):
            U[j, j] = mpfr(1)
            tail = mpfr(0)  # sum_{l=j}^{i-2} u_{l,j}
            for i in range(j + 1, K):
                if i - 2 >= j:
                    tail += U[i - 2, j]
                U[i, j] = (gam[i] * U[i - 1, j] + th0 * tail) / (lam[i] - lam[j])
        for i in range(K):
            V[i, i] = mpfr(1)
            tail = mpfr(0)  # sum_{l=j+2}^{i} v_{i,l}
            for j in range(i - 1, -1, -1):
                if j + 2 <= i:
                    tail += V[i, j + 2]
                V[i, j] = -(tail * th0 + V[i, j + 1] * gam[j + 1]) / (lam[i] - lam[j])
    return U, V, lam, gam


def build_decomposition(kind: str, theta: float, nu0: float, K_dim: int = DEFAULT_KDIM,
                        precision: int | None = None) -> SpectralDecomposition:
    """Explicit ``U``, ``V``, eigenvalues and down-rates for ``kind`` in ``{"killed", "pldasg"}``.

    ``K_dim`` is the largest line count kept. The working precision (bits)
    is picked from the magnitudes of ``U`` and ``V`` unless given.
    """
    if kind not in (KILLED, PLDASG):
        raise DomainError(f"kind: expected 'killed' or 'pldasg', got {kind!r}")
    if int(K_dim) != K_dim or K_dim < 2:
        raise DomainError(f"K_dim: must be an integer >= 2, got {K_dim}")
    if not (theta >= 0 and math.isfinite(theta)):
        raise DomainError(f"theta: must be nonnegative, got {theta}")
    if not 0.0 <= nu0 <= 1.0:
        raise DomainError(f"nu0: {nu0} outside [0, 1]")
    K_dim = int(K_dim)
    build = _build_killed if kind == KILLED else _build_pldasg
    if kind == KILLED:
        if not theta > 0:
            raise DomainError("killed decomposition needs theta > 0 (lambda_1 would equal lambda_0)")
        if not 0.0 < nu0 < 1.0:
            raise DomainError("killed decomposition needs nu0 in (0, 1)")
    lam_check = ([k * (k - 1 + theta) for k in range(K_dim + 1)] if kind == KILLED
                 else [(k - 1) * (k + theta) for k in range(1, K_dim + 1)])
    if len(set(lam_check)) != len(lam_check):
        raise DomainError("degenerate spectrum: repeated eigenvalues")
    if precision is None:
        U, V, _, _ = build(theta, nu0, K_dim, 128)
        bits = _log2_max(U) + _log2_max(V) + math.log2(K_dim + 2)
        precision = int(53 + GUARD_BITS + math.ceil(bits))
    U, V, lam, gam = build(theta, nu0, K_dim, precision)
    return SpectralDecomposition(kind, theta, nu0, K_dim, U, V, lam, gam, precision)


def binomial_matrix(z: float, K_dim: int, kind: str = KILLED, precision: int = 128,
                    support: int | None = None) -> tuple[np.ndarray, np.ndarray]:
    """``B_{i,j}(z) = C(i, j-i) z^(j-i) (1-z)^(2i-j)`` on the truncated block.

    Rows of the absorbing states (0 and the cemetery) are unit rows. Returns
    the matrix and the per-row mass lost above ``K_dim``. Only rows with
    state ``<= support`` are filled when ``support`` is given.
    """
    if not 0.0 < z < 1.0:
        raise DomainError(f"z: {z} outside (0, 1)")
    killed = kind == KILLED
    offset = 0 if killed else 1
    dim = K_dim + 2 if killed else K_dim
    top = K_dim if support is None else min(support, K_dim)
    with _ctx(precision):
        zz = mpfr(z)
        qq = 1 - zz
        B = _zeros((dim, dim))
        lost = _zeros(dim)
        if killed:
            B[0, 0] = mpfr(1)
            B[dim - 1, dim - 1] = mpfr(1)
        for i in range(max(1, offset), top + 1):
            a = i - offset
            for k in range(i + 1):
                w = gmpy2.comb(i, k) * zz ** k * qq ** (i - k)
                if i + k <= K_dim:
                    B[a, i + k - offset] = w
                else:
                    lost[a] += w
    return B, lost


@dataclass(frozen=True)
class QuenchedCoefficients:
    """Rows ``n`` of the coefficient matrix ``C`` (mpfr), with diagnostics.

    ``dropped_mass`` bounds the truncation error of any quantity computed
    from these rows; ``spectral_bound`` is the decay factor
    ``4^k (2ek)^((k+theta)/2) exp(-lambda_k g)`` at ``k = K_dim + 1`` with
    ``g`` the oldest gap.
    """

    kind: str
    rows: tuple
    C: np.ndarray
    T: float
    env_digest: str
    K_dim: int
    n_jumps: int
    dropped_mass: float
    spectral_bound: float
    columns: tuple

    def row(self, n: int) -> np.ndarray:
        return self.C[self.rows.index(n)]

    def as_float(self) -> np.ndarray:
        return np.vectorize(float, otypes=[float])(self.C)

    def to_dict(self) -> dict:
        return {"n": list(self.rows), "T": self.T, "env_digest": self.env_digest,
                "coefficients": self.as_float().tolist(),
                "diagnostics": {"kind": self.kind, "K_dim": self.K_dim, "n_jumps": self.n_jumps,
                                "dropped_mass": self.dropped_mass,
                                "spectral_bound": self.spectral_bound,
                                "columns": [str(c) for c in self.columns]}}


def _segments(omega: Environment, present: float, window: float | None):
    """Gaps and peaks read from ``present`` backwards, plus the oldest gap.

    Jumps at forward times ``t`` with ``present - window < t <= present``
    are used; ``window=None`` means an unbounded look-back, and the oldest
    gap is then ``None``.
    """
    if not omega.is_forward:
        raise DomainError("pass the environment in forward orientation")
    lo = -math.inf if window is None else present - window
    picked = [(t, p) for t, p in omega.jumps if lo < t <= present]
    picked.sort(reverse=True)
    segs = []
    last = present
    for t, p in picked:
        segs.append((last - t, p))
        last = t
    oldest = None if window is None else last - lo
    return segs, oldest


def _sweep(dec: SpectralDecomposition, R: np.ndarray, segs, oldest):
    """Carry rows ``R`` (eigen basis) back through ``segs``; returns rows and dropped mass."""
    dim = dec.dim
    dag = dim - 1 if dec.has_dagger else None
    lam = dec.lam
    dropped = [mpfr(0)] * R.shape[0]
    # support: largest non-cemetery position with a nonzero entry
    nz = [a for a in range(dim) if a != dag and any(R[r, a] != 0 for r in range(R.shape[0]))]
    s = max(nz) if nz else 0
    with _ctx(dec.precision):
        for gap, z in segs:
            idx = list(range(s + 1)) + ([dag] if dag is not None else [])
            E = np.array([gmpy2.exp(-lam[a] * mpfr(gap)) for a in idx], dtype=object)
            sub = R[:, idx] * E[None, :]
            dist = sub.dot(dec.V[np.ix_(idx, idx)])
            state_top = s + dec.offset
            B, lost = binomial_matrix(z, dec.K_dim, dec.kind, dec.precision, support=state_top)
            new_s = min(2 * state_top, dec.K_dim) - dec.offset
            nidx = list(range(new_s + 1)) + ([dag] if dag is not None else [])
            moved = dist.dot(B[np.ix_(idx, nidx)])
            for r in range(R.shape[0]):
                dropped[r] += gmpy2.fsum([dist[r, c] * lost[a] for c, a in enumerate(idx)])
            R = _zeros(R.shape)
            R[:, nidx] = moved.dot(dec.U[np.ix_(nidx, nidx)])
            s = new_s
        if oldest is not None:
            E = np.array([gmpy2.exp(-l * mpfr(oldest)) for l in lam], dtype=object)
            R = R * E[None, :]
    return R, max(float(d) for d in dropped)


def _spectral_bound(dec: SpectralDecomposition, gap: float | None, n_jumps: int) -> float:
    if n_jumps == 0:
        return 0.0
    k = dec.K_dim + 1
    lam = k * (k - 1 + dec.theta) if dec.kind == KILLED else (k - 1) * (k + dec.theta)
    if gap is None:
        return 0.0
    log_b = k * math.log(4.0) + 0.5 * (k + dec.theta) * math.log(2 * math.e * k) - lam * gap
    return math.exp(log_b) if log_b < 700 else math.inf


def _check_kind(dec: SpectralDecomposition, kind: str) -> None:
    if dec.kind != kind:
        raise DomainError(f"this operation needs a {kind} decomposition, got {dec.kind}")


def quenched_moment_coeffs(decomp: SpectralDecomposition, omega: Environment, n_max: int,
                           T: float | None = None, tol: float = 1e-8) -> QuenchedCoefficients:
    """Rows ``0..n_max`` of ``C(omega, T)`` for the killed chain.

    The present is ``omega.horizon``; the jumps used are those at forward
    times in ``(horizon - T, horizon]`` (``T`` defaults to the horizon). A jump
    at the present itself acts first, at backward time 0.
    """
    _check_kind(decomp, KILLED)
    if not 0 <= n_max <= decomp.K_dim:
        raise DomainError(f"n_max: must lie in [0, {decomp.K_dim}]")
    T = omega.horizon if T is None else float(T)
    if not T > 0:
        raise DomainError(f"T: must be positive, got {T}")
    segs, oldest = _segments(omega, omega.horizon, T)
    R = decomp.U[: n_max + 1, :].copy()
    C, dropped = _sweep(decomp, R, segs, oldest)
    bound = _spectral_bound(decomp, oldest, len(segs))
    if dropped > tol:
        raise TruncationError(f"truncation at K_dim={decomp.K_dim} drops mass {dropped:.3e} > tol={tol}")
    return QuenchedCoefficients(KILLED, tuple(range(n_max + 1)), C, T, omega.digest(), decomp.K_dim,
                                len(segs), dropped, bound, tuple(decomp.states))


def quenched_moment_eval(coeffs: QuenchedCoefficients, decomp: SpectralDecomposition, n: int,
                         x: float) -> float:
    """``E[(1 - X(present))^n | X(present - T) = x] = sum_k C_{n,k} P_k(1 - x)``."""
    if not 0.0 <= x <= 1.0:
        raise DomainError(f"x: {x} outside [0, 1]")
    P = decomp.basis(1.0 - x)
    with _ctx(decomp.precision):
        return float(gmpy2.fsum([c * p for c, p in zip(coeffs.row(n), P)]))


def quenched_wn(decomp: SpectralDecomposition, omega: Environment, n_max: int,
                tol: float = 1e-8) -> np.ndarray:
    """Absorption limits ``W_n(omega)`` for ``n = 0..n_max``.

    ``omega`` is read as an environment on ``(-inf, present]`` that is null
    before its first jump, so the limit ``T -> inf`` is exact.
    """
    _check_kind(decomp, KILLED)
    if not 0 <= n_max <= decomp.K_dim:
        raise DomainError(f"n_max: must lie in [0, {decomp.K_dim}]")
    segs, _ = _segments(omega, omega.horizon, None)
    R = decomp.U[: n_max + 1, :].copy()
    C, dropped = _sweep(decomp, R, segs, None)
    if dropped > tol:
        raise TruncationError(f"truncation at K_dim={decomp.K_dim} drops mass {dropped:.3e} > tol={tol}")
    return np.array([float(C[n, 0]) for n in range(n_max + 1)])


def quenched_ancestral_coeffs(decomp: SpectralDecomposition, omega: Environment, T: float | None = None,
                              tol: float = 1e-8) -> QuenchedCoefficients:
    """Row ``C_{1,.}`` for the pruned lookdown chain.

    ``omega`` starts at the time of the initial frequency (forward time 0);
    the individual sampled at time ``T`` looks back through jumps in
    ``(0, T]``. ``T=None`` gives the limit ``T -> inf``, which for a finite
    environment is reached as soon as ``T`` passes the last jump.
    """
    _check_kind(decomp, PLDASG)
    if T is not None and not T > 0:
        raise DomainError(f"T: must be positive, got {T}")
    present = omega.horizon if T is None else float(T)
    segs, oldest = _segments(omega, present, present)
    # row 1 of U is e_1 and E(.) fixes it, so the gap between the present and
    # the most recent jump is irrelevant: T = inf is covered by T = horizon.
    R = decomp.U[:1, :].copy()
    C, dropped = _sweep(decomp, R, segs, oldest)
    bound = _spectral_bound(decomp, oldest, len(segs))
    if dropped > tol:
        raise TruncationError(f"truncation at K_dim={decomp.K_dim} drops mass {dropped:.3e} > tol={tol}")
    return QuenchedCoefficients(PLDASG, (1,), C, math.inf if T is None else present, omega.digest(),
                                decomp.K_dim, len(segs), dropped, bound, tuple(decomp.states))


def quenched_ancestral_eval(coeffs: QuenchedCoefficients, decomp: SpectralDecomposition, x: float) -> float:
    """``h(x) = 1 - sum_{k>=1} C_{1,k} P_k(1 - x)``."""
    if not 0.0 <= x <= 1.0:
        raise DomainError(f"x: {x} outside [0, 1]")
    P = decomp.basis(1.0 - x)
    with _ctx(decomp.precision):
        return float(1 - gmpy2.fsum([c * p for c, p in zip(coeffs.row(1), P)]))


def mixed_env_moments(decomp: SpectralDecomposition, zeta_T: Environment, w: MomentVector,
                      n_max: int, tol: float = 1e-8) -> np.ndarray:
    """Moments ``n = 0..n_max`` at the present after an annealed past and the recent ``zeta_T``.

    ``zeta_T`` covers ``[present - T, present]`` with ``T = zeta_T.horizon``;
    before it the population is stationary with moments ``w``.
    """
    coeffs = quenched_moment_coeffs(decomp, zeta_T, n_max, tol=tol)
    with _ctx(decomp.precision):
        dist = coeffs.C.dot(decomp.V)
    out = np.zeros(n_max + 1)
    wv = np.asarray(w.values)
    for n in range(n_max + 1):
        acc = []
        for a, s in enumerate(decomp.states):
            if s == "dagger":
                continue
            p = float(dist[n, a])
            if p == 0.0:
                continue
            if s >= wv.size:
                if abs(p) > tol:
                    raise DomainError(f"w has entries up to {wv.size - 1}; need w_{s}")
                continue
            acc.append(p * wv[s])
        out[n] = math.fsum(acc)
    return out
