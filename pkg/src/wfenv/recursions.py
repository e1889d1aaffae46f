"""Stationary moments ``w_n``, Fearnhead tails ``a_n`` and the ancestral type distribution.

``w_n = E[(1 - X(inf))^n]`` is the probability that the killed ASG started
with ``n`` lines is absorbed at 0; it solves

    (s + t + n - 1) w_n = s w_{n+1} + (t nu1 + n - 1) w_{n-1}
                          + (1/n) sum_k C(n,k) s_{n,k} (w_{n+k} - w_n).

``a_n = P(L_inf > n)`` are the tails of the stationary pruned lookdown line
count; they solve

    (s + t + n + 1) a_n = s a_{n-1} + (t nu1 + n + 1) a_{n+1}
                          + (1/n) sum_{j<=n} gamma_{n+1,j} (a_{j-1} - a_j).

Both systems are closed by setting the unknowns beyond a working size ``M``
to zero and solved densely. ``M`` is doubled until the first ``K + 1``
entries stop moving.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import linalg

from .errors import ConvergenceError, DomainError
from .model import LevyMeasure, ModelParams, SigmaTable

MAX_DOUBLINGS = 5


@dataclass(frozen=True)
class MomentVector:
    """Entries ``0..K`` of ``w`` or ``a`` with the diagnostics of the solve.

    ``defect`` is the largest residual of the recursion over ``n <= K/2``,
    evaluated on the returned entries alone. ``change`` is the largest
    difference between the last two working sizes.
    """

    values: np.ndarray
    K: int
    defect: float
    tol: float
    change: float = 0.0
    working_size: int = 0
    kind: str = "w"

    def __getitem__(self, n):
        return self.values[n]

    def __len__(self) -> int:
        return len(self.values)

    def to_dict(self) -> dict:
        return {"K": self.K, "values": self.values.tolist(), "defect": self.defect, "tol": self.tol,
                "change": self.change, "working_size": self.working_size, "kind": self.kind}


def _mu(sigma_table) -> LevyMeasure:
    if isinstance(sigma_table, SigmaTable):
        return sigma_table.mu
    if isinstance(sigma_table, LevyMeasure):
        return sigma_table
    if sigma_table is None:
        return LevyMeasure()
    raise DomainError("expected a SigmaTable or LevyMeasure")


def _table(sigma_table, size: int) -> SigmaTable:
    if isinstance(sigma_table, SigmaTable) and sigma_table.m_max >= size:
        return sigma_table
    return SigmaTable(_mu(sigma_table), size)


def _wn_system(params: ModelParams, tab: SigmaTable, M: int):
    s, th, th1 = params.sigma, params.theta, params.theta1
    A = np.zeros((M, M))
    b = np.zeros(M)
    for n in range(1, M + 1):
        r = n - 1
        A[r, r] = s + th + n - 1 + tab.row_totals[n] / n
        if n >= 2:
            A[r, r - 1] -= th1 + n - 1
        else:
            b[r] += th1
        if n + 1 <= M:
            A[r, r + 1] -= s
        kmax = min(n, M - n)
        if kmax >= 1:
            A[r, n:n + kmax] -= tab.weighted[n, 1:kmax + 1] / n
    return A, b


def _wn_defect(params: ModelParams, tab: SigmaTable, w: np.ndarray, upto: int) -> float:
    s, th, th1 = params.sigma, params.theta, params.theta1
    worst = 0.0
    for n in range(1, upto + 1):
        ks = np.arange(1, n + 1)
        jumps = np.dot(tab.weighted[n, 1:n + 1], w[n + ks] - w[n]) / n
        lhs = (s + th + n - 1) * w[n]
        rhs = s * w[n + 1] + (th1 + n - 1) * w[n - 1] + jumps
        worst = max(worst, abs(lhs - rhs))
    return worst


def _fr_system(params: ModelParams, G: np.ndarray, M: int):
    s, th, th1 = params.sigma, params.theta, params.theta1
    A = np.zeros((M, M))
    b = np.zeros(M)
    for n in range(1, M + 1):
        r = n - 1
        A[r, r] += s + th + n + 1
        if n >= 2:
            A[r, r - 1] -= s
        else:
            b[r] += s
        if n + 1 <= M:
            A[r, r + 1] -= th1 + n + 1
        for j in range(1, n + 1):
            g = G[n + 1, j] / n
            if g == 0.0:
                continue
            # -(g) (a_{j-1} - a_j)
            if j - 1 >= 1:
                A[r, j - 2] -= g
            else:
                b[r] += g
            A[r, j - 1] += g
    return A, b


def _fr_defect(params: ModelParams, G: np.ndarray, a: np.ndarray, upto: int) -> float:
    s, th, th1 = params.sigma, params.theta, params.theta1
    worst = 0.0
    for n in range(1, upto + 1):
        j = np.arange(1, n + 1)
        jumps = np.dot(G[n + 1, 1:n + 1], a[j - 1] - a[j]) / n
        lhs = (s + th + n + 1) * a[n]
        rhs = s * a[n - 1] + (th1 + n + 1) * a[n + 1] + jumps
        worst = max(worst, abs(lhs - rhs))
    return worst


def _doubling(solve, K: int, tol: float):
    M = 2 * K
    prev = solve(M)
    for _ in range(MAX_DOUBLINGS):
        nxt = solve(2 * M)
        change = float(np.max(np.abs(prev[:K + 1] - nxt[:K + 1])))
        if change < tol:
            return nxt[:K + 1], change, 2 * M
        prev, M = nxt, 2 * M
    raise ConvergenceError(f"truncation did not stabilise within tol={tol} after "
                           f"{MAX_DOUBLINGS} doublings (last change {change:.3e} at size {M})")


def _check_K(K: int, tol: float) -> None:
    if int(K) != K or K < 2:
        raise DomainError(f"K: must be an integer >= 2, got {K}")
    if not tol > 0:
        raise DomainError(f"tol: must be positive, got {tol}")


def solve_wn(params: ModelParams, sigma_table=None, K: int = 64, tol: float = 1e-10) -> MomentVector:
    """Stationary moments ``w_0..w_K`` of ``1 - X``."""
    _check_K(K, tol)
    if not params.theta > 0 or not 0.0 < params.nu0 < 1.0:
        raise DomainError("solve_wn needs theta > 0 and nu0 in (0, 1)")
    tables: dict[int, SigmaTable] = {}

    def solve(M):
        tab = tables.setdefault(M, _table(sigma_table, M))
        A, b = _wn_system(params, tab, M)
        return np.concatenate([[1.0], linalg.solve(A, b)])

    w, change, M = _doubling(solve, K, tol)
    defect = _wn_defect(params, _table(sigma_table, K), w, K // 2)
    return MomentVector(w, K, defect, tol, change, M, "w")


def solve_fearnhead(params: ModelParams, sigma_table=None, K: int = 64, tol: float = 1e-10) -> MomentVector:
    """Tails ``a_n = P(L_inf > n)`` for ``n = 0..K``."""
    _check_K(K, tol)

    def gamma(M):
        return _table(sigma_table, M).gamma_table(M + 1)

    def solve(M):
        A, b = _fr_system(params, gamma(M), M)
        return np.concatenate([[1.0], linalg.solve(A, b)])

    a, change, M = _doubling(solve, K, tol)
    G = gamma(K)
    defect = _fr_defect(params, G, np.concatenate([a, [0.0]]), K // 2)
    return MomentVector(a, K, defect, tol, change, M, "a")


def h_series(a: MomentVector, x: float) -> float:
    """Probability that the ancestor is fit: ``sum_n x (1-x)^n a_n``."""
    if not 0.0 <= x <= 1.0:
        raise DomainError(f"x: {x} outside [0, 1]")
    vals = np.asarray(a.values)
    n = np.arange(vals.size)
    return float(np.sum(x * (1.0 - x) ** n * vals))


def h_tail_bound(a: MomentVector, x: float) -> float:
    """Bound ``(1-x)^(K+1)`` on the part of the series beyond ``K``."""
    return (1.0 - x) ** (len(a.values))


def simpson_index(w: MomentVector) -> float:
    """Expected stationary Simpson index ``1 - 2 w_1 + 2 w_2``."""
    if len(w.values) < 3:
        raise DomainError("simpson_index needs w_1 and w_2")
    return 1.0 - 2.0 * w.values[1] + 2.0 * w.values[2]
