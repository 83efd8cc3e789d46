"""Dense two-phase simplex for small equality-form linear programs.

Solves ``max c.x  s.t.  A x = b, x >= 0`` with Bland's anti-cycling rule.
Sizes here are a handful of rows and at most a few hundred columns, so a
full tableau is simple and fast enough.
"""
from dataclasses import dataclass

import numpy as np

from .errors import IndeterminateError

OPTIMAL = "optimal"
INFEASIBLE = "infeasible"
UNBOUNDED = "unbounded"


@dataclass
class LPResult:
    status: str
    x: np.ndarray
    value: float
    duals: np.ndarray
    basis: np.ndarray


def _pivot(T, r, c):
    T[r] /= T[r, c]
    col = T[:, c].copy()
    col[r] = 0.0
    T -= np.outer(col, T[r])


def _refactor(T, T0, basis):
    # rebuild the tableau from the starting one so pivoting round-off cannot accumulate
    m = T.shape[0] - 1
    try:
        rows = np.linalg.solve(T0[:m, basis], T0[:m])
    except np.linalg.LinAlgError:
        return
    if np.all(np.isfinite(rows)):
        T[:m] = rows
        T[-1] = T0[-1] - T0[-1, basis] @ rows


def _run(T, basis, n_cols, tol, max_iter, bounded_ok=False):
    """Maximise the objective held in the last row of ``T`` (stored as -c)."""
    m = T.shape[0] - 1
    T0 = T.copy()
    for _ in range(max_iter):
        obj = T[-1, :n_cols]
        cand = np.nonzero(obj < -tol)[0]
        if cand.size == 0:
            return OPTIMAL
        # smallest-index column with a usable pivot; a column whose entries are
        # all round-off small is skipped rather than read as an unbounded ray
        c = -1
        for j in cand:
            if (T[:m, j] > tol).any():
                c = int(j)
                break
        if c < 0:
            return OPTIMAL if bounded_ok else UNBOUNDED
        col = T[:m, c]
        pos = col > tol
        ratios = np.full(m, np.inf)
        ratios[pos] = T[:m, -1][pos] / col[pos]
        best = ratios.min()
        ties = np.nonzero(ratios <= best + tol * max(1.0, abs(best)))[0]
        r = int(ties[np.argmin(basis[ties])])
        _pivot(T, r, c)
        basis[r] = c
        _refactor(T, T0, basis)
    raise IndeterminateError(f"simplex did not terminate within {max_iter} pivots")


def linprog_max(c, A, b, tol=1e-9, max_iter=5000):
    """Two-phase simplex; returns an :class:`LPResult` with row duals ``y``.

    At an optimum ``y`` satisfies ``A^T y >= c`` with equality on basic columns.
    """
    A = np.array(A, dtype=float, ndmin=2)
    b = np.array(b, dtype=float).reshape(-1)
    c = np.array(c, dtype=float).reshape(-1)
    m, n = A.shape
    if b.shape[0] != m or c.shape[0] != n:
        raise ValueError("inconsistent LP dimensions")
    if not (np.all(np.isfinite(A)) and np.all(np.isfinite(b)) and np.all(np.isfinite(c))):
        raise IndeterminateError("LP data must be finite")
    scale = max(1.0, np.abs(A).max(initial=0.0), np.abs(b).max(initial=0.0))
    tol_s = tol * scale

    sign = np.where(b < 0.0, -1.0, 1.0)
    As = A * sign[:, None]
    bs = b * sign

    # phase 1: artificial basis, maximise -sum(artificials)
    T = np.zeros((m + 1, n + m + 1))
    T[:m, :n] = As
    T[:m, n:n + m] = np.eye(m)
    T[:m, -1] = bs
    T[-1, :n] = -As.sum(axis=0)
    T[-1, -1] = -bs.sum()
    basis = np.arange(n, n + m)
    _run(T, basis, n + m, tol_s, max_iter, bounded_ok=True)
    if -T[-1, -1] > tol_s * max(1, m):
        return LPResult(INFEASIBLE, np.zeros(n), -np.inf, np.zeros(m), basis)

    # drive any zero-level artificials out of the basis
    keep = np.ones(m, dtype=bool)
    for r in range(m):
        if basis[r] >= n:
            nz = np.nonzero(np.abs(T[r, :n]) > tol_s)[0]
            if nz.size:
                _pivot(T, r, int(nz[0]))
                basis[r] = int(nz[0])
            else:
                keep[r] = False  # redundant row
    T = np.vstack([T[:m][keep], T[-1:]])
    basis = basis[keep]
    T = np.delete(T, np.s_[n:n + m], axis=1)
    mk = T.shape[0] - 1

    # phase 2
    T[-1, :] = 0.0
    T[-1, :n] = -c
    for r in range(mk):
        T[-1] -= T[-1, basis[r]] * T[r]
    status = _run(T, basis, n, tol_s, max_iter)
    x = np.zeros(n)
    x[basis] = T[:mk, -1]
    if status == UNBOUNDED:
        return LPResult(UNBOUNDED, x, np.inf, np.zeros(m), basis)
    rows = np.nonzero(keep)[0]
    B = A[rows][:, basis]
    # re-solve the basic system from the original data to shed tableau round-off
    try:
        xb = np.linalg.solve(B, b[rows])
        if np.all(np.isfinite(xb)) and xb.min(initial=0.0) > -1e-9 * scale:
            x[:] = 0.0
            x[basis] = np.maximum(xb, 0.0)
    except np.linalg.LinAlgError:
        pass
    if np.abs(A @ x - b).max(initial=0.0) > 1e-6 * scale or x.min(initial=0.0) < -1e-7 * scale:
        raise IndeterminateError("simplex solution failed the residual check")

    # duals from the final basis on the original rows
    y = np.zeros(m)
    try:
        y[rows] = np.linalg.solve(B.T, c[basis])
    except np.linalg.LinAlgError:
        y[rows] = np.linalg.lstsq(B.T, c[basis], rcond=None)[0]
    return LPResult(OPTIMAL, x, float(c @ x), y, basis)


def feasible(A, b, tol=1e-9):
    """True iff ``A x = b`` has a solution with ``x >= 0``."""
    A = np.array(A, dtype=float, ndmin=2)
    return linprog_max(np.zeros(A.shape[1]), A, b, tol).status == OPTIMAL
