"""Dense two-phase tableau simplex for small LPs in standard form:

    min c @ x   s.t.   A x = b,  x >= 0

Bland's rule picks both entering and leaving variables, so the method
terminates on degenerate problems. The returned point is a vertex.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

TOL = 1e-9


class LPInfeasible(ValueError):
    def __init__(self, message, phase1_x=None):
        super().__init__(message)
        self.phase1_x = phase1_x


class LPUnbounded(ValueError):
    pass


@dataclass
class LPResult:
    x: np.ndarray
    objective: float
    basis: list[int]
    iterations: int


def _pivot(tab: np.ndarray, row: int, col: int) -> None:
    tab[row] /= tab[row, col]
    for r in range(tab.shape[0]):
        if r != row and tab[r, col] != 0.0:
            tab[r] -= tab[r, col] * tab[row]


def _run(tab: np.ndarray, basis: list[int], n_cols: int, max_iter: int) -> int:
    """Minimize the objective held in the last row of ``tab`` (as reduced costs)."""
    it = 0
    while True:
        cost = tab[-1, :n_cols]
        entering = next((j for j in range(n_cols) if cost[j] < -TOL), None)
        if entering is None:
            return it
        col = tab[:-1, entering]
        rhs = tab[:-1, -1]
        candidates = [i for i in range(col.size) if col[i] > TOL]
        if not candidates:
            raise LPUnbounded("objective is unbounded below")
        ratios = np.array([rhs[i] / col[i] for i in candidates])
        best = ratios.min()
        tied = [candidates[i] for i in np.flatnonzero(ratios <= best + TOL)]
        leaving = min(tied, key=lambda i: basis[i])
        _pivot(tab, leaving, entering)
        basis[leaving] = entering
        it += 1
        if it > max_iter:
            raise RuntimeError("simplex iteration limit reached")


def solve_standard_form(c, A, b, max_iter: int = 100_000) -> LPResult:
    c = np.asarray(c, dtype=np.float64)
    A = np.array(A, dtype=np.float64)
    b = np.array(b, dtype=np.float64)
    m, n = A.shape
    neg = b < 0
    A[neg] *= -1.0
    b[neg] *= -1.0

    # phase 1: artificial variable per row, minimize their sum
    tab = np.zeros((m + 1, n + m + 1))
    tab[:m, :n] = A
    tab[:m, n:n + m] = np.eye(m)
    tab[:m, -1] = b
    tab[-1, :n] = -A.sum(axis=0)
    tab[-1, -1] = -b.sum()
    basis = list(range(n, n + m))
    it = _run(tab, basis, n + m, max_iter)
    if -tab[-1, -1] > 1e-7 * max(1.0, np.abs(b).max(initial=0.0)):
        x = np.zeros(n + m)
        x[basis] = tab[:m, -1]
        raise LPInfeasible("linear program is infeasible", phase1_x=x[:n])

    # drive remaining artificials out of the basis; drop redundant rows
    keep = []
    for r in range(m):
        if basis[r] >= n:
            pivot_col = next((j for j in range(n) if abs(tab[r, j]) > TOL), None)
            if pivot_col is None:
                continue
            _pivot(tab, r, pivot_col)
            basis[r] = pivot_col
        keep.append(r)
    tab = np.vstack([tab[keep][:, list(range(n)) + [n + m]], np.zeros((1, n + 1))])
    basis = [basis[r] for r in keep]

    # phase 2
    tab[-1, :n] = c
    for r, j in enumerate(basis):
        tab[-1] -= c[j] * tab[r]
    it += _run(tab, basis, n, max_iter)
    x = np.zeros(n)
    x[basis] = tab[:-1, -1]
    x[np.abs(x) < TOL] = 0.0
    return LPResult(x=x, objective=float(c @ x), basis=list(basis), iterations=it)
