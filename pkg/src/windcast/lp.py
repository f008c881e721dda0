"""Linear programs and a two-phase primal simplex (Bland's rule).

``solve`` defaults to the in-house dense simplex. Large structured problems
(the bidding LP with many scenarios, the quantile-regression fits) pass
``method="highs"`` to use scipy's HiGHS through the same interface.
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass, replace
from typing import Iterable, Optional, Tuple

import numpy as np
import scipy.sparse as sp

from .errors import DimensionMismatch, IterationLimit, OutOfBounds

INF = math.inf
PIVOT_TOL = 1e-9
FEAS_TOL = 1e-7
RELATIONS = ("<=", "=", ">=")


@dataclass(frozen=True)
class LinearProgram:
    """``sense c.x`` subject to ``A x (<=|=|>=) b`` and ``lo <= x <= hi``.

    ``A`` may be a dense array or a scipy sparse matrix. Infinite bounds use
    ``math.inf``.
    """

    c: np.ndarray
    A: object
    relations: Tuple[str, ...]
    b: np.ndarray
    lo: np.ndarray
    hi: np.ndarray
    sense: str = "max"

    def __post_init__(self):
        c = np.asarray(self.c, dtype=float)
        b = np.asarray(self.b, dtype=float).reshape(-1)
        A = self.A if sp.issparse(self.A) else np.asarray(self.A, dtype=float)
        if not sp.issparse(A) and A.ndim != 2 and A.size == b.size * c.size:
            A = A.reshape(b.size, c.size)
        lo = np.broadcast_to(np.asarray(self.lo, dtype=float), c.shape).copy()
        hi = np.broadcast_to(np.asarray(self.hi, dtype=float), c.shape).copy()
        rel = tuple(self.relations)
        if A.shape != (b.size, c.size):
            raise DimensionMismatch(f"A is {A.shape}, expected {(b.size, c.size)}")
        if len(rel) != b.size or any(r not in RELATIONS for r in rel):
            raise DimensionMismatch("one relation ('<=', '=', '>=') per constraint row")
        if (lo > hi).any():
            raise ValueError("lower bound above upper bound")
        if self.sense not in ("max", "min"):
            raise ValueError("sense must be 'max' or 'min'")
        for name, val in (("c", c), ("A", A), ("relations", rel), ("b", b), ("lo", lo), ("hi", hi)):
            object.__setattr__(self, name, val)

    @property
    def n_vars(self) -> int:
        return self.c.size

    @property
    def n_rows(self) -> int:
        return self.b.size

    def dense_A(self) -> np.ndarray:
        return self.A.toarray() if sp.issparse(self.A) else self.A

    def objective(self, x) -> float:
        return float(self.c @ np.asarray(x, dtype=float))


@dataclass
class LpSolution:
    status: str
    x: Optional[np.ndarray] = None
    objective: float = math.nan
    basis: Tuple[int, ...] = ()
    iterations: int = 0
    # d(objective)/d(b) per row, in the LP's own sense; HiGHS backend only
    duals: Optional[np.ndarray] = None

    @property
    def optimal(self) -> bool:
        return self.status == "optimal"


def max_violation(lp: LinearProgram, x) -> Tuple[float, float]:
    """Largest constraint-row and bound violations of ``x``."""
    x = np.asarray(x, dtype=float)
    ax = lp.A @ x
    rel = np.array(lp.relations)
    row = np.zeros(lp.n_rows)
    le, eq, ge = rel == "<=", rel == "=", rel == ">="
    row[le] = np.maximum(ax[le] - lp.b[le], 0.0)
    row[ge] = np.maximum(lp.b[ge] - ax[ge], 0.0)
    row[eq] = np.abs(ax[eq] - lp.b[eq])
    bound = np.maximum(np.maximum(lp.lo - x, x - lp.hi), 0.0)
    return (float(row.max()) if row.size else 0.0, float(bound.max()) if bound.size else 0.0)


def fix_variables(lp: LinearProgram, assignments: Iterable[Tuple[int, float]],
                  tol: float = 1e-7) -> LinearProgram:
    """Copy of ``lp`` with the given variables pinned (``lo = hi = value``).

    Values within ``tol`` outside the bounds are snapped onto them.
    """
    lo, hi = lp.lo.copy(), lp.hi.copy()
    for idx, value in assignments:
        if not 0 <= idx < lp.n_vars:
            raise OutOfBounds(f"variable index {idx} out of range")
        if value < lo[idx] - tol or value > hi[idx] + tol:
            raise OutOfBounds(f"x[{idx}] = {value} outside [{lo[idx]}, {hi[idx]}]")
        value = min(max(value, lo[idx]), hi[idx])
        lo[idx] = hi[idx] = value
    return replace(lp, lo=lo, hi=hi)


def dump(lp: LinearProgram) -> str:
    """Fixed textual rendering used for golden-file comparisons."""
    out = io.StringIO()
    fmt = lambda v: repr(float(v))  # noqa: E731
    out.write(f"{lp.sense} {' '.join(fmt(v) for v in lp.c)}\n")
    A = lp.dense_A()
    for i in range(lp.n_rows):
        out.write(f"row {' '.join(fmt(v) for v in A[i])} {lp.relations[i]} {fmt(lp.b[i])}\n")
    for j in range(lp.n_vars):
        out.write(f"bound {j} {fmt(lp.lo[j])} {fmt(lp.hi[j])}\n")
    return out.getvalue()


# --------------------------------------------------------------------------
# Standard form and the tableau simplex
# --------------------------------------------------------------------------


def _standard_form(lp: LinearProgram):
    """Rewrite as ``min cs.y  s.t.  As y = bs, y >= 0``.

    Returns the pieces plus a recovery map ``x = offset + R y``.
    """
    A = lp.dense_A()
    m, n = A.shape
    cols, cost = [], []
    R_rows, R_cols, R_vals = [], [], []
    offset = np.zeros(n)
    extra_rows = []  # (column index in y, upper bound) for finite boxes
    sign = -1.0 if lp.sense == "max" else 1.0
    for j in range(n):
        lo, hi = lp.lo[j], lp.hi[j]
        a = A[:, j]
        cj = sign * lp.c[j]
        if math.isfinite(lo):
            offset[j] = lo
            k = len(cols)
            cols.append(a)
            cost.append(cj)
            R_rows.append(j), R_cols.append(k), R_vals.append(1.0)
            if math.isfinite(hi):
                extra_rows.append((k, hi - lo))
        elif math.isfinite(hi):
            offset[j] = hi
            k = len(cols)
            cols.append(-a)
            cost.append(-cj)
            R_rows.append(j), R_cols.append(k), R_vals.append(-1.0)
        else:
            k = len(cols)
            cols.extend((a, -a))
            cost.extend((cj, -cj))
            R_rows.extend((j, j)), R_cols.extend((k, k + 1)), R_vals.extend((1.0, -1.0))
    n_struct = len(cols)
    body = np.array(cols).T if cols else np.zeros((m, 0))
    rhs = lp.b - A @ offset
    rel = list(lp.relations)

    # box rows y_k <= width
    box = np.zeros((len(extra_rows), n_struct))
    for r, (k, width) in enumerate(extra_rows):
        box[r, k] = 1.0
    body = np.vstack([body, box]) if extra_rows else body
    rhs = np.concatenate([rhs, [w for _, w in extra_rows]])
    rel += ["<="] * len(extra_rows)

    rows = body.shape[0]
    n_slack = sum(r != "=" for r in rel)
    As = np.zeros((rows, n_struct + n_slack))
    As[:, :n_struct] = body
    s = n_struct
    slack_col = [-1] * rows
    for i, r in enumerate(rel):
        if r == "<=":
            As[i, s] = 1.0
        elif r == ">=":
            As[i, s] = -1.0
        if r != "=":
            slack_col[i] = s
            s += 1
    cs = np.concatenate([np.asarray(cost, dtype=float), np.zeros(n_slack)])
    neg = rhs < 0
    As[neg] *= -1.0
    rhs = np.where(neg, -rhs, rhs)
    R = sp.csr_matrix((R_vals, (R_rows, R_cols)), shape=(n, As.shape[1])).toarray()
    return As, rhs, cs, slack_col, R, offset, sign


def _pivot(T: np.ndarray, r: int, c: int) -> None:
    T[r] /= T[r, c]
    col = T[:, c].copy()
    col[r] = 0.0
    T -= np.outer(col, T[r])


def _bland(T: np.ndarray, basis: list, allowed: int, max_iter: int, counter: list) -> str:
    """Minimize the objective held in the last row of ``T``.

    Only the first ``allowed`` columns may enter the basis.
    """
    m = T.shape[0] - 1
    while True:
        reduced = T[-1, :allowed]
        candidates = np.flatnonzero(reduced < -PIVOT_TOL)
        if candidates.size == 0:
            return "optimal"
        col = int(candidates[0])
        column = T[:m, col]
        rows = np.flatnonzero(column > PIVOT_TOL)
        if rows.size == 0:
            return "unbounded"
        ratios = T[rows, -1] / column[rows]
        best = ratios.min()
        ties = rows[ratios <= best + PIVOT_TOL * max(1.0, abs(best))]
        row = int(min(ties, key=lambda i: basis[i]))
        counter[0] += 1
        if counter[0] > max_iter:
            raise IterationLimit(f"simplex exceeded {max_iter} pivots")
        _pivot(T, row, col)
        basis[row] = col


def simplex(lp: LinearProgram, max_iter: Optional[int] = None) -> LpSolution:
    """Two-phase primal simplex on a dense tableau with Bland's rule."""
    As, rhs, cs, slack_col, R, offset, sign = _standard_form(lp)
    m, n = As.shape
    if max_iter is None:
        max_iter = 100 * (m + n) + 100
    counter = [0]

    # initial basis: slack columns with +1 after sign normalisation, else artificials
    basis, art_rows = [], []
    for i in range(m):
        s = slack_col[i]
        if s >= 0 and As[i, s] == 1.0:
            basis.append(s)
        else:
            basis.append(-1)
            art_rows.append(i)
    n_art = len(art_rows)
    T = np.zeros((m + 1, n + n_art + 1))
    T[:m, :n] = As
    T[:m, -1] = rhs
    for k, i in enumerate(art_rows):
        T[i, n + k] = 1.0
        basis[i] = n + k

    if n_art:
        T[-1, :] = 0.0
        T[-1, n:n + n_art] = 1.0
        for i in art_rows:
            T[-1] -= T[i]
        _bland(T, basis, n + n_art, max_iter, counter)
        if -T[-1, -1] > FEAS_TOL * max(1.0, np.abs(rhs).max(initial=0.0)):
            return LpSolution("infeasible", iterations=counter[0])
        # drive artificials out; drop rows that are redundant
        keep = []
        for i in range(m):
            if basis[i] >= n:
                nz = np.flatnonzero(np.abs(T[i, :n]) > PIVOT_TOL)
                if nz.size:
                    _pivot(T, i, int(nz[0]))
                    basis[i] = int(nz[0])
                    keep.append(i)
            else:
                keep.append(i)
        T = np.vstack([T[keep][:, list(range(n)) + [-1]], np.zeros((1, n + 1))])
        basis = [basis[i] for i in keep]

    # phase 2 objective row in terms of the current basis
    T[-1, :] = 0.0
    T[-1, :n] = cs
    for i, j in enumerate(basis):
        if T[-1, j] != 0.0:
            T[-1] -= T[-1, j] * T[i]
    status = _bland(T, basis, n, max_iter, counter)
    if status == "unbounded":
        return LpSolution("unbounded", iterations=counter[0])
    y = np.zeros(n)
    for i, j in enumerate(basis):
        y[j] = T[i, -1]
    x = offset + R @ y
    x = np.clip(x, lp.lo, lp.hi)
    return LpSolution("optimal", x, lp.objective(x), tuple(int(j) for j in basis), counter[0])


def _highs(lp: LinearProgram) -> LpSolution:
    from scipy.optimize import linprog

    rel = np.array(lp.relations)
    A = lp.A if sp.issparse(lp.A) else sp.csr_matrix(lp.A)
    A = sp.csr_matrix(A)
    le, ge, eq = rel == "<=", rel == ">=", rel == "="
    A_ub = sp.vstack([A[le], -A[ge]]) if (le.any() or ge.any()) else None
    b_ub = np.concatenate([lp.b[le], -lp.b[ge]]) if A_ub is not None else None
    A_eq = A[eq] if eq.any() else None
    b_eq = lp.b[eq] if eq.any() else None
    sign = -1.0 if lp.sense == "max" else 1.0
    bounds = [(None if not math.isfinite(l) else l, None if not math.isfinite(h) else h)
              for l, h in zip(lp.lo, lp.hi)]
    res = linprog(sign * lp.c, A_ub=A_ub, b_ub=b_ub, A_eq=A_eq, b_eq=b_eq,
                  bounds=bounds, method="highs")
    if res.status == 0:
        x = np.clip(res.x, lp.lo, lp.hi)
        duals = np.zeros(lp.n_rows)
        n_le = int(le.sum())
        if A_ub is not None:
            duals[le] = res.ineqlin.marginals[:n_le]
            duals[ge] = -res.ineqlin.marginals[n_le:]
        if A_eq is not None:
            duals[eq] = res.eqlin.marginals
        return LpSolution("optimal", x, lp.objective(x), iterations=int(getattr(res, "nit", 0)),
                          duals=sign * duals)
    if res.status == 2:
        return LpSolution("infeasible")
    if res.status == 3:
        return LpSolution("unbounded")
    raise IterationLimit(f"HiGHS stopped: {res.message}")


def solve(lp: LinearProgram, method: str = "simplex", max_iter: Optional[int] = None) -> LpSolution:
    """Solve ``lp``; status is 'optimal', 'infeasible' or 'unbounded'."""
    if method == "simplex":
        return simplex(lp, max_iter)
    if method == "highs":
        return _highs(lp)
    raise ValueError(f"unknown LP method {method!r}")
