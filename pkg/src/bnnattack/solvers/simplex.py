"""Dense two-phase primal simplex with bounded variables.

Every variable is shifted onto ``[0, u]`` (``u`` possibly infinite); free
variables are split. Nonbasic variables sit at either bound, so box
constraints never become tableau rows. Pricing is Dantzig's rule, switching
permanently to Bland's rule after a run of degenerate pivots.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

FEAS_TOL = 1e-7
PIVOT_TOL = 1e-9
COST_TOL = 1e-9
_DEGENERATE_RUN = 50

OPTIMAL = "optimal"
INFEASIBLE = "infeasible"
UNBOUNDED = "unbounded"
ITERATION_LIMIT = "iteration_limit"


@dataclass
class LpSolution:
    status: str
    x: np.ndarray
    objective: float
    iterations: int = 0

    @property
    def ok(self) -> bool:
        return self.status == OPTIMAL


class _Limit(Exception):
    pass


class _Tableau:
    def __init__(self, T, beta, basis, upper, at_upper):
        self.T = T
        self.beta = beta
        self.basis = basis
        self.upper = upper
        self.at_upper = at_upper
        self.iterations = 0
        self.bland = False

    def values(self):
        x = np.where(self.at_upper, self.upper, 0.0)
        x[self.basis] = self.beta
        return x

    def run(self, cost, allowed, limit, deadline):
        """Maximize ``cost @ x``; returns OPTIMAL or UNBOUNDED."""
        T, upper = self.T, self.upper
        d = cost - cost[self.basis] @ T
        degenerate = 0
        while True:
            if self.iterations >= limit:
                raise _Limit
            if deadline is not None and self.iterations % 16 == 0 and time.monotonic() > deadline:
                raise _Limit
            up = self.at_upper
            gain = np.where(up, -d, d)
            gain[self.basis] = 0.0
            gain[~allowed] = 0.0
            cand = np.nonzero(gain > COST_TOL)[0]
            if cand.size == 0:
                return OPTIMAL
            j = int(cand[0]) if self.bland else int(cand[np.argmax(gain[cand])])
            direction = -1.0 if up[j] else 1.0
            col = direction * T[:, j]
            # basic i moves by -theta * col[i]
            theta, row, to_upper = upper[j], -1, False
            ub = upper[self.basis]
            hits = []
            dec = np.nonzero(col > PIVOT_TOL)[0]
            if dec.size:
                hits.append((self.beta[dec] / col[dec], dec, False))
            inc = np.nonzero((col < -PIVOT_TOL) & np.isfinite(ub))[0]
            if inc.size:
                hits.append(((ub[inc] - self.beta[inc]) / -col[inc], inc, True))
            if hits:
                ratios = np.concatenate([h[0] for h in hits])
                rows = np.concatenate([h[1] for h in hits])
                flags = np.concatenate([np.full(h[1].size, h[2]) for h in hits])
                best = ratios.min()
                if best < theta:
                    if self.bland:
                        ties = np.nonzero(ratios <= best + 1e-12)[0]
                        k = ties[np.argmin(self.basis[rows[ties]])]
                    else:
                        k = int(np.argmin(ratios))
                    theta, row, to_upper = ratios[k], int(rows[k]), bool(flags[k])
            if not np.isfinite(theta):
                return UNBOUNDED
            theta = max(theta, 0.0)
            self.iterations += 1
            if theta <= 1e-12:
                degenerate += 1
                if degenerate > _DEGENERATE_RUN:
                    self.bland = True
            else:
                degenerate = 0
            self.beta -= theta * col
            if row < 0:
                self.at_upper[j] = not up[j]
                continue
            entering_value = (upper[j] if up[j] else 0.0) + direction * theta
            leaving = self.basis[row]
            self.at_upper[leaving] = to_upper
            piv = T[row, j]
            T[row] /= piv
            others = T[:, j].copy()
            others[row] = 0.0
            T -= np.outer(others, T[row])
            self.beta[row] = entering_value
            d -= d[j] * T[row]
            self.basis[row] = j
            self.at_upper[j] = False
            np.clip(self.beta, 0.0, upper[self.basis], out=self.beta)


def solve_lp(c, A, senses, b, lower, upper, maximize=True, iteration_limit=20000,
             deadline=None) -> LpSolution:
    """Optimize ``c @ x`` subject to ``A x (senses) b`` and ``lower <= x <= upper``.

    ``senses`` holds ``"<="``, ``">="`` or ``"="`` per row. Infinite entries
    in ``lower``/``upper`` mark unbounded sides. ``deadline`` is an absolute
    ``time.monotonic()`` value; hitting it reports ``iteration_limit``.
    """
    c = np.asarray(c, dtype=np.float64)
    A = np.asarray(A, dtype=np.float64).reshape(-1, c.shape[0])
    b = np.asarray(b, dtype=np.float64).reshape(-1)
    lower = np.asarray(lower, dtype=np.float64)
    upper = np.asarray(upper, dtype=np.float64)
    m, n = A.shape
    if np.any(lower > upper + FEAS_TOL):
        return LpSolution(INFEASIBLE, np.full(n, np.nan), np.nan)

    # x = shift + M y,  y >= 0
    shift, ub_y = np.zeros(n), []
    mapping = []  # (original index, sign) per y column
    for i in range(n):
        lo, hi = lower[i], upper[i]
        if np.isfinite(lo):
            shift[i] = lo
            mapping.append((i, 1.0))
            ub_y.append(max(hi - lo, 0.0))
        elif np.isfinite(hi):
            shift[i] = hi
            mapping.append((i, -1.0))
            ub_y.append(np.inf)
        else:
            mapping.append((i, 1.0))
            ub_y.append(np.inf)
            mapping.append((i, -1.0))
            ub_y.append(np.inf)
    ny = len(mapping)
    Ay = np.empty((m, ny))
    cy = np.empty(ny)
    for k, (i, s) in enumerate(mapping):
        Ay[:, k] = s * A[:, i]
        cy[k] = s * c[i]
    if not maximize:
        cy = -cy
    r = b - A @ shift

    n_slack = sum(1 for s in senses if s != "=")
    blocks = [Ay, np.zeros((m, n_slack))]
    basis = np.empty(m, dtype=np.int64)
    beta = np.empty(m)
    art_cols = []
    k = ny
    for i, sense in enumerate(senses):
        if sense == "<=":
            blocks[1][i, k - ny] = 1.0
            if r[i] >= 0:
                basis[i], beta[i] = k, r[i]
            else:
                art_cols.append((i, -1.0))
            k += 1
        elif sense == ">=":
            blocks[1][i, k - ny] = -1.0
            if r[i] <= 0:
                basis[i], beta[i] = k, -r[i]
            else:
                art_cols.append((i, 1.0))
            k += 1
        elif sense == "=":
            art_cols.append((i, 1.0 if r[i] >= 0 else -1.0))
        else:
            raise ValueError(f"unknown constraint sense {sense!r}")
    n_art = len(art_cols)
    art = np.zeros((m, n_art))
    for a, (i, s) in enumerate(art_cols):
        art[i, a] = s
        basis[i], beta[i] = ny + n_slack + a, abs(r[i])
    full = np.hstack(blocks + [art])
    # scale rows so the starting basis is the identity
    row_sign = np.array([full[i, basis[i]] for i in range(m)]) if m else np.zeros(0)
    T = full / row_sign[:, None] if m else full
    N = ny + n_slack + n_art
    upper_all = np.concatenate([np.array(ub_y), np.full(n_slack, np.inf), np.full(n_art, np.inf)])
    tab = _Tableau(T, beta.copy(), basis, upper_all, np.zeros(N, dtype=bool))

    def recover():
        y = tab.values()[:ny]
        x = shift.copy()
        for kk, (i, s) in enumerate(mapping):
            x[i] += s * y[kk]
        return x

    allowed = upper_all > 0
    try:
        if n_art:
            cost1 = np.zeros(N)
            cost1[ny + n_slack:] = -1.0
            tab.run(cost1, allowed, iteration_limit, deadline)
            infeas = tab.values()[ny + n_slack:].sum()
            if infeas > FEAS_TOL * max(1.0, np.abs(r).max(initial=0.0)):
                return LpSolution(INFEASIBLE, recover(), np.nan, tab.iterations)
            tab.upper[ny + n_slack:] = 0.0
            allowed[ny + n_slack:] = False
            tab.beta = np.minimum(tab.beta, tab.upper[tab.basis])
        cost2 = np.zeros(N)
        cost2[:ny] = cy
        status = tab.run(cost2, allowed, iteration_limit, deadline)
    except _Limit:
        x = recover()
        return LpSolution(ITERATION_LIMIT, x, float(c @ x), tab.iterations)
    x = recover()
    if status == UNBOUNDED:
        return LpSolution(UNBOUNDED, x, np.inf if maximize else -np.inf, tab.iterations)
    return LpSolution(OPTIMAL, x, float(c @ x), tab.iterations)


def find_feasible(A, senses, b, lower, upper, deadline=None) -> LpSolution:
    """Phase-1 only: any point of the polytope, or ``infeasible``."""
    A = np.asarray(A, dtype=np.float64)
    return solve_lp(np.zeros(A.shape[1]), A, senses, b, lower, upper, deadline=deadline)
