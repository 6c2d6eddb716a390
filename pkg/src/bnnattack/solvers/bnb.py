"""Best-first branch-and-bound over LP relaxations."""

from __future__ import annotations

import heapq
import itertools
import time
from dataclasses import dataclass

import numpy as np

from .simplex import INFEASIBLE, ITERATION_LIMIT, OPTIMAL, UNBOUNDED, solve_lp

INT_TOL = 1e-6
_ROUNDING_EVERY = 10


@dataclass
class BnbResult:
    status: str  # optimal | feasible_timeout | infeasible | no_incumbent_timeout
    x: np.ndarray | None
    objective: float
    bound: float
    nodes: int
    wall_time: float

    @property
    def has_incumbent(self) -> bool:
        return self.x is not None

    def assignment(self, milp) -> dict:
        return {v.name: float(val) for v, val in zip(milp.variables, self.x)}


class _Timeout(Exception):
    pass


def solve_bnb(milp, time_limit: float = 60.0, gap: float = 1e-6, heuristic=None) -> BnbResult:
    """Maximize a ``MilpModel``.

    ``heuristic``, when given, maps a relaxation solution vector to a
    candidate full solution (or ``None``); candidates are checked for
    feasibility before they can become the incumbent.
    """
    start = time.monotonic()
    deadline = start + time_limit
    c, A, senses, b, lower, upper, is_int = milp.to_arrays()
    const = milp.objective_constant
    int_idx = np.nonzero(is_int)[0]
    lower = lower.copy()
    upper = upper.copy()
    lower[int_idx] = np.ceil(lower[int_idx] - INT_TOL)
    upper[int_idx] = np.floor(upper[int_idx] + INT_TOL)

    best_x, best_obj = None, -np.inf
    nodes = 0

    def lp(lo, hi):
        if time.monotonic() > deadline:
            raise _Timeout
        sol = solve_lp(c, A, senses, b, lo, hi, deadline=deadline)
        if sol.status == ITERATION_LIMIT:
            raise _Timeout
        if sol.status == UNBOUNDED:
            raise ValueError("LP relaxation is unbounded")
        return sol

    def feasible(x):
        if np.any(x < lower - 1e-6) or np.any(x > upper + 1e-6):
            return False
        if np.any(np.abs(x[int_idx] - np.round(x[int_idx])) > INT_TOL):
            return False
        r = A @ x - b
        for i, s in enumerate(senses):
            v = r[i] if s == "<=" else (-r[i] if s == ">=" else abs(r[i]))
            if v > 1e-6:
                return False
        return True

    def offer(x):
        nonlocal best_x, best_obj
        val = float(c @ x) + const
        if val > best_obj:
            best_x, best_obj = x.copy(), val

    def polish(x, lo, hi):
        """Fix integers at their rounded values and re-solve the continuous part."""
        fixed_lo, fixed_hi = lo.copy(), hi.copy()
        rounded = np.round(x[int_idx])
        if np.any(rounded < lo[int_idx]) or np.any(rounded > hi[int_idx]):
            return
        fixed_lo[int_idx] = rounded
        fixed_hi[int_idx] = rounded
        sol = lp(fixed_lo, fixed_hi)
        if sol.status == OPTIMAL:
            xs = sol.x.copy()
            xs[int_idx] = rounded
            if feasible(xs):
                offer(xs)

    def try_heuristic(x):
        if heuristic is None:
            return
        cand = heuristic(x)
        if cand is not None:
            cand = np.asarray(cand, dtype=np.float64)
            if feasible(cand):
                offer(cand)

    heap = []
    counter = itertools.count()
    open_bound = np.inf  # nothing explored yet
    status = None
    try:
        root = lp(lower, upper)
        if root.status == INFEASIBLE:
            return BnbResult("infeasible", None, -np.inf, -np.inf, 1, time.monotonic() - start)
        heapq.heappush(heap, (-(root.objective + const), next(counter), lower, upper, root.x))
        open_bound = -np.inf
        while heap:
            neg_bound, _, lo, hi, x = heapq.heappop(heap)
            node_bound = -neg_bound
            if node_bound <= best_obj + gap:
                heap.clear()
                break
            nodes += 1
            open_bound = node_bound
            frac = np.abs(x[int_idx] - np.round(x[int_idx]))
            if int_idx.size == 0 or frac.max() <= INT_TOL:
                polish(x, lo, hi)
                continue
            try_heuristic(x)
            if nodes == 1 or nodes % _ROUNDING_EVERY == 0:
                polish(x, lo, hi)
            k = int(int_idx[np.argmax(frac)])
            for side in (0, 1):
                clo, chi = lo.copy(), hi.copy()
                if side == 0:
                    chi[k] = np.floor(x[k])
                else:
                    clo[k] = np.ceil(x[k])
                if clo[k] > chi[k]:
                    continue
                sol = lp(clo, chi)
                if sol.status != OPTIMAL:
                    continue
                child_bound = sol.objective + const
                if child_bound > best_obj + gap:
                    heapq.heappush(heap, (-child_bound, next(counter), clo, chi, sol.x))
            open_bound = -np.inf
        status = "optimal" if best_x is not None else "infeasible"
    except _Timeout:
        status = "feasible_timeout" if best_x is not None else "no_incumbent_timeout"

    wall = time.monotonic() - start
    if status in ("optimal", "infeasible"):
        bound = best_obj
    else:
        pending = max((-item[0] for item in heap), default=-np.inf)
        bound = max(pending, open_bound, best_obj)
    return BnbResult(status, best_x, best_obj, bound, nodes, wall)
