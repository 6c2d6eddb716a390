"""Input-layer targeting: the largest set of first-layer sign targets one
perturbation can realize (a maximum feasible subsystem problem)."""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from ..encoding import ACTIVATION_MARGIN
from ..network import activate
from .layer import IGNORED
from .simplex import ITERATION_LIMIT, OPTIMAL, find_feasible, solve_lp


@dataclass
class InputLayerProblem:
    weights: np.ndarray  # (n, r_1)
    x: np.ndarray
    lower: np.ndarray  # bounds on p
    upper: np.ndarray
    targets: np.ndarray  # +1 / -1 / IGNORED per first-layer neuron
    thresholds: np.ndarray
    polarity: np.ndarray
    time_limit: float = 10.0
    hint: np.ndarray | None = None  # a perturbation to order the search around

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        self.x = np.asarray(self.x, dtype=np.float64)
        self.lower = np.asarray(self.lower, dtype=np.float64)
        self.upper = np.asarray(self.upper, dtype=np.float64)
        self.targets = np.asarray(self.targets, dtype=np.int64)
        self.thresholds = np.asarray(self.thresholds, dtype=np.float64)
        self.polarity = np.asarray(self.polarity, dtype=np.int64)
        if np.any(self.lower > self.upper):
            raise ValueError("empty perturbation box")

    @classmethod
    def from_instance(cls, model, instance, targets, time_limit=10.0, hint=None):
        lo, hi = instance.perturbation_box()
        return cls(model.weights[0], instance.x, lo, hi, targets,
                   model.thresholds[0], model.polarity[0], time_limit, hint)

    def activations(self, p):
        return activate((self.x + p) @ self.weights, self.thresholds, self.polarity)

    def satisfied(self, p) -> int:
        care = self.targets != IGNORED
        return int(np.sum(self.activations(p)[care] == self.targets[care]))


class _Stop(Exception):
    pass


def _rows(prob: InputLayerProblem):
    """Target j holds iff ``G[j] @ p >= k[j]``."""
    care = np.nonzero(prob.targets != IGNORED)[0]
    t = prob.targets[care] * prob.polarity[care]
    W = prob.weights[:, care].T
    G = t[:, None] * W
    k = ACTIVATION_MARGIN - t * (W @ prob.x - prob.thresholds[care])
    return care, G, k


def solve_input_problem(prob: InputLayerProblem):
    """Return ``(p, satisfied, status)``; status ``optimal`` or ``feasible_timeout``."""
    deadline = time.monotonic() + prob.time_limit
    care, G, k = _rows(prob)
    lo, hi = prob.lower, prob.upper
    reach = np.maximum(G * lo, G * hi).sum(axis=1)
    candidates = np.nonzero(reach >= k)[0]

    hint = np.zeros_like(lo) if prob.hint is None else np.clip(prob.hint, lo, hi)
    slack = G[candidates] @ hint - k[candidates]
    # satisfied-at-hint first, then least violated
    order = candidates[np.lexsort((-slack, slack < 0))]

    best_set: list = []
    best_p = hint.copy()
    timed_out = False

    def feasible_with(rows):
        sol = find_feasible(G[rows], [">="] * len(rows), k[rows], lo, hi, deadline=deadline)
        if sol.status == ITERATION_LIMIT:
            raise _Stop
        return sol.x if sol.status == OPTIMAL else None

    def dfs(idx, chosen, witness):
        nonlocal best_set, best_p, timed_out
        if time.monotonic() > deadline:
            timed_out = True
            raise _Stop
        if len(chosen) + (len(order) - idx) <= len(best_set):
            return
        if idx == len(order):
            best_set, best_p = list(chosen), witness.copy()
            return
        j = order[idx]
        if G[j] @ witness >= k[j]:
            w_inc = witness
        else:
            w_inc = feasible_with(chosen + [j])
        if w_inc is not None:
            chosen.append(j)
            dfs(idx + 1, chosen, w_inc)
            chosen.pop()
        dfs(idx + 1, chosen, witness)

    # the hint itself is the first incumbent
    at_hint = [j for j in order if G[j] @ hint >= k[j]]
    best_set, best_p = at_hint, hint.copy()
    try:
        dfs(0, [], hint)
    except _Stop:
        pass

    p = _center(G, k, best_set, best_p, lo, hi, deadline)
    status = "feasible_timeout" if timed_out else "optimal"
    return p, prob.satisfied(p), status


def _center(G, k, rows, witness, lo, hi, deadline):
    """Point of the chosen subsystem with the largest worst-case slack."""
    if not rows:
        return witness
    n = G.shape[1]
    A = np.hstack([G[rows], -np.ones((len(rows), 1))])
    c = np.zeros(n + 1)
    c[-1] = 1.0
    sol = solve_lp(c, A, [">="] * len(rows), k[rows],
                   np.append(lo, 0.0), np.append(hi, np.inf),
                   deadline=max(deadline, time.monotonic() + 1.0))
    if sol.status == OPTIMAL and np.all(G[rows] @ sol.x[:n] >= k[rows] - 1e-9):
        return np.clip(sol.x[:n], lo, hi)
    return witness
