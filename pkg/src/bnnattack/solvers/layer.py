"""Exact solver for the binary layer-targeting problem.

Choose ``h`` in {-1,+1}^r_in so that as many targeted neurons of the next
layer as possible take their target sign, breaking ties by Hamming distance
to an anchor vector.
"""

from __future__ import annotations

import math
import sys
import time
from dataclasses import dataclass

import numpy as np

from ..network import activate

IGNORED = 0
_CHECK_EVERY = 256


@dataclass
class LayerTargetProblem:
    weights: np.ndarray  # (r_in, r_out), entries +-1
    targets: np.ndarray  # (r_out,), +1 / -1 / IGNORED
    thresholds: np.ndarray
    polarity: np.ndarray
    anchor: np.ndarray  # (r_in,), +-1
    time_limit: float = 10.0

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.int64)
        self.targets = np.asarray(self.targets, dtype=np.int64)
        self.thresholds = np.asarray(self.thresholds, dtype=np.float64)
        self.polarity = np.asarray(self.polarity, dtype=np.int64)
        self.anchor = np.asarray(self.anchor, dtype=np.int64)
        if not np.any(self.targets != IGNORED):
            raise ValueError("layer problem needs at least one target")

    def satisfied(self, h) -> int:
        out = activate(np.asarray(h) @ self.weights, self.thresholds, self.polarity)
        care = self.targets != IGNORED
        return int(np.sum(out[care] == self.targets[care]))


def _parity_up(v, parity):
    return v + 1 if (v - parity) % 2 else v


def _parity_down(v, parity):
    return v - 1 if (v - parity) % 2 else v


def _requirements(prob: LayerTargetProblem):
    """Each target becomes ``sum_i M[i, j] h_i >= k[j]`` with parity-tight ``k``."""
    r_in = prob.weights.shape[0]
    par = r_in % 2
    care = np.nonzero(prob.targets != IGNORED)[0]
    signs, need = [], []
    for j in care:
        t, tau, pol = prob.targets[j], prob.thresholds[j], prob.polarity[j]
        wants_high = (t > 0) == (pol > 0)
        if wants_high:
            # sum >= tau (target +1) or sum > tau (target -1, negative polarity)
            lo = math.ceil(tau) if t > 0 else math.floor(tau) + 1
            signs.append(1)
            need.append(_parity_up(lo, par))
        else:
            # sum <= tau (target +1, negative polarity) or sum < tau (target -1)
            hi = math.floor(tau) if t > 0 else math.ceil(tau) - 1
            signs.append(-1)
            need.append(-_parity_down(hi, par))
    signs = np.array(signs, dtype=np.int64)
    M = prob.weights[:, care] * signs
    return M, np.array(need, dtype=np.int64)


def _local_search(M, k, anchor, scale):
    h = anchor.copy()
    S = h @ M
    l0 = 0
    score = int(np.sum(S >= k)) * scale
    while True:
        # effect of flipping each coordinate at once
        flipped = S[None, :] - 2 * h[:, None] * M
        counts = np.sum(flipped >= k[None, :], axis=1)
        dl0 = np.where(h == anchor, 1, -1)
        scores = counts * scale - (l0 + dl0)
        i = int(np.argmax(scores))
        if scores[i] <= score:
            return h, score
        score = int(scores[i])
        l0 += int(dl0[i])
        S = flipped[i]
        h[i] = -h[i]


def solve_layer_problem(prob: LayerTargetProblem):
    """Return ``(h, satisfied, status)`` with status ``optimal`` or ``feasible_timeout``."""
    deadline = time.monotonic() + prob.time_limit
    M, k = _requirements(prob)
    r_in = M.shape[0]
    scale = r_in + 1
    anchor = prob.anchor.copy()

    always = k <= -r_in
    never = k > r_in
    base = int(always.sum())
    live = ~(always | never)
    M, k = M[:, live], k[live]

    best_h, best_score = _local_search(M, k, anchor, scale)
    nodes = 0
    timed_out = False

    class _Stop(Exception):
        pass

    def dfs(i, S, l0, h):
        nonlocal best_h, best_score, nodes, timed_out
        nodes += 1
        if nodes % _CHECK_EVERY == 0 and time.monotonic() > deadline:
            timed_out = True
            raise _Stop
        rem = r_in - i
        possible = int(np.sum(S + rem >= k))
        if possible * scale - l0 <= best_score:
            return
        guaranteed = int(np.sum(S - rem >= k))
        if guaranteed == possible:
            # the rest of the anchor keeps every decided target and costs nothing
            h[i:] = anchor[i:]
            best_h, best_score = h.copy(), possible * scale - l0
            return
        a = anchor[i]
        for v in (a, -a):
            h[i] = v
            dfs(i + 1, S + v * M[i], l0 + (v != a), h)

    limit = sys.getrecursionlimit()
    sys.setrecursionlimit(max(limit, r_in + 100))
    try:
        dfs(0, np.zeros(M.shape[1], dtype=np.int64), 0, anchor.copy())
    except _Stop:
        pass
    finally:
        sys.setrecursionlimit(limit)

    status = "feasible_timeout" if timed_out else "optimal"
    h = best_h.astype(np.int8)
    return h, prob.satisfied(h), status


def composite_score(prob: LayerTargetProblem, h) -> int:
    """Satisfied count weighted above the Hamming distance to the anchor."""
    r_in = prob.weights.shape[0]
    return prob.satisfied(h) * (r_in + 1) - int(np.sum(np.asarray(h) != prob.anchor))
