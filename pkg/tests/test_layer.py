import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from bnnattack.solvers.layer import IGNORED, LayerTargetProblem, composite_score, solve_layer_problem
from oracles import brute_layer


def _random_problem(rng, r_in, r_out, thresholds=True):
    W = rng.choice([-1, 1], size=(r_in, r_out))
    targets = rng.choice([-1, 0, 1], size=r_out, p=[0.4, 0.2, 0.4])
    if not np.any(targets):
        targets[0] = 1
    if thresholds:
        tau = rng.integers(-r_in, r_in + 1, size=r_out) + rng.choice([0.0, 0.5], size=r_out)
        pol = rng.choice([-1, 1], size=r_out)
    else:
        tau, pol = np.zeros(r_out), np.ones(r_out, dtype=int)
    anchor = rng.choice([-1, 1], size=r_in)
    return LayerTargetProblem(W, targets, tau, pol, anchor)


def test_two_by_two_example():
    prob = LayerTargetProblem([[1, 1], [1, -1]], [1, 1], [0, 0], [1, 1], [-1, -1])
    h, sat, status = solve_layer_problem(prob)
    assert sat == 2 and status == "optimal"
    assert prob.satisfied([1, 1]) == 2
    # (+1, -1) also reaches sums (0, 2) and is one flip closer to the anchor
    assert h.tolist() == [1, -1]


def test_single_target():
    prob = LayerTargetProblem([[1, -1, 1], [1, 1, -1], [1, 1, 1]], [IGNORED, -1, IGNORED],
                              np.zeros(3), np.ones(3), [1, 1, 1])
    h, sat, _ = solve_layer_problem(prob)
    assert sat == 1


def test_needs_a_target():
    with pytest.raises(ValueError):
        LayerTargetProblem([[1]], [IGNORED], [0.0], [1], [1])


def test_unreachable_target_is_skipped():
    # sum of two +-1 terms can never reach 3
    prob = LayerTargetProblem([[1, 1], [1, -1]], [1, 1], [3.0, 0.0], [1, 1], [1, 1])
    h, sat, status = solve_layer_problem(prob)
    assert sat == 1 and status == "optimal"


def test_anchor_kept_when_already_optimal():
    rng = np.random.default_rng(0)
    W = rng.choice([-1, 1], size=(8, 5))
    anchor = rng.choice([-1, 1], size=8)
    targets = np.where(anchor @ W >= 0, 1, -1)
    h, sat, _ = solve_layer_problem(LayerTargetProblem(W, targets, np.zeros(5), np.ones(5), anchor))
    assert sat == 5 and np.array_equal(h, anchor)


def test_exhaustive_oracle():
    rng = np.random.default_rng(1)
    for _ in range(120):
        r_in = int(rng.integers(1, 11))
        prob = _random_problem(rng, r_in, int(rng.integers(1, 9)), thresholds=bool(rng.integers(0, 2)))
        best, best_l0, arg = brute_layer(prob.weights, prob.targets, prob.thresholds, prob.polarity, prob.anchor)
        h, sat, status = solve_layer_problem(prob)
        assert status == "optimal"
        assert sat == best
        assert int(np.sum(h != prob.anchor)) == best_l0
        assert any(np.array_equal(h, a) for a in arg)


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 100_000), r_in=st.integers(1, 9), r_out=st.integers(1, 7))
def test_composite_score_is_optimal(seed, r_in, r_out):
    rng = np.random.default_rng(seed)
    prob = _random_problem(rng, r_in, r_out)
    h, _, _ = solve_layer_problem(prob)
    best, best_l0, _ = brute_layer(prob.weights, prob.targets, prob.thresholds, prob.polarity, prob.anchor)
    assert composite_score(prob, h) == best * (r_in + 1) - best_l0


def test_timeout_returns_incumbent():
    rng = np.random.default_rng(2)
    prob = _random_problem(rng, 60, 40)
    prob.time_limit = 1e-9
    h, sat, status = solve_layer_problem(prob)
    assert h.shape == (60,) and set(np.unique(h)) <= {-1, 1}
    assert sat == prob.satisfied(h)
    assert status in ("optimal", "feasible_timeout")
