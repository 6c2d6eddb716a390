import math

import numpy as np
import pytest

from bnnattack.harness import select_target
from bnnattack.iprop import (EXHAUSTED, IpropConfig, StepPolicy, check_state, iprop_attack,
                             next_step_size, propagate_targets, sample_step_set)
from bnnattack.network import DONT_CARE, AttackInstance, BnnModel, evaluate, forward, ideal_target
from bnnattack.solvers.layer import IGNORED
from oracles import attack_optimum, random_model


def _instance(model, x, eps):
    pred, tgt = select_target(model, x)
    return AttackInstance(x, eps, pred, tgt)


def test_initial_step_is_five_percent():
    assert StepPolicy.adaptive().initial(100) == 5
    assert StepPolicy.adaptive().initial(16) == 1
    assert StepPolicy.adaptive().initial(30) == 2
    assert StepPolicy.constant(7).initial(100) == 7
    with pytest.raises(ValueError):
        StepPolicy.constant(0)


def test_next_step_size():
    ad = StepPolicy.adaptive()
    assert next_step_size(ad, 5, 5) == 2
    assert next_step_size(ad, 5, 4) == 5
    assert next_step_size(ad, 5, 0) == 5
    assert next_step_size(ad, 1, 5) == EXHAUSTED
    assert next_step_size(ad, 4, 10) == 2
    const = StepPolicy.constant(10)
    assert all(next_step_size(const, 10, k) == 10 for k in range(0, 40))


def test_sample_step_set_edge_cases():
    rng = np.random.default_rng(0)
    assert sample_step_set([], 5, rng).size == 0
    assert sorted(sample_step_set([4, 1, 9], 5, rng).tolist()) == [1, 4, 9]


def test_sample_step_set_is_uniform():
    rng = np.random.default_rng(1)
    counts = np.zeros(6)
    draws = 10_000
    for _ in range(draws):
        g = sample_step_set(np.arange(6), 2, rng)
        assert len(set(g.tolist())) == 2
        counts[g] += 1
    p = 1 / 3
    sd = math.sqrt(draws * p * (1 - p))
    assert np.all(np.abs(counts - draws * p) <= 3 * sd)


def test_sample_step_set_deterministic():
    a = sample_step_set(np.arange(20), 4, np.random.default_rng(7))
    b = sample_step_set(np.arange(20), 4, np.random.default_rng(7))
    assert np.array_equal(a, b)


def test_single_layer_chain_is_empty():
    rng = np.random.default_rng(2)
    model = random_model(rng, 4, [5], 2)
    trace = forward(model, rng.uniform(0, 1, 4))
    top = np.array([1, IGNORED, -1, IGNORED, 1])
    targets, statuses = propagate_targets(model, top, trace, 1.0)
    assert statuses == [] and targets[0].tolist() == top.tolist()


def test_chain_targets_full_lower_layers():
    rng = np.random.default_rng(3)
    model = random_model(rng, 4, [6, 5, 4], 2)
    trace = forward(model, rng.uniform(0, 1, 4))
    top = np.array([1, IGNORED, IGNORED, -1])
    targets, statuses = propagate_targets(model, top, trace, 5.0)
    assert len(statuses) == 2
    assert targets[-1].tolist() == top.tolist()
    for t in targets[:-1]:
        assert set(np.unique(t)) <= {-1, 1}


def test_one_hidden_layer_attack():
    rng = np.random.default_rng(4)
    model = random_model(rng, 5, [6], 3)
    x = rng.uniform(0, 1, 5)
    inst = _instance(model, x, 0.3)
    res = iprop_attack(model, inst, IpropConfig(time_limit=20))
    assert res.objective == evaluate(model, inst, res.perturbation)


def test_bracketed_by_baseline_and_oracle():
    rng = np.random.default_rng(5)
    for _ in range(5):
        model = random_model(rng, 6, [8, 8], 2)
        x = rng.uniform(0, 1, 6)
        inst = _instance(model, x, 0.3)
        res = iprop_attack(model, inst, IpropConfig(time_limit=60, seed=1))
        optimum = attack_optimum(model, x, 0.3, inst.prediction, inst.target)
        assert evaluate(model, inst, np.zeros(6)) <= res.objective <= optimum + 1e-9


def test_run_contract():
    rng = np.random.default_rng(6)
    model = random_model(rng, 10, [20, 20], 3, thresholds=True, affine=True)
    for k in range(4):
        x = rng.uniform(0, 1, 10)
        inst = _instance(model, x, 0.2)
        res = iprop_attack(model, inst, IpropConfig(time_limit=20, seed=k))
        state = res.extra["state"]
        lo, hi = inst.perturbation_box()
        assert np.all(res.perturbation >= lo) and np.all(res.perturbation <= hi)
        assert np.all(np.abs(res.perturbation) <= inst.eps)
        values = [v for _, v in res.timeline]
        assert values == sorted(values)
        logged = [entry[1] for entry in state.log]
        assert logged == sorted(logged)
        assert check_state(model, inst, state)
        ideal = ideal_target(model, inst)
        assert np.all(state.satisfied[ideal.values == DONT_CARE])


def test_adaptive_schedule_replay():
    rng = np.random.default_rng(7)
    model = random_model(rng, 8, [12, 40], 2)
    x = rng.uniform(0, 1, 8)
    inst = _instance(model, x, 0.05)
    res = iprop_attack(model, inst, IpropConfig(time_limit=30, seed=0))
    log = res.extra["state"].log
    assert log[0][3] == math.ceil(0.05 * 40)
    size, stalled = log[0][3], 0
    for _, _, accepted, used in log:
        assert used == size
        stalled = 0 if accepted else stalled + 1
        size = next_step_size(StepPolicy.adaptive(), size, stalled)
    # a run that stops early ends with the exhausted schedule or all ideal neurons reached
    assert size == EXHAUSTED or not np.any(~res.extra["state"].satisfied)


def test_constant_policy_stall_limit():
    rng = np.random.default_rng(8)
    model = random_model(rng, 6, [10, 10], 2)
    x = rng.uniform(0, 1, 6)
    inst = _instance(model, x, 0.01)
    res = iprop_attack(model, inst, IpropConfig(step=StepPolicy.constant(2), time_limit=60, stall_limit=7))
    log = res.extra["state"].log
    tail = 0
    for entry in reversed(log):
        if entry[2]:
            break
        tail += 1
    assert tail == 7 or not np.any(~res.extra["state"].satisfied)


def test_deterministic_replay():
    rng = np.random.default_rng(9)
    model = random_model(rng, 8, [10, 10], 3)
    x = rng.uniform(0, 1, 8)
    inst = _instance(model, x, 0.2)
    a = iprop_attack(model, inst, IpropConfig(time_limit=30, seed=3))
    b = iprop_attack(model, inst, IpropConfig(time_limit=30, seed=3))
    assert np.array_equal(a.perturbation, b.perturbation)
    assert [e[1:] for e in a.extra["state"].log] == [e[1:] for e in b.extra["state"].log]


def test_warm_start_only_if_better():
    rng = np.random.default_rng(10)
    worse = None
    while worse is None:
        model = random_model(rng, 6, [8, 8], 2)
        x = rng.uniform(0.2, 0.8, 6)
        inst = _instance(model, x, 0.2)
        lo, hi = inst.perturbation_box()
        clean = evaluate(model, inst, np.zeros(6))
        for _ in range(200):
            p = rng.uniform(lo, hi)
            if evaluate(model, inst, p) < clean:
                worse = p
                break
    res = iprop_attack(model, inst, IpropConfig(time_limit=10, warm_start=worse, max_iterations=0))
    assert res.objective == clean and np.all(res.perturbation == 0)
    better = None
    for _ in range(2000):
        p = rng.uniform(lo, hi)
        if evaluate(model, inst, p) > clean:
            better = p
            break
    if better is not None:
        res = iprop_attack(model, inst, IpropConfig(time_limit=10, warm_start=better, max_iterations=0))
        assert res.objective == evaluate(model, inst, better)


def test_fgsm_warm_start_runs():
    rng = np.random.default_rng(11)
    model = random_model(rng, 6, [8, 8], 2)
    inst = _instance(model, rng.uniform(0, 1, 6), 0.2)
    res = iprop_attack(model, inst, IpropConfig(time_limit=10, warm_start=("fgsm", 1.0)))
    assert res.objective >= evaluate(model, inst, np.zeros(6))


def test_config_validation():
    with pytest.raises(ValueError):
        IpropConfig(sub_time_limit=0)
