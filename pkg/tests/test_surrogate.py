import numpy as np
import pytest

from bnnattack.harness import select_target
from bnnattack.modelio import make_blobs
from bnnattack.network import AttackInstance, BnnModel, evaluate, output_gains
from bnnattack.surrogate import (SurrogateConfig, fgsm_attack, fgsm_single_step,
                                 surrogate_forward_backward)
from bnnattack.training import train_tiny_bnn
from oracles import random_model


def _one_neuron(tau):
    return BnnModel(([[1]], [[-1, 1]]), ([tau],), ([1],), [1.0, 1.0], [0.0, 0.0])


def test_local_derivative_factor():
    _, g = surrogate_forward_backward(_one_neuron(0.0), [0.5], 0, 1)
    assert g.tolist() == [2.0]
    _, g = surrogate_forward_backward(_one_neuron(-1.5), [0.5], 0, 1)
    assert g.tolist() == [0.0]


def test_linear_regime_gradient():
    rng = np.random.default_rng(0)
    model = random_model(rng, 3, [4, 3], 2)
    # tiny inputs keep layer one interior; thresholds on layer two at the sums keep it interior too
    x = np.full(3, 0.01)
    a1 = x @ model.weights[0]
    a2 = a1 @ model.weights[1]
    model = BnnModel(model.weights, (np.zeros(4), a2), (np.ones(4), np.ones(3)), [1.0, 1.0], [0.0, 0.0])
    _, g = surrogate_forward_backward(model, x, 0, 1)
    gains = output_gains(model, 0, 1)
    expected = model.weights[0] @ (model.weights[1] @ gains)
    np.testing.assert_allclose(g, expected)


def test_saturated_network_has_zero_gradient():
    model = BnnModel(([[1, 1], [1, 1]], [[1, -1], [1, 1]]), ([-5.0, 5.0],), ([1, 1],), [1.0, 1.0], [0.0, 0.0])
    _, g = surrogate_forward_backward(model, [0.3, 0.6], 0, 1)
    assert np.all(g == 0)


def _interior(model, x, gap=1e-3):
    h = x
    for l in range(model.depth):
        z = model.polarity[l] * (h @ model.weights[l] - model.thresholds[l])
        if np.any(np.abs(np.abs(z) - 1) < gap):
            return False
        h = np.clip(z, -1, 1)
    return True


def test_finite_differences():
    rng = np.random.default_rng(1)
    checked = 0
    while checked < 40:
        model = random_model(rng, 5, [4, 4], 3, thresholds=True, affine=True)
        x = rng.uniform(0, 1, 5)
        if not _interior(model, x):
            continue
        value, g = surrogate_forward_backward(model, x, 0, 2)
        fd = np.zeros(5)
        for i in range(5):
            e = np.zeros(5)
            e[i] = 1e-5
            fd[i] = (surrogate_forward_backward(model, x + e, 0, 2)[0]
                     - surrogate_forward_backward(model, x - e, 0, 2)[0]) / 2e-5
        np.testing.assert_allclose(g, fd, rtol=1e-4, atol=1e-7)
        checked += 1


def test_tiny_budget_returns_clean_objective():
    rng = np.random.default_rng(2)
    model = random_model(rng, 6, [5], 3, affine=True)
    x = rng.uniform(0, 1, 6)
    pred, tgt = select_target(model, x)
    inst = AttackInstance(x, 1e-12, pred, tgt)
    res = fgsm_attack(model, inst, SurrogateConfig(time_limit=5, max_iterations=100))
    assert res.objective == pytest.approx(evaluate(model, inst, np.zeros(6)), abs=1e-9)


def test_single_step_moves_by_budget():
    rng = np.random.default_rng(3)
    model = random_model(rng, 6, [5], 2)
    x = rng.uniform(0.2, 0.8, 6)
    inst = AttackInstance(x, 0.1, 0, 1)
    _, g = surrogate_forward_backward(model, x, 0, 1)
    p = fgsm_single_step(model, inst)
    np.testing.assert_allclose(p, inst.project(0.1 * np.sign(g)))


def test_attack_invariants():
    rng = np.random.default_rng(4)
    for _ in range(10):
        model = random_model(rng, 8, [6, 6], 3, thresholds=True, affine=True)
        x = rng.uniform(0, 1, 8)
        pred, tgt = select_target(model, x)
        inst = AttackInstance(x, 0.2, pred, tgt)
        res = fgsm_attack(model, inst, SurrogateConfig(time_limit=5, max_iterations=300, seed=1))
        lo, hi = inst.perturbation_box()
        assert np.all(res.perturbation >= lo) and np.all(res.perturbation <= hi)
        assert res.objective == evaluate(model, inst, res.perturbation)
        values = [v for _, v in res.timeline]
        assert values == sorted(values)
        assert res.flipped == (res.objective > 0)


def test_iterated_beats_single_step():
    data = make_blobs(400, 8, 2, spread=0.2, seed=5)
    model = train_tiny_bnn(data, [8, 8], epochs=20, seed=5)
    wins = 0
    for i in range(50):
        x = data.images[i]
        pred, tgt = select_target(model, x)
        inst = AttackInstance(x, 0.2, pred, tgt)
        single = evaluate(model, inst, fgsm_single_step(model, inst))
        iterated = fgsm_attack(model, inst, SurrogateConfig(time_limit=5, seed=i)).objective
        wins += iterated >= single
    assert wins >= 45


def test_config_rejects_bad_step():
    with pytest.raises(ValueError):
        SurrogateConfig(step=0.0)
