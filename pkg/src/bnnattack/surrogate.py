"""Straight-through surrogate of a BNN and the iterated FGSM baseline.

The surrogate replaces every hidden sign by ``g(z) = clip(z, -1, 1)`` applied
to the folded pre-activation ``z = polarity * (a - threshold)``; its
derivative is 1 on ``[-1, 1]`` and 0 elsewhere.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .network import AttackInstance, BnnModel, evaluate, output_gains
from .results import AttackResult, Timeline


@dataclass
class SurrogateConfig:
    step: float | None = None  # defaults to eps / 10
    time_limit: float = 180.0
    max_iterations: int | None = None
    restarts: int = 1
    stall_iterations: int = 50
    seed: int = 0

    def __post_init__(self):
        if self.step is not None and not self.step > 0:
            raise ValueError("step size must be positive")


def surrogate_forward_backward(model: BnnModel, values, prediction: int, target: int):
    """Surrogate objective and its gradient with respect to the input."""
    h = np.asarray(values, dtype=np.float64)
    zs = []
    for l in range(model.depth):
        a = h @ model.weights[l]
        z = model.polarity[l] * (a - model.thresholds[l])
        zs.append(z)
        h = np.clip(z, -1.0, 1.0)
    gains = output_gains(model, prediction, target)
    bias = model.out_bias[target] - model.out_bias[prediction]
    value = float(gains @ h + bias)

    grad = gains
    for l in reversed(range(model.depth)):
        z = zs[l]
        grad_a = grad * (np.abs(z) <= 1.0) * model.polarity[l]
        grad = model.weights[l] @ grad_a
    return value, grad


def fgsm_single_step(model: BnnModel, instance: AttackInstance) -> np.ndarray:
    _, grad = surrogate_forward_backward(model, instance.x, instance.prediction, instance.target)
    return instance.project(instance.eps * np.sign(grad))


def fgsm_attack(model: BnnModel, instance: AttackInstance, config: SurrogateConfig | None = None) -> AttackResult:
    """Iterated FGSM; the incumbent is judged on the true network."""
    config = config or SurrogateConfig()
    start = time.monotonic()
    deadline = start + config.time_limit
    rng = np.random.default_rng(config.seed)
    lo, hi = instance.perturbation_box()
    step = config.step if config.step is not None else instance.eps / 10.0

    timeline = Timeline(start)
    p = np.zeros_like(instance.x)
    best_p, best = p.copy(), evaluate(model, instance, p)
    timeline.record(best)
    restarts = config.restarts
    stall = 0
    it = 0
    while time.monotonic() < deadline:
        if config.max_iterations is not None and it >= config.max_iterations:
            break
        it += 1
        _, grad = surrogate_forward_backward(model, instance.x + p, instance.prediction, instance.target)
        p = np.clip(p + step * np.sign(grad), lo, hi)
        value = evaluate(model, instance, p)
        if value > best:
            best, best_p = value, p.copy()
            timeline.record(best)
            stall = 0
        else:
            stall += 1
            timeline.tick(best)
        if stall >= config.stall_iterations:
            if restarts <= 0:
                break
            restarts -= 1
            stall = 0
            p = rng.uniform(lo, hi)
            value = evaluate(model, instance, p)
            if value > best:
                best, best_p = value, p.copy()
                timeline.record(best)

    return AttackResult(
        method="fgsm",
        perturbation=best_p,
        objective=best,
        prediction=instance.prediction,
        target=instance.target,
        eps=instance.eps,
        wall_time=time.monotonic() - start,
        iterations=it,
        timeline=timeline.points,
    )
