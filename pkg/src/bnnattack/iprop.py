"""IProp: incumbent-driven integer target propagation.

Each iteration asks the last hidden layer to keep every neuron already at its
ideal sign and to additionally reach a sampled handful of the others, pulls
that target back layer by layer with exact binary subproblems, then looks for
a perturbation realizing the first-layer target. The candidate replaces the
incumbent only if the true network objective strictly improves.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from .network import DONT_CARE, AttackInstance, BnnModel, evaluate, forward, ideal_target, objective
from .results import AttackResult, Timeline
from .solvers.inputlayer import InputLayerProblem, solve_input_problem
from .solvers.layer import IGNORED, LayerTargetProblem, solve_layer_problem
from .surrogate import SurrogateConfig, fgsm_attack

EXHAUSTED = 0


@dataclass(frozen=True)
class StepPolicy:
    """``constant`` keeps ``size``; ``adaptive`` starts at a fraction of the
    last hidden width and halves after every ``decay_every`` stalled
    iterations."""

    kind: str = "adaptive"
    size: int = 0
    init_fraction: float = 0.05
    decay_every: int = 5
    factor: float = 0.5

    @classmethod
    def constant(cls, size: int):
        if size < 1:
            raise ValueError("step size must be at least 1")
        return cls(kind="constant", size=int(size))

    @classmethod
    def adaptive(cls, init_fraction=0.05, decay_every=5, factor=0.5):
        return cls("adaptive", 0, init_fraction, decay_every, factor)

    def initial(self, width: int) -> int:
        if self.kind == "constant":
            return self.size
        return max(1, math.ceil(self.init_fraction * width))


def next_step_size(policy: StepPolicy, size: int, stalled: int) -> int:
    """Step size after ``stalled`` consecutive non-improving iterations.

    Returns ``EXHAUSTED`` (0) when the adaptive schedule would drop below 1.
    """
    if policy.kind == "constant":
        return size
    if stalled > 0 and stalled % policy.decay_every == 0:
        new = math.floor(size * policy.factor)
        return new if new >= 1 else EXHAUSTED
    return size


def sample_step_set(nonideal, size: int, rng) -> np.ndarray:
    nonideal = np.asarray(nonideal, dtype=np.int64)
    if nonideal.size <= size:
        return nonideal.copy()
    return np.sort(rng.choice(nonideal, size=size, replace=False))


@dataclass
class IpropConfig:
    step: StepPolicy = field(default_factory=StepPolicy.adaptive)
    time_limit: float = 180.0
    sub_time_limit: float = 10.0
    warm_start: object = None  # None, ("fgsm", seconds) or a perturbation array
    seed: int = 0
    stall_limit: int = 30
    max_iterations: int | None = None

    def __post_init__(self):
        if not self.sub_time_limit > 0:
            raise ValueError("sub_time_limit must be positive")


@dataclass
class IpropState:
    p: np.ndarray
    trace: object
    value: float
    satisfied: np.ndarray  # boolean over the last hidden layer
    iteration: int = 0
    log: list = field(default_factory=list)  # (elapsed, objective, accepted, step size)


def _ideal_satisfied(ideal, last_hidden):
    return (ideal.values == DONT_CARE) | (last_hidden == ideal.values)


def _make_state(model, instance, ideal, p):
    trace = forward(model, instance.x + p)
    return IpropState(
        p=p, trace=trace, value=objective(model, trace, instance),
        satisfied=_ideal_satisfied(ideal, trace.act[-1]),
    )


def propagate_targets(model: BnnModel, top_targets, incumbent_trace, sub_time_limit):
    """Pull a last-hidden-layer target down to a first-layer target.

    Returns the list of targets per hidden layer (index 0 = layer 1) and the
    subproblem statuses.
    """
    depth = model.depth
    targets = [None] * depth
    targets[-1] = np.asarray(top_targets, dtype=np.int64)
    statuses = []
    for l in range(depth - 1, 0, -1):
        # choose layer l (1-based) activations that realize targets of layer l+1
        prob = LayerTargetProblem(
            weights=model.weights[l],
            targets=targets[l],
            thresholds=model.thresholds[l],
            polarity=model.polarity[l],
            anchor=incumbent_trace.act[l - 1],
            time_limit=sub_time_limit,
        )
        h, _, status = solve_layer_problem(prob)
        targets[l - 1] = h.astype(np.int64)
        statuses.append(status)
    return targets, statuses


def iprop_attack(model: BnnModel, instance: AttackInstance, config: IpropConfig | None = None) -> AttackResult:
    config = config or IpropConfig()
    start = time.monotonic()
    deadline = start + config.time_limit
    rng = np.random.default_rng(config.seed)
    ideal = ideal_target(model, instance)
    timeline = Timeline(start)

    state = _make_state(model, instance, ideal, np.zeros_like(instance.x))
    warm = _warm_start(model, instance, config, deadline)
    if warm is not None:
        candidate = _make_state(model, instance, ideal, warm)
        if candidate.value > state.value:
            state = candidate
    timeline.record(state.value)

    width = model.widths[-1]
    size = config.step.initial(width)
    stalled = 0
    while time.monotonic() < deadline:
        if config.max_iterations is not None and state.iteration >= config.max_iterations:
            break
        nonideal = np.nonzero(~state.satisfied)[0]
        if nonideal.size == 0:
            break  # every ideal sign reached: the objective is at its maximum
        state.iteration += 1
        step_set = sample_step_set(nonideal, size, rng)
        top = np.full(width, IGNORED, dtype=np.int64)
        keep = state.satisfied & (ideal.values != DONT_CARE)
        top[keep] = ideal.values[keep]
        top[step_set] = ideal.values[step_set]

        remaining = max(deadline - time.monotonic(), 1e-3)
        sub_limit = min(config.sub_time_limit, remaining)
        if np.any(top != IGNORED):
            targets, _ = propagate_targets(model, top, state.trace, sub_limit)
            prob = InputLayerProblem.from_instance(
                model, instance, targets[0],
                time_limit=min(config.sub_time_limit, max(deadline - time.monotonic(), 1e-3)),
                hint=state.p,
            )
            p_new, _, _ = solve_input_problem(prob)
            p_new = instance.project(p_new)
            candidate = _make_state(model, instance, ideal, p_new)
            accepted = candidate.value > state.value
        else:
            accepted = False
        if accepted:
            candidate.iteration, candidate.log = state.iteration, state.log
            state = candidate
            timeline.record(state.value)
            stalled = 0
        else:
            stalled += 1
            timeline.tick(state.value)
        state.log.append((timeline.elapsed(), state.value, accepted, size))

        if config.step.kind == "constant":
            if stalled >= config.stall_limit:
                break
        else:
            size = next_step_size(config.step, size, stalled)
            if size == EXHAUSTED:
                break

    result = AttackResult(
        method="iprop",
        perturbation=state.p,
        objective=state.value,
        prediction=instance.prediction,
        target=instance.target,
        eps=instance.eps,
        wall_time=time.monotonic() - start,
        iterations=state.iteration,
        timeline=timeline.points,
        extra={"state": state},
    )
    return result


def _warm_start(model, instance, config, deadline):
    ws = config.warm_start
    if ws is None:
        return None
    if isinstance(ws, tuple) and ws and ws[0] == "fgsm":
        seconds = min(float(ws[1]), max(deadline - time.monotonic(), 0.0))
        res = fgsm_attack(model, instance, SurrogateConfig(time_limit=seconds, seed=config.seed))
        return res.perturbation
    return instance.project(np.asarray(ws, dtype=np.float64))


def check_state(model: BnnModel, instance: AttackInstance, state: IpropState) -> bool:
    """Incumbent bookkeeping agrees with a fresh forward pass."""
    ideal = ideal_target(model, instance)
    fresh = _make_state(model, instance, ideal, state.p)
    return bool(np.array_equal(fresh.satisfied, state.satisfied) and fresh.value == state.value
                and evaluate(model, instance, state.p) == state.value)
