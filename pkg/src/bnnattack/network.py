"""Binarized network representation, exact inference and bound propagation.

Hidden neuron ``j`` of layer ``l`` fires ``+1`` iff
``polarity[l][j] * (a[l][j] - threshold[l][j]) >= 0``. Batch normalization is
folded into ``(threshold, polarity)``; the output layer keeps a positive
per-class affine ``scale * a + bias``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

DONT_CARE = 0


class ModelError(ValueError):
    """Raised when a network violates its structural invariants."""


def sign(values):
    """Sign with ``sign(0) = +1``, returned as int8."""
    return np.where(np.asarray(values) >= 0, 1, -1).astype(np.int8)


@dataclass(frozen=True, eq=False)
class BnnModel:
    """Fully connected BNN with {-1,+1} weights.

    ``weights[l]`` has shape ``(r_{l}, r_{l+1})`` in 0-based list order, so
    ``weights[0]`` maps the input to the first hidden layer and
    ``weights[-1]`` maps the last hidden layer to the class scores.
    """

    weights: tuple
    thresholds: tuple
    polarity: tuple
    out_scale: np.ndarray
    out_bias: np.ndarray

    def __post_init__(self):
        ws = tuple(np.array(w, dtype=np.int8) for w in self.weights)
        if len(ws) < 2:
            raise ModelError("need at least one hidden layer and an output layer")
        for l, w in enumerate(ws):
            if w.ndim != 2 or min(w.shape) < 1:
                raise ModelError(f"weight matrix {l} has invalid shape {w.shape}")
            if not np.all(np.abs(w) == 1):
                raise ModelError(f"weight matrix {l} has entries outside {{-1,+1}}")
            if l and ws[l - 1].shape[1] != w.shape[0]:
                raise ModelError(
                    f"weight matrix {l} expects {w.shape[0]} inputs, "
                    f"previous layer has {ws[l - 1].shape[1]}"
                )
        depth = len(ws) - 1
        taus = tuple(np.array(t, dtype=np.float64) for t in self.thresholds)
        pols = tuple(np.array(s, dtype=np.int8) for s in self.polarity)
        if len(taus) != depth or len(pols) != depth:
            raise ModelError("thresholds/polarity must be given for every hidden layer")
        for l in range(depth):
            r = ws[l].shape[1]
            if taus[l].shape != (r,) or pols[l].shape != (r,):
                raise ModelError(f"hidden layer {l + 1}: threshold/polarity length != {r}")
            if not np.all(np.abs(pols[l]) == 1):
                raise ModelError(f"hidden layer {l + 1}: polarity outside {{-1,+1}}")
            if not np.all(np.isfinite(taus[l])):
                raise ModelError(f"hidden layer {l + 1}: non-finite threshold")
        classes = ws[-1].shape[1]
        scale = np.array(self.out_scale, dtype=np.float64).reshape(-1)
        bias = np.array(self.out_bias, dtype=np.float64).reshape(-1)
        if scale.shape != (classes,) or bias.shape != (classes,):
            raise ModelError(f"output affine must have length {classes}")
        if not np.all(scale > 0):
            raise ModelError("output scales must be strictly positive")
        for arr in (*ws, *taus, *pols, scale, bias):
            arr.setflags(write=False)
        object.__setattr__(self, "weights", ws)
        object.__setattr__(self, "thresholds", taus)
        object.__setattr__(self, "polarity", pols)
        object.__setattr__(self, "out_scale", scale)
        object.__setattr__(self, "out_bias", bias)

    @classmethod
    def plain(cls, weights):
        """Model with zero thresholds, positive polarity and identity output."""
        ws = [np.asarray(w) for w in weights]
        hidden = [w.shape[1] for w in ws[:-1]]
        classes = ws[-1].shape[1]
        return cls(
            weights=tuple(ws),
            thresholds=tuple(np.zeros(r) for r in hidden),
            polarity=tuple(np.ones(r, dtype=np.int8) for r in hidden),
            out_scale=np.ones(classes),
            out_bias=np.zeros(classes),
        )

    @property
    def n_inputs(self) -> int:
        return self.weights[0].shape[0]

    @property
    def depth(self) -> int:
        return len(self.weights) - 1

    @property
    def widths(self) -> tuple:
        return tuple(w.shape[1] for w in self.weights[:-1])

    @property
    def n_classes(self) -> int:
        return self.weights[-1].shape[1]

    def layer_sizes(self) -> tuple:
        """``(n, r_1, ..., r_D, classes)``."""
        return (self.n_inputs, *self.widths, self.n_classes)

    def equals(self, other: "BnnModel") -> bool:
        return (
            self.layer_sizes() == other.layer_sizes()
            and all(np.array_equal(a, b) for a, b in zip(self.weights, other.weights))
            and all(np.array_equal(a, b) for a, b in zip(self.thresholds, other.thresholds))
            and all(np.array_equal(a, b) for a, b in zip(self.polarity, other.polarity))
            and np.array_equal(self.out_scale, other.out_scale)
            and np.array_equal(self.out_bias, other.out_bias)
        )


@dataclass
class ActivationTrace:
    """Pre-activations ``a`` (layers 1..D+1) and activations ``h`` (1..D).

    Lists are 0-based: ``pre[0]`` is layer 1, ``pre[-1]`` is the output
    layer before the affine.
    """

    pre: list
    act: list
    scores: np.ndarray


@dataclass(frozen=True)
class AttackInstance:
    x: np.ndarray
    eps: float
    prediction: int
    target: int
    time_limit: float = 180.0
    sub_time_limit: float = 10.0

    def __post_init__(self):
        x = np.array(self.x, dtype=np.float64).reshape(-1)
        if np.any(x < 0) or np.any(x > 1):
            raise ValueError("input must lie in [0, 1]")
        if not self.eps >= 0:
            raise ValueError("eps must be non-negative")
        if self.target == self.prediction:
            raise ValueError("target must differ from prediction")
        x.setflags(write=False)
        object.__setattr__(self, "x", x)

    def perturbation_box(self):
        """Per-coordinate bounds on p keeping ``|p| <= eps`` and ``x + p`` in [0, 1]."""
        lo = np.maximum(-self.eps, -self.x)
        hi = np.minimum(self.eps, 1.0 - self.x)
        return lo, hi

    def project(self, p):
        lo, hi = self.perturbation_box()
        return np.clip(p, lo, hi)


@dataclass(frozen=True)
class IdealTarget:
    values: np.ndarray  # +1, -1 or DONT_CARE (0)
    gains: np.ndarray
    offset: float  # bias_target - bias_prediction

    @property
    def upper_bound(self) -> float:
        """Largest objective reachable through the last hidden layer."""
        return float(np.abs(self.gains).sum() + self.offset)

    def cares(self):
        return self.values != DONT_CARE


@dataclass
class BoundsTable:
    """Interval bounds on every pre-activation; lists indexed like ``ActivationTrace.pre``."""

    lower: list = field(default_factory=list)
    upper: list = field(default_factory=list)


def _check_input(model: BnnModel, values):
    v = np.asarray(values, dtype=np.float64).reshape(-1)
    if v.shape[0] != model.n_inputs:
        raise ValueError(f"input has length {v.shape[0]}, model expects {model.n_inputs}")
    return v


def activate(pre, threshold, polarity):
    return sign(polarity * (pre - threshold))


def forward(model: BnnModel, values) -> ActivationTrace:
    v = _check_input(model, values)
    pre, act = [], []
    h = v
    for l in range(model.depth):
        a = h @ model.weights[l]
        if l:
            a = a.astype(np.int64)
        h = activate(a, model.thresholds[l], model.polarity[l])
        pre.append(a)
        act.append(h)
    out = h.astype(np.int64) @ model.weights[-1].astype(np.int64)
    pre.append(out)
    scores = model.out_scale * out + model.out_bias
    return ActivationTrace(pre=pre, act=act, scores=scores)


def objective(model: BnnModel, trace: ActivationTrace, instance: AttackInstance) -> float:
    return float(trace.scores[instance.target] - trace.scores[instance.prediction])


def evaluate(model: BnnModel, instance: AttackInstance, p) -> float:
    """Objective of the true network at ``x + p``."""
    return objective(model, forward(model, instance.x + np.asarray(p)), instance)


def output_gains(model: BnnModel, prediction: int, target: int) -> np.ndarray:
    w = model.weights[-1].astype(np.float64)
    s = model.out_scale
    return s[target] * w[:, target] - s[prediction] * w[:, prediction]


def ideal_target(model: BnnModel, instance: AttackInstance) -> IdealTarget:
    gains = output_gains(model, instance.prediction, instance.target)
    values = np.sign(gains).astype(np.int8)
    offset = float(model.out_bias[instance.target] - model.out_bias[instance.prediction])
    return IdealTarget(values=values, gains=gains, offset=offset)


def last_layer_objective(ideal: IdealTarget, h_last) -> float:
    return float(ideal.gains @ np.asarray(h_last, dtype=np.float64) + ideal.offset)


# Margin used when deciding that an interval fixes a continuous neuron.
_FIX_MARGIN = 1e-9


def propagate_bounds(model: BnnModel, instance: AttackInstance, tighten: bool = True) -> BoundsTable:
    """Interval bounds on every pre-activation over the perturbation box.

    Layer 1 is tight. Deeper layers start at ``+-r_{l-1}``; with ``tighten``
    the contribution of neurons whose sign is fixed by their interval is
    taken exactly.
    """
    _check_input(model, instance.x)
    lo_p, hi_p = instance.perturbation_box()
    xlo, xhi = instance.x + lo_p, instance.x + hi_p
    w = model.weights[0].astype(np.float64)
    lower = [np.minimum(w * xlo[:, None], w * xhi[:, None]).sum(axis=0)]
    upper = [np.maximum(w * xlo[:, None], w * xhi[:, None]).sum(axis=0)]
    for l in range(1, model.depth + 1):
        prev_l, prev_u = lower[-1], upper[-1]
        w = model.weights[l].astype(np.int64)
        r_prev = w.shape[0]
        if tighten:
            fixed = _fixed_activations(
                prev_l, prev_u, model.thresholds[l - 1], model.polarity[l - 1],
                margin=_FIX_MARGIN if l == 1 else 0.0,
            )
            free = fixed == 0
            base = fixed.astype(np.int64) @ w
            slack = free.astype(np.int64) @ np.abs(w)
            lower.append(base - slack)
            upper.append(base + slack)
        else:
            r = w.shape[1]
            lower.append(np.full(r, -r_prev, dtype=np.int64))
            upper.append(np.full(r, r_prev, dtype=np.int64))
    return BoundsTable(lower=lower, upper=upper)


def _fixed_activations(lo, hi, tau, pol, margin=0.0):
    """+1/-1 where the interval decides the activation, 0 where it does not."""
    zlo = np.where(pol > 0, lo - tau, tau - hi)
    zhi = np.where(pol > 0, hi - tau, tau - lo)
    out = np.zeros(len(lo), dtype=np.int8)
    out[zlo >= margin] = 1
    out[zhi < -margin] = -1
    return out
