"""Targeted adversarial attacks on binarized neural networks."""

from .network import (AttackInstance, BnnModel, DONT_CARE, ModelError, evaluate, forward, ideal_target,
                      objective, propagate_bounds)
from .results import AttackResult
from .iprop import IpropConfig, StepPolicy, iprop_attack
from .surrogate import SurrogateConfig, fgsm_attack

__version__ = "0.1.0"

__all__ = [
    "AttackInstance", "AttackResult", "BnnModel", "DONT_CARE", "IpropConfig", "ModelError",
    "StepPolicy", "SurrogateConfig", "evaluate", "fgsm_attack", "forward", "ideal_target",
    "iprop_attack", "objective", "propagate_bounds",
]
