"""Experiment runner: per-point attacks, independent verification and CSV reports."""

from __future__ import annotations

import csv
import json
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .encoding import build_bigm_milp, build_value_enum_milp, trace_assignment
from .iprop import IpropConfig, StepPolicy, iprop_attack
from .modelio import Dataset, load_idx_paths, load_model_path
from .network import AttackInstance, BnnModel, evaluate, forward, ideal_target, propagate_bounds
from .results import AttackResult
from .solvers.bnb import solve_bnb
from .surrogate import SurrogateConfig, fgsm_attack

METHODS = ("milp", "iprop", "fgsm")
CSV_COLUMNS = ["index", "true_label", "prediction", "target", "method", "eps", "objective",
               "normalized_objective", "flipped", "wall_time_s", "iterations"]
VERIFY_TOL = 1e-6


class VerificationError(RuntimeError):
    """A reported objective disagrees with an independent forward pass."""


def select_target(model: BnnModel, x):
    """Clean prediction and the runner-up class; ties go to the lower index."""
    if model.n_classes < 2:
        raise ValueError("target selection needs at least two classes")
    scores = forward(model, x).scores
    order = np.argsort(-scores, kind="stable")
    return int(order[0]), int(order[1])


def objective_scale(model: BnnModel, instance: AttackInstance) -> float:
    ideal = ideal_target(model, instance)
    return float(np.abs(ideal.gains).sum() + abs(ideal.offset))


def normalize_objective(raw: float, model: BnnModel, instance: AttackInstance) -> float:
    """``raw`` over ``sum |g_j| + |bias delta|``; 0 when that scale vanishes."""
    scale = objective_scale(model, instance)
    if scale == 0:
        return 0.0
    return float(raw) / scale


def milp_attack(model: BnnModel, instance: AttackInstance, time_limit: float = 180.0,
                encoding: str = "bigm") -> AttackResult:
    start = time.monotonic()
    bounds = propagate_bounds(model, instance)
    if encoding == "bigm":
        milp = build_bigm_milp(model, instance, bounds)
    elif encoding == "values":
        milp = build_value_enum_milp(model, instance, bounds)
    else:
        raise ValueError(f"unknown encoding {encoding!r}")
    p_idx = np.array([milp.var("p", j) for j in range(model.n_inputs)])

    def heuristic(x):
        p = instance.project(x[p_idx])
        values = trace_assignment(milp, model, instance, p)
        return np.array([values[v.name] for v in milp.variables])

    clean = evaluate(model, instance, np.zeros_like(instance.x))
    remaining = max(time_limit - (time.monotonic() - start), 1e-3)
    res = solve_bnb(milp, time_limit=remaining, heuristic=heuristic)
    p = np.zeros_like(instance.x)
    claimed = clean
    if res.has_incumbent:
        cand = instance.project(res.x[p_idx])
        if res.objective > clean:
            p, claimed = cand, res.objective
    wall = time.monotonic() - start
    return AttackResult(
        method="milp", perturbation=p, objective=float(claimed),
        prediction=instance.prediction, target=instance.target, eps=instance.eps,
        wall_time=wall, iterations=res.nodes,
        timeline=[(0.0, clean), (wall, float(claimed))] if claimed > clean else [(0.0, clean)],
        status=res.status, extra={"bound": res.bound},
    )


@dataclass
class ExperimentConfig:
    model_path: str
    images_path: str
    labels_path: str
    methods: list = field(default_factory=lambda: ["iprop"])
    eps: list = field(default_factory=lambda: [0.05])
    points: int | None = 100
    indices: list | None = None  # explicit point indices override ``points``
    time_limit: float = 180.0
    sub_time_limit: float = 10.0
    step: StepPolicy = field(default_factory=StepPolicy.adaptive)
    warm_start: object = None  # None or ("fgsm", seconds)
    encoding: str = "bigm"
    seed: int = 0
    out_csv: str = "results.csv"
    traces_dir: str | None = None
    workers: int = 1

    def __post_init__(self):
        if not self.methods:
            raise ValueError("at least one method is required")
        if not self.eps:
            raise ValueError("at least one eps is required")
        self.eps = [float(e) for e in self.eps]
        unknown = set(self.methods) - set(METHODS)
        if unknown:
            raise ValueError(f"unknown methods: {sorted(unknown)}")


def run_attack(model: BnnModel, instance: AttackInstance, method: str, config: ExperimentConfig,
               seed: int) -> AttackResult:
    if method == "fgsm":
        return fgsm_attack(model, instance, SurrogateConfig(time_limit=config.time_limit, seed=seed))
    if method == "iprop":
        cfg = IpropConfig(step=config.step, time_limit=config.time_limit,
                          sub_time_limit=config.sub_time_limit, warm_start=config.warm_start, seed=seed)
        return iprop_attack(model, instance, cfg)
    if method == "milp":
        return milp_attack(model, instance, config.time_limit, config.encoding)
    raise ValueError(f"unknown method {method!r}")


def verify_result(model: BnnModel, instance: AttackInstance, result: AttackResult) -> float:
    """Recompute the objective from the stored perturbation; raise on disagreement."""
    p = np.asarray(result.perturbation, dtype=np.float64)
    if np.any(np.abs(p) > instance.eps + 1e-12):
        raise VerificationError("perturbation exceeds the eps budget")
    xp = instance.x + p
    if np.any(xp < -1e-12) or np.any(xp > 1 + 1e-12):
        raise VerificationError("perturbed input leaves [0, 1]")
    value = evaluate(model, instance, p)
    if abs(value - result.objective) > VERIFY_TOL:
        raise VerificationError(
            f"{result.method}: claimed objective {result.objective!r}, recomputed {value!r}")
    return value


def _attack_job(args):
    model, x, index, label, method, eps, config, seed = args
    prediction, target = select_target(model, x)
    instance = AttackInstance(x, eps, prediction, target, config.time_limit, config.sub_time_limit)
    result = run_attack(model, instance, method, config, seed)
    result.objective = verify_result(model, instance, result)
    result.index = index
    result.normalized_objective = normalize_objective(result.objective, model, instance)
    result.extra = {"true_label": label, "x": instance.x}
    return result


def select_points(dataset: Dataset, config: ExperimentConfig) -> list:
    if config.indices is not None:
        idx = [int(i) for i in config.indices]
        bad = [i for i in idx if not 0 <= i < len(dataset)]
        if bad:
            raise IndexError(f"point indices out of range: {bad}")
        return idx
    count = len(dataset) if config.points is None else min(config.points, len(dataset))
    return list(range(count))


@dataclass
class ExperimentReport:
    results: list
    summary: list  # dicts per (method, eps)


def summarize(results) -> list:
    groups = {}
    for r in results:
        groups.setdefault((r.method, r.eps), []).append(r)
    rows = []
    for (method, eps), rs in groups.items():
        norm = np.array([r.normalized_objective for r in rs])
        q1, q2, q3 = np.percentile(norm, [25, 50, 75])
        rows.append({"method": method, "eps": eps, "points": len(rs),
                     "flip_rate": float(np.mean([r.flipped for r in rs])),
                     "norm_q1": float(q1), "norm_median": float(q2), "norm_q3": float(q3),
                     "norm_mean": float(norm.mean())})
    return rows


def _tag(result: AttackResult) -> str:
    return f"{result.method}_eps{result.eps!r}_{result.index}"


def write_outputs(results, summary, config: ExperimentConfig) -> None:
    parent = os.path.dirname(os.path.abspath(config.out_csv))
    os.makedirs(parent, exist_ok=True)
    with open(config.out_csv, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(CSV_COLUMNS)
        for r in results:
            w.writerow([r.index, r.extra["true_label"], r.prediction, r.target, r.method, repr(r.eps),
                        repr(r.objective), repr(r.normalized_objective), int(r.flipped),
                        f"{r.wall_time:.3f}", r.iterations])
    with open(summary_path(config.out_csv), "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["method", "eps", "points", "flip_rate", "norm_q1", "norm_median", "norm_q3", "norm_mean"])
        for s in summary:
            w.writerow([s["method"], repr(s["eps"]), s["points"], repr(s["flip_rate"]),
                        repr(s["norm_q1"]), repr(s["norm_median"]), repr(s["norm_q3"]), repr(s["norm_mean"])])
    if config.traces_dir:
        os.makedirs(config.traces_dir, exist_ok=True)
        for r in results:
            with open(os.path.join(config.traces_dir, _tag(r) + ".csv"), "w") as f:
                f.write("elapsed_s,objective\n")
                for t, v in r.timeline:
                    f.write(f"{t:.6f},{v!r}\n")
            save_perturbation(os.path.join(config.traces_dir, _tag(r) + ".json"), r)


def summary_path(out_csv: str) -> str:
    root, _ = os.path.splitext(out_csv)
    return root + ".summary.csv"


def save_perturbation(path, result: AttackResult) -> None:
    doc = {"index": result.index, "method": result.method, "eps": result.eps,
           "prediction": result.prediction, "target": result.target, "objective": result.objective,
           "x": [float(v) for v in result.extra["x"]],
           "p": [float(v) for v in result.perturbation]}
    with open(path, "w") as f:
        json.dump(doc, f)


def load_perturbation(path) -> dict:
    with open(path) as f:
        return json.load(f)


def run_experiment(config: ExperimentConfig, model: BnnModel | None = None,
                   dataset: Dataset | None = None, write: bool = True) -> ExperimentReport:
    if model is None:
        model = load_model_path(config.model_path)
    if dataset is None:
        dataset = load_idx_paths(config.images_path, config.labels_path, model.n_classes)
    if dataset.n != model.n_inputs:
        raise ValueError(f"dataset has {dataset.n} features, model expects {model.n_inputs}")
    jobs = []
    for index in select_points(dataset, config):
        for method in config.methods:
            for eps in config.eps:
                jobs.append((model, dataset.images[index], index, int(dataset.labels[index]),
                             method, float(eps), config, config.seed + index))
    if config.workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(config.workers) as pool:
            results = list(pool.map(_attack_job, jobs))
    else:
        results = [_attack_job(job) for job in jobs]
    results.sort(key=lambda r: (r.index, config.methods.index(r.method), config.eps.index(r.eps)))
    summary = summarize(results)
    if write:
        write_outputs(results, summary, config)
    return ExperimentReport(results, summary)
