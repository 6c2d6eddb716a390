"""Command line entry point (``bnnattack``)."""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from .encoding import build_bigm_milp, build_value_enum_milp, export_lp
from .harness import (ExperimentConfig, load_perturbation, run_experiment, select_target,
                      summary_path)
from .iprop import StepPolicy
from .modelio import (generate_random_model, load_idx_paths, load_model_path, make_blobs, save_idx,
                      save_model_path)
from .network import AttackInstance, evaluate, propagate_bounds
from .training import accuracy, train_tiny_bnn


def _floats(text):
    return [float(t) for t in text.split(",") if t.strip()]


def _ints(text):
    return [int(t) for t in text.split(",") if t.strip()]


def _step(text):
    if text == "adaptive":
        return StepPolicy.adaptive()
    return StepPolicy.constant(int(text))


def _warm(text):
    if text in (None, "none"):
        return None
    kind, _, secs = text.partition(":")
    if kind != "fgsm" or not secs:
        raise argparse.ArgumentTypeError("warm start must be 'none' or 'fgsm:SECS'")
    return ("fgsm", float(secs))


def cmd_attack(args):
    config = ExperimentConfig(
        model_path=args.model, images_path=args.images, labels_path=args.labels,
        methods=[args.method], eps=args.eps, points=args.points,
        indices=args.indices, time_limit=args.time_limit, sub_time_limit=args.sub_time_limit,
        step=args.step, warm_start=args.warm_start, encoding=args.encoding, seed=args.seed,
        out_csv=args.out, traces_dir=args.traces, workers=args.workers,
    )
    report = run_experiment(config)
    for s in report.summary:
        print(f"{s['method']} eps={s['eps']!r} points={s['points']} flip_rate={s['flip_rate']:.3f} "
              f"norm_q1={s['norm_q1']:.4f} median={s['norm_median']:.4f} q3={s['norm_q3']:.4f}")
    print(f"wrote {args.out} and {summary_path(args.out)}")
    return 0


def cmd_export_milp(args):
    model = load_model_path(args.model)
    data = load_idx_paths(args.images, args.labels, model.n_classes)
    x = data.images[args.point]
    prediction, target = select_target(model, x)
    instance = AttackInstance(x, args.eps, prediction, target)
    bounds = propagate_bounds(model, instance)
    build = build_bigm_milp if args.encoding == "bigm" else build_value_enum_milp
    milp = build(model, instance, bounds)
    with open(args.out, "w") as f:
        export_lp(milp, f)
    print(f"wrote {args.out}: {milp.n_vars} variables, {len(milp.constraints)} constraints")
    return 0


def cmd_gen_model(args):
    model = generate_random_model(args.inputs, args.widths, args.classes, args.seed)
    save_model_path(model, args.out, {"source": "random", "seed": args.seed})
    print(f"wrote {args.out}")
    return 0


def cmd_train_toy(args):
    if args.images:
        data = load_idx_paths(args.images, args.labels)
        if args.limit:
            data = data.subset(np.arange(min(args.limit, len(data))))
        name = os.path.basename(args.images)
    else:
        data = make_blobs(args.count, args.inputs, args.classes, seed=args.seed)
        name = "blobs"
    model = train_tiny_bnn(data, args.widths, epochs=args.epochs, seed=args.seed)
    acc = accuracy(model, data)
    save_model_path(model, args.out, {"dataset": name, "train_accuracy": f"{acc:.4f}"})
    print(f"wrote {args.out}: training accuracy {acc:.4f} on {len(data)} points")
    if args.data_out:
        os.makedirs(args.data_out, exist_ok=True)
        img = os.path.join(args.data_out, "images.idx")
        lab = os.path.join(args.data_out, "labels.idx")
        with open(img, "wb") as fi, open(lab, "wb") as fl:
            save_idx(data, fi, fl)
        print(f"wrote {img} and {lab}")
    return 0


def cmd_verify(args):
    model = load_model_path(args.model)
    doc = load_perturbation(args.perturbation)
    x, p = np.array(doc["x"]), np.array(doc["p"])
    instance = AttackInstance(x, doc["eps"], doc["prediction"], doc["target"])
    problems = []
    if np.any(np.abs(p) > instance.eps + 1e-12):
        problems.append("perturbation exceeds eps")
    if np.any(x + p < -1e-12) or np.any(x + p > 1 + 1e-12):
        problems.append("perturbed input leaves [0, 1]")
    value = evaluate(model, instance, p)
    if "objective" in doc and abs(value - doc["objective"]) > 1e-6:
        problems.append(f"claimed objective {doc['objective']!r} differs")
    print(f"objective {value!r} flipped={value > 0}")
    for msg in problems:
        print("FAIL: " + msg)
    return 1 if problems else 0


def build_parser():
    ap = argparse.ArgumentParser(prog="bnnattack", description="Targeted attacks on binarized networks.")
    sub = ap.add_subparsers(dest="command", required=True)

    a = sub.add_parser("attack", help="run attacks over dataset points and write a CSV report")
    a.add_argument("--model", required=True)
    a.add_argument("--images", required=True)
    a.add_argument("--labels", required=True)
    a.add_argument("--method", choices=["milp", "iprop", "fgsm"], default="iprop")
    a.add_argument("--eps", type=_floats, required=True)
    a.add_argument("--time-limit", type=float, default=180.0)
    a.add_argument("--sub-time-limit", type=float, default=10.0)
    a.add_argument("--step", type=_step, default=StepPolicy.adaptive())
    a.add_argument("--warm-start", type=_warm, default=None)
    a.add_argument("--points", type=int, default=100)
    a.add_argument("--indices", type=_ints, default=None)
    a.add_argument("--encoding", choices=["bigm", "values"], default="bigm")
    a.add_argument("--seed", type=int, default=0)
    a.add_argument("--workers", type=int, default=1)
    a.add_argument("--out", default="results.csv")
    a.add_argument("--traces", default=None)
    a.set_defaults(func=cmd_attack)

    e = sub.add_parser("export-milp", help="write the attack MILP of one point in LP format")
    e.add_argument("--model", required=True)
    e.add_argument("--images", required=True)
    e.add_argument("--labels", required=True)
    e.add_argument("--point", type=int, required=True)
    e.add_argument("--eps", type=float, required=True)
    e.add_argument("--encoding", choices=["bigm", "values"], default="bigm")
    e.add_argument("--out", required=True)
    e.set_defaults(func=cmd_export_milp)

    g = sub.add_parser("gen-model", help="write a random BNN")
    g.add_argument("--inputs", type=int, required=True)
    g.add_argument("--widths", type=_ints, required=True)
    g.add_argument("--classes", type=int, default=10)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_gen_model)

    t = sub.add_parser("train-toy", help="train a small BNN on blobs or an IDX dataset")
    t.add_argument("--images")
    t.add_argument("--labels")
    t.add_argument("--limit", type=int, default=None)
    t.add_argument("--inputs", type=int, default=8)
    t.add_argument("--classes", type=int, default=2)
    t.add_argument("--count", type=int, default=1000)
    t.add_argument("--widths", type=_ints, default=[16, 16])
    t.add_argument("--epochs", type=int, default=30)
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--out", required=True)
    t.add_argument("--data-out", default=None, help="directory for the generated training data as IDX")
    t.set_defaults(func=cmd_train_toy)

    v = sub.add_parser("verify", help="recompute the objective of a stored perturbation")
    v.add_argument("--model", required=True)
    v.add_argument("--perturbation", required=True)
    v.set_defaults(func=cmd_verify)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if getattr(args, "images", None) and not getattr(args, "labels", None):
        print("--labels is required with --images", file=sys.stderr)
        return 2
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
