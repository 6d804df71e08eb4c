"""Command-line entry point: gen, train, eval, ablate, analyze, gradcheck."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .synth import DatasetError, SceneSpec, generate, load_dataset, save_dataset


def _gen(args) -> int:
    spec_dict = json.loads(Path(args.spec).read_text()) if args.spec else {}
    spec = SceneSpec.from_dict({**spec_dict, "seed": args.seed})
    save_dataset(generate(spec, args.count), args.out)
    print(f"wrote {args.count} samples to {args.out}")
    return 0


def _train(args) -> int:
    from .harness import ExperimentConfig, train

    report, _ = train(ExperimentConfig.load(args.config), args.out)
    print(json.dumps(report.final_metrics))
    return 0


def _eval(args) -> int:
    from .harness import evaluate, load_model

    model = load_model(args.model)
    metrics = evaluate(model, load_dataset(args.data), args.threshold)
    Path(args.out).write_text(json.dumps({"model": model.descriptor(), "data": str(args.data),
                                          "metrics": metrics}, indent=1))
    print(json.dumps(metrics))
    return 0


def _ablate(args) -> int:
    from .harness import ablate, expand_grid

    configs = expand_grid(json.loads(Path(args.grid).read_text()))
    _, summary = ablate(configs, args.out, jobs=args.jobs)
    for row in summary:
        print(json.dumps(row))
    return 0


def _analyze(args) -> int:
    from .harness.analyze import COLUMNS, analyze
    from .harness.tables import write_csv

    channels = [int(c) for c in args.channels.split(",") if c]
    write_csv(args.out, COLUMNS, analyze(args.kmax, channels))
    print(f"wrote {args.out}")
    return 0


def _gradcheck(args) -> int:
    from .gradcheck import run_gradcheck

    results = run_gradcheck(args.ops, tol=args.tol, instances=args.instances, seed=args.seed)
    for r in results:
        status = "ok  " if r.passed else "FAIL"
        print(f"{status} {r.kind:4s} {r.name:20s} max_rel_err={r.max_rel_err:.3e} over {r.instances}")
    failed = [r.name for r in results if not r.passed]
    if failed:
        print(f"{len(failed)} failing: {', '.join(failed)}", file=sys.stderr)
        return 1
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="pconvlab", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", help="generate a synthetic dataset")
    g.add_argument("--spec", help="SceneSpec JSON (defaults used when omitted)")
    g.add_argument("--out", required=True)
    g.add_argument("--count", type=int, required=True)
    g.add_argument("--seed", type=int, default=0)
    g.set_defaults(func=_gen)

    t = sub.add_parser("train", help="train one model")
    t.add_argument("--config", required=True)
    t.add_argument("--out", required=True)
    t.set_defaults(func=_train)

    e = sub.add_parser("eval", help="evaluate a saved model on a dataset directory")
    e.add_argument("--model", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--out", required=True)
    e.add_argument("--threshold", type=float, default=0.5)
    e.set_defaults(func=_eval)

    a = sub.add_parser("ablate", help="run an ablation grid")
    a.add_argument("--grid", required=True)
    a.add_argument("--out", required=True)
    a.add_argument("--jobs", type=int, default=1)
    a.set_defaults(func=_ablate)

    z = sub.add_parser("analyze", help="parameter and receptive-field sweep")
    z.add_argument("--kmax", type=int, default=5)
    z.add_argument("--channels", default="16,32,64")
    z.add_argument("--out", required=True)
    z.set_defaults(func=_analyze)

    c = sub.add_parser("gradcheck", help="finite-difference gradient suite")
    c.add_argument("--ops", default="all", help="all, ops, losses, or a comma-separated list")
    c.add_argument("--tol", type=float, default=1e-4)
    c.add_argument("--instances", type=int, default=20)
    c.add_argument("--seed", type=int, default=0)
    c.set_defaults(func=_gradcheck)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (DatasetError, ValueError, KeyError, FileNotFoundError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
