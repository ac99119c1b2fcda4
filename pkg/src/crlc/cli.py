"""Command-line entry point: ``crlc <subcommand> ...``."""
import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from crlc import __version__
from crlc.config import RunConfig
from crlc.data import gen_mixture, load_csv, save_csv
from crlc.gradcheck import check_pc_gradients
from crlc.metrics import evaluate
from crlc.model import TwoHeadModel
from crlc.pipeline import ABLATION_AXES, ablation_sweep, mine_neighbors, train_end_to_end, train_semi, train_two_stage

GRAD_TOL = 1e-4


class UsageError(Exception):
    """Bad input named in the diagnostic; exit status 2."""


def _load_config(args) -> RunConfig:
    if args.config is None:
        cfg = RunConfig()
    else:
        path = Path(args.config)
        if not path.is_file():
            raise UsageError(f"config file not found: {path}")
        try:
            cfg = RunConfig.from_json(path)
        except (ValueError, TypeError) as exc:
            raise UsageError(f"{path}: {exc}") from None
    seed = args.seed
    if seed is None and os.environ.get("CRLC_SEED"):
        seed = int(os.environ["CRLC_SEED"])
    if seed is not None:
        cfg = cfg.replace(seed=seed)
    return cfg


def _write(path, text):
    if path is None or path == "-":
        sys.stdout.write(text)
    else:
        Path(path).write_text(text)


def _emit_report(report, args):
    _write(args.out, report.to_json(args.reproducible))
    if getattr(args, "save_model", None):
        report.model.save(args.save_model)
    if args.curves:
        _write(args.curves, report.curves_csv())


def cmd_train(args, fn):
    cfg = _load_config(args)
    if fn is train_semi and args.labeled:
        labeled = np.loadtxt(args.labeled, dtype=np.int64, ndmin=1)
        report = fn(cfg, labeled)
    else:
        report = fn(cfg)
    _emit_report(report, args)
    return 0


def _parse_values(axis, raw):
    items = [v.strip() for v in raw.split(",") if v.strip()]
    if axis in ("Lambda2", "Momentum"):
        return [float(v) for v in items]
    if axis == "NumNegatives":
        return [int(v) for v in items]
    return items


def cmd_ablate(args):
    cfg = _load_config(args)
    values = _parse_values(args.axis, args.values)
    reports = ablation_sweep(cfg, args.axis, values, jobs=args.jobs)
    out = {
        "axis": args.axis,
        "values": values,
        "reports": [r.to_dict(args.reproducible) for r in reports],
    }
    _write(args.out, json.dumps(out, indent=2, sort_keys=True) + "\n")
    return 0


def cmd_grad_check(args):
    seed = args.seed if args.seed is not None else int(os.environ.get("CRLC_SEED", 0))
    worst = check_pc_gradients(args.trials, seed)
    ok = worst <= GRAD_TOL
    print(f"max relative error {worst:.3e} over {args.trials} trials ({'ok' if ok else 'FAIL'})")
    return 0 if ok else 1


def _read_data(path):
    if not Path(path).is_file():
        raise UsageError(f"data file not found: {path}")
    return load_csv(path)


def cmd_mine(args):
    ds = _read_data(args.data)
    if args.checkpoint:
        feats = TwoHeadModel.load(args.checkpoint).forward(ds.features).z
    else:
        feats = ds.features / np.linalg.norm(ds.features, axis=1, keepdims=True)
    nbrs = mine_neighbors(feats, args.k)
    lines = [",".join(f"n{j}" for j in range(args.k))]
    lines += [",".join(str(int(v)) for v in row) for row in nbrs]
    _write(args.out, "\n".join(lines) + "\n")
    return 0


def cmd_eval(args):
    if not Path(args.checkpoint).is_file():
        raise UsageError(f"checkpoint not found: {args.checkpoint}")
    ds = _read_data(args.data)
    model = TwoHeadModel.load(args.checkpoint)
    pred = model.forward(ds.features).probs[args.head].argmax(axis=1)
    mask = ds.labels >= 0
    out = {"head": args.head, "n": int(len(ds)), "predictions": pred.tolist()}
    if mask.any():
        out["metrics"] = evaluate(pred[mask], ds.labels[mask])
    _write(args.out, json.dumps(out, indent=2, sort_keys=True) + "\n")
    return 0


def cmd_gen(args):
    seed = args.seed if args.seed is not None else int(os.environ.get("CRLC_SEED", 0))
    ds = gen_mixture(args.C, args.D, args.n_per_class, args.separation, seed)
    if args.out in (None, "-"):
        raise UsageError("gen-data needs --out PATH")
    save_csv(ds, args.out)
    return 0


def build_parser():
    p = argparse.ArgumentParser(prog="crlc", description=__doc__)
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    def run_args(sp):
        sp.add_argument("--config", help="RunConfig JSON file (defaults if omitted)")
        sp.add_argument("--out", default="-", help="report JSON path ('-' for stdout)")
        sp.add_argument("--curves", help="per-epoch curves CSV path")
        sp.add_argument("--seed", type=int, help="master seed override")
        sp.add_argument("--reproducible", action="store_true",
                        help="omit wall-clock fields so reruns are byte-identical")

    for name, help_ in [("train", "end-to-end training"), ("two-stage", "pretrain, mine neighbors, cluster"),
                        ("semi", "semi-supervised training")]:
        sp = sub.add_parser(name, help=help_)
        run_args(sp)
        sp.add_argument("--save-model", help="write the trained model checkpoint here")
        if name == "semi":
            sp.add_argument("--labeled", help="file of labeled sample indices (one per line)")

    sp = sub.add_parser("ablate", help="sweep one hyperparameter")
    run_args(sp)
    sp.add_argument("--axis", required=True, choices=sorted(ABLATION_AXES))
    sp.add_argument("--values", required=True, help="comma-separated values")
    sp.add_argument("--jobs", type=int, default=1)

    sp = sub.add_parser("grad-check", help="finite-difference check of the probability-loss gradient")
    sp.add_argument("--trials", type=int, default=100)
    sp.add_argument("--seed", type=int)

    sp = sub.add_parser("mine-neighbors", help="cosine K-nearest neighbors")
    sp.add_argument("--data", required=True)
    sp.add_argument("--checkpoint")
    sp.add_argument("-k", type=int, default=50)
    sp.add_argument("--out", default="-")

    sp = sub.add_parser("eval", help="evaluate a model checkpoint on a CSV dataset")
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--data", required=True)
    sp.add_argument("--head", type=int, default=0)
    sp.add_argument("--out", default="-")

    sp = sub.add_parser("gen-data", help="write a synthetic Gaussian mixture CSV")
    sp.add_argument("--C", type=int, default=4)
    sp.add_argument("--D", type=int, default=16)
    sp.add_argument("--n-per-class", type=int, default=500)
    sp.add_argument("--separation", type=float, default=6.0)
    sp.add_argument("--seed", type=int)
    sp.add_argument("--out")
    return p


def run(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    handlers = {
        "train": lambda a: cmd_train(a, train_end_to_end),
        "two-stage": lambda a: cmd_train(a, train_two_stage),
        "semi": lambda a: cmd_train(a, train_semi),
        "ablate": cmd_ablate,
        "grad-check": cmd_grad_check,
        "mine-neighbors": cmd_mine,
        "eval": cmd_eval,
        "gen-data": cmd_gen,
    }
    try:
        return handlers[args.command](args)
    except UsageError as exc:
        print(f"crlc {args.command}: {exc}", file=sys.stderr)
        return 2
    except (ValueError, ArithmeticError, OSError) as exc:
        print(f"crlc {args.command}: error: {exc}", file=sys.stderr)
        return 1


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
