"""Command-line entry point.

Every verb reads a JSON experiment config. Verbs that run pipeline stages
resume from the run directory, so ``thinice prune`` followed by
``thinice evaluate`` does not prune twice.

Exit codes: 0 success, 2 config error, 3 stage failure, 4 numeric error.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys

from . import __version__
from .config import config_load
from .errors import ConfigError, NumericError, StageError, ThinIceError

EXIT_OK, EXIT_CONFIG, EXIT_STAGE, EXIT_NUMERIC = 0, 2, 3, 4

# verb -> last stage it runs
UNTIL = {"train": "dense", "prune": "prune", "evaluate": "evaluate", "analyze": "analyze", "run": "report"}


def _common(p):
    p.add_argument("--config", required=True, help="experiment config (JSON)")
    p.add_argument("--seed", type=int, default=None, help="override the config seed")
    p.add_argument("--out", default=None, help="run directory (default: config output_dir or runs/<name>)")


def build_parser():
    parser = argparse.ArgumentParser(prog="thinice", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"thinice {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="verb", required=True)

    ds = sub.add_parser("dataset", help="dataset utilities")
    ds_sub = ds.add_subparsers(dest="action", required=True)
    _common(ds_sub.add_parser("gen", help="generate the train/test split and the evaluation subsets"))

    _common(sub.add_parser("train", help="pretrain the dense model"))
    _common(sub.add_parser("prune", help="run the pruning pipeline for every grid cell"))

    atk = sub.add_parser("attack", help="run the configured ensemble against one checkpoint")
    _common(atk)
    atk.add_argument("--checkpoint", required=True, help="model checkpoint directory")
    atk.add_argument("--output", default=None, help="outcomes CSV (default: <checkpoint>/outcomes.csv)")

    _common(sub.add_parser("evaluate", help="ensemble evaluation of the dense model and every cell"))
    _common(sub.add_parser("analyze", help="boundary distances, populations and statistics"))
    _common(sub.add_parser("report", help="render tables and report.txt from an existing run"))
    _common(sub.add_parser("run", help="full pipeline"))
    return parser


def _exit_for(manifest):
    failed = [c for c in manifest["cells"].values() if c["status"] == "failed"]
    if not failed:
        return EXIT_OK
    for c in failed:
        print(f"cell failed in {c.get('stage')}: {c.get('error')}", file=sys.stderr)
    return EXIT_NUMERIC if all(c.get("numeric") for c in failed) else EXIT_STAGE


def _attack(cfg, args):
    from .attacks import ensemble_evaluate, write_outcomes_csv
    from .experiment import Runner
    from .nn import load_checkpoint

    runner = Runner(cfg, args.out)
    os.makedirs(runner.out, exist_ok=True)
    runner._data_stage()
    _, test, eval_ids, _ = runner._load_data()
    net = load_checkpoint(args.checkpoint)
    res = ensemble_evaluate(net, test.x[eval_ids], test.y[eval_ids], cfg.attack.eps, cfg=runner._eval_cfg(),
                            sample_ids=eval_ids)
    path = args.output or os.path.join(args.checkpoint, "outcomes.csv")
    write_outcomes_csv(path, list(res.rows()))
    print(json.dumps({"clean_acc": 100 * res.clean_accuracy, "robust_acc": 100 * res.robust_accuracy,
                      "skipped": [s[0] for s in res.skipped], "outcomes": path}))
    return EXIT_OK


def _report(cfg, args):
    from .experiment import report_render, run_dir

    manifest = os.path.join(run_dir(cfg, args.out), "manifest.json")
    if not os.path.exists(manifest):
        raise StageError("report", f"no manifest at {manifest}; run the pipeline first")
    print(open(report_render(manifest)).read(), end="")
    return EXIT_OK


def dispatch(args):
    cfg = config_load(args.config)
    if args.seed is not None:
        cfg = cfg.with_seed(args.seed)
    if args.verb == "attack":
        return _attack(cfg, args)
    if args.verb == "report":
        return _report(cfg, args)
    from .experiment import run_dir, run_experiment

    until = "data" if args.verb == "dataset" else UNTIL[args.verb]
    manifest = run_experiment(cfg, args.out, until=until)
    if until == "report":
        with open(os.path.join(run_dir(cfg, args.out), "report.txt")) as fh:
            print(fh.read(), end="")
    return _exit_for(manifest)


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return dispatch(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericError as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except StageError as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_NUMERIC if isinstance(exc.cause, NumericError) else EXIT_STAGE
    except (ThinIceError, OSError, ValueError) as exc:
        print(f"stage failure: {exc}", file=sys.stderr)
        return EXIT_STAGE


if __name__ == "__main__":
    sys.exit(main())
