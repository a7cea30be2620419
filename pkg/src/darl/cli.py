"""Command-line entry points: train, eval, diag, plot."""

import argparse
import json
import sys

from . import harness


def _build_parser():
    p = argparse.ArgumentParser(prog="darl")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train an agent from a JSON config")
    t.add_argument("--config", required=True, help="experiment config JSON")
    t.add_argument("--seed", type=int, default=None, help="override run_seed")
    t.add_argument("--out", default=None, help="override out_dir")

    e = sub.add_parser("eval", help="evaluate a checkpoint on a domain split")
    e.add_argument("--ckpt", required=True)
    e.add_argument("--domains", required=True, help="split JSON file")
    e.add_argument("--episodes", type=int, default=10)

    d = sub.add_parser("diag", help="feature diagnostics for a checkpoint")
    d.add_argument("--ckpt", required=True)
    d.add_argument("--out", required=True)
    d.add_argument("--episodes-per-domain", type=int, default=1)

    pl = sub.add_parser("plot", help="learning curves across seed runs")
    pl.add_argument("--runs", nargs="+", required=True, help="run directories")
    pl.add_argument("--out", required=True, help="output SVG path")
    return p


def main(argv=None):
    args = _build_parser().parse_args(argv)
    try:
        if args.command == "train":
            config = harness.load_config(args.config)
            if args.seed is not None:
                config.run_seed = args.seed
            if args.out is not None:
                config.out_dir = args.out
            ckpt = harness.run_train(config)
            print(json.dumps({"checkpoint": ckpt}))
        elif args.command == "eval":
            result = harness.run_eval(args.ckpt, args.domains, args.episodes)
            print(json.dumps(result, indent=2, sort_keys=True))
        elif args.command == "diag":
            doc = harness.run_diag(args.ckpt, args.out, args.episodes_per_domain)
            print(json.dumps(doc, indent=2, sort_keys=True))
        elif args.command == "plot":
            out = harness.emit_plots(args.runs, args.out)
            print(json.dumps({"plot": out}))
    except Exception as e:  # one-line machine-parsable error, nonzero exit
        print("error: %s: %s" % (type(e).__name__, e), file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
