"""Command line front end for running experiments.

Example:

    distqueue --nodes 100 --rounds 200 --rate 10 --enqueue-prob 0.5 \
              --mode queue --scheduler sync --seed 7 --out results.csv

A config file with one key=value per line can seed the flags; explicit flags
win.  Churn scripts are line oriented: "round,join|leave,process_id".
"""

from __future__ import annotations

import argparse
import sys

from distqueue.harness import (CSV_HEADER, ExperimentConfig, run_experiment,
                               sweep_csv)


def parse_churn_file(path: str) -> list[tuple[int, str, int]]:
    out = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            rnd, action, pid = line.split(",")
            action = action.strip()
            if action not in ("join", "leave"):
                raise ValueError(f"bad churn action {action!r}")
            out.append((int(rnd), action, int(pid)))
    return out


def parse_config_file(path: str) -> dict[str, str]:
    out = {}
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            key, _, value = line.partition("=")
            out[key.strip().replace("-", "_")] = value.strip()
    return out


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="distqueue", description=__doc__,
                                formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("--config", help="key=value file with the flags below")
    p.add_argument("--nodes", type=int, default=50)
    p.add_argument("--rounds", type=int, default=100)
    p.add_argument("--rate", type=int, default=10,
                   help="requests injected per round (ignored with --gen-prob)")
    p.add_argument("--gen-prob", type=float, default=None,
                   help="per-node per-round request probability")
    p.add_argument("--enqueue-prob", type=float, default=0.5)
    p.add_argument("--mode", choices=("queue", "stack"), default="queue")
    p.add_argument("--scheduler", choices=("sync", "async-random",
                                           "async-adversarial"), default="sync")
    p.add_argument("--max-delay", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--churn-script", help="file with round,join|leave,pid lines")
    p.add_argument("--update-alpha", type=float, default=0.0)
    p.add_argument("--out", help="write a CSV row (with header) to this path")
    p.add_argument("--check", choices=("on", "off"), default="on")
    p.add_argument("--trace", help="write the event trace to this path")
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.config:
        defaults = parse_config_file(args.config)
        parser.set_defaults(**{k: v for k, v in defaults.items()
                               if hasattr(args, k)})
        args = parser.parse_args(argv)

    churn = parse_churn_file(args.churn_script) if args.churn_script else []
    cfg = ExperimentConfig(
        nodes=int(args.nodes),
        rounds=int(args.rounds),
        rate=int(args.rate),
        gen_prob=None if args.gen_prob is None else float(args.gen_prob),
        enqueue_prob=float(args.enqueue_prob),
        mode=args.mode,
        scheduler=args.scheduler,
        max_delay=int(args.max_delay),
        seed=int(args.seed),
        churn=churn,
        update_alpha=float(args.update_alpha),
        check=args.check == "on",
        log_messages=bool(args.trace),
    )
    stats, sim = run_experiment(cfg, keep_sim=True)
    print(CSV_HEADER)
    print(stats.csv_row())
    print(f"# issued={stats.issued} completed={stats.completed} "
          f"final_step={stats.final_step} checker_ok={stats.checker_ok}",
          file=sys.stderr)
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(sweep_csv([stats]))
    if args.trace:
        sim.recorder.write_trace(args.trace)
    return 0


if __name__ == "__main__":
    sys.exit(main())
