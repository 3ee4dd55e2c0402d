"""Command line front end for the simulation harness.

  sim run <scenario-file> [--seed N] [--out transcript]
  sim verify <scenario-file>      engine vs oracle, diff on mismatch
  sim gen --days D --meds M --seed N [--out file]
"""

from __future__ import annotations

import argparse
import difflib
import json
import sys
from dataclasses import replace
from pathlib import Path

from .generate import generate_scenario_dict
from .oracle import oracle_replay
from .runner import run_scenario
from .scenario import load_scenario


def _write(text: str, out: str | None) -> None:
    if out:
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


def cmd_run(args) -> int:
    scenario = load_scenario(args.scenario)
    if args.seed is not None:
        scenario = replace(scenario, seed=args.seed)
    lines = run_scenario(scenario)
    _write("\n".join(lines) + "\n", args.out)
    return 0


def cmd_verify(args) -> int:
    scenario = load_scenario(args.scenario)
    engine_lines = run_scenario(scenario)
    oracle_lines = oracle_replay(scenario)
    if engine_lines == oracle_lines:
        print(f"OK: engine and oracle agree ({len(engine_lines)} transcript lines)")
        return 0
    diff = difflib.unified_diff(
        oracle_lines, engine_lines, fromfile="oracle", tofile="engine", lineterm=""
    )
    print("\n".join(diff))
    return 1


def cmd_gen(args) -> int:
    raw = generate_scenario_dict(args.days, args.meds, args.seed)
    _write(json.dumps(raw, indent=2, sort_keys=True) + "\n", args.out)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sim", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    run_p = sub.add_parser("run", help="run a scenario and print the transcript")
    run_p.add_argument("scenario")
    run_p.add_argument("--seed", type=int, default=None)
    run_p.add_argument("--out")
    run_p.set_defaults(fn=cmd_run)

    verify_p = sub.add_parser("verify", help="diff the engine against the oracle")
    verify_p.add_argument("scenario")
    verify_p.set_defaults(fn=cmd_verify)

    gen_p = sub.add_parser("gen", help="generate a random scenario")
    gen_p.add_argument("--days", type=int, default=7)
    gen_p.add_argument("--meds", type=int, default=3)
    gen_p.add_argument("--seed", type=int, default=0)
    gen_p.add_argument("--out")
    gen_p.set_defaults(fn=cmd_gen)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())
