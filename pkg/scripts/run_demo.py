"""Run the in-process demo and write its report.

    python3 scripts/run_demo.py --seed 42 --out demo_report.json

Thin wrapper over ``energysaver demo`` for people who prefer a script.
"""
import argparse
import sys

from energysaver.cli import main


def parse_args(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--seed", type=int, default=42)
    p.add_argument("--months", type=int, default=3)
    p.add_argument("--interval", type=float, default=600.0)
    p.add_argument("--out", default="demo_report.json")
    return p.parse_args(argv)


if __name__ == "__main__":
    a = parse_args()
    sys.exit(main(["demo", "--seed", str(a.seed), "--months", str(a.months),
                   "--interval", str(a.interval), "--report", a.out]))
