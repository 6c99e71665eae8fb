#!/usr/bin/env python3
"""Solve the two benchmark problems and write all artifacts under out/."""

import sys

from slidingoc.cli import main

if __name__ == "__main__":
    out = sys.argv[1] if len(sys.argv) > 1 else "out"
    rc = 0
    for problem in ("mass-spring", "race-car"):
        code = main(["solve", "--problem", problem, "--max-iter", "400",
                     "--out", f"{out}/{problem}"])
        print(f"{problem}: exit {code}")
        rc = rc or code
    sys.exit(rc)
