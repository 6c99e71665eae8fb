#!/usr/bin/env python3
"""Convergence-order studies: state/algebraic/adjoint/gradient, jumps, switching time."""

import sys

import numpy as np

from slidingoc.problems import get_problem
from slidingoc.studies import jump_study, order_study, switching_time_study

if __name__ == "__main__":
    threads = int(sys.argv[1]) if len(sys.argv) > 1 else 1
    u5 = np.array([[1.0], [-1.0], [0.5], [-0.5], [1.0]])
    meshes = [50, 100, 200, 400, 800]

    reports = [
        order_study(get_problem("analytic-osc"), u5, meshes, threads=threads),
        order_study(get_problem("sliding-osc"), u5, meshes, threads=threads),
    ]
    u4 = np.array([[0.3], [-0.2], [0.5], [0.1]])
    for formula in ("discrete", "simple"):
        reports.append(jump_study(get_problem("kinked-crossing"), u4, [12, 24, 48, 96],
                                  formula=formula, threads=threads))
    reports.append(switching_time_study(get_problem("crossing-osc"), [10, 20, 40, 80, 160],
                                        threads=threads))

    ok = True
    for rep in reports:
        for line in rep.lines():
            print(line)
        ok = ok and rep.passed
    sys.exit(0 if ok else 1)
