"""Smoke test for the Python extension.

Build and run from the repository root:

    cargo build --release -p handsoff-py
    cp target/release/libhandsoff_py.so python/handsoff_py.so
    python3 python/smoke_test.py
"""

import json
import math
import os
import sys

sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

import handsoff_py as h  # noqa: E402


def check(cond, msg):
    if not cond:
        raise AssertionError(msg)
    print("ok  ", msg)


def main():
    check(isinstance(h.__version__, str), "version " + h.__version__)

    t = h.scalar_minimum_time(-1.0, 1.0)
    check(abs(t - math.log(2.0)) < 1e-12, f"scalar minimum time {t:.6f} = ln 2")

    t = h.minimum_time([[-1.0]], [[-1.0]], [1.0])
    check(abs(t - math.log(2.0)) < 1e-2, f"grid minimum time {t:.6f} near ln 2")

    tau, segments = h.handsoff_control_1d(-1.0, 1.0, 2.0)
    check(abs(tau - math.log(math.e**2 - 1.0)) < 1e-12, f"switch time {tau:.6f}")
    check(segments[0][2] == 0.0 and abs(segments[-1][2]) == 1.0, "rest then full effort")

    scalar = {"system": {"A": [[-1]], "B": [[-1]]}, "x0": [1], "T": 2, "N": 400, "objective": "l1"}
    sol = h.solve(json.dumps(scalar))
    check(sol["status"] == "Optimal", "solve status Optimal")
    active = sum(1 for v in sol["u"][0] if abs(v) > 1e-6) * sol["dt"]
    check(abs(active - (2.0 - tau)) <= 2 * sol["dt"], f"active time {active:.3f}")

    try:
        h.solve(json.dumps(dict(scalar, T=0.1, N=20)))
        check(False, "short horizon raises")
    except h.InfeasibleError:
        check(True, "short horizon raises InfeasibleError")

    try:
        h.solve("{not json")
        check(False, "malformed config raises")
    except ValueError:
        check(True, "malformed config raises ValueError")

    episode = {
        "plant": {"scalar": {"a": -1.0}},
        "x0": [1.0],
        "r": 0.6,
        "T_min": 0.1,
        "delta": 0.5,
        "disturbance": {"type": "worst_case_constant", "direction": [1.0]},
        "total_time": 10,
    }
    report = h.stability_report(json.dumps(episode))
    check(0.0 < report["gamma"] < 1.0, f"gamma {report['gamma']:.4f}")
    run = h.simulate(json.dumps(episode))
    check(run["status"] == "completed", "episode completes")
    check(0.0 <= run["measured_rate"] <= 1.0, f"measured rate {run['measured_rate']:.3f}")

    a = h.demo("scalar-stable", seed=3)
    b = h.demo("scalar-stable", seed=3)
    check(a == b and len(a) > 0, f"demo reproducible ({len(a)} artifacts)")
    print("all smoke checks passed")


if __name__ == "__main__":
    main()
