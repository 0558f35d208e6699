"""Smoke test for the Python bindings.

Build and install the extension first:

    pip install maturin
    maturin build --release -m crates/python/Cargo.toml -o dist
    pip install dist/gffpin-*.whl

then run ``python python/smoke_test.py``.
"""

import json
import math
import sys

import gffpin


def check(name, ok, detail=""):
    print(f"[{'PASS' if ok else 'FAIL'}] {name} {detail}".rstrip())
    return ok


def main():
    results = []

    # one site, a = 1, w = 0.5: log(1 + (e^w - 1) P(|Z| <= 1))
    p = math.erf(1 / math.sqrt(2))
    exact = math.log1p(math.expm1(0.5) * p)
    f = gffpin.oracle_free_energy(2, 1, 1.0, [0.5])
    results.append(check("oracle single site", abs(f - exact) < 1e-9, f"{f:.6f} vs {exact:.6f}"))

    rewards = gffpin.sample_environment(2, 2, "bernoulli", 1.0, 1.0, 0.0, 7)
    results.append(check("environment", len(rewards) == 4 and all(abs(abs(w) - 1) < 1e-12 for w in rewards)))
    again = gffpin.sample_environment(2, 2, "bernoulli", 1.0, 1.0, 0.0, 7)
    results.append(check("environment is seeded", rewards == again))

    ref = gffpin.oracle_free_energy(2, 2, 1.0, rewards)
    value, se, method = gffpin.free_energy(2, 2, 1.0, rewards, method="importance", budget=200_000, seed=3)
    results.append(
        check("importance vs oracle", method == "importance" and abs(value - ref) <= 4 * se, f"{value:.5f} +- {se:.1e} vs {ref:.5f}")
    )

    q = gffpin.pin_probability(0.0, 1.0, 0.5)
    results.append(check("pin probability", abs(q - 0.780084577654906) < 1e-12, f"{q:.12f}"))

    cfg = {"sizes": [2, 4], "law": {"kind": "constant"}, "params": {"a": 1.0, "b": 0.0, "h": 0.3}, "replicates": 2}
    report = json.loads(gffpin.run_experiment("box-doubling", json.dumps(cfg)))
    results.append(check("experiment report", report["experiment"] == "box_doubling" and len(report["points"]) > 0))

    try:
        gffpin.free_energy(2, 2, 1.0, rewards, method="magic")
        results.append(check("bad method rejected", False))
    except ValueError:
        results.append(check("bad method rejected", True))

    return 0 if all(results) else 1


if __name__ == "__main__":
    sys.exit(main())
