#!/usr/bin/env python3
"""
Script to check monotonicity along the convex path R0 + tau (R - R0) on
random pairs with R0^-1 an M-matrix, positive r0_ij and R >= R0.

Degrees of freedom 1 and 2 alternate between trials. A trial passes when
the cdf grid is nondecreasing, G(x; R) - G(x; R0) is not negative beyond
its error, and every path coefficient is >= -1e-10.
"""

import argparse
import logging
import sys
from pathlib import Path

import numpy as np
from tqdm import tqdm

sys.path.insert(0, str(Path(__file__).resolve().parent / "scripts"))

import inequality_lab as lab  # noqa: E402
from mvgamma_errors import MvGammaError  # noqa: E402
from report_store import ReportStore, default_store_path  # noqa: E402

# --- Global configuration ---
BATCH_NAME = "monotonicity-trials"
DIMENSION = 3
DOFS = (1, 2)
X_RANGE = (0.2, 4.0)


def run_trial(trial: int, rng: np.random.Generator) -> dict:
    nu = DOFS[trial % len(DOFS)]
    R0, R = lab.random_thm4_pair(DIMENSION, rng)
    x = rng.uniform(*X_RANGE, size=DIMENSION)
    try:
        report = lab.verify_theorem(4, lab.TheoremInputs(R, R0=R0), nu / 2.0, x,
                                    residual_taus=(0.5,), progress=False)
    except MvGammaError as e:
        return {"trial": trial, "passed": False, "margin": None, "nu": nu, "error": str(e)}
    margin = report.margins["end_points"]
    coefficient_ok = report.coefficient_min is None or report.coefficient_min >= -lab.COEFF_TOL
    passed = bool(report.monotone) and margin["value"] >= -margin["error"] and coefficient_ok
    return {
        "trial": trial,
        "passed": passed,
        "margin": margin["value"],
        "margin_error": margin["error"],
        "nu": nu,
        "monotone": report.monotone,
        "coefficient_min": report.coefficient_min,
        "status": report.status,
        "input_digest": report.input_digest,
    }


def print_statistics(results: list) -> None:
    print("\n" + "=" * 60)
    print("Statistics")
    print("=" * 60)
    print(f"Total pairs: {len(results)}")
    print(f"Passed: {sum(r['passed'] for r in results)}")
    for nu in DOFS:
        subset = [r for r in results if r["nu"] == nu]
        print(f"  nu = {nu}: {sum(r['passed'] for r in subset)}/{len(subset)}")
    coefficients = [r["coefficient_min"] for r in results if r.get("coefficient_min") is not None]
    if coefficients:
        print(f"Smallest path coefficient: {min(coefficients):.3e}")


def main() -> int:
    parser = argparse.ArgumentParser(description="Random trials of monotonicity along the convex path")
    parser.add_argument("--trials", type=int, default=50, help="Number of random (R0, R) pairs")
    parser.add_argument("--seed", type=int, default=1949, help="Seed of the pair generator")
    parser.add_argument("--store", help="DuckDB file for per-trial rows (default: $MVGAMMA_STORE)")
    parser.add_argument("--verbose", action="store_true")
    args = parser.parse_args()
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, stream=sys.stderr)

    rng = np.random.default_rng(args.seed)
    results = [run_trial(t, rng) for t in tqdm(range(args.trials), desc="Convex path trials")]

    store_path = default_store_path(args.store)
    if store_path:
        with ReportStore(store_path) as store:
            store.append_trials(BATCH_NAME, results)
        print(f"Stored {len(results)} trials in {store_path}")

    print_statistics(results)
    return 0 if all(r["passed"] for r in results) else 1


if __name__ == "__main__":
    sys.exit(main())
