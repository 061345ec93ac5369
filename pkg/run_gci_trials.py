#!/usr/bin/env python3
"""
Script to check the block-scaling inequality at one degree of freedom
(the Gaussian correlation inequality for symmetric rectangles) on random
4 x 4 correlation matrices.

Each trial draws R, a random 2|2 split of the variables and x in [0.2, 4]^4,
evaluates G_1/2(x; R_tau) along the tau-grid with the series expansion and
records the margin G(x; R) - G(x_1, x_2; R11) G(x_3, x_4; R22).
"""

import argparse
import logging
import sys
from pathlib import Path

import numpy as np
from tqdm import tqdm

sys.path.insert(0, str(Path(__file__).resolve().parent / "scripts"))

import inequality_lab as lab  # noqa: E402
from linalg_module import CorrMatrix, Partition, random_corr_matrix  # noqa: E402
from mvgamma_errors import MvGammaError  # noqa: E402
from report_store import ReportStore, default_store_path  # noqa: E402

# --- Global configuration ---
BATCH_NAME = "gci-trials"
DIMENSION = 4
ALPHA = 0.5
X_RANGE = (0.2, 4.0)
MARGIN_TOL = 1e-9
SERIES_TOL = 1e-10
# extra Gram columns keep the random matrices away from singularity
EXTRA_DOF = 6


def run_trial(trial: int, rng: np.random.Generator) -> dict:
    R = random_corr_matrix(DIMENSION, rng, extra_dof=EXTRA_DOF)
    order = rng.permutation(DIMENSION)
    R = CorrMatrix(R.entries[np.ix_(order, order)])
    x = rng.uniform(*X_RANGE, size=DIMENSION)
    try:
        report = lab.verify_theorem(1, lab.TheoremInputs(R, Partition(DIMENSION, 2)), ALPHA, x,
                                    residual_taus=(), progress=False, tol=SERIES_TOL)
    except MvGammaError as e:
        return {"trial": trial, "passed": False, "margin": None, "error": str(e), "order": order.tolist()}
    margin = report.margins["joint_vs_blocks"]
    passed = bool(report.monotone) and margin["value"] >= -max(MARGIN_TOL, margin["error"])
    return {
        "trial": trial,
        "passed": passed,
        "margin": margin["value"],
        "margin_error": margin["error"],
        "monotone": report.monotone,
        "status": report.status,
        "order": order.tolist(),
        "x": x.tolist(),
        "input_digest": report.input_digest,
    }


def print_statistics(results: list) -> None:
    print("\n" + "=" * 60)
    print("Statistics")
    print("=" * 60)
    margins = [r["margin"] for r in results if r["margin"] is not None]
    print(f"Total trials: {len(results)}")
    print(f"Passed: {sum(r['passed'] for r in results)}")
    print(f"Errors: {sum('error' in r for r in results)}")
    if margins:
        print(f"Smallest margin: {min(margins):.3e}")
        print(f"Median margin: {float(np.median(margins)):.3e}")


def main() -> int:
    parser = argparse.ArgumentParser(description="Random trials of the block-scaling inequality at 2 alpha = 1")
    parser.add_argument("--trials", type=int, default=100, help="Number of random matrices")
    parser.add_argument("--seed", type=int, default=2014, help="Seed of the trial generator")
    parser.add_argument("--store", help="DuckDB file for per-trial rows (default: $MVGAMMA_STORE)")
    parser.add_argument("--verbose", action="store_true")
    args = parser.parse_args()
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, stream=sys.stderr)

    rng = np.random.default_rng(args.seed)
    results = [run_trial(t, rng) for t in tqdm(range(args.trials), desc="GCI trials")]

    store_path = default_store_path(args.store)
    if store_path:
        with ReportStore(store_path) as store:
            store.append_trials(BATCH_NAME, results)
        print(f"Stored {len(results)} trials in {store_path}")

    print_statistics(results)
    return 0 if all(r["passed"] for r in results) else 1


if __name__ == "__main__":
    sys.exit(main())
