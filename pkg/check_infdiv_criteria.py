#!/usr/bin/env python3
"""
Script to compare the cycle criterion and the signature criterion for
infinite divisibility on random correlation matrices.

A third of the matrices are signed one-factorial matrices (always infinitely
divisible), the rest are normalized random Gram matrices, so both verdicts
occur. Any disagreement is a failure.
"""

import argparse
import logging
import sys
from pathlib import Path

import numpy as np
from tqdm import tqdm

sys.path.insert(0, str(Path(__file__).resolve().parent / "scripts"))

import infinite_divisibility  # noqa: E402
from linalg_module import CorrMatrix, random_corr_matrix  # noqa: E402
from report_store import ReportStore, default_store_path  # noqa: E402

# --- Global configuration ---
BATCH_NAME = "infdiv-criteria"
DIMENSIONS = (3, 4, 5)


def signed_one_factorial(n: int, rng: np.random.Generator) -> CorrMatrix:
    a = rng.uniform(0.1, 0.9, size=n)
    s = rng.choice([-1.0, 1.0], size=n)
    r = np.outer(a, a)
    np.fill_diagonal(r, 1.0)
    return CorrMatrix(r * np.outer(s, s))


def run_trial(trial: int, rng: np.random.Generator) -> dict:
    n = int(rng.choice(DIMENSIONS))
    source = "one-factorial" if trial % 3 == 0 else "gram"
    if source == "one-factorial":
        R = signed_one_factorial(n, rng)
    else:
        R = random_corr_matrix(n, rng, extra_dof=int(rng.integers(1, 4)))
    report = infinite_divisibility.check_infdiv(R)
    return {
        "trial": trial,
        "passed": bool(report.agree),
        "margin": None,
        "n": n,
        "source": source,
        **report.to_dict(),
    }


def print_statistics(results: list) -> None:
    print("\n" + "=" * 60)
    print("Statistics")
    print("=" * 60)
    print(f"Total matrices: {len(results)}")
    print(f"Infinitely divisible: {sum(r['verdict'] for r in results)}")
    for n in DIMENSIONS:
        subset = [r for r in results if r["n"] == n]
        print(f"  n = {n}: {len(subset)} matrices, {sum(r['verdict'] for r in subset)} infinitely divisible")
    print(f"Disagreements: {sum(not r['passed'] for r in results)}")


def main() -> int:
    parser = argparse.ArgumentParser(description="Agreement of the two infinite divisibility criteria")
    parser.add_argument("--trials", type=int, default=500, help="Number of random matrices")
    parser.add_argument("--seed", type=int, default=1984, help="Seed of the matrix generator")
    parser.add_argument("--store", help="DuckDB file for per-trial rows (default: $MVGAMMA_STORE)")
    parser.add_argument("--verbose", action="store_true")
    args = parser.parse_args()
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, stream=sys.stderr)

    rng = np.random.default_rng(args.seed)
    results = [run_trial(t, rng) for t in tqdm(range(args.trials), desc="Criteria")]

    store_path = default_store_path(args.store)
    if store_path:
        with ReportStore(store_path) as store:
            store.append_trials(BATCH_NAME, results)
        print(f"Stored {len(results)} trials in {store_path}")

    print_statistics(results)
    return 0 if all(r["passed"] for r in results) else 1


if __name__ == "__main__":
    sys.exit(main())
