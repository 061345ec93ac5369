#!/usr/bin/env python3
"""
mvgamma command-line tool

Reads correlation matrices from CSV or JSON files, dispatches to the
numerical modules and prints one JSON run report per call.

Exit codes: 0 ok, 2 input or validation error, 3 hypothesis failure,
4 numerically inconclusive, 5 unconverged, 1 unexpected error.
"""

import argparse
import csv
import io
import json
import logging
import os
import platform
import sys
import tempfile
import time
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

import duckdb
import numpy as np
import scipy

import factorial_repr as fr
import inequality_lab as lab
import infinite_divisibility
import series_expansion as se
import tail_approximation as ta
from linalg_module import CorrMatrix, Partition, condition_estimate
from mvgamma_errors import (
    EXIT_INCONCLUSIVE,
    EXIT_OK,
    EXIT_UNCONVERGED,
    EXIT_HYPOTHESIS,
    InvalidArgumentError,
    MatrixValidationError,
    MvGammaError,
    error_payload,
)
from report_store import ReportStore, default_store_path, matrix_digest, to_json

logger = logging.getLogger("mvgamma_tool")

TOOL_VERSION = "0.1.0"
CDF_METHODS = ("series", "series-q", "one-factorial", "mixture-mc")
APPROX_KINDS = ("block-product", "lambda", "t2", "normal-coeffs")
CRITERIA_CHOICES = ("griffiths", "bapat", "both")
DEFAULT_SEED = 0


@dataclass(frozen=True, eq=False)
class MatrixFile:
    """
    A parsed matrix file.

    CSV: n rows of n comma-separated reals. JSON: {"n": n, "entries": [[...], ...]}
    with optional "labels". The entries are not validated as a correlation
    matrix until to_corr() is called.
    """
    path: str
    format: str
    entries: np.ndarray
    labels: Optional[List[str]] = None

    @classmethod
    def read(cls, path: str) -> "MatrixFile":
        try:
            with open(path, "r", encoding="utf-8") as handle:
                text = handle.read()
        except OSError as e:
            raise InvalidArgumentError(f"cannot read matrix file '{path}': {e}")
        if text.lstrip().startswith("{"):
            return cls(path, "json", *_parse_json_matrix(text))
        return cls(path, "csv", _parse_csv_matrix(text), None)

    @property
    def n(self) -> int:
        return self.entries.shape[0]

    @property
    def digest(self) -> str:
        return matrix_digest(self.entries)

    def to_corr(self) -> CorrMatrix:
        return CorrMatrix(self.entries)


def _parse_value(text: str, row: int, col: int) -> float:
    try:
        value = float(text)
    except (TypeError, ValueError):
        raise MatrixValidationError(f"entry ({row},{col}) is not a number: '{text}'", "parse", row=row, col=col)
    if not np.isfinite(value):
        raise MatrixValidationError(f"entry ({row},{col}) is not finite", "finite", row=row, col=col)
    return value


def _parse_csv_matrix(text: str) -> np.ndarray:
    rows = []
    for row in csv.reader(io.StringIO(text)):
        # Skip empty rows
        if not row or all(not cell.strip() for cell in row):
            continue
        rows.append([_parse_value(cell.strip(), len(rows) + 1, col) for col, cell in enumerate(row, 1)])
    return _square(rows)


def _parse_json_matrix(text: str):
    try:
        data = json.loads(text)
    except json.JSONDecodeError as e:
        raise MatrixValidationError(f"invalid JSON matrix file: {e}", "parse")
    if not isinstance(data, dict) or "entries" not in data:
        raise MatrixValidationError("JSON matrix file needs an 'entries' array", "parse")
    raw = data["entries"]
    if not isinstance(raw, list) or not all(isinstance(r, list) for r in raw):
        raise MatrixValidationError("'entries' must be a list of rows", "parse")
    rows = [[_parse_value(v, i, j) for j, v in enumerate(r, 1)] for i, r in enumerate(raw, 1)]
    entries = _square(rows)
    if "n" in data and data["n"] != entries.shape[0]:
        raise MatrixValidationError(f"'n' is {data['n']} but 'entries' has {entries.shape[0]} rows", "shape")
    labels = data.get("labels")
    if labels is not None and len(labels) != entries.shape[0]:
        raise MatrixValidationError(f"{len(labels)} labels for {entries.shape[0]} rows", "shape")
    return entries, labels


def _square(rows: List[List[float]]) -> np.ndarray:
    if not rows:
        raise MatrixValidationError("matrix file is empty", "shape")
    n = len(rows)
    for i, r in enumerate(rows, 1):
        if len(r) != n:
            raise MatrixValidationError(f"row {i} has {len(r)} entries, expected {n}", "shape",
                                        row=i, col=min(len(r), n) + 1)
    return np.array(rows, dtype=float)


@dataclass
class RunReport:
    command: List[str]
    input_digest: Optional[str]
    seed: Optional[int]
    results: Dict
    exit_code: int = EXIT_OK
    wall_time: float = 0.0
    versions: Dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "command": self.command,
            "input_digest": self.input_digest,
            "seed": self.seed,
            "versions": self.versions,
            "results": self.results,
            "exit_code": self.exit_code,
            "wall_time": self.wall_time,
        }


def versions() -> Dict[str, str]:
    return {
        "mvgamma": TOOL_VERSION,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "duckdb": duckdb.__version__,
    }


def write_output(text: str, path: Optional[str]) -> None:
    """Write to path atomically (temp file + rename), or to stdout"""
    if path is None:
        sys.stdout.write(text + "\n")
        sys.stdout.flush()
        return
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(prefix=".mvgamma-", dir=directory)
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as handle:
            handle.write(text + "\n")
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def render(payload: Dict, pretty: bool) -> str:
    text = to_json(payload)
    if pretty:
        return json.dumps(json.loads(text), indent=2, sort_keys=True, ensure_ascii=False)
    return text


def parse_floats(text: str, name: str) -> List[float]:
    try:
        values = [float(v) for v in text.replace(" ", "").split(",") if v]
    except ValueError:
        raise InvalidArgumentError(f"--{name} must be a comma-separated list of numbers, got '{text}'")
    if not values:
        raise InvalidArgumentError(f"--{name} is empty")
    return values


def point(text: str, n: int) -> np.ndarray:
    """--x list; a single value is repeated for all n coordinates"""
    values = parse_floats(text, "x")
    if len(values) == 1:
        values = values * n
    if len(values) != n:
        raise InvalidArgumentError(f"--x has {len(values)} values, matrix dimension is {n}")
    return np.array(values)


def progress_enabled(args) -> bool:
    return not args.quiet and sys.stderr.isatty()


def cmd_validate(args) -> RunReport:
    mf = MatrixFile.read(args.matrix)
    R = mf.to_corr()
    results = {
        "valid": True,
        "n": R.n,
        "format": mf.format,
        "min_eigenvalue": R.min_eigenvalue,
        "condition_estimate": condition_estimate(R.entries),
        "determinant": R.determinant(),
    }
    if mf.labels:
        results["labels"] = mf.labels
    return RunReport(args.argv, mf.digest, None, results)


def cmd_cdf(args) -> RunReport:
    mf = MatrixFile.read(args.matrix)
    R = mf.to_corr()
    x = point(args.x, R.n)
    exit_code = EXIT_OK
    seed = None
    results: Dict = {"method": args.method, "alpha": args.alpha, "x": x.tolist()}

    if args.method in ("series", "series-q"):
        variant = se.UNIFORM_C if args.method == "series" else se.NORMALIZED_Q
        table = se.expand_adaptive(R, args.alpha, variant, tol=args.tol, cap=args.max_degree, margin=args.margin)
        estimate = se.cdf_from_table(table, x)
        results["table"] = table.summary()
        if not table.converged:
            exit_code = EXIT_UNCONVERGED
    elif args.method == "one-factorial":
        a = fr.detect_one_factorial(R)
        if a is None:
            raise InvalidArgumentError("matrix is not one-factorial (no a with r_ij = a_i a_j, |a_i| < 1)")
        estimate = fr.cdf_one_factorial(a, args.alpha, x, quad_nodes=args.nodes, tol=args.tol)
        results["loadings"] = a.tolist()
        if not estimate.meta.get("quadrature", {}).get("converged", True):
            exit_code = EXIT_UNCONVERGED
    else:
        seed = args.seed
        a = fr.detect_one_factorial(R)
        rep = fr.one_factorial_repr(a) if a is not None else fr.generic_decomposition(R)
        estimate = fr.cdf_mixture_mc(rep, args.alpha, x, args.samples, args.seed)
        results["factors"] = rep.m
    results["estimate"] = estimate.to_dict()
    return RunReport(args.argv, mf.digest, seed, results, exit_code)


def _sign_pattern(R: CorrMatrix) -> List[List[int]]:
    inv = R.inverse()
    pattern = np.sign(np.where(np.abs(inv) > infinite_divisibility.SIGN_TOL, inv, 0.0)).astype(int)
    np.fill_diagonal(pattern, 0)
    return pattern.tolist()


def cmd_infdiv(args) -> RunReport:
    mf = MatrixFile.read(args.matrix)
    R = mf.to_corr()
    criteria = infinite_divisibility.CRITERIA if args.criteria == "both" else (args.criteria,)
    report = infinite_divisibility.check_infdiv(R, criteria)
    results = {**report.to_dict(), "inverse_sign_pattern": _sign_pattern(R)}
    exit_code = EXIT_INCONCLUSIVE if report.agree is False else EXIT_OK
    return RunReport(args.argv, mf.digest, None, results, exit_code)


VERIFY_EXIT = {
    lab.STATUS_PASS: EXIT_OK,
    lab.STATUS_INDISTINGUISHABLE: EXIT_OK,
    lab.STATUS_HYPOTHESIS: EXIT_HYPOTHESIS,
    lab.STATUS_INCONCLUSIVE: EXIT_INCONCLUSIVE,
}


def cmd_verify(args) -> RunReport:
    mf = MatrixFile.read(args.matrix)
    R = mf.to_corr()
    digests = [mf.digest]
    R0 = None
    if args.r0:
        r0_file = MatrixFile.read(args.r0)
        R0 = r0_file.to_corr()
        digests.append(r0_file.digest)
    elif args.theorem == 4:
        raise InvalidArgumentError("theorem 4 needs --r0")
    partition = Partition(R.n, args.partition) if args.partition else None
    inputs = lab.TheoremInputs(R, partition=partition, R0=R0)
    grid = parse_floats(args.tau_grid, "tau-grid") if args.tau_grid else lab.DEFAULT_TAU_GRID
    report = lab.verify_theorem(args.theorem, inputs, args.alpha, point(args.x, R.n), grid,
                                method=args.method, samples=args.samples, seed=args.seed,
                                componentwise=args.componentwise, progress=progress_enabled(args))
    results = report.to_dict()
    results["input_files"] = digests
    return RunReport(args.argv, report.input_digest, args.seed, results, VERIFY_EXIT[report.status])


def cmd_approx(args) -> RunReport:
    digest = None
    results: Dict = {"kind": args.kind}
    if args.kind == "block-product":
        if args.matrix:
            mf = MatrixFile.read(args.matrix)
            R = mf.to_corr()
            digest = mf.digest
            summary = ta.summarize_blocks(R, Partition(R.n, args.partition or R.n // 2))
        else:
            summary = ta.EquicorrelatedSummary(args.n1, args.n2, args.rbar1, args.rbar2, args.rbar_sq,
                                               args.rbar_cross)
        value = ta.approx_equicorrelated_product(args.x, args.alpha, summary, args.kmax,
                                                 args.cross_statistic, args.nodes, args.tol)
        results.update(summary=summary.to_dict(), approximation=value.to_dict())
        converged = value.converged
    elif args.kind == "lambda":
        coeffs = ta.lambda_condition(args.alpha, args.n, args.r, args.x, args.nodes, args.tol)
        results["coefficients"] = coeffs.to_dict()
        converged = coeffs.converged
    elif args.kind == "t2":
        if args.matrix:
            mf = MatrixFile.read(args.matrix)
            digest = mf.digest
            r, h = ta.perturbation_from_matrix(mf.to_corr())
            n = h.n
        elif args.zero_h:
            r, n = args.r, args.n
            h = ta.PerturbationH.zeros(n)
        else:
            raise InvalidArgumentError("t2 needs --matrix or --zero-h")
        value = ta.taylor_t2(args.alpha, n, r, args.x, h, nodes=args.nodes, tol=args.tol)
        results.update(r=r, n=n, approximation=value.to_dict())
        converged = value.converged
    else:
        coeffs = ta.normal_case_coefficients(args.z, args.r, args.n, tol=args.tol)
        results["coefficients"] = coeffs.to_dict()
        converged = coeffs.converged

    if args.dump_integrand:
        if not args.integrand:
            raise InvalidArgumentError("--dump-integrand needs --integrand")
        params = _integrand_params(args)
        rows = ta.dump_integrand(args.integrand, params, args.dump_integrand)
        results["dump"] = {"path": args.dump_integrand, "integrand": args.integrand, "rows": rows}
    return RunReport(args.argv, digest, None, results, EXIT_OK if converged else EXIT_UNCONVERGED)


def _integrand_params(args) -> Dict:
    if args.integrand == "ck":
        return {"alpha": args.alpha, "ni": args.n1, "rbar": args.rbar1, "x": args.x, "k": args.k}
    if args.integrand.startswith("normal-"):
        return {"z": args.z, "r": args.r, "n": args.n}
    return {"alpha": args.alpha, "n": args.n, "r": args.r, "x": args.x}


def cmd_decompose(args) -> RunReport:
    mf = MatrixFile.read(args.matrix)
    R = mf.to_corr()
    a = fr.detect_one_factorial(R)
    if a is not None:
        rep = fr.one_factorial_repr(a)
        kind = "independent" if rep.m == 0 else "one-factorial"
        results = {"kind": kind, "a": a.tolist()}
    else:
        rep = fr.generic_decomposition(R)
        results = {"kind": "generic"}
    results.update(rep.to_dict())
    results["reconstruction_error"] = rep.reconstruction_error(R)
    return RunReport(args.argv, mf.digest, None, results)


def cmd_tau_matrix(args) -> str:
    R = lab.counterexample_matrix(args.tau)
    if args.format == "csv":
        buffer = io.StringIO()
        writer = csv.writer(buffer, lineterminator="\n")
        for row in R.to_list():
            writer.writerow([repr(v) for v in row])
        return buffer.getvalue().rstrip("\n")
    return render({"n": R.n, "entries": R.to_list()}, args.pretty)


COMMANDS = {
    "validate": cmd_validate,
    "cdf": cmd_cdf,
    "infdiv": cmd_infdiv,
    "verify": cmd_verify,
    "approx": cmd_approx,
    "decompose": cmd_decompose,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--pretty", action="store_true", help="Indented JSON output")
    common.add_argument("--store", help="DuckDB file to append the run report to (default: $MVGAMMA_STORE)")
    common.add_argument("--output", help="Write the output to this file instead of stdout")
    common.add_argument("--verbose", action="store_true", help="Debug logging on stderr")
    common.add_argument("--quiet", action="store_true", help="Warnings only, no progress bars")

    parser = argparse.ArgumentParser(
        description="Multivariate gamma distribution toolkit",
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog="""
Examples:
  %(prog)s validate R.csv
  %(prog)s cdf R.csv --alpha 0.5 --x 1,1,1 --method series
  %(prog)s infdiv R.json --criteria both
  %(prog)s verify --theorem 1 R.csv --partition 2 --alpha 0.5 --x 1,1,1,1
  %(prog)s approx --kind lambda --alpha 0.5 --n 5 --r 0.3 --x 4
  %(prog)s tau-matrix --example counterexample --tau 0.5 > R.json
        """
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("validate", parents=[common], help="Check a correlation matrix file")
    p.add_argument("matrix")

    p = sub.add_parser("cdf", parents=[common], help="Evaluate G_alpha(x; R)")
    p.add_argument("matrix")
    p.add_argument("--alpha", type=float, required=True)
    p.add_argument("--x", required=True, help="Comma-separated evaluation point")
    p.add_argument("--method", choices=CDF_METHODS, default="series")
    p.add_argument("--tol", type=float, default=se.DEFAULT_TOL)
    p.add_argument("--max-degree", type=int, default=se.DEGREE_CAP)
    p.add_argument("--margin", type=float, default=se.DEFAULT_MARGIN)
    p.add_argument("--nodes", type=int, default=ta.DEFAULT_NODES)
    p.add_argument("--samples", type=int, default=fr.DEFAULT_SAMPLES)
    p.add_argument("--seed", type=int, default=DEFAULT_SEED)

    p = sub.add_parser("infdiv", parents=[common], help="Infinite divisibility criteria")
    p.add_argument("matrix")
    p.add_argument("--criteria", choices=CRITERIA_CHOICES, default="both")

    p = sub.add_parser("verify", parents=[common], help="Verify a monotonicity theorem numerically")
    p.add_argument("matrix")
    p.add_argument("--theorem", type=int, choices=(1, 2, 3, 4), required=True)
    p.add_argument("--r0", help="Start matrix R0 (theorem 4)")
    p.add_argument("--partition", type=int, help="Size n1 of the first block")
    p.add_argument("--alpha", type=float, required=True)
    p.add_argument("--x", required=True)
    p.add_argument("--tau-grid", help="Comma-separated tau values in [0, 1]")
    p.add_argument("--method", choices=lab.METHODS + ("all",), default=lab.SERIES)
    p.add_argument("--samples", type=int, default=lab.DEFAULT_SAMPLES)
    p.add_argument("--seed", type=int, default=DEFAULT_SEED)
    p.add_argument("--componentwise", action="store_true", help="Theorem 2: vary each tau_i separately")

    p = sub.add_parser("approx", parents=[common], help="Tail approximations and lambda condition")
    p.add_argument("--kind", choices=APPROX_KINDS, required=True)
    p.add_argument("--alpha", type=float, default=0.5)
    p.add_argument("--x", type=float)
    p.add_argument("--z", type=float)
    p.add_argument("--n", type=int)
    p.add_argument("--r", type=float)
    p.add_argument("--matrix", help="Matrix file (block-product, t2)")
    p.add_argument("--partition", type=int)
    p.add_argument("--n1", type=int)
    p.add_argument("--n2", type=int)
    p.add_argument("--rbar1", type=float)
    p.add_argument("--rbar2", type=float)
    p.add_argument("--rbar-sq", type=float)
    p.add_argument("--rbar-cross", type=float)
    p.add_argument("--cross-statistic", choices=ta.CROSS_STATISTICS, default=ta.MEAN_SQUARE)
    p.add_argument("--kmax", type=int, default=ta.DEFAULT_KMAX)
    p.add_argument("--zero-h", action="store_true", help="t2 at H = O")
    p.add_argument("--nodes", type=int, default=ta.DEFAULT_NODES)
    p.add_argument("--tol", type=float, default=se.DEFAULT_TOL)
    p.add_argument("--dump-integrand", help="Write integrand plot data to this path")
    p.add_argument("--integrand", choices=ta.INTEGRAND_KINDS)
    p.add_argument("--k", type=int, default=1, help="Laguerre degree of the ck integrand")

    p = sub.add_parser("decompose", parents=[common], help="Factorial representation of R")
    p.add_argument("matrix")

    p = sub.add_parser("tau-matrix", parents=[common], help="Print a parametric example matrix")
    p.add_argument("--example", choices=("counterexample",), default="counterexample")
    p.add_argument("--tau", type=float, required=True)
    p.add_argument("--format", choices=("json", "csv"), default="json")
    return parser


def _check_approx_args(args) -> None:
    needed = {
        "block-product": ("x",) if args.matrix else ("x", "n1", "n2", "rbar1", "rbar2", "rbar_sq"),
        "lambda": ("x", "n", "r"),
        "t2": ("x",) if args.matrix else ("x", "n", "r"),
        "normal-coeffs": ("z", "r", "n"),
    }[args.kind]
    missing = [name for name in needed if getattr(args, name) is None]
    if missing:
        flags = ", ".join("--" + m.replace("_", "-") for m in missing)
        raise InvalidArgumentError(f"approx --kind {args.kind} needs {flags}")


def configure_logging(args) -> None:
    level = logging.DEBUG if args.verbose else logging.WARNING
    logging.basicConfig(level=level, stream=sys.stderr, format="%(levelname)s %(name)s: %(message)s")


def store_report(args, report: RunReport) -> None:
    path = default_store_path(args.store)
    if not path:
        return
    with ReportStore(path) as store:
        store.append_report(" ".join(report.command), report.input_digest, report.seed,
                            report.exit_code, report.results, report.wall_time)


def main(argv: Optional[Sequence[str]] = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    args = parser.parse_args(argv)
    args.argv = ["mvgamma_tool"] + argv
    configure_logging(args)

    if args.command == "tau-matrix":
        try:
            write_output(cmd_tau_matrix(args), args.output)
        except MvGammaError as e:
            write_output(render(error_payload(e), args.pretty), None)
            return e.exit_code
        return EXIT_OK

    started = time.perf_counter()
    try:
        if args.command == "approx":
            _check_approx_args(args)
        report = COMMANDS[args.command](args)
    except MvGammaError as e:
        logger.debug("command failed", exc_info=True)
        report = RunReport(args.argv, None, getattr(args, "seed", None), error_payload(e), e.exit_code)
    except KeyboardInterrupt:
        write_output(json.dumps({"error": "Interrupted by user"}), None)
        return 1
    except Exception as e:
        logger.exception("unexpected error")
        write_output(json.dumps({"error": f"Unexpected error: {e}"}), None)
        return 1
    report.wall_time = time.perf_counter() - started
    report.versions = versions()

    payload = report.to_dict()
    if "error" in report.results:
        payload = {**report.results, "exit_code": report.exit_code, "command": report.command}
    write_output(render(payload, args.pretty), args.output)
    try:
        store_report(args, report)
    except duckdb.Error as e:
        logger.error("could not store the run report: %s", e)
    return report.exit_code


if __name__ == "__main__":
    sys.exit(main())
