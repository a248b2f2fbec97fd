"""CSV ingestion, report serialization, and the command-line interface.

Three subcommands tie the package together: ``fit`` reads a dataset and
reports the closed-form estimates (optionally certified by the oracle suite),
``simulate`` runs a seeded consistency sweep, and ``verify`` asserts the full
invariant suite over randomly generated instances. Numbers are serialized as
shortest round-trip decimals, and fixed seeds give byte-identical outputs.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import sys

import numpy as np

from . import __version__
from .estimators import (
    FitResult,
    estimate_u1_projection,
    fit,
    legacy_means,
    legacy_u1,
)
from .exceptions import (
    DimensionMismatchError,
    ExcessiveSkipsError,
    NotPositiveDefiniteError,
    ParseError,
    UnidentifiableError,
    ValidationError,
)
from .model_core import (
    ModelKind,
    ModelSpec,
    ObservedData,
    scatter_matrix,
    signal_eigenstructure,
)
from .oracle import glse_gradient_check, perturbation_probe, project_columns_oracle
from .simulate import (
    ConsistencyReport,
    ErrorKind,
    SyntheticTruth,
    consistency_experiment,
    default_mean_grid,
    generate_dataset,
    random_truth,
)

SCHEMA_VERSION = 1

# Fixed stream for the oracle suite run by `fit --verify`.
FIT_VERIFY_SEED = 1729

RESIDUAL_SCALE_NOTE = (
    "ad hoc scale diagnostic (mean squared residual per entry); "
    "not a derived estimator of the error variance"
)
LEGACY_MEANS_NOTE = (
    "known-incorrect for the intercept model (omits the mean-shift term); "
    "shown for comparison only"
)


# ---------------------------------------------------------------------------
# dataset and matrix files
# ---------------------------------------------------------------------------

def read_dataset(path, p: int | None = None, r: int | None = None) -> ObservedData:
    """Read a CSV dataset: one observation per row, predictor columns first.

    The header row names the columns; when ``p`` and ``r`` are not given they
    are inferred from the ``x1*``/``x2*`` name prefixes. Every cell must parse
    as a finite decimal real.
    """
    with open(path, newline="", encoding="utf-8") as handle:
        reader = csv.reader(handle)
        try:
            header = [name.strip() for name in next(reader)]
        except StopIteration:
            raise ValidationError(f"{path}: empty dataset file") from None
        rows = [row for row in reader if any(cell.strip() for cell in row)]

    if p is None and r is None:
        p = sum(name.startswith("x1") for name in header)
        r = sum(name.startswith("x2") for name in header)
        ordered = all(name.startswith("x1") for name in header[:p]) and all(
            name.startswith("x2") for name in header[p:]
        )
        if p == 0 or r == 0 or p + r != len(header) or not ordered:
            raise ValidationError(
                f"{path}: cannot infer p and r from header {header}; "
                "name the predictor block x1*, then the response block x2*, "
                "or pass --p and --r"
            )
    elif p is None or r is None:
        raise ValidationError("pass both p and r, or neither")
    elif p < 1 or r < 1:
        raise ValidationError(f"p and r must be positive, got p={p}, r={r}")

    if len(header) != p + r:
        raise DimensionMismatchError(
            f"{path}: file has {len(header)} columns, expected p + r = {p + r}"
        )
    if len(rows) < 2:
        raise ValidationError(f"{path}: need at least 2 observation rows, got {len(rows)}")

    values = np.empty((len(rows), p + r))
    for i, row in enumerate(rows, start=1):
        if len(row) != p + r:
            raise DimensionMismatchError(
                f"{path}: row {i} has {len(row)} cells, expected {p + r}"
            )
        for j, cell in enumerate(row):
            try:
                value = float(cell)
            except ValueError:
                value = float("nan")
            if not np.isfinite(value):
                raise ParseError(
                    f"{path}: row {i}, column {header[j]!r}: "
                    f"{cell.strip()!r} is not a finite real",
                    row=i,
                    column=header[j],
                )
            values[i - 1, j] = value
    return ObservedData(x1=values[:, :p].T, x2=values[:, p:].T)


def write_dataset(data: ObservedData, path) -> None:
    """Write a dataset in the format ``read_dataset`` expects, losslessly."""
    header = [f"x1_{k + 1}" for k in range(data.p)] + [f"x2_{k + 1}" for k in range(data.r)]
    stacked = data.stacked()
    with open(path, "w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        writer.writerow(header)
        for i in range(data.n):
            writer.writerow([repr(float(v)) for v in stacked[:, i]])


def read_sigma0(path, size: int) -> np.ndarray:
    """Read a covariance shape as a plain numeric CSV square matrix (no header).

    Symmetry is enforced by averaging with the transpose; asymmetry beyond
    1e-8 relative fails.
    """
    with open(path, newline="", encoding="utf-8") as handle:
        rows = [row for row in csv.reader(handle) if any(cell.strip() for cell in row)]
    if len(rows) != size or any(len(row) != size for row in rows):
        raise DimensionMismatchError(
            f"{path}: covariance shape must be {size}x{size} to match p + r"
        )
    matrix = np.empty((size, size))
    for i, row in enumerate(rows, start=1):
        for j, cell in enumerate(row):
            try:
                value = float(cell)
            except ValueError:
                value = float("nan")
            if not np.isfinite(value):
                raise ParseError(
                    f"{path}: row {i}, column {j + 1}: {cell.strip()!r} is not a finite real",
                    row=i,
                    column=str(j + 1),
                )
            matrix[i - 1, j] = value
    scale = max(1.0, float(np.max(np.abs(matrix))))
    if float(np.max(np.abs(matrix - matrix.T))) > 1e-8 * scale:
        raise ValidationError(f"{path}: covariance shape is asymmetric beyond 1e-8 relative")
    return (matrix + matrix.T) / 2.0


def _sha256(path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as handle:
        for chunk in iter(lambda: handle.read(65536), b""):
            digest.update(chunk)
    return "sha256:" + digest.hexdigest()


# ---------------------------------------------------------------------------
# report assembly and serialization
# ---------------------------------------------------------------------------

def _matrix_payload(matrix) -> dict:
    matrix = np.asarray(matrix, dtype=float)
    return {
        "rows": int(matrix.shape[0]),
        "cols": int(matrix.shape[1]),
        "data": [[float(v) for v in row] for row in matrix],
    }


def build_fit_report(
    data: ObservedData,
    spec: ModelSpec,
    result: FitResult,
    input_path,
    emit_means: bool = False,
    legacy=None,
    oracle_report=None,
) -> dict:
    """Assemble the structured fit report (JSON-ready, plain Python values)."""
    report = {
        "schema_version": SCHEMA_VERSION,
        "tool_version": __version__,
        "input_checksum": _sha256(input_path),
        "model": {
            "kind": spec.kind.value,
            "p": data.p,
            "r": data.r,
            "n": data.n,
            "sigma0": "identity" if spec.sigma0 is None else "provided",
        },
        "estimates": {
            "b_hat": _matrix_payload(result.b_hat),
            "alpha_hat": [float(v) for v in result.alpha_hat],
        },
        "objectives": {
            "olse": float(result.olse_objective),
            "glse": float(result.glse_objective),
        },
        "residual_scale": {
            "value": float(result.residual_scale),
            "note": RESIDUAL_SCALE_NOTE,
        },
        "diagnostics": {
            "eigengap": float(result.diagnostics.eigengap),
            "g11_condition": float(result.diagnostics.g11_condition),
            "degenerate": bool(result.diagnostics.degenerate),
        },
    }
    if emit_means:
        report["means"] = {
            "u1_hat": _matrix_payload(result.u1_hat),
            "u2_hat": _matrix_payload(result.u2_hat),
        }
    if legacy is not None:
        report["legacy_means"] = {
            "u1_hat": _matrix_payload(legacy),
            "note": LEGACY_MEANS_NOTE,
        }
    if oracle_report is not None:
        report["oracle"] = {
            "max_abs_deviation": float(oracle_report.max_abs_deviation),
            "gradient_max_abs": float(oracle_report.gradient_max_abs),
            "perturbation_violations": int(oracle_report.perturbation_violations),
            "legacy_objective_excess": float(oracle_report.legacy_objective_excess),
            "passed": bool(oracle_report.passed),
        }
    return report


def report_to_json(report: dict) -> str:
    return json.dumps(report, indent=2) + "\n"


def _flatten(prefix: str, value, rows: list) -> None:
    if isinstance(value, dict):
        for key, item in value.items():
            _flatten(f"{prefix}.{key}" if prefix else str(key), item, rows)
    elif isinstance(value, (list, tuple)):
        for index, item in enumerate(value):
            _flatten(f"{prefix}.{index}", item, rows)
    else:
        rows.append((prefix, value))


def report_to_csv(report: dict) -> str:
    """Flatten a report to ``key,value`` rows with dotted key paths."""
    rows: list = []
    _flatten("", report, rows)
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(["key", "value"])
    for key, value in rows:
        writer.writerow([key, repr(float(value)) if isinstance(value, float) else value])
    return buffer.getvalue()


def consistency_table(report: ConsistencyReport) -> str:
    """Tabular view of a consistency sweep: one CSV row per sample size."""
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(["n", "b_error_median", "u1_rmse_corrected", "u1_rmse_legacy"])
    for i, n in enumerate(report.n_grid):
        writer.writerow([
            n,
            repr(report.b_error_median[i]),
            repr(report.u1_rmse_corrected[i]),
            repr(report.u1_rmse_legacy[i]),
        ])
    return buffer.getvalue()


def consistency_summary(report: ConsistencyReport, extra: dict) -> str:
    payload = {
        "schema_version": SCHEMA_VERSION,
        "tool_version": __version__,
        **extra,
        "n_grid": list(report.n_grid),
        "b_error_median": list(report.b_error_median),
        "u1_rmse_corrected": list(report.u1_rmse_corrected),
        "u1_rmse_legacy": list(report.u1_rmse_legacy),
        "replicates": report.replicates,
        "seed": report.seed,
        "skipped": report.skipped,
    }
    return json.dumps(payload, indent=2) + "\n"


# ---------------------------------------------------------------------------
# verification suite
# ---------------------------------------------------------------------------

def run_verify_suite(seed: int, instances: int) -> dict:
    """Check the full invariant suite over seeded random instances.

    Instances alternate between the intercept and no-intercept models across
    p in 1..4, r in 1..3, n in 10..60. Each invariant row records how many
    instances it covered and the worst deviation-to-threshold ratio; a ratio
    above 1 is a failure. Returns the table rows plus a payload describing the
    first failing instance, if any.
    """
    if instances < 1:
        raise ValidationError(f"instances must be >= 1, got {instances}")
    checks = {
        "mean-route-equivalence": {"checked": 0, "max_ratio": 0.0},
        "mean-shift-identity": {"checked": 0, "max_ratio": 0.0},
        "slope-gram-identity": {"checked": 0, "max_ratio": 0.0},
        "no-intercept-coincidence": {"checked": 0, "max_ratio": 0.0},
        "oracle-agreement": {"checked": 0, "max_ratio": 0.0},
        "glse-stationarity": {"checked": 0, "max_ratio": 0.0},
    }
    first_failure = None

    def record(name, ratio, instance):
        nonlocal first_failure
        entry = checks[name]
        entry["checked"] += 1
        entry["max_ratio"] = max(entry["max_ratio"], ratio)
        if ratio > 1.0 and first_failure is None:
            first_failure = {"invariant": name, "ratio": ratio, **instance}

    for index in range(instances):
        kind = ModelKind.INTERCEPT if index % 2 == 0 else ModelKind.NO_INTERCEPT
        truth = random_truth(seed, index, kind)
        data = generate_dataset(truth)
        instance = {
            "seed": seed,
            "index": index,
            "kind": kind.value,
            "p": data.p,
            "r": data.r,
            "n": data.n,
            "x1": [[float(v) for v in row] for row in data.x1],
            "x2": [[float(v) for v in row] for row in data.x2],
        }
        spec = ModelSpec(kind=kind)
        result = fit(data, spec)
        es = signal_eigenstructure(scatter_matrix(data, kind), data.p)
        legacy = legacy_u1(data, es, kind)
        x_scale = max(1.0, float(np.max(np.abs(data.stacked()))))

        projected = estimate_u1_projection(data, result.alpha_hat, result.b_hat)
        deviation = float(np.max(np.abs(projected - result.u1_hat)))
        record("mean-route-equivalence", deviation / (1e-9 * x_scale), instance)

        if kind is ModelKind.INTERCEPT:
            shift = np.broadcast_to(data.x1.mean(axis=1, keepdims=True), data.x1.shape)
            deviation = float(np.max(np.abs((result.u1_hat - legacy) - shift)))
            record("mean-shift-identity", deviation / 1e-12, instance)
        else:
            deviation = float(np.max(np.abs(result.u1_hat - legacy)))
            record("no-intercept-coincidence", deviation / 1e-12, instance)

        gram = result.b_hat.T @ result.b_hat
        inverse_g11 = np.linalg.solve(es.g11, np.eye(data.p))
        identity_form = inverse_g11.T @ inverse_g11 - np.eye(data.p)
        deviation = float(np.max(np.abs(gram - identity_form)))
        record(
            "slope-gram-identity",
            deviation / (1e-9 * max(1.0, float(np.max(np.abs(gram))))),
            instance,
        )

        oracle_u1 = project_columns_oracle(data, result.alpha_hat, result.b_hat)
        deviation = float(np.max(np.abs(oracle_u1 - result.u1_hat)))
        record(
            "oracle-agreement",
            deviation / (1e-9 * max(1.0, float(np.max(np.abs(result.u1_hat))))),
            instance,
        )

        if not result.diagnostics.degenerate:
            gradient = glse_gradient_check(data, result.alpha_hat, result.b_hat)
            if kind is ModelKind.NO_INTERCEPT:
                # the intercept is a known constant there, not a free parameter
                gradient = gradient[data.r :]
            deviation = float(np.max(np.abs(gradient)))
            record(
                "glse-stationarity",
                deviation / (1e-5 * max(1.0, result.glse_objective)),
                instance,
            )

    return {
        "seed": seed,
        "instances": instances,
        "checks": checks,
        "first_failure": first_failure,
    }


def format_verify_table(suite: dict) -> str:
    lines = [f"{'invariant':<28}{'instances':>10}{'max_ratio':>14}  result"]
    all_passed = True
    for name, entry in suite["checks"].items():
        passed = entry["max_ratio"] <= 1.0
        all_passed = all_passed and passed
        lines.append(
            f"{name:<28}{entry['checked']:>10}{entry['max_ratio']:>14.3e}"
            f"  {'PASS' if passed else 'FAIL'}"
        )
    verdict = "all invariants passed" if all_passed else "INVARIANT FAILURES DETECTED"
    lines.append("")
    lines.append(
        f"{verdict} ({suite['instances']} instances, seed {suite['seed']}, "
        "ratios are deviation over tolerance)"
    )
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# command-line interface
# ---------------------------------------------------------------------------

class _ArgumentParser(argparse.ArgumentParser):
    """Argument parser that exits with code 1 on usage errors (2 is reserved
    for unidentifiable/not-positive-definite failures)."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _add_kind_flags(parser) -> None:
    group = parser.add_mutually_exclusive_group(required=True)
    group.add_argument("--intercept", action="store_true",
                       help="fit the intercept model")
    group.add_argument("--no-intercept", dest="no_intercept", action="store_true",
                       help="fit the no-intercept model (intercept known to be zero)")


def _kind_from_args(args) -> ModelKind:
    return ModelKind.INTERCEPT if args.intercept else ModelKind.NO_INTERCEPT


def build_parser() -> argparse.ArgumentParser:
    parser = _ArgumentParser(
        prog="eivreg",
        description="Closed-form estimators for the multivariate "
                    "errors-in-variables regression model.",
    )
    parser.add_argument("--version", action="version", version=__version__)
    subparsers = parser.add_subparsers(dest="command", required=True)

    fit_parser = subparsers.add_parser("fit", help="fit a dataset and report estimates")
    fit_parser.add_argument("--input", required=True, help="dataset CSV path")
    fit_parser.add_argument("--p", type=int, default=None, help="predictor dimension")
    fit_parser.add_argument("--r", type=int, default=None, help="response dimension")
    _add_kind_flags(fit_parser)
    fit_parser.add_argument("--sigma0", default=None,
                            help="known error-covariance shape, (p+r)x(p+r) numeric CSV")
    fit_parser.add_argument("--emit-means", action="store_true",
                            help="include the fitted mean matrices in the report")
    fit_parser.add_argument("--legacy-means", action="store_true",
                            help="also report the legacy mean estimate "
                                 "(incorrect for the intercept model)")
    fit_parser.add_argument("--verify", action="store_true",
                            help="run the oracle suite and embed its report")
    fit_parser.add_argument("--tol", type=float, default=1e-9,
                            help="verification tolerance (default 1e-9)")
    fit_parser.add_argument("--output", default=None, help="write the report here")
    fit_parser.add_argument("--format", choices=("json", "csv"), default="json")
    fit_parser.set_defaults(handler=_cmd_fit)

    sim_parser = subparsers.add_parser("simulate", help="run a seeded consistency sweep")
    sim_parser.add_argument("--p", type=int, required=True)
    sim_parser.add_argument("--r", type=int, required=True)
    sim_parser.add_argument("--sigma", type=float, required=True,
                            help="error standard deviation (0 gives noise-free data)")
    sim_parser.add_argument("--error", choices=("gaussian", "uniform"), default="gaussian")
    sim_parser.add_argument("--n-grid", required=True,
                            help="comma-separated strictly increasing sample sizes")
    sim_parser.add_argument("--reps", type=int, required=True)
    sim_parser.add_argument("--seed", type=int, required=True)
    _add_kind_flags(sim_parser)
    sim_parser.add_argument("--output", default=None,
                            help="write the table here and the JSON summary beside it")
    sim_parser.set_defaults(handler=_cmd_simulate)

    verify_parser = subparsers.add_parser("verify",
                                          help="assert the invariant suite on random instances")
    verify_parser.add_argument("--seed", type=int, required=True)
    verify_parser.add_argument("--instances", type=int, required=True)
    verify_parser.set_defaults(handler=_cmd_verify)
    return parser


def _write_output(text: str, output) -> None:
    if output is None:
        sys.stdout.write(text)
    else:
        with open(output, "w", encoding="utf-8") as handle:
            handle.write(text)


def _cmd_fit(args) -> int:
    if args.tol <= 0:
        raise ValidationError(f"--tol must be positive, got {args.tol}")
    data = read_dataset(args.input, args.p, args.r)
    kind = _kind_from_args(args)
    sigma0 = read_sigma0(args.sigma0, data.p + data.r) if args.sigma0 else None
    spec = ModelSpec(kind=kind, sigma0=sigma0)
    result = fit(data, spec)
    oracle_report = None
    if args.verify:
        oracle_report = perturbation_probe(
            data, result, trials=200, scale=1e-3, seed=FIT_VERIFY_SEED,
            tol=args.tol, sigma0=sigma0,
        )
    legacy = legacy_means(data, spec) if args.legacy_means else None
    report = build_fit_report(
        data=data,
        spec=spec,
        result=result,
        input_path=args.input,
        emit_means=args.emit_means,
        legacy=legacy,
        oracle_report=oracle_report,
    )
    text = report_to_json(report) if args.format == "json" else report_to_csv(report)
    _write_output(text, args.output)
    if oracle_report is not None and not oracle_report.passed:
        return 3
    return 0


def _parse_grid(text: str) -> tuple[int, ...]:
    try:
        return tuple(int(part) for part in text.split(","))
    except ValueError:
        raise ValidationError(f"--n-grid must be comma-separated integers, got {text!r}") from None


def _cmd_simulate(args) -> int:
    kind = _kind_from_args(args)
    if args.p < 1 or args.r < 1:
        raise ValidationError("--p and --r must be positive")
    if not (np.isfinite(args.sigma) and args.sigma >= 0):
        raise ValidationError(f"--sigma must be finite and >= 0, got {args.sigma}")
    grid = _parse_grid(args.n_grid)
    rng = np.random.default_rng([args.seed, 0])
    b = rng.standard_normal((args.r, args.p))
    alpha = rng.standard_normal(args.r) if kind is ModelKind.INTERCEPT else np.zeros(args.r)
    # template means in [0, 2] per row: nonzero row means make the legacy
    # estimate's defect visible in the intercept model
    template = SyntheticTruth(
        u1=default_mean_grid(args.p, 64, spread=1.0, offset=1.0),
        b=b,
        alpha=alpha,
        sigma2=args.sigma * args.sigma,
        error_kind=ErrorKind(args.error),
        seed=args.seed,
    )
    report = consistency_experiment(template, grid, args.reps, args.seed, kind=kind)
    table = consistency_table(report)
    summary = consistency_summary(report, {
        "p": args.p,
        "r": args.r,
        "sigma": float(args.sigma),
        "error": args.error,
        "kind": kind.value,
    })
    if args.output is None:
        sys.stdout.write(table)
        sys.stdout.write(summary)
    else:
        _write_output(table, args.output)
        _write_output(summary, args.output + ".json")
    return 0


def _cmd_verify(args) -> int:
    suite = run_verify_suite(args.seed, args.instances)
    sys.stdout.write(format_verify_table(suite))
    if suite["first_failure"] is not None:
        sys.stdout.write("first failing instance for reproduction:\n")
        sys.stdout.write(json.dumps(suite["first_failure"], indent=2) + "\n")
        return 3
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code else 0
    try:
        return args.handler(args)
    except (ValidationError, OSError) as exc:  # parse, dimension, and file errors
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (UnidentifiableError, NotPositiveDefiniteError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except ExcessiveSkipsError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    raise SystemExit(main())
