"""Command line front end and CSV input/output.

Three subcommands: ``analyze`` ingests an individual-level trial CSV and
emits the estimate grid, ``simulate`` runs a Monte Carlo study from a
scenario file, ``generate`` writes one synthetic trial with its latent-truth
sidecars.

Input CSV schema: a header row with ``cluster_id`` (string), ``z`` and ``d``
(0/1), ``y`` (number), plus optional ``w_*`` cluster-level columns (constant
within each cluster) and ``x_*`` individual-level columns.  UTF-8, comma
separated, ``.`` decimal point.  Machine-readable outputs print floats with
17 significant digits so they round-trip exactly; pretty tables use 3
decimals.

Exit codes: 0 success, 2 invalid input, 3 numeric failure.  Errors go to
stderr as single-line ``key=value`` records.
"""

from __future__ import annotations

import argparse
import csv
import math
import sys
from dataclasses import replace
from pathlib import Path

from . import collapse, iv, mc
from .dgp import (
    AdherenceLevel,
    GeneratedTrial,
    ParetoSizes,
    PoissonSizes,
    ScenarioConfig,
    generate,
)
from .errors import (
    CrtivError,
    NonConstantClusterCovariate,
    NumericFailure,
    ParseError,
    SchemaMismatch,
    ValidationFailure,
)
from .model import (
    AnalysisOptions,
    DfMode,
    IndividualRecord,
    OutcomeKind,
    SeMode,
    TrialDataset,
    Weights,
    validate,
)

_REQUIRED_COLUMNS = ("cluster_id", "z", "d", "y")


def _machine(x: float) -> str:
    return f"{x:.17g}"


def _pretty(x: float) -> str:
    if math.isinf(x):
        return "inf"
    return f"{x:.3f}"


# --- CSV ingestion -----------------------------------------------------------


def csv_columns(path) -> tuple[list[str], list[str]]:
    """The ``x_*`` and ``w_*`` column names of a trial CSV, in header order."""
    with open(path, newline="", encoding="utf-8-sig") as handle:
        header = next(csv.reader(handle), None)
    if header is None:
        raise SchemaMismatch(f"{path}: empty file")
    return (
        [c for c in header if c.startswith("x_")],
        [c for c in header if c.startswith("w_")],
    )


def ingest_csv(path, outcome_kind: OutcomeKind = OutcomeKind.CONTINUOUS) -> TrialDataset:
    """Read an individual-level trial CSV into a (not yet validated) dataset.

    Raises :class:`SchemaMismatch` for header problems,
    :class:`ParseError` (with the file line number) for malformed cells, and
    :class:`NonConstantClusterCovariate` when a ``w_*`` column varies inside
    a cluster.
    """
    # utf-8-sig also accepts spreadsheet exports that lead with a BOM
    with open(path, newline="", encoding="utf-8-sig") as handle:
        reader = csv.reader(handle)
        header = next(reader, None)
        if header is None:
            raise SchemaMismatch(f"{path}: empty file")
        for required in _REQUIRED_COLUMNS:
            if required not in header:
                raise SchemaMismatch(f"{path}: missing column {required!r}")
        known = set(_REQUIRED_COLUMNS)
        extras = [c for c in header if c not in known]
        bad = [c for c in extras if not (c.startswith("w_") or c.startswith("x_"))]
        if bad:
            raise SchemaMismatch(f"{path}: unrecognised columns {bad}")
        if len(set(header)) != len(header):
            raise SchemaMismatch(f"{path}: duplicate column names")

        position = {name: header.index(name) for name in header}
        x_names = [c for c in header if c.startswith("x_")]
        w_names = [c for c in header if c.startswith("w_")]

        records = []
        covariates: dict[str, tuple[float, ...]] = {}
        first_seen_line: dict[str, int] = {}
        for line, row in enumerate(reader, start=2):
            if len(row) != len(header):
                raise ParseError(
                    f"expected {len(header)} fields, found {len(row)}", line=line
                )
            cid = row[position["cluster_id"]]
            z = _parse_binary(row[position["z"]], "z", line)
            d = _parse_binary(row[position["d"]], "d", line)
            y = _parse_float(row[position["y"]], "y", line)
            x = tuple(_parse_float(row[position[c]], c, line) for c in x_names)
            w = tuple(_parse_float(row[position[c]], c, line) for c in w_names)
            if cid in covariates:
                if covariates[cid] != w:
                    raise NonConstantClusterCovariate(
                        f"cluster {cid}: w columns differ between line "
                        f"{first_seen_line[cid]} and line {line}"
                    )
            else:
                covariates[cid] = w
                first_seen_line[cid] = line
            records.append(IndividualRecord(cid, z, d, y, x))

    if not records:
        raise SchemaMismatch(f"{path}: no data rows")
    return TrialDataset(
        records=records, cluster_covariates=covariates, outcome_kind=outcome_kind
    )


def _parse_float(text: str, column: str, line: int) -> float:
    try:
        value = float(text)
    except ValueError:
        raise ParseError(f"column {column!r}: cannot parse {text!r}", line=line) from None
    if not math.isfinite(value):
        raise ParseError(f"column {column!r}: non-finite value {text!r}", line=line)
    return value


def _parse_binary(text: str, column: str, line: int):
    value = _parse_float(text, column, line)
    return int(value) if value.is_integer() else value


# --- CSV output --------------------------------------------------------------


def write_dataset_csv(dataset: TrialDataset, path) -> None:
    """Write a dataset in the ingestion schema (values round-trip exactly)."""
    n_x = len(dataset.records[0].x) if dataset.records else 0
    widths = {len(v) for v in dataset.cluster_covariates.values()}
    n_w = widths.pop() if len(widths) == 1 else 0
    header = (
        list(_REQUIRED_COLUMNS)
        + [f"w_{i + 1}" for i in range(n_w)]
        + [f"x_{i + 1}" for i in range(n_x)]
    )
    with open(path, "w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        writer.writerow(header)
        for r in dataset.records:
            w = dataset.covariate_vector(r.cluster_id)
            writer.writerow(
                [r.cluster_id, r.z, r.d, _machine(r.y)]
                + [_machine(v) for v in w]
                + [_machine(v) for v in r.x]
            )


def write_truth_sidecars(trial: GeneratedTrial, cluster_path, individual_path) -> None:
    """Write per-cluster complier weights and per-individual classes."""
    cols = trial.dataset.columns()
    with open(cluster_path, "w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        writer.writerow(["cluster_id", "n", "n_compliers", "psi", "psi_cl"])
        for i, cid in enumerate(cols.cluster_ids):
            writer.writerow(
                [
                    cid,
                    int(cols.sizes[i]),
                    int(trial.n_compliers[i]),
                    _machine(float(trial.psi[i])),
                    _machine(float(trial.psi_cl[i])),
                ]
            )
    with open(individual_path, "w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        writer.writerow(["row", "cluster_id", "compliance"])
        for i, (record, cls) in enumerate(zip(trial.dataset.records, trial.compliance)):
            writer.writerow([i, record.cluster_id, cls.value])


# --- scenario files ----------------------------------------------------------

_SCENARIO_KEYS = {
    "adherence",
    "clusters",
    "sizes",
    "poisson_mean",
    "pareto_shape",
    "pareto_scale",
    "pareto_min",
    "rho_y",
    "rho_x",
    "rho_c",
    "pi",
    "lambda_w",
    "lambda_x",
    "beta_w",
    "beta_x",
    "beta_cz",
    "beta_0",
    "beta_c",
    "sigma2_w",
    "sigma2_x",
    "total_variance",
}


def read_scenario(path) -> ScenarioConfig:
    """Parse a flat ``key = value`` scenario file (``#`` starts a comment)."""
    values: dict[str, str] = {}
    with open(path, encoding="utf-8") as handle:
        for line_no, raw in enumerate(handle, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ParseError(f"expected 'key = value', got {raw.strip()!r}", line=line_no)
            key, _, value = line.partition("=")
            key, value = key.strip(), value.strip()
            if key not in _SCENARIO_KEYS:
                raise SchemaMismatch(f"{path}: unknown scenario key {key!r}")
            values[key] = value

    def number(key: str, default: float) -> float:
        return float(values.get(key, default))

    kind = values.get("sizes", "poisson").lower()
    if kind == "poisson":
        sizes = PoissonSizes(mean=number("poisson_mean", 20.0))
    elif kind == "pareto":
        sizes = ParetoSizes(
            shape=number("pareto_shape", 1.8),
            scale=number("pareto_scale", 9.1),
            minimum=int(number("pareto_min", 10)),
        )
    else:
        raise SchemaMismatch(f"{path}: sizes must be poisson or pareto, got {kind!r}")

    adherence = values.get("adherence", "cluster").lower()
    try:
        level = AdherenceLevel(adherence)
    except ValueError:
        raise SchemaMismatch(
            f"{path}: adherence must be cluster or individual, got {adherence!r}"
        ) from None

    try:
        return ScenarioConfig(
            adherence=level,
            n_clusters=int(number("clusters", 50)),
            sizes=sizes,
            rho_y=number("rho_y", 0.05),
            rho_x=number("rho_x", 0.05),
            rho_c=number("rho_c", 0.50),
            pi=number("pi", 0.60),
            lambda_w=number("lambda_w", 0.05),
            lambda_x=number("lambda_x", 0.05),
            beta_w=number("beta_w", 0.1),
            beta_x=number("beta_x", 0.1),
            beta_cz=number("beta_cz", 0.4),
            beta_0=number("beta_0", 0.0),
            beta_c=number("beta_c", 0.0),
            sigma2_w=number("sigma2_w", 0.08),
            sigma2_x=number("sigma2_x", 0.08),
            total_variance=number("total_variance", 1.0),
        )
    except ValueError as exc:
        raise SchemaMismatch(f"{path}: {exc}") from exc


def scenario_echo(config: ScenarioConfig, seed: int, replicates: int) -> str:
    """Resolved configuration in the scenario-file syntax, for provenance."""
    lines = [
        f"adherence = {config.adherence.value}",
        f"clusters = {config.n_clusters}",
    ]
    if isinstance(config.sizes, PoissonSizes):
        lines += ["sizes = poisson", f"poisson_mean = {_machine(config.sizes.mean)}"]
    else:
        lines += [
            "sizes = pareto",
            f"pareto_shape = {_machine(config.sizes.shape)}",
            f"pareto_scale = {_machine(config.sizes.scale)}",
            f"pareto_min = {config.sizes.minimum}",
        ]
    for key in (
        "rho_y",
        "rho_x",
        "rho_c",
        "pi",
        "lambda_w",
        "lambda_x",
        "beta_w",
        "beta_x",
        "beta_cz",
        "beta_0",
        "beta_c",
        "sigma2_w",
        "sigma2_x",
        "total_variance",
    ):
        lines.append(f"{key} = {_machine(getattr(config, key))}")
    lines += [f"# seed = {seed}", f"# replicates = {replicates}"]
    return "\n".join(lines) + "\n"


# --- analyze -----------------------------------------------------------------

_WEIGHT_FLAGS = {"none": Weights.NONE, "cs": Weights.CLUSTER_SIZE, "mv": Weights.MIN_VARIANCE}
_SE_FLAGS = {"model": SeMode.MODEL_BASED, "hw": SeMode.HUBER_WHITE}
_DF_FLAGS = {"normal": DfMode.NORMAL_APPROX, "ssdf": DfMode.SMALL_SAMPLE}

_ANALYSIS_FIELDS = [
    "estimator",
    "cl_outcome",
    "adjust_w",
    "weights",
    "se_mode",
    "df_mode",
    "estimate",
    "se",
    "ci_low",
    "ci_high",
    "p",
    "df",
    "first_stage_f",
    "n_clusters",
]


def _analysis_rows(dataset: TrialDataset, args) -> list[dict]:
    """Fit the requested grid: per combination one LATE row and one ITT row."""
    validate(dataset)

    if args.adjust_x:
        x_columns = _resolve_names(args.adjust_x, args.x_names, "x")
        if dataset.outcome_kind is OutcomeKind.BINARY:
            values = collapse.binary_residuals(dataset, x_columns)
        else:
            values = collapse.continuous_residuals(dataset, x_columns)
        summaries = collapse.summaries_from_values(dataset, values)
        icc_values = values
        cl_outcome = "adjusted_for_x"
    else:
        summaries = collapse.cluster_means(dataset)
        icc_values = dataset.columns().y
        cl_outcome = "unadjusted"

    if args.icc == "auto":
        fixed_icc = None
        estimated_icc = collapse.anova_icc(icc_values, dataset.columns().codes).rho
    else:
        fixed_icc = float(args.icc)
        estimated_icc = None

    weight_levels = [_WEIGHT_FLAGS[args.weights]] if args.weights else list(_WEIGHT_FLAGS.values())
    se_levels = [_SE_FLAGS[args.se]] if args.se else list(_SE_FLAGS.values())
    df_levels = [_DF_FLAGS[args.df]] if args.df else list(_DF_FLAGS.values())
    w_levels = [False, True] if args.adjust_w else [False]

    if args.adjust_w:
        w_columns = _resolve_names(args.adjust_w, args.w_names, "w")
        filtered = {
            cid: tuple(vec[i] for i in w_columns)
            for cid, vec in dataset.cluster_covariates.items()
        }
        summaries = [replace(s, w=filtered.get(s.cluster_id, ())) for s in summaries]

    rows = []
    for adjust_w in w_levels:
        for weights in weight_levels:
            for se_mode in se_levels:
                for df_mode in df_levels:
                    options = AnalysisOptions(
                        weights=weights,
                        se_mode=se_mode,
                        df_mode=df_mode,
                        adjust_w=adjust_w,
                        icc=fixed_icc,
                    )
                    late = iv.tsls(summaries, options, icc=estimated_icc)
                    assignment = iv.itt(summaries, options, icc=estimated_icc)
                    rows.append(_row("late", cl_outcome, options, late))
                    rows.append(_row("itt", cl_outcome, options, assignment))
    return rows


def _row(estimator, cl_outcome, options, fit) -> dict:
    return {
        "estimator": estimator,
        "cl_outcome": cl_outcome,
        "adjust_w": int(options.adjust_w),
        "weights": options.weights.value,
        "se_mode": options.se_mode.value,
        "df_mode": options.df_mode.value,
        "estimate": fit.estimate,
        "se": fit.se,
        "ci_low": fit.ci[0],
        "ci_high": fit.ci[1],
        "p": fit.p,
        "df": fit.df,
        "first_stage_f": math.nan if fit.first_stage_f is None else fit.first_stage_f,
        "n_clusters": fit.n_clusters,
    }


def _resolve_names(requested: str, available: list[str], prefix: str) -> tuple[int, ...]:
    names = [n.strip() for n in requested.split(",") if n.strip()]
    if not names:
        raise SchemaMismatch(f"--adjust-{prefix} given without column names")
    indices = []
    for name in names:
        if name not in available:
            raise SchemaMismatch(
                f"column {name!r} not in the file ({prefix}_* columns: {available})"
            )
        indices.append(available.index(name))
    return tuple(indices)


def _write_rows_csv(rows: list[dict], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        writer.writerow(_ANALYSIS_FIELDS)
        for row in rows:
            writer.writerow(
                [
                    row[f] if isinstance(row[f], (str, int)) else _machine(row[f])
                    for f in _ANALYSIS_FIELDS
                ]
            )


def _format_table(rows: list[dict]) -> str:
    headers = [
        "estimator",
        "outcome",
        "w",
        "weights",
        "se",
        "df",
        "estimate",
        "ci",
        "p",
        "F(1,J-2)",
    ]
    body = []
    for row in rows:
        body.append(
            [
                row["estimator"],
                row["cl_outcome"],
                "yes" if row["adjust_w"] else "no",
                row["weights"],
                row["se_mode"],
                row["df_mode"],
                _pretty(row["estimate"]),
                f"({_pretty(row['ci_low'])}, {_pretty(row['ci_high'])})",
                _pretty(row["p"]),
                "" if math.isnan(row["first_stage_f"]) else _pretty(row["first_stage_f"]),
            ]
        )
    widths = [max(len(h), *(len(r[i]) for r in body)) for i, h in enumerate(headers)]
    lines = [
        "  ".join(h.ljust(w) for h, w in zip(headers, widths)),
        "  ".join("-" * w for w in widths),
    ]
    lines += ["  ".join(cell.ljust(w) for cell, w in zip(r, widths)) for r in body]
    return "\n".join(lines) + "\n"


# --- subcommand drivers -------------------------------------------------------


def _cmd_analyze(args) -> int:
    outcome_kind = OutcomeKind(args.outcome_type)
    dataset = ingest_csv(args.input, outcome_kind)
    args.x_names, args.w_names = csv_columns(args.input)
    rows = _analysis_rows(dataset, args)
    table = _format_table(rows)
    sys.stdout.write(table)
    if args.output_dir:
        out = Path(args.output_dir)
        out.mkdir(parents=True, exist_ok=True)
        _write_rows_csv(rows, out / "analysis.csv")
        (out / "analysis.txt").write_text(table, encoding="utf-8")
    return 0


_REPORT_FIELDS = [
    "cl_outcome",
    "adjust_w",
    "weights",
    "se_mode",
    "df_mode",
    "bias",
    "mce_bias",
    "coverage",
    "mce_coverage",
    "mean_se",
    "n_fits",
    "n_fit_failures",
    "n_replicates",
    "rejected_weak",
    "attempts",
]


def write_report_csv(report: mc.McReport, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        writer.writerow(_REPORT_FIELDS)
        for key, res in report.variants.items():
            writer.writerow(
                [
                    key.cl_outcome.value,
                    int(key.adjust_w),
                    key.weights.value,
                    key.se_mode.value,
                    key.df_mode.value,
                    _machine(res.bias),
                    _machine(res.mce_bias),
                    _machine(res.coverage),
                    _machine(res.mce_coverage),
                    _machine(res.mean_se),
                    res.n_fits,
                    res.n_fit_failures,
                    report.n_replicates,
                    report.rejected_weak,
                    report.attempts,
                ]
            )


def _format_report(report: mc.McReport) -> str:
    lines = [
        f"replicates={report.n_replicates}  rejected_weak={report.rejected_weak}  "
        f"attempts={report.attempts}  truth={_pretty(report.truth)}  "
        f"seed={report.master_seed}",
        "",
    ]
    header = ["variant", "bias", "mce", "coverage", "mce_cov", "mean_se", "failures"]
    body = [
        [
            key.label(),
            _pretty(res.bias),
            _pretty(res.mce_bias),
            _pretty(res.coverage),
            _pretty(res.mce_coverage),
            _pretty(res.mean_se),
            str(res.n_fit_failures),
        ]
        for key, res in report.variants.items()
    ]
    widths = [max(len(h), *(len(r[i]) for r in body)) for i, h in enumerate(header)]
    lines.append("  ".join(h.ljust(w) for h, w in zip(header, widths)))
    lines.append("  ".join("-" * w for w in widths))
    lines += ["  ".join(c.ljust(w) for c, w in zip(r, widths)) for r in body]
    return "\n".join(lines) + "\n"


def _cmd_simulate(args) -> int:
    config = read_scenario(args.scenario)
    report = mc.run_study(
        config,
        n_replicates=args.replicates,
        master_seed=args.seed,
        threads=args.threads,
    )
    out = Path(args.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_report_csv(report, out / "report.csv")
    text = _format_report(report)
    (out / "report.txt").write_text(text, encoding="utf-8")
    (out / "scenario_echo.txt").write_text(
        scenario_echo(config, args.seed, args.replicates), encoding="utf-8"
    )
    sys.stdout.write(text)
    return 0


def _cmd_generate(args) -> int:
    config = read_scenario(args.scenario)
    trial = generate(config, args.seed)
    out = Path(args.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_dataset_csv(trial.dataset, out / "trial.csv")
    write_truth_sidecars(trial, out / "truth_clusters.csv", out / "truth_individuals.csv")
    (out / "scenario_echo.txt").write_text(
        scenario_echo(config, args.seed, 1), encoding="utf-8"
    )
    sys.stdout.write(
        f"wrote {len(trial.dataset.records)} records in {config.n_clusters} clusters "
        f"to {out / 'trial.csv'}\n"
    )
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="crtiv",
        description="Complier-effect estimation for cluster randomised trials",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    analyze = sub.add_parser("analyze", help="estimate from a trial CSV")
    analyze.add_argument("--input", required=True)
    analyze.add_argument("--output-dir", default=None)
    analyze.add_argument(
        "--outcome-type", choices=["continuous", "binary"], default="continuous"
    )
    analyze.add_argument("--weights", choices=sorted(_WEIGHT_FLAGS), default=None)
    analyze.add_argument("--se", choices=sorted(_SE_FLAGS), default=None)
    analyze.add_argument("--df", choices=sorted(_DF_FLAGS), default=None)
    analyze.add_argument("--adjust-w", default=None, metavar="COLS")
    analyze.add_argument("--adjust-x", default=None, metavar="COLS")
    analyze.add_argument("--icc", default="auto")
    analyze.set_defaults(run=_cmd_analyze)

    simulate = sub.add_parser("simulate", help="run a Monte Carlo study")
    simulate.add_argument("--scenario", required=True)
    simulate.add_argument("--output-dir", required=True)
    simulate.add_argument("--replicates", type=int, required=True)
    simulate.add_argument("--seed", type=int, default=0)
    simulate.add_argument("--threads", type=int, default=1)
    simulate.set_defaults(run=_cmd_simulate)

    gen = sub.add_parser("generate", help="write one synthetic trial")
    gen.add_argument("--scenario", required=True)
    gen.add_argument("--output-dir", required=True)
    gen.add_argument("--seed", type=int, default=0)
    gen.set_defaults(run=_cmd_generate)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if getattr(args, "icc", None) not in (None, "auto"):
        try:
            value = float(args.icc)
        except ValueError:
            _fail("validation", "BadFlag", f"--icc must be 'auto' or a number, got {args.icc!r}")
            return 2
        if not 0.0 <= value <= 1.0:
            _fail("validation", "BadFlag", f"--icc must be in [0, 1], got {value}")
            return 2
    try:
        return args.run(args)
    except ValidationFailure as exc:
        _fail("validation", type(exc).__name__, str(exc))
        return 2
    except (NumericFailure, CrtivError) as exc:
        _fail("numeric", type(exc).__name__, str(exc))
        return 3


def _fail(kind: str, type_name: str, message: str) -> None:
    message = message.replace("\n", " ")
    sys.stderr.write(f'crtiv-error kind={kind} type={type_name} msg="{message}"\n')


if __name__ == "__main__":
    sys.exit(main())
