"""Command-line entry point: ``cfaudit synth | audit | validate | report``.

Exit codes: 0 success, 1 validation or runtime failure, 2 usage error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import __version__
from .audit import (
    AuditConfig,
    AuditError,
    default_output_dir,
    read_report,
    run_audit,
    write_report,
)
from .cohort import CohortError, parse_cohort_csv_report, validate_cohort, write_cohort
from .prep import FeatureSchema, imputation_counts
from .synth import InvalidConfig, NonConvergence, SynthConfig, calibrate_intercept, generate_cohort

log = logging.getLogger("cfaudit")


def _csv_list(text: str) -> tuple[str, ...]:
    return tuple(v.strip() for v in text.split(",") if v.strip())


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="cfaudit", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"cfaudit {__version__}")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="generate a synthetic cohort CSV")
    s.add_argument("--config", help="SynthConfig JSON")
    s.add_argument("--seed", type=int)
    s.add_argument("--n-patients", type=int)
    s.add_argument("--out", required=True, help="output CSV path")
    s.add_argument("--calibrate-mortality", type=float, metavar="RATE",
                   help="re-fit the mortality intercept to this patient-level rate first")

    a = sub.add_parser("audit", help="run the paired control/treatment audit")
    a.add_argument("--cohort", help="cohort CSV")
    a.add_argument("--config", help="AuditConfig JSON")
    a.add_argument("--out", help=f"output directory (default ${{CFAUDIT_OUT}} or {default_output_dir()!r})")
    a.add_argument("--seed", type=int)
    a.add_argument("--format", choices=("json", "csv", "both"))
    a.add_argument("--tasks", type=_csv_list)
    a.add_argument("--models", type=_csv_list)
    a.add_argument("--axes", type=_csv_list)
    a.add_argument("--threshold", type=float)
    a.add_argument("--k", type=int)
    a.add_argument("--schema", help="FeatureSchema JSON overriding imputation ranges")
    a.add_argument("--strict", action="store_true", default=None, help="abort on the first invalid row")
    a.add_argument("--save-models", action="store_true", default=None)

    v = sub.add_parser("validate", help="validate a cohort CSV and print a summary")
    v.add_argument("--cohort", required=True)
    v.add_argument("--schema")
    v.add_argument("--strict", action="store_true")

    r = sub.add_parser("report", help="re-emit tables from an existing report.json")
    r.add_argument("--in", dest="src", required=True, help="report.json or its directory")
    r.add_argument("--out", help="output directory (default: alongside the input)")
    r.add_argument("--format", choices=("json", "csv", "both"), default="csv")
    return p


def _cmd_synth(args) -> int:
    cfg = SynthConfig.load(args.config) if args.config else SynthConfig()
    if args.seed is not None:
        cfg = cfg.replace(seed=args.seed)
    if args.n_patients is not None:
        cfg = cfg.replace(n_patients=args.n_patients)
    if args.calibrate_mortality is not None:
        cfg = calibrate_intercept(cfg, args.calibrate_mortality)
        log.info("mortality intercept %.10f", cfg.severity_effect["mortality_intercept"])
    cfg.validate()
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    table = generate_cohort(cfg)
    write_cohort(table, out)
    print(f"wrote {len(table)} rows for {cfg.n_patients} patients to {out}")
    return 0


def _cmd_audit(args) -> int:
    cfg = AuditConfig.load(args.config) if args.config else AuditConfig()
    overrides = {
        "cohort_path": args.cohort,
        "output_dir": args.out,
        "seed": args.seed,
        "format": args.format,
        "tasks": args.tasks,
        "model_families": args.models,
        "axes": args.axes,
        "threshold": args.threshold,
        "k": args.k,
        "schema_path": args.schema,
        "strict": args.strict,
        "save_models": args.save_models,
    }
    cfg = cfg.replace(**{k: v for k, v in overrides.items() if v is not None})
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    sink = None
    if cfg.save_models:
        model_dir = out / "models"
        model_dir.mkdir(exist_ok=True)

        def sink(name, model):
            (model_dir / f"{name}.json").write_text(json.dumps(model.to_dict()), encoding="utf-8")

    report = run_audit(cfg, model_sink=sink)
    written = write_report(report, cfg.format, out)
    for w in report.warnings[:20]:
        log.warning("%s", w)
    print(f"audit finished in {report.wall_clock_s:.1f}s; wrote {', '.join(str(p) for p in written)}")
    return 0


def _cmd_validate(args) -> int:
    with open(args.cohort, "rb") as fh:
        result = parse_cohort_csv_report(fh, strict=args.strict)
    report = validate_cohort(result.table)
    schema = FeatureSchema.load(args.schema) if args.schema else None
    if len(result.table):
        report.imputed_counts = imputation_counts(result.table, schema)
    print(report.summary())
    if result.violations:
        print(f"skipped rows: {result.n_skipped}")
        for rule, n in sorted(result.counts().items()):
            print(f"  {rule}: {n}")
        return 1
    return 0 if report.ok else 1


def _cmd_report(args) -> int:
    report = read_report(args.src)
    src = Path(args.src)
    out = Path(args.out) if args.out else (src if src.is_dir() else src.parent)
    written = write_report(report, args.format, out)
    significant = [t for t in report.tests if t.stars]
    print(f"{len(report.tests)} comparisons, {len(significant)} with p <= 0.05")
    for t in significant:
        print(
            f"  {t.task:13s} {t.model_family:8s} {t.axis:16s} {t.subgroup:16s} {t.metric:8s} "
            f"control={t.mean_control:.3f} treatment={t.mean_treatment:.3f} p={t.p_value:.2e} {t.stars}"
        )
    print("wrote " + ", ".join(str(p) for p in written))
    return 0


COMMANDS = {"synth": _cmd_synth, "audit": _cmd_audit, "validate": _cmd_validate, "report": _cmd_report}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return COMMANDS[args.command](args)
    except CohortError as err:
        print(f"cohort validation failed: {err}", file=sys.stderr)
        return 1
    except (AuditError, InvalidConfig, NonConvergence, ValueError, OSError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
