"""Command-line entry point.

Subcommands: ``validate`` a law file, ``solve`` a functional on a law,
``adversarial`` to generate a certified weak-dependence sequence, and
``coverage`` to execute a Monte Carlo plan.  All randomness flows from the
plan/flag seed; outputs are machine-first (JSON and CSV), with ``--pretty``
adding human-readable tables.

Exit codes: 0 success, 1 validation failure, 2 input parse error,
3 model-membership failure, 4 generation failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

from . import adversarial, confsets, functionals, laws, simulate
from .errors import BracketingFailure, DegenerateBase, WeakdepError

EXIT_OK = 0
EXIT_INVALID = 1
EXIT_PARSE = 2
EXIT_NO_SOLUTION = 3
EXIT_GENERATION = 4


class _InputError(Exception):
    """Wraps any malformed-input failure so main can map it to exit code 2."""


def _load_json(path):
    try:
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise _InputError(f"{path}: {exc}") from exc


def _parse(obj, builder, what):
    try:
        return builder(obj)
    except (KeyError, TypeError, ValueError, WeakdepError) as exc:
        raise _InputError(f"bad {what}: {exc}") from exc


def _resolve_threads(value):
    if value is None:
        raw = os.environ.get("WEAKDEP_THREADS", "0")
        try:
            value = int(raw)
        except ValueError:
            raise _InputError(f"WEAKDEP_THREADS={raw!r} is not an integer")
    if value == 0:
        value = os.cpu_count() or 1
    return value


def _emit(payload, pretty):
    print(json.dumps(payload, indent=2 if pretty else None))


def cmd_validate(args) -> int:
    law = _parse(_load_json(args.law), laws.law_from_dict, "law file")
    violations = laws.validate(law)
    for violation in violations:
        print(violation)
    if not violations:
        print("ok")
    return EXIT_INVALID if violations else EXIT_OK


def cmd_solve(args) -> int:
    law = _parse(_load_json(args.law), laws.law_from_dict, "law file")
    spec = _parse(_load_json(args.spec), functionals.FunctionalSpec.from_dict,
                  "functional spec")
    violations = laws.validate(law)
    if violations:
        for violation in violations:
            print(violation, file=sys.stderr)
        return EXIT_INVALID
    try:
        spec.validate_against(law.support)
    except ValueError as exc:
        raise _InputError(f"functional spec does not fit the law support: {exc}")

    report = functionals.check_model_membership(law, spec, args.tol)
    phi = functionals.evaluate_phi(law, spec, args.tol)
    if isinstance(phi, functionals.NoSolution) or not report.in_model:
        payload = {"phi": None, "diagnostics": report.to_dict()}
        if isinstance(phi, functionals.NoSolution):
            payload["no_solution"] = {
                "equation": phi.equation,
                "stratum": phi.stratum,
                "residual": phi.residual,
            }
        _emit(payload, args.pretty)
        return EXIT_NO_SOLUTION
    _emit({"phi": phi, "diagnostics": report.to_dict()}, args.pretty)
    return EXIT_OK


def cmd_adversarial(args) -> int:
    base = _parse(_load_json(args.base), adversarial.BaseLawSpec.from_dict,
                  "base law spec")
    try:
        tv_targets = [float(t) for t in args.tv_targets.split(",") if t]
    except ValueError as exc:
        raise _InputError(f"bad --tv-targets: {exc}")
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    try:
        sequence = adversarial.generate_sequence(
            base, args.zeta, tv_targets, cert_tol=args.tol
        )
    except (BracketingFailure, DegenerateBase, WeakdepError) as exc:
        print(f"generation failed: {exc}", file=sys.stderr)
        return EXIT_GENERATION

    indent = 2 if args.pretty else None
    certificates = []
    for t, step in enumerate(sequence.steps):
        name = f"law_{t + 1:02d}.json"
        payload = laws.law_to_dict(step.law)
        payload["certificate"] = step.certificate()
        (out_dir / name).write_text(
            json.dumps(payload, indent=indent), encoding="utf-8"
        )
        certificates.append({"file": name, **step.certificate()})
    summary = {
        "target_zeta": sequence.target_zeta,
        "steps": certificates,
    }
    (out_dir / "certificates.json").write_text(
        json.dumps(summary, indent=indent), encoding="utf-8"
    )
    _emit(summary, args.pretty)
    return EXIT_OK


def cmd_coverage(args) -> int:
    plan_dict = _load_json(args.plan)
    if args.seed is not None:
        plan_dict["seed"] = args.seed
    if args.level is not None:
        plan_dict["level"] = args.level
    if args.methods:
        wanted = [m.strip() for m in args.methods.split(",") if m.strip()]
        available = {m.get("name") for m in plan_dict.get("methods", [])}
        missing = [m for m in wanted if m not in available]
        if missing:
            raise _InputError(f"methods not in plan: {missing}")
        plan_dict["methods"] = [
            m for m in plan_dict["methods"] if m.get("name") in wanted
        ]
    if args.grid is not None:
        for method in plan_dict.get("methods", []):
            if method.get("name") == "score":
                method["points"] = args.grid
    plan = _parse(plan_dict, simulate.plan_from_dict, "experiment plan")
    report = simulate.run(plan, threads=_resolve_threads(args.threads))
    csv_text = report.to_csv()
    Path(args.out).write_text(csv_text, encoding="utf-8")
    if args.json:
        Path(args.json).write_text(report.to_json(), encoding="utf-8")
    if args.pretty:
        _print_table(report)
    else:
        print(args.out)
    return EXIT_OK


def _print_table(report):
    rows = [simulate.CSV_COLUMNS] + [cell.csv_row() for cell in report.cells]
    widths = [max(len(str(row[i])) for row in rows) for i in range(len(rows[0]))]
    for row in rows:
        print("  ".join(str(v).ljust(w) for v, w in zip(row, widths)))


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="weakdep",
        description="discrete weak-dependence laws and confidence-set experiments",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("validate", help="check a law file against its invariants")
    p.add_argument("law", help="law JSON file")
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("solve", help="evaluate the functional on a law")
    p.add_argument("law", help="law JSON file")
    p.add_argument("spec", help="functional spec JSON file")
    p.add_argument("--tol", type=float, default=1e-8,
                   help="consistency tolerance for the per-stratum systems")
    p.add_argument("--pretty", action="store_true")
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("adversarial",
                       help="generate a certified weak-dependence sequence")
    p.add_argument("base", help="base law spec JSON file")
    p.add_argument("--zeta", type=float, required=True,
                   help="target functional value")
    p.add_argument("--tv-targets", required=True,
                   help="comma-separated decreasing total-variation targets")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--tol", type=float, default=1e-8,
                   help="certification tolerance")
    p.add_argument("--pretty", action="store_true")
    p.set_defaults(func=cmd_adversarial)

    p = sub.add_parser("coverage", help="run a Monte Carlo coverage plan")
    p.add_argument("plan", help="experiment plan JSON file")
    p.add_argument("--out", required=True, help="CSV report path")
    p.add_argument("--json", help="optional full JSON report path")
    p.add_argument("--seed", type=int, help="override the plan seed")
    p.add_argument("--level", type=float, help="override the plan level")
    p.add_argument("--methods", help="comma-separated subset of plan methods")
    p.add_argument("--grid", type=int, help="override the score-inversion grid size")
    p.add_argument("--threads", type=int, default=None,
                   help="worker threads (0 = auto; falls back to WEAKDEP_THREADS)")
    p.add_argument("--pretty", action="store_true")
    p.set_defaults(func=cmd_coverage)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except _InputError as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_PARSE


if __name__ == "__main__":
    sys.exit(main())
