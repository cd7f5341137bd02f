import os
import sys
import asyncio
import logging
import argparse
from typing import List, Optional, Sequence

import numpy as np

from core import lagrange, legendre, structure
from core.async_utils import async_manager, verify_corpus
from core.config import (
    CORPUS_DIR, DEFAULT_SAMPLES, DEFAULT_SEED, EXPLORE_COUNT, IDENTITY_TOL, MODEL_SUFFIX, NUMERIC_ZERO_TOL,
)
from core.corpus import list_corpus
from core.exprcore import ExpressionError
from core.hamilton import RebaseError, resolve
from core.jets import PhaseJets, jet_table, numeric_jets
from core.legendre import LegendreError
from core.modeldsl import ModelError, ModelSpec, SamplePoint, in_domain, load_model, render_expression
from core.structure import REBASE_FAMILIES, StructureError
from core.tensors import IndexedExpr, as_term
from core.utils import configure_logging, dump_json, finite_or_none
from core.verify import CheckError, OracleReport, SuiteReport, fd_oracle, run_suite

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_FAILED = 1
EXIT_ERROR = 2

TENSORS = ("W", "R", "T", "E", "D", "M", "A", "B", "C")


class UsageError(Exception):
    """Arguments that argparse accepts but the model rejects (wrong point size, point outside the domain)."""
    pass


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--samples", type=int, default=DEFAULT_SAMPLES, help="number of sample points")
    common.add_argument("--seed", type=int, default=DEFAULT_SEED)
    common.add_argument("--tol", type=float, default=IDENTITY_TOL, help="identity tolerance")
    common.add_argument("--format", choices=("text", "json"), default="text")
    common.add_argument("--report", metavar="PATH", help="also write the JSON report to PATH")
    common.add_argument("--verbose", action="store_true", help="debug logging")

    parser = argparse.ArgumentParser(prog="gsf", description="Lagrangian gauge structure functions")
    commands = parser.add_subparsers(dest="command", required=True)

    check = commands.add_parser("check", parents=[common], help="validate a model and run every identity")
    check.add_argument("model")

    compute = commands.add_parser("compute", parents=[common], help="print one tensor")
    compute.add_argument("model")
    compute.add_argument("--tensor", choices=TENSORS, required=True)
    compute.add_argument("--point", nargs="+", metavar="X",
                         help="q values, then q_dot values, then optionally q_ddot values (commas or spaces)")

    oracle = commands.add_parser("oracle", parents=[common], help="finite-difference check of every jet family")
    oracle.add_argument("model")

    corpus = commands.add_parser("corpus", parents=[common], help="list or verify the bundled models")
    corpus.add_argument("--verify-all", action="store_true", help="check models and confirm mutants fail")
    corpus.add_argument("--explore", action="store_true", help="search a rebase family for nonvanishing D")
    corpus.add_argument("--family", choices=sorted(REBASE_FAMILIES), default="mixed")
    corpus.add_argument("--base", default=os.path.join(CORPUS_DIR, f"triple-root{MODEL_SUFFIX}"))
    corpus.add_argument("--count", type=int, default=EXPLORE_COUNT, help="rebasing matrices to draw")
    return parser


# --- Output ---

def _emit(args, payload: dict, text: str) -> None:
    if args.report:
        with open(args.report, "w", encoding="utf-8") as handle:
            handle.write(dump_json(payload) + "\n")
        logger.info(f"Report written to {args.report}")
    print(dump_json(payload) if args.format == "json" else text)


def _checks_text(checks) -> List[str]:
    lines = []
    for check in checks:
        status = "VACUOUS" if check.vacuous else ("PASS" if check.passed else "FAIL")
        lines.append(f"  {status:<8}{check.id:<14}{check.max_residual:.3e}  ({check.scale})")
    return lines


def _suite_text(report: SuiteReport) -> str:
    lines = [f"model {report.model}: {report.points} points, seed {report.seed}, tol {report.tolerance:.0e}"]
    lines += _checks_text(report.checks)
    lines.append("  tensors: " + ", ".join(f"max|{k}| = {v:.3e}" for k, v in sorted(report.tensor_magnitudes.items())))
    lines.append("PASSED" if report.passed else f"FAILED: {', '.join(c.id for c in report.failures)}")
    return "\n".join(lines)


def _oracle_dict(oracle: OracleReport) -> dict:
    return {
        "model": oracle.model,
        "checks": [dict(c.as_dict(), max_residual=finite_or_none(c.max_residual)) for c in oracle.checks],
        "root_causes": list(oracle.root_causes),
        "blast_radius": {k: list(v) for k, v in oracle.blast_radius.items()},
        "passed": oracle.passed,
    }


def _oracle_text(oracle: OracleReport) -> str:
    lines = [f"model {oracle.model}: finite-difference oracle"]
    lines += _checks_text(oracle.checks)
    for family, ids in oracle.blast_radius.items():
        lines.append(f"  {family} feeds {', '.join(ids) or 'no identity'}")
    lines.append("PASSED" if oracle.passed else f"FAILED: {', '.join(oracle.root_causes)}")
    return "\n".join(lines)


# --- Commands ---

def _load(path: str) -> ModelSpec:
    return resolve(load_model(path))


def cmd_check(args) -> int:
    spec = _load(args.model)
    report = run_suite(spec, args.seed, args.samples, args.tol)
    report = report.with_checks(fd_oracle(spec, args.seed, args.samples).checks)
    _emit(args, report.to_dict(), _suite_text(report))
    return EXIT_OK if report.passed else EXIT_FAILED


def cmd_oracle(args) -> int:
    spec = _load(args.model)
    oracle = fd_oracle(spec, args.seed, args.samples)
    _emit(args, _oracle_dict(oracle), _oracle_text(oracle))
    return EXIT_OK if oracle.passed else EXIT_FAILED


def point_values(tokens: Sequence[str]) -> List[float]:
    """Flattens "0,0,1,1" and "0 0 1 1" alike."""
    try:
        return [float(part) for token in tokens for part in token.split(",") if part.strip()]
    except ValueError as exc:
        raise UsageError(f"--point takes numbers: {exc}") from exc


def parse_point(spec: ModelSpec, values: Sequence[float]) -> SamplePoint:
    n = spec.n
    if len(values) not in (2 * n, 3 * n):
        raise UsageError(f"--point needs {2 * n} or {3 * n} numbers for {spec.name}, got {len(values)}")
    if len(values) == 2 * n:
        logger.warning("No acceleration block in --point; using zeros")
        values = list(values) + [0.0] * n
    point = SamplePoint(tuple(values[:n]), tuple(values[n:2 * n]), tuple(values[2 * n:]))
    if not in_domain(spec, point):
        raise UsageError(f"point {list(values)} is outside the domain of {spec.name}")
    return point


def _symbolic_tensor(spec: ModelSpec, name: str) -> IndexedExpr:
    if name == "W":
        return lagrange.hessian(spec)
    if name == "R":
        return legendre.gauge_generators(spec)
    if name == "C":
        return IndexedExpr("C", ("gauge",) * 3, spec.structure_array())
    return {
        "T": structure.tensor_T,
        "E": structure.tensor_E,
        "D": structure.tensor_D,
        "M": structure.tensor_M,
        "A": structure.tensor_A,
        "B": structure.tensor_Bten,
    }[name](spec)


def _numeric_tensor(spec: ModelSpec, name: str, point: SamplePoint) -> np.ndarray:
    table = jet_table(spec)
    jv = numeric_jets(table, [point])
    if name == "C":
        q = np.array([point.q])
        return PhaseJets(table, q, table.momentum(q, np.array([point.v])))["C*"][0]
    if name in ("W", "R", "T"):
        return jv[name][0]
    builder = {
        "E": structure.e_of,
        "D": structure.d_of,
        "M": structure.m_of,
        "A": structure.a_of,
        "B": structure.bten_of,
    }[name]
    return as_term(builder(jv)).value[0]


def _one_based(index) -> List[int]:
    return [int(i) + 1 for i in index]


def cmd_compute(args) -> int:
    spec = _load(args.model)
    entries = []
    point = None if args.point is None else point_values(args.point)
    if point is None:
        tensor = _symbolic_tensor(spec, args.tensor)
        for index, expr in tensor.nonzero():
            entries.append({"index": _one_based(index), "value": render_expression(expr)})
    else:
        values = _numeric_tensor(spec, args.tensor, parse_point(spec, point))
        for index in np.ndindex(values.shape):
            if not abs(values[index]) <= NUMERIC_ZERO_TOL:
                entries.append({"index": _one_based(index), "value": finite_or_none(values[index])})
    payload = {"model": spec.name, "tensor": args.tensor, "point": point, "entries": entries}
    lines = [f"{args.tensor} for {spec.name}" + ("" if point is None else f" at {point}")]
    lines += [f"  {args.tensor}{e['index']} = {e['value']}" for e in entries] or ["  (all entries vanish)"]
    _emit(args, payload, "\n".join(lines))
    return EXIT_OK


def cmd_corpus(args) -> int:
    entries = list_corpus()
    payload = {"models": [
        {"name": e.name, "n": e.n, "m": e.m, "mutant": e.mutant, "expected": e.expected} for e in entries
    ]}
    lines = [f"  {'mutant' if e.mutant else 'model':<8}{e.name:<30}n={e.n} m={e.m}  {e.expected}" for e in entries]
    status = EXIT_OK

    if args.verify_all:
        try:
            outcomes = asyncio.run(verify_corpus(entries, args.seed, args.samples, args.tol))
        finally:
            async_manager.shutdown()
        payload["outcomes"] = [
            {"name": o.name, "mutant": o.mutant, "passed": o.passed, "confirmed": o.confirmed,
             "failing": list(o.failing), "error": o.error}
            for o in outcomes
        ]
        for o in outcomes:
            verdict = "ok" if o.confirmed else "MISMATCH"
            detail = o.error or (f"fails {', '.join(o.failing)}" if o.failing else "passes")
            lines.append(f"  {verdict:<9}{o.name:<30}{detail}")
        if not all(o.confirmed for o in outcomes):
            status = EXIT_FAILED

    if args.explore:
        base = load_model(args.base)
        report = structure.explore_rebase_family(base, args.family, args.seed, args.count, args.samples)
        best = report.best
        payload["explore"] = {
            "base": report.base,
            "family": report.family,
            "draws": len(report.witnesses),
            "found": report.found,
            "best": None if best is None else {"entries": [[list(s), e] for s, e in best.entries], "max_D": best.max_d},
        }
        if report.found:
            lines.append(f"  D witness on {report.base}: {best.entries} max|D| = {best.max_d:.3e}")
        else:
            lines.append(f"  no D witness in {len(report.witnesses)} draws of family {report.family}")

    _emit(args, payload, "\n".join(lines))
    return status


COMMANDS = {"check": cmd_check, "compute": cmd_compute, "oracle": cmd_oracle, "corpus": cmd_corpus}


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    configure_logging(args.verbose)
    try:
        return COMMANDS[args.command](args)
    except (ModelError, ExpressionError, LegendreError, RebaseError, StructureError, CheckError, UsageError,
            OSError, ValueError, KeyError) as exc:
        logger.error(f"{args.command} failed: {exc}")
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR
