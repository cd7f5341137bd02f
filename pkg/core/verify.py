import logging
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Sequence, Tuple

import networkx as nx
import numpy as np

from core import hamilton, lagrange, legendre, structure
from core.config import (
    DEFAULT_SAMPLES, DEFAULT_SEED, FD_MARGIN, FD_OFFSETS, FD_STEP, FD_TOL, FD_WEIGHTS, IDENTITY_TOL,
)
from core.jets import PHASE, Corruption, JetTable, NumericJets, PhaseJets, jet_table, numeric_jets
from core.legendre import LegendreError
from core.modeldsl import ModelSpec, SamplePoint, sample_phase_points, sample_points, stack_points
from core.tensors import (
    CheckResult, CompiledArray, Identity, Residual, merge_residuals, normalized_residual, object_array, summarize,
)
from core.utils import dump_json, finite_or_none

logger = logging.getLogger(__name__)

__all__ = [
    "CheckError", "CheckResult", "OracleReport", "SuiteReport", "REGISTRY",
    "fd_oracle", "identity_residual", "run_suite",
]


class CheckError(Exception):
    """Raised when a check id is not in the registry."""
    def __init__(self, kind: str, message: str):
        super().__init__(f"{kind}: {message}")
        self.kind = kind


TANGENT_IDENTITIES: Tuple[Identity, ...] = (
    lagrange.IDENTITIES + legendre.IDENTITIES + hamilton.IDENTITIES + structure.IDENTITIES
)
PHASE_IDENTITIES: Tuple[Identity, ...] = hamilton.PHASE_IDENTITIES
REGISTRY: Tuple[Identity, ...] = TANGENT_IDENTITIES + PHASE_IDENTITIES

VALIDATION_CHECKS = ("1.5", "2.2", "2.8", "2.7")
KERNEL_CHECK = "1.6-kernel"


def check_ids() -> Tuple[str, ...]:
    """Every check id a suite reports, in report order."""
    ids = list(VALIDATION_CHECKS) + [KERNEL_CHECK]
    for identity in REGISTRY:
        if identity.id not in ids:
            ids.append(identity.id)
    return tuple(ids)


def _identities(check_id: str) -> List[Identity]:
    found = [identity for identity in REGISTRY if identity.id == check_id]
    if not found:
        raise CheckError("unknown-check", f"no identity registered under {check_id!r}")
    return found


def _residual(identity: Identity, jv: NumericJets, pj: PhaseJets) -> Residual:
    jets = pj if identity in PHASE_IDENTITIES else jv
    return normalized_residual(identity.build(jets))


def identity_residual(spec: ModelSpec, check_id: str, point: SamplePoint) -> float:
    """
    Normalized residual of one registered identity at one point. Off-surface
    identities are evaluated at the image of the point under the Legendre map.
    """
    if check_id in VALIDATION_CHECKS:
        report = legendre.validate_model(spec, [point])
        return next(check.max_residual for check in report.checks if check.id == check_id)
    identities = _identities(check_id)
    table = jet_table(spec)
    jv = numeric_jets(table, [point])
    q, v, _ = stack_points([point])
    pj = PhaseJets(table, q, table.momentum(q, v))
    return merge_residuals([_residual(identity, jv, pj) for identity in identities]).max


# --- Suite ---

@dataclass(frozen=True)
class SuiteReport:
    model: str
    seed: int
    points: int
    tolerance: float
    checks: Tuple[CheckResult, ...]
    tensor_magnitudes: Dict[str, float] = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(check.passed for check in self.checks)

    @property
    def failures(self) -> Tuple[CheckResult, ...]:
        return tuple(check for check in self.checks if not check.passed)

    def check(self, check_id: str) -> CheckResult:
        for result in self.checks:
            if result.id == check_id:
                return result
        raise CheckError("unknown-check", f"{check_id!r} is not part of this report")

    def with_checks(self, extra: Sequence[CheckResult]) -> "SuiteReport":
        return replace(self, checks=self.checks + tuple(extra))

    def to_dict(self) -> dict:
        checks = []
        for check in self.checks:
            entry = check.as_dict()
            entry["max_residual"] = finite_or_none(entry["max_residual"])
            checks.append(entry)
        return {
            "model": self.model,
            "seed": self.seed,
            "points": self.points,
            "tolerance": self.tolerance,
            "checks": checks,
            "tensor_magnitudes": {k: finite_or_none(v) for k, v in self.tensor_magnitudes.items()},
            "passed": self.passed,
        }

    def to_json(self) -> str:
        return dump_json(self.to_dict())


def _tensor_magnitudes(jv: NumericJets) -> Dict[str, float]:
    values = {
        "T": jv["T"],
        "E": structure.shifted_e_of(jv).value,
        "D": structure.shifted_d_of(jv).value,
        "M": structure.m_of(jv).value,
    }
    return {name: float(np.max(np.abs(value))) if value.size else 0.0 for name, value in values.items()}


def run_suite(spec: ModelSpec, seed: int = DEFAULT_SEED, count: int = DEFAULT_SAMPLES,
              tol: float = IDENTITY_TOL, shift=None) -> SuiteReport:
    """
    Every registered identity at count sampled points. shift = (e, d) feeds
    ambiguity-shifted E and D into the relations that admit them.
    """
    logger.info(f"Running suite on {spec.name}: {count} points, seed {seed}, tol {tol:.0e}")
    points = sample_points(spec, count, seed)
    table = jet_table(spec)
    q, v, a = stack_points(points)
    if shift is not None:
        shift = structure.validate_shift(spec.m, *shift)
    jv = NumericJets(table, q, v, a, shift)
    pj = PhaseJets(table, *sample_phase_points(spec, count, seed))

    checks: List[CheckResult] = list(legendre.validate_model(spec, points, tol).checks)
    checks.append(legendre.kernel_check(jv))

    residuals: Dict[str, List[Residual]] = {}
    min_gauge: Dict[str, int] = {}
    rank_failures = set()
    for identity in REGISTRY:
        min_gauge[identity.id] = max(min_gauge.get(identity.id, 1), identity.min_gauge)
        if spec.m < identity.min_gauge:
            continue
        try:
            residuals.setdefault(identity.id, []).append(_residual(identity, jv, pj))
        except LegendreError as exc:
            logger.warning(f"{identity.id} on {spec.name}: {exc}")
            rank_failures.add(identity.id)

    for check_id in check_ids()[len(VALIDATION_CHECKS) + 1:]:
        if check_id in rank_failures:
            checks.append(CheckResult(check_id, 1.0, False))
        elif check_id not in residuals:
            checks.append(CheckResult(check_id, 0.0, True, vacuous=True))
        else:
            checks.append(summarize(check_id, merge_residuals(residuals[check_id]), tol, spec.m, min_gauge[check_id]))

    report = SuiteReport(spec.name, seed, count, tol, tuple(checks), _tensor_magnitudes(jv))
    logger.info(f"Suite on {spec.name} finished: {len(report.failures)} of {len(checks)} checks failed")
    return report


# --- Finite-difference oracle ---

@dataclass(frozen=True)
class OracleReport:
    model: str
    checks: Tuple[CheckResult, ...]
    root_causes: Tuple[str, ...] = ()
    blast_radius: Dict[str, Tuple[str, ...]] = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(check.passed for check in self.checks)


def _stencil(evaluate, base: np.ndarray, block: slice, k: int) -> Tuple[np.ndarray, np.ndarray]:
    """Five-point central derivative of evaluate along column block.start + k; returns (derivative, finite mask)."""
    column = block.start + k
    h = FD_STEP * np.maximum(1.0, np.abs(base[:, column]))
    total = None
    for offset, weight in zip(FD_OFFSETS, FD_WEIGHTS):
        shifted = base.copy()
        shifted[:, column] += offset * h
        value = weight * evaluate(shifted)
        total = value if total is None else total + value
    derivative = total / h.reshape((-1,) + (1,) * (total.ndim - 1))
    finite = np.all(np.isfinite(derivative.reshape(derivative.shape[0], -1)), axis=1)
    return derivative, finite


def _margin_ok(domain: Optional[CompiledArray], base: np.ndarray, column: int) -> np.ndarray:
    """False at points within FD_MARGIN steps of a domain boundary along column."""
    ok = np.ones(base.shape[0], dtype=bool)
    if domain is None:
        return ok
    h = FD_STEP * np.maximum(1.0, np.abs(base[:, column]))
    for sign in (-1.0, 1.0):
        stepped = base.copy()
        stepped[:, column] += sign * FD_MARGIN * h
        values = domain(stepped, strict=False).reshape(base.shape[0], -1)
        ok &= np.all(np.isfinite(values) & (values > 0.0), axis=1)
    return ok


def _fd_family(table: JetTable, name: str, q: np.ndarray, v: np.ndarray,
               domain: Optional[CompiledArray], tol: float) -> CheckResult:
    parent, op = table.fd_parent(name)
    n = table.spec.n
    expected = table.compiled(name)(np.hstack([q, v]), strict=False)

    # phase parents are differenced at (q, FL(q, v)); their stencils never leave the domain of G
    check_margin = table.space_of(parent) != PHASE
    base = np.hstack([q, v if check_margin else table.momentum(q, v)])
    block = slice(0, n) if op == "dq" else slice(n, 2 * n)

    compiled_parent = table.compiled(parent)
    worst = 0.0
    used = 0
    for k in range(n):
        derivative, usable = _stencil(lambda cols: compiled_parent(cols, strict=False), base, block, k)
        if check_margin:
            usable &= _margin_ok(domain, base, block.start + k)
        got = expected[..., k]
        usable &= np.all(np.isfinite(got.reshape(got.shape[0], -1)), axis=1)
        skipped = int(np.sum(~usable))
        if skipped:
            logger.warning(f"fd:{name}: skipped {skipped} stencils along column {block.start + k} near the domain edge")
        if not np.any(usable):
            continue
        error = np.abs(got[usable] - derivative[usable]) / (1.0 + np.abs(derivative[usable]))
        if error.size:
            worst = max(worst, float(np.max(error)))
        used += int(np.sum(usable))
    vacuous = used == 0
    return CheckResult(f"fd:{name}", worst, bool(vacuous or worst <= tol), vacuous=vacuous, scale="relative")


def _domain_evaluator(spec: ModelSpec) -> Optional[CompiledArray]:
    if not spec.domain:
        return None
    entries = object_array((len(spec.domain),))
    for i, predicate in enumerate(spec.domain):
        entries[i] = predicate
    return CompiledArray("domain", entries, spec.space.q + spec.space.v)


def blast_radius(table: JetTable, family: str) -> Tuple[str, ...]:
    """Identities that read the family or any family derived from it."""
    affected = {family} | nx.descendants(table.graph, family)
    return tuple(sorted({identity.id for identity in TANGENT_IDENTITIES if affected & set(identity.families)}))


def fd_oracle(spec: ModelSpec, seed: int = DEFAULT_SEED, count: int = DEFAULT_SAMPLES,
              corrupt: Optional[Corruption] = None, tol: float = FD_TOL) -> OracleReport:
    """
    Compares every derivative family with central differences of its parent.
    corrupt = (family, index, delta) adds delta to one symbolic entry first.
    """
    table = jet_table(spec, None, corrupt)
    if corrupt is not None and corrupt[0] not in table.derivative_families():
        raise ValueError(f"{corrupt[0]} has no finite-difference parent; corrupt a derivative family")
    q, v, _ = stack_points(sample_points(spec, count, seed))
    domain = _domain_evaluator(spec)

    checks = tuple(_fd_family(table, name, q, v, domain, tol) for name in table.derivative_families())
    root_causes = tuple(check.id[len("fd:"):] for check in checks if not check.passed)
    radius = {family: blast_radius(table, family) for family in root_causes}
    for family, ids in radius.items():
        logger.warning(f"fd:{family} failed on {spec.name}; affects {', '.join(ids) or 'no identity'}")
    return OracleReport(spec.name, checks, root_causes, radius)
