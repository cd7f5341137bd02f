import logging
from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import numpy as np
import sympy as sp

from core.config import IDENTITY_TOL, KERNEL_ANGLE_TOL, RANK_REL_TOL
from core.exprcore import PhaseSpace, SymbolKind, substitute
from core.jets import Assignments, default_assignments, jet_table, numeric_jets
from core.lagrange import b_field_of, el_terms
from core.modeldsl import ModelSpec, SamplePoint
from core.tensors import (
    CheckResult, Identity, IndexedExpr, Term, absolute_residual, as_term,
    normalized_residual, summarize, term,
)

logger = logging.getLogger(__name__)


class LegendreError(Exception):
    """
    Raised when the Legendre map cannot be used as asked: the generators lose
    rank at a sample point, or a pullback is requested for an expression that
    already lives on the tangent bundle.
    """
    def __init__(self, kind: str, message: str, point: Optional[int] = None):
        super().__init__(f"{kind}: {message}")
        self.kind = kind
        self.point = point


@dataclass(frozen=True)
class PullbackMap:
    """Momentum assignments p_i -> FL_i(q, q_dot), one per coordinate."""
    space: PhaseSpace
    assignments: Assignments

    def perturb(self, index: int, delta: float) -> "PullbackMap":
        """A map with delta * v_index added to p_index; used to break the transport identities on purpose."""
        _, expr = self.assignments[index]
        shifted = expr + sp.Rational(delta) * self.space.v[index]
        updated = tuple((s, shifted if k == index else e) for k, (s, e) in enumerate(self.assignments))
        return PullbackMap(self.space, updated)

    @property
    def mapping(self) -> dict:
        return dict(self.assignments)


def pullback_map(spec: ModelSpec) -> PullbackMap:
    return PullbackMap(spec.space, default_assignments(spec))


def _resolve(spec: ModelSpec, pm: Optional[PullbackMap]) -> PullbackMap:
    return pm if pm is not None else pullback_map(spec)


def pullback(e: sp.Expr, pm: PullbackMap) -> sp.Expr:
    """FL* of a phase-space expression."""
    kinds = pm.space.kinds_in(e)
    if SymbolKind.VELOCITY in kinds or SymbolKind.ACCELERATION in kinds:
        raise LegendreError("velocity-input", f"cannot pull back an expression in velocities: {e}")
    return substitute(e, pm.mapping)


def gauge_generators(spec: ModelSpec, pm: Optional[PullbackMap] = None) -> IndexedExpr:
    """R_mu^i = FL*(dG_mu/dp_i)."""
    return jet_table(spec, _resolve(spec, pm).assignments).indexed("R").simplified()


def _energy_check(jv, tol: float) -> CheckResult:
    energy = np.einsum("...i,...i->...", jv.v, jv["Lv"]) - jv["L"]
    residual = absolute_residual([[as_term(jv["Hc"]), Term(-energy, np.abs(energy))]])
    return CheckResult("2.7", residual.max, residual.max <= tol, scale="absolute")


def check_hc(spec: ModelSpec, pm: Optional[PullbackMap], points: Sequence[SamplePoint],
             tol: float = IDENTITY_TOL) -> CheckResult:
    """max |FL*Hc - (q_dot . dL/dq_dot - L)|."""
    return _energy_check(numeric_jets(jet_table(spec, _resolve(spec, pm).assignments), points), tol)


# --- Validation ---

def _pivoted_rank(matrix: np.ndarray) -> int:
    """Row reduction with partial pivoting; pivots at or below RANK_REL_TOL * max|entry| count as zero."""
    work = np.array(matrix, dtype=float)
    rows, cols = work.shape
    scale = float(np.max(np.abs(work))) if work.size else 0.0
    if scale == 0.0:
        return 0
    threshold = RANK_REL_TOL * scale
    rank = 0
    for col in range(cols):
        if rank == rows:
            break
        pivot = rank + int(np.argmax(np.abs(work[rank:, col])))
        if abs(work[pivot, col]) <= threshold:
            continue
        work[[rank, pivot]] = work[[pivot, rank]]
        work[rank + 1:] -= np.outer(work[rank + 1:, col] / work[rank, col], work[rank])
        rank += 1
    return rank


def matrix_rank(stack: np.ndarray) -> np.ndarray:
    """Numeric rank of every matrix in a stack (leading axes are points)."""
    stack = np.asarray(stack, dtype=float)
    flat = stack.reshape((-1,) + stack.shape[-2:])
    return np.array([_pivoted_rank(matrix) for matrix in flat], dtype=int).reshape(stack.shape[:-2])


@dataclass(frozen=True)
class ValidationReport:
    model: str
    checks: Tuple[CheckResult, ...]

    @property
    def passed(self) -> bool:
        return all(c.passed or c.vacuous for c in self.checks)


def validate_model(spec: ModelSpec, points: Sequence[SamplePoint], tol: float = IDENTITY_TOL) -> ValidationReport:
    """Rank conditions and pullback consistency of G and Hc at the sample points."""
    jv = numeric_jets(jet_table(spec), points)
    n, m = spec.n, spec.m

    rank_w = matrix_rank(jv["W"])
    rank_r = matrix_rank(jv["R"])
    checks = [
        CheckResult("1.5", float(np.max(np.abs(rank_w - (n - m)))), bool(np.all(rank_w == n - m)), scale="rank"),
        CheckResult("2.2", float(np.max(np.abs(rank_r - m))), bool(np.all(rank_r == m)), scale="rank"),
    ]

    g_residual = absolute_residual([[Term(jv["G"], np.abs(jv["G"]))]])
    checks.append(CheckResult("2.8", g_residual.max, g_residual.max <= tol, scale="absolute"))
    checks.append(_energy_check(jv, tol))

    for check in checks:
        if not check.passed:
            logger.warning(f"Validation of {spec.name} failed {check.id}: residual {check.max_residual:.3e}")
    return ValidationReport(spec.name, tuple(checks))


# --- Multipliers ---

def multipliers_of(jv) -> np.ndarray:
    """
    Least-squares solution of R^T lambda = q_dot - FL*(dHc/dp) from the normal
    equations, batched over points.
    """
    def build():
        r = jv["R"]
        rank = matrix_rank(r)
        bad = np.flatnonzero(rank < jv.m)
        if bad.size:
            point = int(bad[0])
            raise LegendreError("generator-rank", f"rank R = {int(rank[point])} < {jv.m} at point {point}", point)
        rhs = jv.v - jv["Hp"]
        gram = np.einsum("...ai,...bi->...ab", r, r)
        return np.linalg.solve(gram, np.einsum("...ai,...i->...a", r, rhs)[..., None])[..., 0]
    return jv.memo("lambda", build)


def _multiplier_fit(jv):
    lam = multipliers_of(jv)
    return [[term("...ai,...a->...i", jv["R"], lam), as_term(-jv.v), as_term(jv["Hp"])]]


def _multiplier_q_equation(jv):
    lam = multipliers_of(jv)
    return [[
        as_term(jv["Hq"]),
        as_term(jv["Lq"]),
        term("...a,...aj,...ji->...i", lam, jv["R"], jv["Lvq"], coef=-1),
    ]]


def _multiplier_generator_flow(jv):
    lam = multipliers_of(jv)
    r = jv["R"]
    return [[
        term("...i,...ai->...a", jv["Hq"], r),
        term("...i,...ai->...a", jv["Hp"], jv["Gq"], coef=-1),
        term("...ai,...i->...a", r, jv["Lq"]),
        term("...ai,...il,...l->...a", r, jv["Lvq"], jv.v, coef=-1),
        term("...ai,...ij,...bj,...b->...a", r, b_field_of(jv), r, lam),
    ]]


@dataclass(frozen=True)
class Multipliers:
    values: np.ndarray
    checks: Tuple[CheckResult, ...]


def multipliers(spec: ModelSpec, pm: Optional[PullbackMap], points: Sequence[SamplePoint],
                tol: float = IDENTITY_TOL) -> Multipliers:
    jv = numeric_jets(jet_table(spec, _resolve(spec, pm).assignments), points)
    values = multipliers_of(jv)
    checks = tuple(
        summarize(check_id, normalized_residual(build(jv)), tol, spec.m)
        for check_id, build in (
            ("2.12", _multiplier_fit),
            ("2.13", _multiplier_q_equation),
            ("2.17", _multiplier_generator_flow),
        )
    )
    return Multipliers(values, checks)


# --- Identities ---

def _constraint_q_derivative(jv):
    return [[as_term(jv["Gq"]), term("...aj,...ji->...ai", jv["R"], jv["Lvq"])]]


def _generator_velocity_transport(jv):
    return [[as_term(jv["dR_dv"]), term("...kl,...ali->...aik", jv["W"], jv["b"], coef=-1)]]


def _generator_coordinate_transport(jv):
    return [[
        as_term(jv["dR_dq"]),
        as_term(-np.swapaxes(jv["Gqp"], -1, -2)),
        term("...lk,...ali->...aik", jv["Lvq"], jv["b"], coef=-1),
    ]]


def _structure_coordinate_transport(jv):
    return [[
        as_term(jv["dT_dq"]),
        as_term(-jv["Cq"]),
        term("...kj,...abrk->...abrj", jv["Lvq"], jv["Cp"], coef=-1),
    ]]


def _structure_velocity_transport(jv):
    return [[as_term(jv["dT_dv"]), term("...jk,...abrk->...abrj", jv["W"], jv["Cp"], coef=-1)]]


def r_dot_terms(jv):
    """dR/dt = dR/dq . v + dR/dv . a, kept as two terms."""
    return [
        term("...aik,...k->...ai", jv["dR_dq"], jv.v),
        term("...aik,...k->...ai", jv["dR_dv"], jv.a),
    ]


def _generator_time_transport(jv):
    terms = r_dot_terms(jv)
    terms += [
        term("...alj,...l->...aj", jv["Gqp"], jv.v, coef=-1),
        term("...ajl,...l->...aj", jv["b"], jv["Lq"], coef=-1),
    ]
    terms += [term("...ajk,...k->...aj", jv["b"], t, coef=-1) for t in el_terms(jv)]
    return [terms]


def _generator_velocity_annihilation(jv):
    return [[term("...aik,...bk->...abi", jv["dR_dv"], jv["R"])]]


IDENTITIES = (
    Identity("2.11", 1, ("Gq", "R", "Lvq"), _constraint_q_derivative),
    Identity("2.12", 1, ("R", "Hp"), _multiplier_fit),
    Identity("2.13", 1, ("Hq", "Lq", "R", "Lvq", "Hp"), _multiplier_q_equation),
    Identity("2.17", 1, ("Hq", "Hp", "Gq", "R", "Lq", "Lvq"), _multiplier_generator_flow),
    Identity("2.30", 1, ("dR_dv", "W", "b"), _generator_velocity_transport),
    Identity("2.31", 1, ("dR_dq", "Gqp", "Lvq", "b"), _generator_coordinate_transport),
    Identity("2.44", 1, ("dT_dq", "Cq", "Lvq", "Cp"), _structure_coordinate_transport),
    Identity("2.45", 1, ("dT_dv", "W", "Cp"), _structure_velocity_transport),
    Identity("2.47", 1, ("dR_dq", "dR_dv", "Gqp", "b", "Lq", "W", "Lvq"), _generator_time_transport),
    Identity("1.25", 1, ("dR_dv", "R"), _generator_velocity_annihilation),
)

MULTIPLIER_CHECKS = ("2.12", "2.13", "2.17")
TRANSPORT_CHECKS = ("2.30", "2.31", "2.44", "2.45", "2.47")


def transport_checks(spec: ModelSpec, pm: Optional[PullbackMap], points: Sequence[SamplePoint],
                     tol: float = IDENTITY_TOL) -> Tuple[CheckResult, ...]:
    jv = numeric_jets(jet_table(spec, _resolve(spec, pm).assignments), points)
    registry = {identity.id: identity for identity in IDENTITIES}
    results = tuple(
        summarize(check_id, normalized_residual(registry[check_id].build(jv)), tol, spec.m)
        for check_id in TRANSPORT_CHECKS
    )
    logger.info(f"Transport checks for {spec.name}: " + ", ".join(f"{c.id}={c.max_residual:.2e}" for c in results))
    return results


def kernel_angle(jv) -> np.ndarray:
    """
    Sine of the largest principal angle between span(R) and the numeric
    null space of W, per point.
    """
    m = jv.m
    basis, _ = np.linalg.qr(np.swapaxes(jv["R"], -1, -2))
    _, _, vt = np.linalg.svd(jv["W"])
    null = vt[..., -m:, :]
    projected = np.einsum("...ki,...ij,...lj->...kl", null, basis, basis)
    return np.linalg.norm(null - projected, ord=2, axis=(-2, -1))


def kernel_check(jv, tol: float = KERNEL_ANGLE_TOL) -> CheckResult:
    angle = kernel_angle(jv)
    worst = float(np.max(angle)) if angle.size else 0.0
    if worst > tol:
        logger.warning(f"Kernel angle {worst:.3e} exceeds {tol:.1e}")
    return CheckResult("1.6-kernel", worst, worst <= tol, scale="angle")
