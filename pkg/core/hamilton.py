import logging
import functools
import dataclasses
from itertools import product
from typing import Optional, Sequence, Tuple

import numpy as np
import sympy as sp

from core.config import DEFAULT_SAMPLES, DEFAULT_SEED, IDENTITY_TOL, JET_CACHE_SIZE, REBASE_DET_TOL
from core.exprcore import PhaseSpace, differentiate, simplify, substitute
from core.jets import PhaseJets, default_assignments, jet_table, numeric_jets
from core.legendre import PullbackMap, pullback_map
from core.modeldsl import ModelSpec, SamplePoint, sample_points, stack_points
from core.tensors import (
    CheckResult, CompiledArray, Identity, as_term, cyclic, merge_residuals,
    normalized_residual, object_array, summarize, term,
)

logger = logging.getLogger(__name__)


class RebaseError(Exception):
    """Raised when a rebasing matrix is singular at a sample point or symbolically."""
    def __init__(self, kind: str, message: str):
        super().__init__(f"{kind}: {message}")
        self.kind = kind


def poisson_bracket(f: sp.Expr, g: sp.Expr, space: PhaseSpace) -> sp.Expr:
    """{f, g} = sum_i df/dq^i dg/dp_i - df/dp_i dg/dq^i."""
    total = sp.S.Zero
    for q, p in zip(space.q, space.p):
        total += differentiate(f, q) * differentiate(g, p) - differentiate(f, p) * differentiate(g, q)
    return simplify(total)


class BracketTable:
    """
    Constraint brackets {G_mu, G_nu}. Only mu < nu is computed; the rest
    follows from antisymmetry.
    """
    def __init__(self, spec: ModelSpec):
        self.spec = spec
        m = spec.m
        self.entries = {
            (mu, nu): poisson_bracket(spec.G[mu], spec.G[nu], spec.space)
            for mu in range(m) for nu in range(mu + 1, m)
        }
        self._jacobi: Optional[CompiledArray] = None

    def __call__(self, mu: int, nu: int) -> sp.Expr:
        if mu == nu:
            return sp.S.Zero
        if mu < nu:
            return self.entries[(mu, nu)]
        return -self.entries[(nu, mu)]

    def array(self) -> np.ndarray:
        m = self.spec.m
        out = object_array((m, m))
        for mu, nu in product(range(m), repeat=2):
            out[mu, nu] = self(mu, nu)
        return out

    def double_brackets(self) -> np.ndarray:
        """{G_a, {G_b, G_c}} for every ordered triple."""
        spec = self.spec
        m = spec.m
        out = object_array((m, m, m))
        for a, b, c in product(range(m), repeat=3):
            if b != c:
                out[a, b, c] = poisson_bracket(spec.G[a], self(b, c), spec.space)
        return out

    def jacobi(self) -> CompiledArray:
        if self._jacobi is None:
            space = self.spec.space
            self._jacobi = CompiledArray("jacobi", self.double_brackets(), space.q + space.p)
        return self._jacobi


@functools.lru_cache(maxsize=JET_CACHE_SIZE)
def bracket_table(spec: ModelSpec) -> BracketTable:
    return BracketTable(spec)


# --- Identities on the constraint surface ---

def _bracket_terms(jv):
    return [
        term("...ai,...bi->...ab", jv["Gq"], jv["R"]),
        term("...ai,...bi->...ab", jv["R"], jv["Gq"], coef=-1),
    ]


def _bracket_transport(jv):
    r = jv["R"]
    lvq = jv["Lvq"]
    return [_bracket_terms(jv) + [
        term("...ai,...ij,...bj->...ab", r, lvq, r),
        term("...ai,...ji,...bj->...ab", r, lvq, r, coef=-1),
    ]]


def _pulled_bracket(jv):
    return [_bracket_terms(jv)]


def _hamiltonian_bracket(jv):
    return [[
        term("...i,...ai->...a", jv["Hq"], jv["R"]),
        term("...i,...ai->...a", jv["Hp"], jv["Gq"], coef=-1),
    ]]


def _closure_on_surface(jv):
    return [_bracket_terms(jv) + [term("...abc,...c->...ab", jv["T"], jv["G"], coef=-1)]]


def _closure_off_surface(pj):
    return [[
        term("...ai,...bi->...ab", pj["Gq*"], pj["Gp*"]),
        term("...ai,...bi->...ab", pj["Gp*"], pj["Gq*"], coef=-1),
        term("...abc,...c->...ab", pj["C*"], pj["G*"], coef=-1),
    ]]


def _jacobi_off_surface(pj):
    values = pj.memo("jacobi", lambda: bracket_table(pj.table.spec).jacobi()(pj.columns))
    return [cyclic(as_term(values), -3)]


def _jacobi_structure(jv):
    terms = [
        term("...abei,...ci->...abce", jv["Cq"], jv["R"]),
        term("...abei,...ci->...abce", jv["Cp"], jv["Gq"], coef=-1),
        term("...abd,...cde->...abce", jv["T"], jv["T"], coef=-1),
    ]
    return [[shifted for t in terms for shifted in cyclic(t, -4)]]


IDENTITIES = (
    Identity("2.15", 1, ("Gq", "R", "Lvq"), _bracket_transport),
    Identity("2.22", 1, ("Gq", "R"), _pulled_bracket),
    Identity("2.23", 1, ("Hq", "Hp", "R", "Gq"), _hamiltonian_bracket),
    Identity("2.24", 1, ("Gq", "R", "T", "G"), _closure_on_surface),
    Identity("2.29", 3, ("Cq", "Cp", "R", "Gq", "T"), _jacobi_structure),
)

# Identities evaluated at off-surface (q, p) points.
PHASE_IDENTITIES = (
    Identity("2.24", 1, ("Gq*", "Gp*", "C*", "G*"), _closure_off_surface),
    Identity("2.26", 3, ("G*",), _jacobi_off_surface),
)


def _run(spec, registry, ids, jets_by_id, tol):
    by_id = {}
    for identity in registry:
        if identity.id in ids:
            by_id.setdefault(identity.id, []).append(normalized_residual(identity.build(jets_by_id(identity))))
    return tuple(
        summarize(check_id, merge_residuals(by_id[check_id]), tol, spec.m,
                  max(i.min_gauge for i in registry if i.id == check_id))
        for check_id in ids
    )


def first_class_check(spec: ModelSpec, pm: Optional[PullbackMap], points: Sequence[SamplePoint],
                      phase_points: Tuple[np.ndarray, np.ndarray],
                      tol: float = IDENTITY_TOL) -> Tuple[CheckResult, ...]:
    """Closure of the constraint algebra, pulled back and at off-surface phase points."""
    pm = pm if pm is not None else pullback_map(spec)
    table = jet_table(spec, pm.assignments)
    jv = numeric_jets(table, points)
    pj = PhaseJets(table, *phase_points)
    registry = IDENTITIES + PHASE_IDENTITIES
    results = _run(spec, registry, ("2.15", "2.22", "2.23", "2.24"),
                   lambda identity: pj if identity in PHASE_IDENTITIES else jv, tol)
    logger.info(f"First-class check for {spec.name}: " + ", ".join(f"{c.id}={c.max_residual:.2e}" for c in results))
    return results


def jacobi_checks(spec: ModelSpec, points: Sequence[SamplePoint], phase_points: Tuple[np.ndarray, np.ndarray],
                  tol: float = IDENTITY_TOL) -> Tuple[CheckResult, ...]:
    table = jet_table(spec)
    jv = numeric_jets(table, points)
    pj = PhaseJets(table, *phase_points)
    registry = IDENTITIES + PHASE_IDENTITIES
    return _run(spec, registry, ("2.26", "2.29"),
                lambda identity: pj if identity in PHASE_IDENTITIES else jv, tol)


# --- Rebasing ---

def _check_determinant(spec: ModelSpec, det: sp.Expr, points: Optional[Sequence[SamplePoint]]) -> None:
    if simplify(det) == 0:
        raise RebaseError("singular-rebase", f"det of the rebasing matrix for {spec.name} vanishes identically")
    if points is None:
        points = sample_points(spec, DEFAULT_SAMPLES, DEFAULT_SEED)
    pulled = object_array(())
    pulled[()] = substitute(det, dict(default_assignments(spec)))
    space = spec.space
    q, v, _ = stack_points(points)
    values = np.abs(CompiledArray("det", pulled, space.q + space.v)(np.hstack([q, v])))
    worst = int(np.argmin(values))
    if values[worst] <= REBASE_DET_TOL:
        raise RebaseError(
            "singular-rebase",
            f"|det| = {values[worst]:.3e} <= {REBASE_DET_TOL:.0e} at point {worst} for {spec.name}",
        )


def rebase(spec: ModelSpec, lam, points: Optional[Sequence[SamplePoint]] = None) -> ModelSpec:
    """
    G' = Lam G and the structure functions of the new basis,

        {G'_mu, G'_nu} = X_{mu nu}^delta G_delta,
        C'_{mu nu}^gamma = X_{mu nu}^delta (Lam^-1)_delta^gamma,

    with X antisymmetrized in (mu, nu).
    """
    m = spec.m
    lam = np.asarray(lam, dtype=object)
    if lam.shape != (m, m):
        raise ValueError(f"rebasing matrix must be {m}x{m}, got {lam.shape}")
    matrix = sp.Matrix(lam.tolist())
    _check_determinant(spec, matrix.det(), points)
    inverse = matrix.inv()

    space = spec.space
    G = spec.G
    C = spec.structure_array()

    def bracket(f, g):
        return poisson_bracket(sp.sympify(f), sp.sympify(g), space)

    X = object_array((m, m, m))
    for mu, nu, delta in product(range(m), repeat=3):
        total = sp.S.Zero
        for alpha in range(m):
            for beta in range(m):
                total += lam[mu, alpha] * lam[nu, beta] * C[alpha, beta, delta]
            total += lam[mu, alpha] * bracket(G[alpha], lam[nu, delta])
            total -= lam[nu, alpha] * bracket(G[alpha], lam[mu, delta])
            total += bracket(lam[mu, alpha], lam[nu, delta]) * G[alpha]
        X[mu, nu, delta] = total

    structure = []
    for mu in range(m):
        for nu in range(mu + 1, m):
            for gamma in range(m):
                entry = sum(
                    ((X[mu, nu, delta] - X[nu, mu, delta]) / 2 * inverse[delta, gamma] for delta in range(m)),
                    sp.S.Zero,
                )
                entry = simplify(entry)
                if entry != 0:
                    structure.append(((mu, nu, gamma), entry))

    constraints = tuple(
        (name, simplify(sum((lam[mu, nu] * G[nu] for nu in range(m)), sp.S.Zero)))
        for mu, (name, _) in enumerate(spec.constraints)
    )
    rebased = dataclasses.replace(spec, constraints=constraints, structure=tuple(structure), rebase=None)
    logger.info(f"Rebased {spec.name}: {len(structure)} nonzero structure functions")
    return rebased


def resolve(spec: ModelSpec) -> ModelSpec:
    """Applies the model's own rebase lines, if any."""
    if spec.rebase is None:
        return spec
    return rebase(spec, spec.rebase_matrix())
