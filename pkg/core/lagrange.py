import logging
from typing import List, Optional, Sequence, Tuple

from core.config import IDENTITY_TOL
from core.jets import SymbolicJets, jet_table, numeric_jets
from core.modeldsl import ModelSpec, SamplePoint
from core.tensors import (
    COORD, CheckResult, Identity, IndexedExpr, Term, as_term, collect,
    normalized_residual, summarize, swap, term, to_indexed,
)

logger = logging.getLogger(__name__)


# --- Derived quantities (numeric batches or symbolic arrays) ---

def alpha_terms(jv) -> List[Term]:
    """alpha_i = dL/dq^i - v^l d2L/dq^l dv^i."""
    return [as_term(jv["Lq"]), term("...il,...l->...i", jv["Lvq"], jv.v, coef=-1)]


def alpha_of(jv) -> Term:
    return jv.memo("alpha", lambda: collect(alpha_terms(jv)))


def el_terms(jv) -> List[Term]:
    """Euler-Lagrange residual L_i = W_ij a^j - alpha_i."""
    return [term("...ij,...j->...i", jv["W"], jv.a)] + [t.scaled(-1) for t in alpha_terms(jv)]


def el_of(jv) -> Term:
    return jv.memo("el", lambda: collect(el_terms(jv)))


def b_field_of(jv) -> Term:
    """B_ij = d2L/dv^i dq^j - d2L/dv^j dq^i."""
    def build():
        lvq = as_term(jv["Lvq"])
        return collect([lvq, swap(lvq, -1, -2, coef=-1)])
    return jv.memo("B", build)


# --- Symbolic operations ---

def hessian(spec: ModelSpec) -> IndexedExpr:
    return jet_table(spec).indexed("W")


def alpha(spec: ModelSpec) -> IndexedExpr:
    return to_indexed("alpha", (COORD,), alpha_of(SymbolicJets(jet_table(spec)))).simplified()


def el_residual(spec: ModelSpec) -> IndexedExpr:
    return to_indexed("L", (COORD,), el_of(SymbolicJets(jet_table(spec)))).simplified()


def b_field(spec: ModelSpec) -> IndexedExpr:
    return to_indexed("B", (COORD, COORD), b_field_of(SymbolicJets(jet_table(spec)))).simplified()


# --- Identities ---

def _gauge_invariance(jv):
    return [[term("...ai,...ij->...aj", jv["R"], jv["W"])]]


def _noether_alpha(jv, r=None):
    r = jv["R"] if r is None else r
    return [[term("...ai,...i->...a", r, t) for t in alpha_terms(jv)]]


def _noether_el(jv, r=None):
    r = jv["R"] if r is None else r
    return [[term("...ai,...i->...a", r, t) for t in el_terms(jv)]]


def _alpha_velocity_derivative(jv):
    """dR/dv . alpha - R B + v . dR/dq . W = 0 (velocity derivative of R . alpha = 0)."""
    lvq = as_term(jv["Lvq"])
    terms = [term("...aik,...i->...ak", jv["dR_dv"], t) for t in alpha_terms(jv)]
    terms += [
        term("...ai,...ik->...ak", jv["R"], lvq, coef=-1),
        term("...ai,...ki->...ak", jv["R"], lvq),
        term("...l,...ail,...ik->...ak", jv.v, jv["dR_dq"], jv["W"]),
    ]
    return [terms]


def _generator_b_field(jv):
    lvq = as_term(jv["Lvq"])
    return [[
        term("...ai,...ik,...bk->...ab", jv["R"], lvq, jv["R"]),
        term("...ai,...ki,...bk->...ab", jv["R"], lvq, jv["R"], coef=-1),
    ]]


IDENTITIES = (
    Identity("1.6", 1, ("R", "W"), _gauge_invariance),
    Identity("1.9", 1, ("R", "Lq", "Lvq"), _noether_alpha),
    Identity("1.10", 1, ("R", "W", "Lq", "Lvq"), _noether_el),
    Identity("2.20", 1, ("R", "dR_dv", "dR_dq", "W", "Lq", "Lvq"), _alpha_velocity_derivative),
    Identity("2.21", 1, ("R", "Lvq"), _generator_b_field),
)


def noether_check(spec: ModelSpec, R: Optional[IndexedExpr], points: Sequence[SamplePoint],
                  tol: float = IDENTITY_TOL) -> Tuple[CheckResult, CheckResult]:
    """
    Noether identities R.alpha = 0 and R.L = 0 (random accelerations).
    R defaults to the generators pulled back from the constraints.
    """
    table = jet_table(spec)
    jv = numeric_jets(table, points)
    r = None
    if R is not None:
        r = R.compile(table.arguments("R"))(jv.columns)
    results = (
        summarize("1.9", normalized_residual(_noether_alpha(jv, r)), tol, spec.m),
        summarize("1.10", normalized_residual(_noether_el(jv, r)), tol, spec.m),
    )
    logger.info(f"Noether check for {spec.name}: " + ", ".join(f"{c.id}={c.max_residual:.2e}" for c in results))
    return results
