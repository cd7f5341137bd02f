import logging
from fractions import Fraction
from dataclasses import dataclass, replace
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import sympy as sp

from core.config import DEFAULT_SAMPLES, EXPLORE_COUNT, IDENTITY_TOL
from core.hamilton import RebaseError, rebase
from core.jets import SymbolicJets, jet_table, numeric_jets
from core.lagrange import alpha_of, el_of
from core.legendre import r_dot_terms
from core.modeldsl import ModelSpec, SamplePoint, sample_points
from core.tensors import (
    COORD, GAUGE, Identity, IndexedExpr, Term, as_term, collect, cyclic, swap, term, to_indexed,
)

logger = logging.getLogger(__name__)

THIRD = Fraction(1, 3)
SIXTH = Fraction(1, 6)


class StructureError(Exception):
    """Raised for an ambiguity shift that does not respect the symmetries of E."""
    def __init__(self, kind: str, message: str):
        super().__init__(f"{kind}: {message}")
        self.kind = kind


def _antisym(t: Term, first: int, second: int) -> List[Term]:
    return [t, swap(t, first, second, coef=-1)]


def _cyc_antisym(t: Term, axis: int) -> List[Term]:
    """cyclic(t) - cyclic(t with its last two axes swapped)."""
    return cyclic(t, axis) + cyclic(swap(t, -2, -1, coef=-1), axis)


# --- Second order: E and its derivatives ---

def y_of(jv) -> Term:
    """Y_{ab}^{ij} = b_a^{il} W_lm b_b^{mj}."""
    return jv.memo("Y", lambda: term("...ail,...lm,...bmj->...abij", jv["b"], jv["W"], jv["b"]))


def e_of(jv) -> Term:
    return jv.memo("E", lambda: collect(_antisym(y_of(jv), -4, -3)))


def _e_derivative(jv, block: str) -> Term:
    db = jv[f"db_d{block}"]
    dw = jv[f"dW_d{block}"]
    b, w = jv["b"], jv["W"]
    terms = [
        term("...ailk,...lm,...bmj->...abijk", db, w, b),
        term("...ail,...lmk,...bmj->...abijk", b, dw, b),
        term("...ail,...lm,...bmjk->...abijk", b, w, db),
    ]
    return collect([s for t in terms for s in _antisym(t, -5, -4)])


def de_dv_of(jv) -> Term:
    return jv.memo("dE_dv", lambda: _e_derivative(jv, "v"))


def de_dq_of(jv) -> Term:
    return jv.memo("dE_dq", lambda: _e_derivative(jv, "q"))


def e_dot_of(jv) -> Term:
    """dE/dt along the jet: dE/dq . v + dE/dv . a."""
    return jv.memo("E_dot", lambda: collect([
        term("...abijk,...k->...abij", de_dq_of(jv), jv.v),
        term("...abijk,...k->...abij", de_dv_of(jv), jv.a),
    ]))


# --- Ambiguity shifts ---

def validate_shift(m: int, e, d) -> Tuple[np.ndarray, np.ndarray]:
    """Checks shapes and the antisymmetry of e in its lower pair."""
    e = np.zeros((m, m, m, m)) if e is None else np.asarray(e)
    d = np.zeros((m,) * 5) if d is None else np.asarray(d)
    if e.shape != (m, m, m, m) or d.shape != (m,) * 5:
        raise StructureError("ambiguity-shape", f"e must be {(m,) * 4} and d {(m,) * 5}, got {e.shape} and {d.shape}")
    if e.dtype != object and not np.allclose(e, -np.swapaxes(e, 0, 1)):
        raise StructureError("ambiguity-antisymmetry", "e must be antisymmetric in its lower index pair")
    return e, d


def shifted_e_of(jv) -> Term:
    """E + e_{ab}^{cd} (R_c^i R_d^j - R_d^i R_c^j)."""
    if jv.shift is None:
        return e_of(jv)

    def build():
        e, _ = jv.shift
        r = jv["R"]
        return collect([
            e_of(jv),
            term("abcd,...ci,...dj->...abij", e, r, r),
            term("abcd,...di,...cj->...abij", e, r, r, coef=-1),
        ])
    return jv.memo("E~", build)


def shifted_de_dv_of(jv) -> Term:
    if jv.shift is None:
        return de_dv_of(jv)

    def build():
        e, _ = jv.shift
        r, dr = jv["R"], jv["dR_dv"]
        return collect([
            de_dv_of(jv),
            term("abcd,...cik,...dj->...abijk", e, dr, r),
            term("abcd,...ci,...djk->...abijk", e, r, dr),
            term("abcd,...dik,...cj->...abijk", e, dr, r, coef=-1),
            term("abcd,...di,...cjk->...abijk", e, r, dr, coef=-1),
        ])
    return jv.memo("dE_dv~", build)


# --- Third order ---

def d_of(jv) -> Term:
    """D_{abc}^{ir} = -1/3 [b_a^{ij} W_jk dC_{bc}^r/dp_k + cyclic]."""
    return jv.memo("D", lambda: collect(cyclic(
        term("...aij,...jk,...bcrk->...abcir", jv["b"], jv["W"], jv["Cp"], coef=-THIRD), -5,
    )))


def shifted_d_of(jv) -> Term:
    if jv.shift is None:
        return d_of(jv)

    def build():
        _, d = jv.shift
        return collect([d_of(jv), term("abcsr,...si->...abcir", d, jv["R"])])
    return jv.memo("D~", build)


def _a_terms(jv, qfree: bool) -> List[Term]:
    r_dot = r_dot_terms(jv)[:1] if qfree else r_dot_terms(jv)
    terms = [
        term("...aer,...bce->...abcr", jv["T"], jv["T"], coef=THIRD),
        term("...aj,...bcrj->...abcr", jv["R"], jv["dT_dq"], coef=-THIRD),
    ]
    terms += [term("...aj,...bcrj->...abcr", rt, jv["dT_dv"], coef=-THIRD) for rt in r_dot]
    return [s for t in terms for s in cyclic(t, -4)]


def a_of(jv) -> Term:
    """A with the full time derivative of R (accelerations enter)."""
    return jv.memo("A", lambda: collect(_a_terms(jv, qfree=False)))


def a_qfree_of(jv) -> Term:
    """A with dR/dt replaced by its velocity part."""
    return jv.memo("A_qfree", lambda: collect(_a_terms(jv, qfree=True)))


def bten_of(jv) -> Term:
    def build():
        e, e_dot = e_of(jv), e_dot_of(jv)
        de_dq, de_dv = de_dq_of(jv), de_dv_of(jv)
        terms = cyclic(term("...aeij,...bce->...abcij", e, jv["T"], coef=THIRD), -5)
        terms += cyclic(term("...ak,...bcijk->...abcij", jv["R"], de_dq, coef=-THIRD), -5)
        for rt in r_dot_terms(jv):
            terms += cyclic(term("...ak,...bcijk->...abcij", rt, de_dv, coef=-THIRD), -5)
        terms += _cyc_antisym(term("...aik,...bckj->...abcij", jv["dR_dq"], e, coef=THIRD), -5)
        terms += _cyc_antisym(term("...aik,...bckj->...abcij", jv["dR_dv"], e_dot, coef=THIRD), -5)
        # 1/2 d/dt of (dR/dv)_a^{jk} E_{bc}^{ki}, cyclic and antisymmetrized
        for half in (
            term("...ajkl,...l,...bcki->...abcij", jv["d2R_dvdq"], jv.v, e, coef=SIXTH),
            term("...ajkl,...l,...bcki->...abcij", jv["d2R_dvdv"], jv.a, e, coef=SIXTH),
            term("...ajk,...bcki->...abcij", jv["dR_dv"], e_dot, coef=SIXTH),
        ):
            terms += _cyc_antisym(half, -5)
        return collect(terms)
    return jv.memo("Bten", build)


# --- Fourth order ---

def _m_terms(jv, de_dv: Term, dr_dv: Term) -> List[Term]:
    """-1/3 [b_a de_bc/dv + Gppp_a (dR_b dR_c - dR_c dR_b) + cyclic], dr_dv indexed [b, i, m]."""
    gppp = jv["Gppp"]
    terms = [
        term("...akl,...bcijl->...abcijk", jv["b"], de_dv, coef=-THIRD),
        term("...akmn,...bim,...cjn->...abcijk", gppp, dr_dv, dr_dv, coef=-THIRD),
        term("...akmn,...cim,...bjn->...abcijk", gppp, dr_dv, dr_dv, coef=THIRD),
    ]
    return [s for t in terms for s in cyclic(t, -6)]


def m_of(jv) -> Term:
    """M from the velocity derivatives of E and R."""
    return jv.memo("M", lambda: collect(_m_terms(jv, de_dv_of(jv), as_term(jv["dR_dv"]))))


def p1_of(jv) -> Term:
    """P1^j_a^i = W^jk b_a^{ki}."""
    return jv.memo("P1", lambda: term("...jk,...aki->...jai", jv["W"], jv["b"]))


def p2_of(jv) -> Term:
    """The Hamiltonian expression of dE/dv, indexed [k, a, b, i, j]."""
    def build():
        b, w, gppp = jv["b"], jv["W"], jv["Gppp"]
        terms = [
            term("...lmk,...ail,...bmj->...kabij", jv["dW_dv"], b, b),
            term("...lm,...kn,...ailn,...bmj->...kabij", w, w, gppp, b),
            term("...lm,...kn,...ail,...bmjn->...kabij", w, w, b, gppp),
        ]
        return collect([s for t in terms for s in _antisym(t, -4, -3)])
    return jv.memo("P2", build)


def m_hamiltonian_of(jv) -> Term:
    """M rebuilt from P1 and P2."""
    def build():
        p1, p2 = p1_of(jv), p2_of(jv)
        de_dv = Term(np.moveaxis(p2.value, -5, -1), None if p2.symbolic else np.moveaxis(p2.magnitude, -5, -1))
        dr_dv = Term(np.moveaxis(p1.value, -3, -1), None if p1.symbolic else np.moveaxis(p1.magnitude, -3, -1))
        return collect(_m_terms(jv, de_dv, dr_dv))
    return jv.memo("M_H", build)


# --- Identities ---

def _second_order_closure(jv):
    r, dr_dq, dr_dv = jv["R"], jv["dR_dq"], jv["dR_dv"]
    terms = _antisym(term("...aij,...bj->...abi", dr_dq, r), -3, -2)
    terms += _antisym(term("...aij,...bjk,...k->...abi", dr_dv, dr_dq, jv.v), -3, -2)
    terms += [
        term("...abc,...ci->...abi", jv["T"], r, coef=-1),
        term("...abij,...j->...abi", shifted_e_of(jv), alpha_of(jv)),
    ]
    return [terms]


def _second_order_velocity(jv):
    dr_dv = jv["dR_dv"]
    terms = _antisym(term("...aij,...bjk->...abik", dr_dv, dr_dv), -4, -3)
    terms.append(term("...abij,...jk->...abik", shifted_e_of(jv), jv["W"], coef=-1))
    return [terms]


def _generator_velocity_factor(jv):
    return [[as_term(jv["dR_dv"]), term("...ail,...lk->...aik", jv["b"], jv["W"], coef=-1)]]


def _e_kernel(jv):
    w = jv["W"]
    y = y_of(jv)
    return [[
        term("...abij,...jk->...abik", shifted_e_of(jv), w),
        term("...abij,...jk->...abik", y, w, coef=-1),
        term("...baij,...jk->...abik", y, w),
    ]]


def _e_cyclic(jv):
    e = shifted_e_of(jv)
    dr_dv = jv["dR_dv"]
    terms = cyclic(term("...aik,...bckj->...abcij", dr_dv, e), -5)
    terms += cyclic(term("...ajk,...bcki->...abcij", dr_dv, e), -5)
    return [terms]


def _third_order_el(jv):
    r, dr_dv = jv["R"], jv["dR_dv"]
    e, el = shifted_e_of(jv), el_of(jv)
    return [[
        term("...ei,...ak,...bcek->...abci", r, r, jv["dT_dv"], coef=-1),
        term("...eik,...ak,...bce->...abci", dr_dv, r, jv["T"], coef=-1),
        term("...bik,...cakj,...j->...abci", dr_dv, e, el),
        term("...cik,...abkj,...j->...abci", dr_dv, e, el),
        term("...ajk,...bcki,...j->...abci", dr_dv, e, el),
        term("...ak,...bcijk,...j->...abci", r, shifted_de_dv_of(jv), el, coef=-1),
    ]]


def _a_projection(jv):
    return [[
        term("...ri,...abcr->...abci", jv["R"], a_of(jv)),
        term("...abcij,...j->...abci", bten_of(jv), el_of(jv)),
    ]]


def _a_qfree(jv):
    return [[a_qfree_of(jv), term("...abcir,...i->...abcr", shifted_d_of(jv), alpha_of(jv))]]


def _d_velocity(jv):
    terms = cyclic(term("...ajk,...bcrj->...abcrk", jv["dR_dv"], jv["dT_dv"], coef=-THIRD), -5)
    terms.append(term("...abcir,...ik->...abcrk", shifted_d_of(jv), jv["W"], coef=-1))
    return [terms]


def _a_literal(jv):
    return [[a_of(jv), term("...abcir,...i->...abcr", shifted_d_of(jv), el_of(jv), coef=-1)]]


def _fourth_order(jv):
    r, d = jv["R"], d_of(jv)
    return [[
        term("...ri,...abcjr->...abcij", r, d),
        term("...rj,...abcir->...abcij", r, d, coef=-1),
        bten_of(jv),
        term("...abcijk,...k->...abcij", m_of(jv), el_of(jv), coef=-1),
    ]]


def _m_forms(jv):
    return [[m_of(jv), m_hamiltonian_of(jv).scaled(-1)]]


def _antisymmetry(t: Term, pairs: Sequence[Tuple[int, int]]):
    return [[t, swap(t, first, second)] for first, second in pairs]


def _sym_t(jv):
    return _antisymmetry(as_term(jv["T"]), [(-3, -2)])


def _sym_e(jv):
    return _antisymmetry(e_of(jv), [(-4, -3), (-2, -1)])


def _sym_a(jv):
    return _antisymmetry(a_of(jv), [(-4, -3), (-3, -2)])


def _sym_d(jv):
    return _antisymmetry(d_of(jv), [(-5, -4), (-4, -3)])


def _sym_b(jv):
    return _antisymmetry(bten_of(jv), [(-5, -4), (-4, -3), (-2, -1)])


def _sym_m(jv):
    return _antisymmetry(m_of(jv), [(-6, -5), (-5, -4), (-3, -2)])


_E_FAMILIES = ("b", "W", "R", "dR_dv")
_DE_FAMILIES = _E_FAMILIES + ("db_dv", "dW_dv")
_EL_FAMILIES = ("W", "Lq", "Lvq")
_BTEN_FAMILIES = _DE_FAMILIES + ("T", "dR_dq", "d2R_dvdq", "d2R_dvdv", "db_dq", "dW_dq")
_A_FAMILIES = ("T", "R", "dR_dq", "dR_dv", "dT_dq", "dT_dv")
_D_FAMILIES = ("b", "W", "Cp", "R")
_M_FAMILIES = _DE_FAMILIES + ("Gppp",)

IDENTITIES = (
    Identity("1.23", 2, ("R", "dR_dq", "dR_dv", "T") + _E_FAMILIES + ("Lq", "Lvq"), _second_order_closure),
    Identity("1.24", 2, ("dR_dv", "W") + _E_FAMILIES, _second_order_velocity),
    Identity("1.26", 1, ("dR_dv", "b", "W"), _generator_velocity_factor),
    Identity("1.27", 2, _E_FAMILIES, _e_kernel),
    Identity("1.30", 3, _E_FAMILIES, _e_cyclic),
    Identity("1.35", 2, ("dT_dv", "T") + _DE_FAMILIES + _EL_FAMILIES, _third_order_el),
    Identity("1.37", 3, _A_FAMILIES + _BTEN_FAMILIES + _EL_FAMILIES, _a_projection),
    Identity("1.381", 3, _A_FAMILIES + _D_FAMILIES + ("Lq", "Lvq"), _a_qfree),
    Identity("1.382", 3, ("dR_dv", "dT_dv") + _D_FAMILIES, _d_velocity),
    Identity("1.41", 3, _A_FAMILIES + _D_FAMILIES + _EL_FAMILIES, _a_literal),
    Identity("1.45", 3, _D_FAMILIES + _BTEN_FAMILIES + _M_FAMILIES + _EL_FAMILIES, _fourth_order),
    Identity("2.54=2.55", 3, _M_FAMILIES, _m_forms),
    Identity("sym-T", 2, ("T",), _sym_t),
    Identity("sym-E", 2, _E_FAMILIES, _sym_e),
    Identity("sym-A", 3, _A_FAMILIES, _sym_a),
    Identity("sym-D", 3, _D_FAMILIES, _sym_d),
    Identity("sym-B", 3, _BTEN_FAMILIES, _sym_b),
    Identity("sym-M", 3, _M_FAMILIES, _sym_m),
)


# --- Symbolic tensors ---

_ROLES = {
    "T": (GAUGE, GAUGE, GAUGE),
    "b": (GAUGE, COORD, COORD),
    "E": (GAUGE, GAUGE, COORD, COORD),
    "A": (GAUGE, GAUGE, GAUGE, GAUGE),
    "Bten": (GAUGE, GAUGE, GAUGE, COORD, COORD),
    "D": (GAUGE, GAUGE, GAUGE, COORD, GAUGE),
    "P1": (COORD, GAUGE, COORD),
    "P2": (COORD, GAUGE, GAUGE, COORD, COORD),
    "M": (GAUGE, GAUGE, GAUGE, COORD, COORD, COORD),
}

_BUILDERS = {
    "T": lambda jv: as_term(jv["T"]),
    "b": lambda jv: as_term(jv["b"]),
    "E": e_of,
    "A": a_of,
    "A_qfree": a_qfree_of,
    "Bten": bten_of,
    "D": d_of,
    "P1": p1_of,
    "P2": p2_of,
    "M": m_of,
    "M_H": m_hamiltonian_of,
}


def _symbolic(spec: ModelSpec, key: str, roles_key: Optional[str] = None) -> IndexedExpr:
    jv = SymbolicJets(jet_table(spec))
    value = _BUILDERS[key](jv)
    return to_indexed(key, _ROLES[roles_key or key], value).simplified()


def tensor_T(spec: ModelSpec) -> IndexedExpr:
    return _symbolic(spec, "T")


def tensor_b(spec: ModelSpec) -> IndexedExpr:
    return _symbolic(spec, "b")


def tensor_E(spec: ModelSpec) -> IndexedExpr:
    return _symbolic(spec, "E")


def tensor_A(spec: ModelSpec, qfree: bool = False) -> IndexedExpr:
    return _symbolic(spec, "A_qfree" if qfree else "A", "A")


def tensor_Bten(spec: ModelSpec) -> IndexedExpr:
    return _symbolic(spec, "Bten")


def tensor_D(spec: ModelSpec) -> IndexedExpr:
    return _symbolic(spec, "D")


def tensor_M(spec: ModelSpec, hamiltonian: bool = False) -> IndexedExpr:
    return _symbolic(spec, "M_H" if hamiltonian else "M", "M")


def tensor_P1(spec: ModelSpec) -> IndexedExpr:
    return _symbolic(spec, "P1")


def tensor_P2(spec: ModelSpec) -> IndexedExpr:
    return _symbolic(spec, "P2")


# --- Numeric bundle ---

@dataclass(frozen=True)
class StructureTensors:
    """All structure tensors evaluated over a batch of points (leading axis)."""
    R: np.ndarray
    T: np.ndarray
    E: np.ndarray
    b: np.ndarray
    A: np.ndarray
    A_qfree: np.ndarray
    Bten: np.ndarray
    D: np.ndarray
    P1: np.ndarray
    P2: np.ndarray
    M: np.ndarray
    dE_dv: np.ndarray
    dE_dq: np.ndarray
    E_dot: np.ndarray

    def magnitudes(self) -> Dict[str, float]:
        return {name: _max_abs(getattr(self, name)) for name in ("T", "E", "D", "M")}


def _max_abs(array: np.ndarray) -> float:
    return float(np.max(np.abs(array))) if array.size else 0.0


def structure_tensors(spec: ModelSpec, points: Sequence[SamplePoint]) -> StructureTensors:
    jv = numeric_jets(jet_table(spec), points)
    return StructureTensors(
        R=jv["R"],
        T=jv["T"],
        E=e_of(jv).value,
        b=jv["b"],
        A=a_of(jv).value,
        A_qfree=a_qfree_of(jv).value,
        Bten=bten_of(jv).value,
        D=d_of(jv).value,
        P1=p1_of(jv).value,
        P2=p2_of(jv).value,
        M=m_of(jv).value,
        dE_dv=de_dv_of(jv).value,
        dE_dq=de_dq_of(jv).value,
        E_dot=e_dot_of(jv).value,
    )


def ambiguity_shift(tensors: StructureTensors, e, d) -> StructureTensors:
    """E -> E + e (R R - R R), D -> D + d R, with constant e and d."""
    m = tensors.T.shape[-1]
    e, d = validate_shift(m, e, d)
    r = tensors.R
    shifted_e = tensors.E + np.einsum("abcd,...ci,...dj->...abij", e, r, r) \
        - np.einsum("abcd,...di,...cj->...abij", e, r, r)
    shifted_d = tensors.D + np.einsum("abcsr,...si->...abcir", d, r)
    return replace(tensors, E=shifted_e, D=shifted_d)


# --- Rebase family exploration ---

@dataclass(frozen=True)
class Witness:
    entries: Tuple[Tuple[Tuple[int, int], str], ...]
    max_d: float


@dataclass(frozen=True)
class ExploreReport:
    base: str
    family: str
    seed: int
    witnesses: Tuple[Witness, ...]

    @property
    def best(self) -> Optional[Witness]:
        return max(self.witnesses, key=lambda w: w.max_d, default=None)

    @property
    def found(self) -> bool:
        best = self.best
        return best is not None and best.max_d > IDENTITY_TOL


# Unit lower/upper triangular matrices keep det = 1; (row, column) slots to fill.
REBASE_FAMILIES = {
    "upper": ((0, 1),),
    "mixed": ((0, 1), (2, 1)),
    "full-upper": ((0, 1), (0, 2), (1, 2)),
}


def explore_rebase_family(base: ModelSpec, family: str = "mixed", seed: int = 0,
                          count: int = EXPLORE_COUNT, samples: int = DEFAULT_SAMPLES) -> ExploreReport:
    """
    Draws count rebasing matrices from a family of unit triangular matrices
    whose free slots hold single coordinates or momenta, and records max |D|
    of each rebased model.
    """
    if family not in REBASE_FAMILIES:
        raise KeyError(f"unknown rebase family {family}; choose from {sorted(REBASE_FAMILIES)}")
    if base.m < 3:
        raise ValueError(f"{base.name} has m = {base.m}; D needs three gauge indices")
    slots = REBASE_FAMILIES[family]
    space = base.space
    candidates = space.q + space.p
    rng = np.random.default_rng(seed)
    points = sample_points(base, samples, seed)

    witnesses = []
    for draw in range(count):
        lam = np.empty((base.m, base.m), dtype=object)
        for index in np.ndindex(lam.shape):
            lam[index] = sp.S.One if index[0] == index[1] else sp.S.Zero
        chosen = []
        for slot in slots:
            symbol = candidates[int(rng.integers(len(candidates)))]
            lam[slot] = symbol
            chosen.append((slot, str(symbol)))
        try:
            rebased = rebase(base, lam, points)
        except RebaseError as exc:
            logger.warning(f"Skipping draw {draw}: {exc}")
            continue
        jv = numeric_jets(jet_table(rebased), points)
        witnesses.append(Witness(tuple(chosen), _max_abs(d_of(jv).value)))
        logger.debug(f"Draw {draw}: {chosen} max|D| = {witnesses[-1].max_d:.3e}")

    report = ExploreReport(base.name, family, seed, tuple(witnesses))
    if report.found:
        logger.info(f"Nonvanishing D on {base.name}: {report.best.entries} (max |D| = {report.best.max_d:.3e})")
    else:
        logger.info(f"No D witness among {len(witnesses)} draws of family {family}")
    return report
