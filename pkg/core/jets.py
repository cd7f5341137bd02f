import time
import logging
import functools
from typing import Dict, Optional, Sequence, Tuple

import networkx as nx
import numpy as np
import sympy as sp

from core.config import JET_CACHE_SIZE
from core.exprcore import substitute
from core.modeldsl import ModelSpec, SamplePoint, stack_points
from core.tensors import COORD, GAUGE, CompiledArray, IndexedExpr, object_array

logger = logging.getLogger(__name__)

TANGENT = "tangent"
PHASE = "phase"

Assignments = Tuple[Tuple[sp.Symbol, sp.Expr], ...]
Corruption = Tuple[str, Tuple[int, ...], float]

# name, space, parent, operation, roles (derivative ops append a coordinate role)
FAMILIES = (
    ("L", TANGENT, None, "source", ()),
    ("Lq", TANGENT, "L", "dq", None),
    ("Lv", TANGENT, "L", "dv", None),
    ("W", TANGENT, "Lv", "dv", None),
    ("Lvq", TANGENT, "Lv", "dq", None),
    ("dW_dv", TANGENT, "W", "dv", None),
    ("dW_dq", TANGENT, "W", "dq", None),

    ("G*", PHASE, None, "source", (GAUGE,)),
    ("Gp*", PHASE, "G*", "dp", None),
    ("Gpp*", PHASE, "Gp*", "dp", None),
    ("Gppp*", PHASE, "Gpp*", "dp", None),
    ("Gq*", PHASE, "G*", "dq", None),
    ("Gqp*", PHASE, "Gq*", "dp", None),
    ("C*", PHASE, None, "source", (GAUGE, GAUGE, GAUGE)),
    ("Cp*", PHASE, "C*", "dp", None),
    ("Cq*", PHASE, "C*", "dq", None),
    ("Hc*", PHASE, None, "source", ()),
    ("Hp*", PHASE, "Hc*", "dp", None),
    ("Hq*", PHASE, "Hc*", "dq", None),

    ("G", TANGENT, "G*", "pullback", None),
    ("R", TANGENT, "Gp*", "pullback", None),
    ("b", TANGENT, "Gpp*", "pullback", None),
    ("Gppp", TANGENT, "Gppp*", "pullback", None),
    ("Gq", TANGENT, "Gq*", "pullback", None),
    ("Gqp", TANGENT, "Gqp*", "pullback", None),
    ("T", TANGENT, "C*", "pullback", None),
    ("Cp", TANGENT, "Cp*", "pullback", None),
    ("Cq", TANGENT, "Cq*", "pullback", None),
    ("Hc", TANGENT, "Hc*", "pullback", None),
    ("Hp", TANGENT, "Hp*", "pullback", None),
    ("Hq", TANGENT, "Hq*", "pullback", None),

    ("dR_dv", TANGENT, "R", "dv", None),
    ("dR_dq", TANGENT, "R", "dq", None),
    ("d2R_dvdv", TANGENT, "dR_dv", "dv", None),
    ("d2R_dvdq", TANGENT, "dR_dv", "dq", None),
    ("db_dv", TANGENT, "b", "dv", None),
    ("db_dq", TANGENT, "b", "dq", None),
    ("dT_dv", TANGENT, "T", "dv", None),
    ("dT_dq", TANGENT, "T", "dq", None),
)


def default_assignments(spec: ModelSpec) -> Assignments:
    """The Legendre map p_i -> dL/dv_i."""
    return tuple((p, sp.diff(spec.lagrangian, v)) for p, v in zip(spec.space.p, spec.space.v))


def gradient(entries: np.ndarray, symbols: Sequence[sp.Symbol]) -> np.ndarray:
    """Appends one coordinate axis holding the partial derivatives of every entry."""
    out = object_array(entries.shape + (len(symbols),))
    for index in np.ndindex(entries.shape):
        expr = sp.sympify(entries[index])
        if expr.is_number:
            continue
        for k, symbol in enumerate(symbols):
            out[index + (k,)] = sp.diff(expr, symbol)
    return out


class JetTable:
    """
    Symbolic derivative families of one model, organized as a DAG.
    Families are built on demand in dependency order and compiled once.
    """
    def __init__(self, spec: ModelSpec, assignments: Optional[Assignments] = None,
                 corrupt: Optional[Corruption] = None):
        self.spec = spec
        self.assignments = assignments if assignments is not None else default_assignments(spec)
        self.corrupt = corrupt
        self.graph = nx.DiGraph()
        self._symbolic: Dict[str, np.ndarray] = {}
        self._compiled: Dict[str, CompiledArray] = {}
        self._momentum: Optional[CompiledArray] = None

        for name, space, parent, op, roles in FAMILIES:
            if roles is None:
                parent_roles = self.graph.nodes[parent]["roles"]
                roles = parent_roles if op == "pullback" else parent_roles + (COORD,)
            self.graph.add_node(name, kind="family", space=space, parent=parent, op=op, roles=roles)
            if parent is not None:
                self.graph.add_edge(parent, name, op=op)

        if corrupt is not None and corrupt[0] not in self.graph:
            raise KeyError(f"unknown jet family {corrupt[0]}")

    # --- symbolic ---

    def _source(self, name: str) -> np.ndarray:
        spec = self.spec
        if name == "G*":
            out = object_array((spec.m,))
            for mu, g in enumerate(spec.G):
                out[mu] = g
            return out
        if name == "C*":
            return spec.structure_array()
        scalar = object_array(())
        if name == "L":
            scalar[()] = spec.lagrangian
        elif name == "Hc*":
            scalar[()] = spec.hamiltonian
        else:
            raise KeyError(name)
        return scalar

    def _build(self, name: str) -> np.ndarray:
        data = self.graph.nodes[name]
        op = data["op"]
        space = self.spec.space
        if op == "source":
            return self._source(name)
        parent = self.symbolic(data["parent"])
        if op == "pullback":
            mapping = dict(self.assignments)
            out = object_array(parent.shape)
            for index in np.ndindex(parent.shape):
                out[index] = substitute(sp.sympify(parent[index]), mapping)
            return out
        symbols = {"dq": space.q, "dv": space.v, "dp": space.p}[op]
        return gradient(parent, symbols)

    def symbolic(self, name: str) -> np.ndarray:
        if name not in self._symbolic:
            started = time.perf_counter()
            entries = self._build(name)
            if self.corrupt is not None and self.corrupt[0] == name:
                _, index, delta = self.corrupt
                entries = entries.copy()
                entries[index] = sp.sympify(entries[index]) + sp.Rational(delta)
                logger.info(f"Corrupted {name}{list(index)} by {delta}")
            self._symbolic[name] = entries
            logger.debug(f"Built {name} {entries.shape} in {time.perf_counter() - started:.3f}s")
        return self._symbolic[name]

    def indexed(self, name: str) -> IndexedExpr:
        return IndexedExpr(name, self.graph.nodes[name]["roles"], self.symbolic(name))

    # --- numeric ---

    def arguments(self, name: str) -> Tuple[sp.Symbol, ...]:
        space = self.spec.space
        if self.graph.nodes[name]["space"] == PHASE:
            return space.q + space.p
        return space.q + space.v

    def compiled(self, name: str) -> CompiledArray:
        if name not in self._compiled:
            self._compiled[name] = CompiledArray(name, self.symbolic(name), self.arguments(name))
        return self._compiled[name]

    def momentum(self, q: np.ndarray, v: np.ndarray) -> np.ndarray:
        """Numeric Legendre map, independent of any corruption of the Lv family."""
        if self._momentum is None:
            values = object_array((self.spec.n,))
            for i, (_, expr) in enumerate(self.assignments):
                values[i] = expr
            self._momentum = CompiledArray("FL", values, self.spec.space.q + self.spec.space.v)
        return self._momentum(np.hstack([q, v]))

    # --- graph queries ---

    def fd_parent(self, name: str) -> Optional[Tuple[str, str]]:
        """The family a finite difference of which should reproduce name, and along which block."""
        data = self.graph.nodes[name]
        if data["op"] == "pullback":
            source = self.graph.nodes[data["parent"]]
            if source["op"] in ("dq", "dp"):
                return source["parent"], source["op"]
            return None
        if data["op"] in ("dq", "dv"):
            return data["parent"], data["op"]
        return None

    def derivative_families(self) -> Tuple[str, ...]:
        return tuple(
            name for name in nx.topological_sort(self.graph)
            if self.graph.nodes[name].get("kind") == "family" and self.graph.nodes[name]["space"] == TANGENT
            and self.fd_parent(name) is not None
        )

    def space_of(self, name: str) -> str:
        return self.graph.nodes[name]["space"]


@functools.lru_cache(maxsize=JET_CACHE_SIZE)
def jet_table(spec: ModelSpec, assignments: Optional[Assignments] = None,
              corrupt: Optional[Corruption] = None) -> JetTable:
    return JetTable(spec, assignments, corrupt)


class _Memo:
    """Cache for quantities derived from the families (alpha, E, D, multipliers...)."""
    symbolic = False
    shift = None

    def memo(self, key: str, build):
        if key not in self._derived:
            self._derived[key] = build()
        return self._derived[key]


class NumericJets(_Memo):
    """Family values over a batch of points, evaluated lazily and cached."""
    def __init__(self, table: JetTable, q: np.ndarray, v: np.ndarray, a: np.ndarray, shift=None):
        self.table = table
        self.q = q
        self.v = v
        self.a = a
        self.shift = shift
        self.columns = np.hstack([q, v])
        self._cache: Dict[str, np.ndarray] = {}
        self._derived: Dict[str, object] = {}

    @property
    def count(self) -> int:
        return self.q.shape[0]

    @property
    def m(self) -> int:
        return self.table.spec.m

    def __getitem__(self, name: str) -> np.ndarray:
        if name not in self._cache:
            if self.table.space_of(name) == PHASE:
                raise KeyError(f"{name} lives on phase space; evaluate its pullback instead")
            self._cache[name] = self.table.compiled(name)(self.columns)
        return self._cache[name]


class SymbolicJets(_Memo):
    """The same interface as NumericJets, returning object arrays of expressions."""
    symbolic = True

    def __init__(self, table: JetTable, shift=None):
        space = table.spec.space
        self.table = table
        self.shift = shift
        self.q = _symbols(space.q)
        self.v = _symbols(space.v)
        self.a = _symbols(space.a)
        self._derived: Dict[str, object] = {}

    @property
    def m(self) -> int:
        return self.table.spec.m

    def __getitem__(self, name: str) -> np.ndarray:
        return self.table.symbolic(name)


def _symbols(family: Sequence[sp.Symbol]) -> np.ndarray:
    out = object_array((len(family),))
    for i, symbol in enumerate(family):
        out[i] = symbol
    return out


def numeric_jets(table: JetTable, points: Sequence[SamplePoint], shift=None) -> NumericJets:
    q, v, a = stack_points(points)
    return NumericJets(table, q, v, a, shift)


class PhaseJets(_Memo):
    """Phase-space families evaluated at off-surface (q, p) points."""
    def __init__(self, table: JetTable, q: np.ndarray, p: np.ndarray):
        self.table = table
        self.q = q
        self.p = p
        self.columns = np.hstack([q, p])
        self._cache: Dict[str, np.ndarray] = {}
        self._derived: Dict[str, object] = {}

    @property
    def count(self) -> int:
        return self.q.shape[0]

    @property
    def m(self) -> int:
        return self.table.spec.m

    def __getitem__(self, name: str) -> np.ndarray:
        if name not in self._cache:
            if self.table.space_of(name) != PHASE:
                raise KeyError(f"{name} is a tangent family")
            self._cache[name] = self.table.compiled(name)(self.columns)
        return self._cache[name]
