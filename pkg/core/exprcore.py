import math
import logging
from enum import Enum
from dataclasses import dataclass
from typing import Callable, Dict, Iterable, Mapping, Optional, Tuple

import sympy as sp

from core.config import NUMERIC_ZERO_TOL

logger = logging.getLogger(__name__)


class ExpressionError(Exception):
    """
    Raised when an expression leaves the supported node set, asks for a
    derivative order the jets do not carry, or cannot be evaluated.
    """
    def __init__(self, kind: str, message: str, subtree: Optional[sp.Expr] = None):
        super().__init__(f"{kind}: {message}")
        self.kind = kind
        self.subtree = subtree


class SymbolKind(str, Enum):
    COORDINATE = "coordinate"
    VELOCITY = "velocity"
    ACCELERATION = "acceleration"
    MOMENTUM = "momentum"
    PARAMETER = "parameter"


_FUNCTIONS = (sp.sin, sp.cos, sp.exp, sp.log)
_MATH = {sp.sin: math.sin, sp.cos: math.cos, sp.exp: math.exp}
_INFINITIES = (sp.zoo, sp.oo, sp.S.NegativeInfinity, sp.nan)


def _family_names(name: str) -> Tuple[str, str, str]:
    """Coordinate q<k> pairs with v<k>, a<k>, p<k>; any other name x with vx, ax, px."""
    if name.startswith("q") and len(name) > 1:
        suffix = name[1:]
        return f"v{suffix}", f"a{suffix}", f"p{suffix}"
    return f"v{name}", f"a{name}", f"p{name}"


@dataclass(frozen=True)
class PhaseSpace:
    """
    The four indexed symbol families of a model with n coordinates, plus
    named parameters (constants: no jets, no momenta).
    """
    q: Tuple[sp.Symbol, ...]
    v: Tuple[sp.Symbol, ...]
    a: Tuple[sp.Symbol, ...]
    p: Tuple[sp.Symbol, ...]
    params: Tuple[sp.Symbol, ...] = ()

    @classmethod
    def from_coords(cls, names: Iterable[str], params: Iterable[str] = ()) -> "PhaseSpace":
        names = tuple(names)
        params = tuple(params)
        derived = [_family_names(name) for name in names]
        everything = list(names) + [d for triple in derived for d in triple] + list(params)
        if len(set(everything)) != len(everything):
            raise ValueError(f"coordinate and parameter names produce clashing symbols: {' '.join(names + params)}")
        return cls(
            q=tuple(sp.Symbol(name) for name in names),
            v=tuple(sp.Symbol(d[0]) for d in derived),
            a=tuple(sp.Symbol(d[1]) for d in derived),
            p=tuple(sp.Symbol(d[2]) for d in derived),
            params=tuple(sp.Symbol(name) for name in params),
        )

    def with_parameter(self, name: str) -> "PhaseSpace":
        return PhaseSpace.from_coords([s.name for s in self.q], [s.name for s in self.params] + [name])

    @property
    def n(self) -> int:
        return len(self.q)

    def family(self, kind: SymbolKind) -> Tuple[sp.Symbol, ...]:
        return {
            SymbolKind.COORDINATE: self.q,
            SymbolKind.VELOCITY: self.v,
            SymbolKind.ACCELERATION: self.a,
            SymbolKind.MOMENTUM: self.p,
            SymbolKind.PARAMETER: self.params,
        }[kind]

    def kind_of(self, symbol: sp.Symbol) -> Optional[SymbolKind]:
        for kind in SymbolKind:
            if symbol in self.family(kind):
                return kind
        return None

    def lookup(self, name: str) -> Optional[sp.Symbol]:
        symbol = sp.Symbol(name)
        return symbol if self.kind_of(symbol) is not None else None

    def kinds_in(self, e: sp.Expr) -> set:
        return {self.kind_of(s) for s in e.free_symbols}


def check_supported(e: sp.Expr) -> sp.Expr:
    """Walks the tree and rejects anything outside the supported node set."""
    for node in sp.preorder_traversal(e):
        if node.is_Symbol or node.is_Add or node.is_Mul or node is sp.E:
            continue
        if node in _INFINITIES:
            raise ExpressionError("domain-error", "division by zero", node)
        if node.is_Number:
            if node.is_Rational:
                continue
            raise ExpressionError("unsupported-node", f"inexact constant {node}", node)
        if node.is_Pow and node.exp.is_Rational:
            continue
        if isinstance(node, _FUNCTIONS):
            continue
        raise ExpressionError("unsupported-node", f"{type(node).__name__} is not supported", node)
    return e


def differentiate(e: sp.Expr, s: sp.Symbol) -> sp.Expr:
    check_supported(e)
    return sp.diff(e, s)


def total_time_derivative(e: sp.Expr, space: PhaseSpace) -> sp.Expr:
    """d/dt along a trajectory: sum of de/dq v + de/dv a."""
    if e.free_symbols & set(space.a):
        raise ExpressionError("order-overflow", "expression already contains accelerations", e)
    check_supported(e)
    terms = [sp.diff(e, q) * v + sp.diff(e, v) * a for q, v, a in zip(space.q, space.v, space.a)]
    return sp.Add(*terms)


def substitute(e: sp.Expr, assignments: Mapping[sp.Symbol, sp.Expr]) -> sp.Expr:
    """Simultaneous substitution; the identity map returns the same tree."""
    effective = {k: v for k, v in assignments.items() if k != v}
    if not effective:
        return e
    return e.xreplace(effective)


def simplify(e: sp.Expr) -> sp.Expr:
    """Light, value-preserving simplification: expansion, plus cancellation for rational functions."""
    out = sp.expand(e)
    if out.free_symbols and not out.is_polynomial() and out.is_rational_function():
        out = sp.cancel(out)
    return out


def evaluate(e: sp.Expr, bindings: Mapping[sp.Symbol, float]) -> float:
    """Floating-point evaluation with located domain errors."""
    if e.is_Symbol:
        if e not in bindings:
            raise ExpressionError("unbound-symbol", f"no value bound for {e}", e)
        return float(bindings[e])
    if e.is_Rational:
        return float(e)
    if e is sp.E:
        return math.e
    if e.is_Add:
        return math.fsum(evaluate(arg, bindings) for arg in e.args)
    if e.is_Mul:
        result = 1.0
        for arg in e.args:
            result *= evaluate(arg, bindings)
        return _finite(result, e)
    if e.is_Pow:
        base = evaluate(e.base, bindings)
        exponent = e.exp
        if not exponent.is_Rational:
            raise ExpressionError("unsupported-node", "non-rational exponent", e)
        if base == 0.0 and exponent.is_negative:
            raise ExpressionError("domain-error", "division by zero", e)
        if base < 0.0 and not exponent.is_Integer:
            raise ExpressionError("domain-error", "fractional power of a negative number", e)
        try:
            return _finite(base ** float(exponent), e)
        except OverflowError as exc:
            raise ExpressionError("domain-error", "overflow", e) from exc
    if isinstance(e, sp.log):
        arg = evaluate(e.args[0], bindings)
        if arg <= 0.0:
            raise ExpressionError("domain-error", "logarithm of a non-positive number", e)
        return math.log(arg)
    for fn, impl in _MATH.items():
        if isinstance(e, fn):
            try:
                return _finite(impl(evaluate(e.args[0], bindings)), e)
            except OverflowError as exc:
                raise ExpressionError("domain-error", "overflow", e) from exc
    raise ExpressionError("unsupported-node", f"{type(e).__name__} is not supported", e)


def _finite(value: float, e: sp.Expr) -> float:
    if not math.isfinite(value):
        raise ExpressionError("domain-error", "non-finite value", e)
    return value


def is_identically_zero(e: sp.Expr, sampler: Callable[[], Iterable[Dict[sp.Symbol, float]]]) -> Optional[str]:
    """
    "exact" when simplification folds e to zero, "numeric-zero" when every
    sampled evaluation is below the numeric-zero tolerance, None otherwise.
    """
    if simplify(e) == 0:
        return "exact"
    for bindings in sampler():
        try:
            if abs(evaluate(e, bindings)) > NUMERIC_ZERO_TOL:
                return None
        except ExpressionError as exc:
            if exc.kind != "domain-error":
                raise
            return None
    logger.warning(f"Accepting numeric-zero for {e}")
    return "numeric-zero"
