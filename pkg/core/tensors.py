import logging
from fractions import Fraction
from dataclasses import dataclass, field
from typing import Callable, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np
import sympy as sp

from core.config import LAMBDIFY_CSE
from core.exprcore import ExpressionError, evaluate, simplify

logger = logging.getLogger(__name__)

GAUGE = "gauge"
COORD = "coord"

Coefficient = Union[int, Fraction]


@dataclass(frozen=True, eq=False)
class IndexedExpr:
    """A dense multi-index array of expressions with named index roles."""
    name: str
    roles: Tuple[str, ...]
    entries: np.ndarray

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.entries.shape

    def __getitem__(self, index) -> sp.Expr:
        return self.entries[index]

    def simplified(self) -> "IndexedExpr":
        out = np.empty(self.shape, dtype=object)
        for index in np.ndindex(self.shape):
            out[index] = simplify(sp.sympify(self.entries[index]))
        return IndexedExpr(self.name, self.roles, out)

    def nonzero(self) -> List[Tuple[Tuple[int, ...], sp.Expr]]:
        return [(index, self.entries[index]) for index in np.ndindex(self.shape) if self.entries[index] != 0]

    def compile(self, args: Sequence[sp.Symbol]) -> "CompiledArray":
        return CompiledArray(self.name, self.entries, tuple(args))


def object_array(shape: Tuple[int, ...], fill=sp.S.Zero) -> np.ndarray:
    out = np.empty(shape, dtype=object)
    out.fill(fill)
    return out


class CompiledArray:
    """
    Vectorized evaluator for an array of expressions, compiled once.
    Called with a (points, len(args)) matrix, returns (points, *shape).
    """
    def __init__(self, name: str, entries: np.ndarray, args: Tuple[sp.Symbol, ...]):
        self.name = name
        self.shape = entries.shape
        self.args = args
        self._flat = [sp.sympify(e) for e in entries.reshape(-1)]
        self._fn = sp.lambdify(args, self._flat, modules="numpy", cse=LAMBDIFY_CSE) if self._flat else None
        logger.debug(f"Compiled {name} with {len(self._flat)} entries over {len(args)} arguments")

    def __call__(self, columns: np.ndarray, strict: bool = True) -> np.ndarray:
        columns = np.asarray(columns, dtype=float)
        count = columns.shape[0]
        out = np.zeros((count, len(self._flat)))
        if self._fn is not None:
            with np.errstate(all="ignore"):
                raw = self._fn(*columns.T)
                for k, value in enumerate(raw):
                    out[:, k] = value
        if strict and not np.all(np.isfinite(out)):
            self._raise_domain(columns, out)
        return out.reshape((count,) + self.shape)

    def _raise_domain(self, columns: np.ndarray, out: np.ndarray) -> None:
        point, entry = np.argwhere(~np.isfinite(out))[0]
        bindings = dict(zip(self.args, columns[point]))
        expr = self._flat[entry]
        evaluate(expr, bindings)
        raise ExpressionError("domain-error", f"{self.name} is not finite at point {point}", expr)


@dataclass(frozen=True, eq=False)
class Term:
    """
    One product of a tensor identity. magnitude is the same product taken over
    absolute values; it is None for symbolic (object) arrays.
    """
    value: np.ndarray
    magnitude: Optional[np.ndarray] = None

    @property
    def symbolic(self) -> bool:
        return self.magnitude is None

    def scaled(self, coef: Coefficient) -> "Term":
        if self.symbolic:
            return Term(_scaled(self.value, coef, True))
        return Term(_scaled(self.value, coef, False), _scaled(self.magnitude, abs(Fraction(coef)), False))


def _is_symbolic(array: np.ndarray) -> bool:
    return np.asarray(array).dtype == object


def as_term(operand: Union[Term, np.ndarray]) -> Term:
    if isinstance(operand, Term):
        return operand
    array = np.asarray(operand)
    return Term(array, None if _is_symbolic(array) else np.abs(array))


def _scaled(array: np.ndarray, coef: Coefficient, symbolic: bool) -> np.ndarray:
    coef = Fraction(coef)
    if coef == 1:
        return array
    if symbolic:
        return array * sp.Rational(coef.numerator, coef.denominator)
    return array * float(coef)


def term(subscripts: str, *operands: Union[Term, np.ndarray], coef: Coefficient = 1) -> Term:
    """
    einsum contraction of the operands, tracked with its magnitude.
    Subscripts carry a leading '...' so the same call serves a batch of points
    or a single symbolic array.
    """
    tracked = [as_term(op) for op in operands]
    symbolic = any(t.symbolic for t in tracked)
    if symbolic:
        values = [np.asarray(t.value, dtype=object) for t in tracked]
        return Term(_scaled(np.einsum(subscripts, *values), coef, True))
    value = np.einsum(subscripts, *[t.value for t in tracked])
    magnitude = np.einsum(subscripts, *[t.magnitude for t in tracked])
    return Term(_scaled(value, coef, False), _scaled(magnitude, abs(Fraction(coef)), False))


def collect(terms: Iterable[Term]) -> Term:
    """Sums a list of terms into a single tracked term."""
    terms = list(terms)
    value = terms[0].value
    for t in terms[1:]:
        value = value + t.value
    if any(t.symbolic for t in terms):
        return Term(value)
    magnitude = terms[0].magnitude
    for t in terms[1:]:
        magnitude = magnitude + t.magnitude
    return Term(value, magnitude)


def cyclic_shift(array: np.ndarray, axis: int) -> np.ndarray:
    """Y[a,b,c] = X[b,c,a] over three consecutive axes starting at a negative axis."""
    return np.moveaxis(array, (axis, axis + 1, axis + 2), (axis + 1, axis + 2, axis))


def cyclic(t: Term, axis: int) -> List[Term]:
    """The three terms of a cyclic sum over gauge axes (axis, axis+1, axis+2)."""
    out = [t]
    current = t
    for _ in range(2):
        current = Term(
            cyclic_shift(current.value, axis),
            None if current.magnitude is None else cyclic_shift(current.magnitude, axis),
        )
        out.append(current)
    return out


def swap(t: Term, first: int, second: int, coef: Coefficient = 1) -> Term:
    value = _scaled(np.swapaxes(t.value, first, second), coef, t.symbolic)
    if t.symbolic:
        return Term(value)
    return Term(value, np.swapaxes(t.magnitude, first, second))


@dataclass(frozen=True)
class CheckResult:
    """Outcome of one identity or oracle check over a batch of points."""
    id: str
    max_residual: float
    passed: bool
    vacuous: bool = False
    scale: str = "normalized"

    def as_dict(self) -> dict:
        return {
            "id": self.id,
            "max_residual": self.max_residual,
            "passed": self.passed,
            "vacuous": self.vacuous,
        }


@dataclass(frozen=True)
class Identity:
    """A registered identity: minimum gauge count, the families it reads, and its term builder."""
    id: str
    min_gauge: int
    families: Tuple[str, ...]
    build: Callable


@dataclass
class Residual:
    """Per-point normalized residual and the largest term scale seen at each point."""
    per_point: np.ndarray
    scale: np.ndarray = field(default=None)

    @property
    def max(self) -> float:
        return float(np.max(self.per_point)) if self.per_point.size else 0.0

    @property
    def degenerate(self) -> bool:
        return self.scale is not None and float(np.max(self.scale)) == 0.0


def normalized_residual(groups: Sequence[Sequence[Term]]) -> Residual:
    """
    |sum of values| / (1 + sum of magnitudes) per entry, reduced by max over
    entries and groups. The leading axis of every term is the point axis.
    """
    per_point = None
    scale = None
    for group in groups:
        total = collect(group)
        ratio = np.abs(total.value) / (1.0 + total.magnitude)
        count = ratio.shape[0]
        r = ratio.reshape(count, -1).max(axis=1)
        s = total.magnitude.reshape(count, -1).max(axis=1)
        per_point = r if per_point is None else np.maximum(per_point, r)
        scale = s if scale is None else np.maximum(scale, s)
    return Residual(per_point, scale)


def absolute_residual(groups: Sequence[Sequence[Term]]) -> Residual:
    """|sum of values| per entry without normalization."""
    per_point = None
    scale = None
    for group in groups:
        total = collect(group)
        count = total.value.shape[0]
        r = np.abs(total.value).reshape(count, -1).max(axis=1)
        s = total.magnitude.reshape(count, -1).max(axis=1)
        per_point = r if per_point is None else np.maximum(per_point, r)
        scale = s if scale is None else np.maximum(scale, s)
    return Residual(per_point, scale)


def summarize(check_id: str, residual: Residual, tol: float, m: int = 1, min_gauge: int = 1,
              scale: str = "normalized") -> CheckResult:
    """Turns a residual into a verdict; too few gauge indices or all-zero terms make a check vacuous."""
    vacuous = m < min_gauge or residual.degenerate
    worst = residual.max
    passed = vacuous or worst <= tol
    if not passed:
        logger.warning(f"Check {check_id} failed: max residual {worst:.3e} > {tol:.1e}")
    return CheckResult(check_id, worst, bool(passed), bool(vacuous), scale)


def to_indexed(name: str, roles: Tuple[str, ...], t: Union[Term, np.ndarray]) -> IndexedExpr:
    value = t.value if isinstance(t, Term) else t
    return IndexedExpr(name, roles, np.asarray(value, dtype=object))


def merge_residuals(residuals: Sequence[Residual]) -> Residual:
    """Pools the per-point residuals of several batches into one."""
    per_point = np.concatenate([r.per_point for r in residuals])
    scale = np.concatenate([r.scale for r in residuals])
    return Residual(per_point, scale)
