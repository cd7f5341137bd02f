import re
import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pyparsing as pp
import sympy as sp
from sympy.printing.str import StrPrinter
from sympy.printing.precedence import precedence
from tenacity import Retrying, RetryError, retry_if_exception_type, stop_after_attempt

from core.config import (
    MAX_REJECTIONS, SAMPLE_HIGH, SAMPLE_LOW,
)
from core.exprcore import (
    ExpressionError, PhaseSpace, SymbolKind, check_supported, evaluate,
)
from core.tensors import object_array

logger = logging.getLogger(__name__)

pp.ParserElement.enable_packrat()


class ModelError(Exception):
    """
    Raised when a model file cannot be parsed or describes an invalid model.
    line and col are 1-based and None when the error is not tied to a location.
    """
    def __init__(self, kind: str, message: str, line: Optional[int] = None, col: Optional[int] = None):
        where = f" (line {line}, col {col})" if line is not None else ""
        super().__init__(f"{message}{where}")
        self.kind = kind
        self.line = line
        self.col = col


# --- Expression grammar ---

_FUNCTION_MAP = {"sqrt": sp.sqrt, "sin": sp.sin, "cos": sp.cos, "exp": sp.exp, "ln": sp.log}


def make_grammar(symbols: Dict[str, sp.Symbol]) -> pp.ParserElement:
    """
    expr  := term (('+'|'-') term)*
    term  := unary (('*'|'/') unary)*
    unary := '-' unary | pow
    pow   := atom ('^' exponent)?
    atom  := number | fn '(' expr ')' | ident | '(' expr ')'

    exponent := rational | '(' rational ')'
    rational := '-'? int ('/' int)?

    A bare rational binds to '^', so v1^3/2 is v1^(3/2).
    """
    lparen = pp.Suppress("(")
    rparen = pp.Suppress(")")

    number = pp.Regex(r"\d+\.\d+|\d+|\.\d+")
    number.set_parse_action(lambda t: sp.Rational(t[0]))

    def to_rational(s, loc, toks):
        _, _, denominator = toks[0].partition("/")
        if denominator and int(denominator) == 0:
            raise pp.ParseFatalException(s, loc, "zero denominator in exponent")
        return sp.Rational(toks[0])

    rational = pp.Regex(r"-?\d+(/\d+)?")
    exponent = rational | (lparen + rational + rparen)
    exponent.set_parse_action(to_rational)

    ident = pp.Word(pp.alphas + "_", pp.alphanums + "_")

    def resolve(s, loc, toks):
        name = toks[0]
        if name not in symbols:
            raise pp.ParseFatalException(s, loc, f"unknown symbol '{name}'")
        return symbols[name]

    ident.set_parse_action(resolve)

    expr = pp.Forward()
    function = pp.MatchFirst([pp.Keyword(name) for name in _FUNCTION_MAP])
    call = function + lparen + expr + rparen
    call.set_parse_action(lambda t: _FUNCTION_MAP[t[0]](t[1]))

    atom = number | call | ident | (lparen + expr + rparen)

    power = atom + pp.Optional(pp.Suppress("^") + exponent)
    power.set_parse_action(lambda t: t[0] ** t[1] if len(t) == 2 else t[0])

    unary = pp.Forward()
    negated = pp.Suppress("-") + unary
    negated.set_parse_action(lambda t: -t[0])
    unary <<= negated | power

    def fold(toks):
        result = toks[0]
        for op, rhs in zip(toks[1::2], toks[2::2]):
            if op == "*":
                result = result * rhs
            elif op == "/":
                result = result / rhs
            elif op == "+":
                result = result + rhs
            else:
                result = result - rhs
        return result

    product = unary + pp.ZeroOrMore(pp.one_of("* /") + unary)
    product.set_parse_action(lambda t: fold(t))
    expr <<= product + pp.ZeroOrMore(pp.one_of("+ -") + product)
    expr.set_parse_action(lambda t: fold(t))
    return expr


def parse_expression(text: str, symbols: Dict[str, sp.Symbol], line: Optional[int] = None, offset: int = 0) -> sp.Expr:
    grammar = make_grammar(symbols)
    try:
        result = grammar.parse_string(text, parse_all=True)[0]
    except (pp.ParseException, pp.ParseFatalException) as exc:
        kind = "unknown-symbol" if exc.msg.startswith("unknown symbol") else "syntax"
        raise ModelError(kind, exc.msg, line, offset + exc.col) from exc
    result = sp.sympify(result)
    try:
        check_supported(result)
    except ExpressionError as exc:
        raise ModelError("syntax", str(exc), line, offset + 1) from exc
    return result


# --- Model ---

@dataclass(frozen=True)
class ModelSpec:
    """A validated model: Lagrangian, first-class constraints and their algebra."""
    name: str
    space: PhaseSpace
    lagrangian: sp.Expr
    constraints: Tuple[Tuple[str, sp.Expr], ...]
    hamiltonian: sp.Expr
    structure: Tuple[Tuple[Tuple[int, int, int], sp.Expr], ...] = ()
    domain: Tuple[sp.Expr, ...] = ()
    rebase: Optional[Tuple[Tuple[sp.Expr, ...], ...]] = None
    parameters: Tuple[Tuple[sp.Symbol, sp.Expr], ...] = ()

    @property
    def n(self) -> int:
        return self.space.n

    @property
    def m(self) -> int:
        return len(self.constraints)

    @property
    def G(self) -> Tuple[sp.Expr, ...]:
        return tuple(g for _, g in self.constraints)

    def C(self, mu: int, nu: int, gamma: int) -> sp.Expr:
        """Structure function C_{mu nu}^gamma (0-based), antisymmetric in mu, nu."""
        if mu == nu:
            return sp.S.Zero
        lookup = dict(self.structure)
        if mu < nu:
            return lookup.get((mu, nu, gamma), sp.S.Zero)
        return -lookup.get((nu, mu, gamma), sp.S.Zero)

    def structure_array(self) -> np.ndarray:
        m = self.m
        out = object_array((m, m, m))
        for (mu, nu, gamma), expr in self.structure:
            out[mu, nu, gamma] = expr
            out[nu, mu, gamma] = -expr
        return out

    def rebase_matrix(self) -> Optional[np.ndarray]:
        if self.rebase is None:
            return None
        return np.array(self.rebase, dtype=object)


@dataclass(frozen=True)
class SamplePoint:
    q: Tuple[float, ...]
    v: Tuple[float, ...]
    a: Tuple[float, ...]


def stack_points(points: Sequence[SamplePoint]) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    q = np.array([p.q for p in points], dtype=float)
    v = np.array([p.v for p in points], dtype=float)
    a = np.array([p.a for p in points], dtype=float)
    return q, v, a


_ALLOWED = {
    "lagrangian": (SymbolKind.COORDINATE, SymbolKind.VELOCITY),
    "domain": (SymbolKind.COORDINATE, SymbolKind.VELOCITY),
    "constraint": (SymbolKind.COORDINATE, SymbolKind.MOMENTUM),
    "structure": (SymbolKind.COORDINATE, SymbolKind.MOMENTUM),
    "hamiltonian": (SymbolKind.COORDINATE, SymbolKind.MOMENTUM),
    "rebase": (SymbolKind.COORDINATE, SymbolKind.MOMENTUM),
}

_REQUIRED = ("model", "dim", "gauge", "coords", "lagrangian", "hamiltonian")


@dataclass
class _Draft:
    name: Optional[str] = None
    n: Optional[int] = None
    m: Optional[int] = None
    space: Optional[PhaseSpace] = None
    lagrangian: Optional[sp.Expr] = None
    hamiltonian: Optional[sp.Expr] = None
    constraints: List[Tuple[str, sp.Expr]] = field(default_factory=list)
    structure: Dict[Tuple[int, int, int], sp.Expr] = field(default_factory=dict)
    domain: List[sp.Expr] = field(default_factory=list)
    rebase: Dict[Tuple[int, int], sp.Expr] = field(default_factory=dict)
    parameters: Dict[sp.Symbol, sp.Expr] = field(default_factory=dict)
    seen: set = field(default_factory=set)


def _symbol_table(space: PhaseSpace, section: str) -> Dict[str, sp.Symbol]:
    table = {symbol.name: symbol for symbol in space.params}
    for kind in _ALLOWED[section]:
        for symbol in space.family(kind):
            table[symbol.name] = symbol
    return table


def _integer(token: str, what: str, line: int, col: int) -> int:
    if not re.fullmatch(r"\d+", token):
        raise ModelError("syntax", f"{what} must be a positive integer, got '{token}'", line, col)
    return int(token)


def _index(token: str, upper: int, what: str, line: int, col: int) -> int:
    value = _integer(token, what, line, col)
    if not 1 <= value <= upper:
        raise ModelError("arity", f"{what} {value} out of range 1..{upper}", line, col)
    return value - 1


def _split(body: str, count: int) -> List[Tuple[str, int]]:
    """Splits off count leading words; returns (word, 1-based col) pairs plus the remainder."""
    out = []
    pos = 0
    for _ in range(count):
        match = re.compile(r"\s*(\S+)").match(body, pos)
        if match is None:
            return out
        out.append((match.group(1), match.start(1) + 1))
        pos = match.end()
    rest = body[pos:]
    stripped = rest.lstrip()
    out.append((stripped.rstrip(), pos + len(rest) - len(stripped) + 1))
    return out


def parse_model(text: str) -> ModelSpec:
    draft = _Draft()
    for number, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].rstrip()
        if not line.strip():
            continue
        _parse_line(draft, line, number)
    return _finish(draft)


def _need_space(draft: _Draft, keyword: str, line: int) -> PhaseSpace:
    if draft.space is None:
        raise ModelError("missing-section", f"missing section: coords (must precede '{keyword}')", line, 1)
    return draft.space


def _parse_line(draft: _Draft, line: str, number: int) -> None:
    parts = _split(line, 1)
    keyword, _ = parts[0]
    body, body_col = parts[1] if len(parts) > 1 else ("", len(line) + 1)

    if keyword in ("model", "dim", "gauge", "coords", "lagrangian", "hamiltonian") and keyword in draft.seen:
        raise ModelError("syntax", f"duplicate section: {keyword}", number, 1)
    draft.seen.add(keyword)

    if keyword == "model":
        if not re.fullmatch(r"[A-Za-z0-9_.\-]+", body):
            raise ModelError("syntax", "model name must be a single word", number, body_col)
        draft.name = body
    elif keyword == "dim":
        draft.n = _integer(body, "dim", number, body_col)
    elif keyword == "gauge":
        draft.m = _integer(body, "gauge", number, body_col)
    elif keyword == "coords":
        if draft.n is None:
            raise ModelError("missing-section", "missing section: dim (must precede 'coords')", number, 1)
        names = body.split()
        if len(names) != draft.n:
            raise ModelError("arity", f"coords lists {len(names)} names but dim is {draft.n}", number, body_col)
        for name in names:
            if not re.fullmatch(r"[A-Za-z_][A-Za-z0-9_]*", name) or name in _FUNCTION_MAP:
                raise ModelError("syntax", f"invalid coordinate name '{name}'", number, body_col)
        try:
            draft.space = PhaseSpace.from_coords(names)
        except ValueError as exc:
            raise ModelError("syntax", str(exc), number, body_col) from exc
    elif keyword == "param":
        space = _need_space(draft, keyword, number)
        fields = _split(body, 1)
        if len(fields) < 2 or not fields[1][0]:
            raise ModelError("syntax", "param lines read 'param <name> <value>'", number, body_col)
        (name, _), (value_text, value_col) = fields
        if not re.fullmatch(r"[A-Za-z_][A-Za-z0-9_]*", name) or name in _FUNCTION_MAP:
            raise ModelError("syntax", f"invalid parameter name '{name}'", number, body_col)
        value = parse_expression(value_text, {}, number, body_col + value_col - 2)
        try:
            draft.space = space.with_parameter(name)
        except ValueError as exc:
            raise ModelError("syntax", str(exc), number, body_col) from exc
        draft.parameters[draft.space.params[-1]] = value
    elif keyword == "domain":
        space = _need_space(draft, keyword, number)
        match = re.fullmatch(r"(.*\S)\s*>\s*0", body)
        if match is None:
            raise ModelError("syntax", "domain lines read 'domain <expr> > 0'", number, body_col)
        draft.domain.append(parse_expression(match.group(1), _symbol_table(space, "domain"), number, body_col - 1))
    elif keyword == "lagrangian":
        space = _need_space(draft, keyword, number)
        draft.lagrangian = parse_expression(body, _symbol_table(space, "lagrangian"), number, body_col - 1)
    elif keyword == "hamiltonian":
        space = _need_space(draft, keyword, number)
        draft.hamiltonian = parse_expression(body, _symbol_table(space, "hamiltonian"), number, body_col - 1)
    elif keyword == "constraint":
        space = _need_space(draft, keyword, number)
        fields = _split(body, 1)
        if len(fields) < 2 or not fields[1][0]:
            raise ModelError("syntax", "constraint lines read 'constraint <id> <expr>'", number, body_col)
        (name, _), (expr_text, expr_col) = fields
        if any(existing == name for existing, _ in draft.constraints):
            raise ModelError("duplicate-constraint", f"duplicate constraint name '{name}'", number, body_col)
        offset = body_col + expr_col - 2
        g = parse_expression(expr_text, _symbol_table(space, "constraint"), number, offset)
        if not g.free_symbols & set(space.p):
            raise ModelError("invalid-model", f"constraint '{name}' does not depend on any momentum", number, offset + 1)
        draft.constraints.append((name, g))
    elif keyword == "structure":
        space = _need_space(draft, keyword, number)
        if draft.m is None:
            raise ModelError("missing-section", "missing section: gauge (must precede 'structure')", number, 1)
        fields = _split(body, 3)
        if len(fields) < 4 or not fields[3][0]:
            raise ModelError("syntax", "structure lines read 'structure <a> <b> <c> <expr>'", number, body_col)
        a, b, c = (_index(tok, draft.m, "structure index", number, body_col + col - 1) for tok, col in fields[:3])
        offset = body_col + fields[3][1] - 2
        expr = parse_expression(fields[3][0], _symbol_table(space, "structure"), number, offset)
        if a == b:
            if expr != 0:
                raise ModelError("antisymmetry", "structure functions antisymmetric: diagonal must vanish", number, body_col)
            return
        if a > b:
            raise ModelError("antisymmetry", "structure functions antisymmetric: give entries with a < b only", number, body_col)
        if (a, b, c) in draft.structure:
            raise ModelError("syntax", f"duplicate structure entry {a + 1} {b + 1} {c + 1}", number, body_col)
        draft.structure[(a, b, c)] = expr
    elif keyword == "rebase":
        space = _need_space(draft, keyword, number)
        if draft.m is None:
            raise ModelError("missing-section", "missing section: gauge (must precede 'rebase')", number, 1)
        fields = _split(body, 2)
        if len(fields) < 3 or not fields[2][0]:
            raise ModelError("syntax", "rebase lines read 'rebase <a> <b> <expr>'", number, body_col)
        a, b = (_index(tok, draft.m, "rebase index", number, body_col + col - 1) for tok, col in fields[:2])
        offset = body_col + fields[2][1] - 2
        draft.rebase[(a, b)] = parse_expression(fields[2][0], _symbol_table(space, "rebase"), number, offset)
    else:
        raise ModelError("syntax", f"unknown keyword '{keyword}'", number, 1)


def _finish(draft: _Draft) -> ModelSpec:
    for section in _REQUIRED:
        if section not in draft.seen:
            raise ModelError("missing-section", f"missing section: {section}")
    if not 1 <= draft.m < draft.n:
        raise ModelError("arity", f"gauge must satisfy 1 <= m < n, got m={draft.m}, n={draft.n}")
    if len(draft.constraints) != draft.m:
        raise ModelError("arity", f"expected {draft.m} constraints, found {len(draft.constraints)}")
    # Parameters are bound here; everything downstream sees constants.
    values = dict(draft.parameters)

    def bind(e: sp.Expr) -> sp.Expr:
        return e.xreplace(values) if values else e

    rebase = None
    if draft.rebase:
        rebase = tuple(
            tuple(bind(draft.rebase.get((a, b), sp.S.One if a == b else sp.S.Zero)) for b in range(draft.m))
            for a in range(draft.m)
        )
    spec = ModelSpec(
        name=draft.name,
        space=draft.space,
        lagrangian=bind(draft.lagrangian),
        constraints=tuple((name, bind(g)) for name, g in draft.constraints),
        hamiltonian=bind(draft.hamiltonian),
        structure=tuple(sorted(((key, bind(e)) for key, e in draft.structure.items()), key=lambda item: item[0])),
        domain=tuple(bind(d) for d in draft.domain),
        rebase=rebase,
        parameters=tuple(draft.parameters.items()),
    )
    logger.debug(f"Parsed model {spec.name}: n={spec.n}, m={spec.m}")
    return spec


def load_model(path: str) -> ModelSpec:
    with open(path, "r", encoding="utf-8") as f:
        spec = parse_model(f.read())
    logger.info(f"Loaded model {spec.name} from {path} (n={spec.n}, m={spec.m})")
    return spec


# --- Rendering ---

class ModelPrinter(StrPrinter):
    """Prints expressions in the model file grammar ('^' powers, ln, exp(1))."""

    def _print_Pow(self, expr, rational=False):
        base, exponent = expr.args
        if exponent == sp.S.Half:
            return f"sqrt({self._print(base)})"
        if exponent.is_negative:
            return f"1/{self.parenthesize(sp.Pow(base, -exponent, evaluate=False), precedence(expr) + 1)}"
        if base.is_Symbol or isinstance(base, sp.Function):
            text = self._print(base)
        else:
            text = f"({self._print(base)})"
        if exponent.is_Integer:
            return f"{text}^{exponent}"
        return f"{text}^({exponent.p}/{exponent.q})"

    def _print_Mul(self, expr):
        # A rational coefficient goes first so 'x^2/3' is never printed.
        coeff, rest = expr.as_coeff_Mul()
        if coeff.is_Rational and coeff.q != 1 and rest != 1:
            sign = "-" if coeff < 0 else ""
            return f"{sign}{abs(coeff.p)}/{coeff.q}*{self.parenthesize(rest, precedence(expr))}"
        return super()._print_Mul(expr)

    def _print_log(self, expr):
        return f"ln({self._print(expr.args[0])})"

    def _print_Exp1(self, expr):
        return "exp(1)"


def render_expression(e: sp.Expr) -> str:
    return ModelPrinter().doprint(e)


def render_model(spec: ModelSpec) -> str:
    lines = [
        f"model {spec.name}",
        f"dim {spec.n}",
        f"gauge {spec.m}",
        "coords " + " ".join(s.name for s in spec.space.q),
    ]
    lines += [f"param {symbol.name} {render_expression(value)}" for symbol, value in spec.parameters]
    lines += [f"domain {render_expression(d)} > 0" for d in spec.domain]
    lines.append(f"lagrangian {render_expression(spec.lagrangian)}")
    lines += [f"constraint {name} {render_expression(g)}" for name, g in spec.constraints]
    lines += [f"structure {a + 1} {b + 1} {c + 1} {render_expression(e)}" for (a, b, c), e in spec.structure]
    lines.append(f"hamiltonian {render_expression(spec.hamiltonian)}")
    if spec.rebase is not None:
        for a, row in enumerate(spec.rebase):
            for b, entry in enumerate(row):
                if entry != (1 if a == b else 0):
                    lines.append(f"rebase {a + 1} {b + 1} {render_expression(entry)}")
    return "\n".join(lines) + "\n"


# --- Sampling ---

class _Rejected(Exception):
    """A draw fell outside the model domain."""
    pass


def in_domain(spec: ModelSpec, point: SamplePoint) -> bool:
    bindings = dict(zip(spec.space.q, point.q))
    bindings.update(zip(spec.space.v, point.v))
    for predicate in spec.domain:
        try:
            if evaluate(predicate, bindings) <= 0.0:
                return False
        except ExpressionError as exc:
            if exc.kind != "domain-error":
                raise
            return False
    return True


def sample_points(spec: ModelSpec, count: int, seed: int) -> List[SamplePoint]:
    """
    Uniform draws of (q, q_dot, q_ddot) from the sampling box, rejected until
    every domain predicate is positive. Deterministic for a given seed.
    """
    rng = np.random.default_rng(seed)
    n = spec.n

    def attempt() -> SamplePoint:
        draw = rng.uniform(SAMPLE_LOW, SAMPLE_HIGH, size=3 * n)
        point = SamplePoint(tuple(draw[:n]), tuple(draw[n:2 * n]), tuple(draw[2 * n:]))
        if not in_domain(spec, point):
            raise _Rejected()
        return point

    retryer = Retrying(
        stop=stop_after_attempt(MAX_REJECTIONS),
        retry=retry_if_exception_type(_Rejected),
        reraise=True,
    )
    points = []
    for index in range(count):
        try:
            points.append(retryer(attempt))
        except (_Rejected, RetryError) as exc:
            raise ModelError(
                "domain-too-small",
                f"domain-too-small: {MAX_REJECTIONS} consecutive rejections while drawing point {index} for {spec.name}",
            ) from exc
    logger.debug(f"Sampled {count} points for {spec.name} with seed {seed}")
    return points


def sample_phase_points(spec: ModelSpec, count: int, seed: int) -> Tuple[np.ndarray, np.ndarray]:
    """Off-surface (q, p) draws for identities that hold on all of phase space."""
    rng = np.random.default_rng([seed, spec.n, spec.m])
    q = rng.uniform(SAMPLE_LOW, SAMPLE_HIGH, size=(count, spec.n))
    p = rng.uniform(SAMPLE_LOW, SAMPLE_HIGH, size=(count, spec.n))
    return q, p
