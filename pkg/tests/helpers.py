import os

import sympy as sp

from core.config import CORPUS_DIR, MODEL_SUFFIX, MUTANT_DIR
from core.hamilton import resolve
from core.exprcore import evaluate
from core.modeldsl import ModelSpec, SamplePoint, load_model, parse_model


def corpus_path(name: str, mutant: bool = False) -> str:
    return os.path.join(MUTANT_DIR if mutant else CORPUS_DIR, f"{name}.gsf")


def corpus_text(name: str, mutant: bool = False) -> str:
    with open(corpus_path(name, mutant), encoding="utf-8") as handle:
        return handle.read()


def corpus_model(name: str, mutant: bool = False):
    return resolve(load_model(corpus_path(name, mutant)))


def point(q, v, a=None) -> SamplePoint:
    a = a if a is not None else [0.0] * len(q)
    return SamplePoint(tuple(map(float, q)), tuple(map(float, v)), tuple(map(float, a)))


def make_model(lagrangian: str, constraint: str = "p2", hamiltonian: str = "0", domain=()) -> ModelSpec:
    """A two-coordinate, one-constraint model around an arbitrary Lagrangian."""
    lines = ["model scratch", "dim 2", "gauge 1", "coords q1 q2"]
    lines += [f"domain {d} > 0" for d in domain]
    lines += [f"lagrangian {lagrangian}", f"constraint G1 {constraint}", f"hamiltonian {hamiltonian}"]
    return parse_model("\n".join(lines))


def at(expr, space, q=(), v=(), a=(), p=()) -> float:
    """Evaluates one entry of an IndexedExpr at explicit coordinates."""
    bindings = {}
    for symbols, values in ((space.q, q), (space.v, v), (space.a, a), (space.p, p)):
        bindings.update(zip(symbols, map(float, values)))
    return evaluate(sp.sympify(expr), bindings)


def corpus_names(mutant: bool = False):
    folder = MUTANT_DIR if mutant else CORPUS_DIR
    return sorted(name[:-len(MODEL_SUFFIX)] for name in os.listdir(folder) if name.endswith(MODEL_SUFFIX))
