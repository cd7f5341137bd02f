import unittest
import dataclasses

import numpy as np
import sympy as sp

from core.exprcore import PhaseSpace
from core.hamilton import (
    RebaseError, bracket_table, first_class_check, jacobi_checks, poisson_bracket, rebase, resolve,
)
from core.modeldsl import sample_phase_points, sample_points
from helpers import corpus_model

SPACE = PhaseSpace.from_coords(["q1", "q2"])
q1, q2 = SPACE.q
p1, p2 = SPACE.p


class TestPoissonBracket(unittest.TestCase):

    def test_canonical_pair(self):
        self.assertEqual(poisson_bracket(q1, p1, SPACE), 1)
        self.assertEqual(poisson_bracket(q1, p2, SPACE), 0)

    def test_product(self):
        self.assertEqual(poisson_bracket(p1 * p2, q1, SPACE), -p2)

    def test_antisymmetry(self):
        f = p1 ** 2 + q1 ** 2
        self.assertEqual(poisson_bracket(f, f, SPACE), 0)
        g = q1 * p2 + sp.sin(q2)
        self.assertEqual(sp.simplify(poisson_bracket(f, g, SPACE) + poisson_bracket(g, f, SPACE)), 0)


class TestRebase(unittest.TestCase):

    @classmethod
    def setUpClass(cls):
        cls.base = corpus_model("double-root")
        cls.space = cls.base.space

    def _matrix(self, rows):
        return np.array(rows, dtype=object)

    def test_coordinate_dependent_basis(self):
        q3 = self.space.q[2]
        p4 = self.space.p[3]
        rebased = rebase(self.base, self._matrix([[sp.S.One, q3], [sp.S.Zero, sp.S.One]]))
        self.assertEqual(dict(rebased.structure), {(0, 1, 1): p4})
        self.assertEqual(rebased.C(1, 0, 1), -p4)
        self.assertIsNone(rebased.rebase)

    def test_momentum_dependent_basis_stays_abelian(self):
        p1_, p3_ = self.space.p[0], self.space.p[2]
        rebased = rebase(self.base, self._matrix([[sp.S.One, p1_], [p3_, sp.S.One]]))
        self.assertEqual(rebased.structure, ())
        self.assertEqual(sp.expand(rebased.G[0] - self.base.G[0] - p1_ * self.base.G[1]), 0)

    def test_identity_leaves_model_unchanged(self):
        rebased = rebase(self.base, self._matrix([[sp.S.One, sp.S.Zero], [sp.S.Zero, sp.S.One]]))
        self.assertEqual(rebased.G, self.base.G)
        self.assertEqual(rebased.structure, ())

    def test_singular_matrix(self):
        with self.assertRaises(RebaseError) as ctx:
            rebase(self.base, self._matrix([[sp.S.One, sp.S.One], [sp.S.One, sp.S.One]]))
        self.assertEqual(ctx.exception.kind, "singular-rebase")

    def test_matrix_singular_at_sample_points(self):
        points = [dataclasses.replace(p, q=(0.0,) + p.q[1:]) for p in sample_points(self.base, 10, 0)]
        with self.assertRaises(RebaseError) as ctx:
            rebase(self.base, self._matrix([[self.space.q[0], sp.S.Zero], [sp.S.Zero, sp.S.One]]), points)
        self.assertEqual(ctx.exception.kind, "singular-rebase")

    def test_wrong_shape(self):
        with self.assertRaises(ValueError):
            rebase(self.base, self._matrix([[sp.S.One]]))


def test_resolve_applies_rebase_lines():
    spec = corpus_model("double-root-rebased-q")
    p4 = spec.space.p[3]
    assert spec.rebase is None
    assert dict(spec.structure) == {(0, 1, 1): p4}
    assert resolve(spec) is spec


def test_bracket_table_antisymmetry():
    table = bracket_table(corpus_model("triple-root-rebased"))
    brackets = table.array()
    for mu in range(3):
        assert brackets[mu, mu] == 0
        for nu in range(3):
            assert sp.expand(brackets[mu, nu] + brackets[nu, mu]) == 0


def test_first_class_on_corpus():
    for name in ("free-sqrt", "double-root-rebased-q", "double-root-rebased-p", "triple-root-rebased"):
        spec = corpus_model(name)
        results = first_class_check(spec, None, sample_points(spec, 50, 1), sample_phase_points(spec, 50, 1))
        assert [c.id for c in results] == ["2.15", "2.22", "2.23", "2.24"]
        for check in results:
            assert check.max_residual <= 1e-10, (name, check.id)


def test_wrong_structure_function_fails_closure_off_surface():
    spec = corpus_model("double-root-rebased-q-badC", mutant=True)
    results = {c.id: c for c in first_class_check(spec, None, sample_points(spec, 50, 1),
                                                  sample_phase_points(spec, 50, 1))}
    assert not results["2.24"].passed
    assert results["2.24"].max_residual > 1e-3
    assert results["2.22"].passed


def test_jacobi_checks():
    spec = corpus_model("triple-root-rebased")
    results = jacobi_checks(spec, sample_points(spec, 50, 1), sample_phase_points(spec, 50, 1))
    assert [c.id for c in results] == ["2.26", "2.29"]
    for check in results:
        assert check.passed
        assert not check.vacuous
        assert check.max_residual <= 1e-9

    small = corpus_model("free-sqrt")
    for check in jacobi_checks(small, sample_points(small, 10, 1), sample_phase_points(small, 10, 1)):
        assert check.vacuous
