import pytest
import sympy as sp

from core.lagrange import alpha, b_field, el_residual, hessian, noether_check
from core.legendre import gauge_generators
from core.modeldsl import sample_points
from helpers import at, corpus_model, make_model


def test_hessian_free_sqrt(free_sqrt):
    W = hessian(free_sqrt)
    space = free_sqrt.space
    expected = [[-0.25, 0.25], [0.25, -0.25]]
    for i in range(2):
        for j in range(2):
            assert at(W[i, j], space, v=(1, 1)) == pytest.approx(expected[i][j])


def test_hessian_quadratic_is_identity():
    W = hessian(make_model("(1/2)*(v1^2 + v2^2)"))
    assert W[0, 0] == 1 and W[1, 1] == 1
    assert W[0, 1] == 0 and W[1, 0] == 0


def test_hessian_relativistic(relativistic):
    W = hessian(relativistic)
    space = relativistic.space
    values = [[at(W[i, j], space, v=(1, 0)) for j in range(2)] for i in range(2)]
    assert values == [[pytest.approx(0.0), pytest.approx(0.0)], [pytest.approx(0.0), pytest.approx(1.0)]]


def test_hessian_is_symmetric(relativistic):
    W = hessian(relativistic)
    assert sp.simplify(W[0, 1] - W[1, 0]) == 0


def test_alpha_examples(free_sqrt, double_root):
    assert all(entry == 0 for entry in alpha(free_sqrt).entries)
    assert all(entry == 0 for entry in alpha(double_root).entries)
    forced = alpha(make_model("(1/2)*v1^2 - q1"))
    assert forced[0] == -1
    assert forced[1] == 0


def test_el_residual_examples(free_sqrt):
    spec = make_model("(1/2)*v1^2")
    a1 = spec.space.a[0]
    assert el_residual(spec)[0] == a1

    L = el_residual(free_sqrt)
    space = free_sqrt.space
    kernel = [at(L[i], space, v=(1, 1), a=(1, 1)) for i in range(2)]
    assert kernel == [pytest.approx(0.0), pytest.approx(0.0)]
    values = [at(L[i], space, v=(1, 1), a=(1, -1)) for i in range(2)]
    assert values == [pytest.approx(-0.5), pytest.approx(0.5)]


def test_b_field_examples(free_sqrt):
    assert not b_field(free_sqrt).nonzero()
    B = b_field(make_model("q2*v1"))
    assert B[0, 1] == 1
    assert B[1, 0] == -1
    assert B[0, 0] == 0 and B[1, 1] == 0


@pytest.mark.parametrize("name", ["free-sqrt", "relativistic-particle", "double-root-rebased-p"])
def test_noether_identities_hold(name):
    spec = corpus_model(name)
    points = sample_points(spec, 50, 3)
    for check in noether_check(spec, gauge_generators(spec), points):
        assert check.passed
        assert check.max_residual <= 1e-10


def test_noether_identities_break_without_symmetry():
    spec = corpus_model("free-sqrt-broken-L", mutant=True)
    alpha_check, el_check = noether_check(spec, None, sample_points(spec, 50, 3))
    assert alpha_check.id == "1.9"
    assert not alpha_check.passed
    assert alpha_check.max_residual > 1e-3
    assert el_check.id == "1.10"
