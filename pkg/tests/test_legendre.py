import dataclasses

import numpy as np
import pytest

from core.jets import jet_table, numeric_jets
from core.legendre import (
    LegendreError, check_hc, gauge_generators, kernel_check, matrix_rank, multipliers, pullback, pullback_map,
    transport_checks, validate_model,
)
from core.modeldsl import sample_points
from helpers import at, corpus_model, corpus_names, make_model, point


def test_pullback_of_momentum(free_sqrt):
    pm = pullback_map(free_sqrt)
    space = free_sqrt.space
    p1 = space.p[0]
    assert at(pullback(p1, pm), space, v=(1, 1)) == pytest.approx(0.5)
    assert at(pullback(p1, pm), space, v=(1, 4)) == pytest.approx(1.0)
    assert pullback(space.q[0], pm) == space.q[0]


def test_pullback_rejects_velocities(free_sqrt):
    pm = pullback_map(free_sqrt)
    with pytest.raises(LegendreError) as excinfo:
        pullback(free_sqrt.space.v[0], pm)
    assert excinfo.value.kind == "velocity-input"


def test_gauge_generators(free_sqrt, relativistic, double_root):
    R = gauge_generators(free_sqrt)
    assert R.shape == (1, 2)
    assert [at(R[0, i], free_sqrt.space, v=(1, 1)) for i in range(2)] == [pytest.approx(0.5)] * 2

    R = gauge_generators(relativistic)
    assert at(R[0, 0], relativistic.space, v=(1, 0)) == pytest.approx(-1.0)
    assert at(R[0, 1], relativistic.space, v=(1, 0)) == pytest.approx(0.0)

    R = gauge_generators(double_root)
    values = [[at(R[a, i], double_root.space, v=(1, 1, 1, 1)) for i in range(4)] for a in range(2)]
    assert np.allclose(values, [[0.5, 0.5, 0, 0], [0, 0, 0.5, 0.5]])


def test_check_hc(free_sqrt, relativistic):
    for spec in (free_sqrt, relativistic):
        result = check_hc(spec, None, sample_points(spec, 50, 1))
        assert result.passed
        assert result.max_residual <= 1e-12

    p1 = free_sqrt.space.p[0]
    wrong = dataclasses.replace(free_sqrt, hamiltonian=p1)
    result = check_hc(wrong, None, sample_points(wrong, 50, 1))
    assert not result.passed
    assert result.max_residual > 0.1


def test_multipliers_free_sqrt(free_sqrt):
    result = multipliers(free_sqrt, None, [point((0, 0), (1, 1)), point((0, 0), (1, 4))])
    assert result.values[:, 0] == pytest.approx([2.0, 4.0])
    assert all(check.passed for check in result.checks)
    assert [check.id for check in result.checks] == ["2.12", "2.13", "2.17"]


def test_multipliers_relativistic(relativistic):
    result = multipliers(relativistic, None, [point((0, 0), (1, 0))])
    assert result.values[0, 0] == pytest.approx(-1.0)


def test_multipliers_over_samples(double_root):
    result = multipliers(double_root, None, sample_points(double_root, 50, 5))
    for check in result.checks:
        assert check.max_residual <= 1e-9


def test_multipliers_need_full_rank_generators():
    spec = make_model("(1/2)*v2^2", constraint="q1*p1")
    with pytest.raises(LegendreError) as excinfo:
        multipliers(spec, None, [point((1, 0), (1, 1)), point((0, 0), (1, 1))])
    assert excinfo.value.kind == "generator-rank"
    assert excinfo.value.point == 1


def test_transport_checks_hold(free_sqrt, triple_rebased):
    for spec in (free_sqrt, triple_rebased):
        results = transport_checks(spec, None, sample_points(spec, 50, 2))
        assert [c.id for c in results] == ["2.30", "2.31", "2.44", "2.45", "2.47"]
        for check in results:
            assert check.max_residual <= 1e-9, check.id


def test_perturbed_momentum_breaks_velocity_transport(free_sqrt):
    pm = pullback_map(free_sqrt).perturb(0, 0.01)
    results = {c.id: c for c in transport_checks(free_sqrt, pm, sample_points(free_sqrt, 50, 2))}
    assert not results["2.30"].passed
    assert results["2.30"].max_residual > 1e-4


def test_kernel_of_hessian_is_spanned_by_generators(double_root):
    jv = numeric_jets(jet_table(double_root), sample_points(double_root, 30, 4))
    result = kernel_check(jv)
    assert result.id == "1.6-kernel"
    assert result.passed


def test_matrix_rank_examples(free_sqrt):
    jv = numeric_jets(jet_table(free_sqrt), [point((0, 0), (1, 1))])
    assert np.allclose(jv["W"][0], [[-0.25, 0.25], [0.25, -0.25]])
    assert matrix_rank(jv["W"]).tolist() == [1]
    assert int(matrix_rank(np.eye(3))) == 3
    assert int(matrix_rank(np.zeros((2, 3)))) == 0
    assert matrix_rank(np.ones((4, 2, 3))).tolist() == [1, 1, 1, 1]


def test_matrix_rank_ignores_pivots_below_relative_threshold():
    tiny = np.array([[1e6, 0.0], [0.0, 1e-3]])
    assert int(matrix_rank(tiny)) == 1
    assert int(matrix_rank(tiny * 1e-6)) == 1
    assert int(matrix_rank(np.array([[1.0, 0.0], [0.0, 1e-6]]))) == 2


@pytest.mark.parametrize("name", corpus_names())
def test_validate_every_corpus_model(name):
    spec = corpus_model(name)
    report = validate_model(spec, sample_points(spec, 100, 42))
    assert report.passed
    assert [c.id for c in report.checks] == ["1.5", "2.2", "2.8", "2.7"]
    for check in report.checks[2:]:
        assert check.max_residual <= 1e-10, check.id


def test_validate_bad_constraint():
    spec = corpus_model("free-sqrt-badG", mutant=True)
    report = validate_model(spec, sample_points(spec, 30, 1))
    g_check = next(c for c in report.checks if c.id == "2.8")
    assert not g_check.passed
    assert g_check.max_residual == pytest.approx(0.05, abs=1e-12)


def test_validate_honours_tolerance():
    spec = corpus_model("free-sqrt-badG", mutant=True)
    report = validate_model(spec, sample_points(spec, 10, 1), tol=0.1)
    assert report.passed
    assert next(c for c in report.checks if c.id == "2.8").max_residual == pytest.approx(0.05, abs=1e-12)
