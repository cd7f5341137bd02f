import numpy as np
import pytest

from core.config import AMBIGUITY_TOL
from core.jets import jet_table, numeric_jets
from core.modeldsl import sample_points
from core.structure import (
    REBASE_FAMILIES, StructureError, ambiguity_shift, explore_rebase_family, m_hamiltonian_of, m_of,
    structure_tensors, tensor_A, tensor_b, tensor_D, tensor_E, tensor_M, tensor_T,
)
from core.verify import run_suite
from helpers import at, corpus_model, corpus_names, point

REFERENCE = point((0, 0, 0, 0), (1, 1, 4, 1))

# E_12^{ij} of double-root-rebased-p at q = 0, v = (1, 1, 4, 1)
E12_REFERENCE = np.array([
    [0.0, 0.0, -3 / 32, -1 / 128],
    [0.0, 0.0, 1 / 32, 3 / 128],
    [3 / 32, -1 / 32, 0.0, 0.0],
    [1 / 128, -3 / 128, 0.0, 0.0],
])


def test_t_vanishes_for_abelian_models(free_sqrt, rebased_p):
    assert not tensor_T(free_sqrt).nonzero()
    assert not tensor_T(rebased_p).nonzero()


def test_t_of_coordinate_rebase(rebased_q):
    T = tensor_T(rebased_q)
    assert [index for index, _ in T.nonzero()] == [(0, 1, 1), (1, 0, 1)]
    assert at(T[0, 1, 1], rebased_q.space, v=(1, 1, 1, 1)) == pytest.approx(0.5)
    assert at(T[1, 0, 1], rebased_q.space, v=(1, 1, 1, 1)) == pytest.approx(-0.5)


def test_b_tensor(free_sqrt, relativistic):
    b = tensor_b(free_sqrt)
    assert b[0, 0, 1] == 1 and b[0, 1, 0] == 1
    assert b[0, 0, 0] == 0 and b[0, 1, 1] == 0
    b = tensor_b(relativistic)
    assert (b[0, 0, 0], b[0, 1, 1], b[0, 0, 1]) == (1, -1, 0)


def test_e_vanishes_for_natural_bases(free_sqrt, double_root):
    assert not tensor_E(free_sqrt).nonzero()
    tensors = structure_tensors(double_root, sample_points(double_root, 100, 0))
    assert np.max(np.abs(tensors.E)) <= 1e-12


def test_e_of_momentum_rebase_at_reference_point(rebased_p):
    tensors = structure_tensors(rebased_p, [REFERENCE])
    assert np.allclose(tensors.E[0, 0, 1], E12_REFERENCE, atol=1e-12)
    assert np.allclose(tensors.E[0, 1, 0], -E12_REFERENCE, atol=1e-12)
    assert np.allclose(tensors.E[0, 0, 0], 0.0)


def test_third_and_fourth_order_vanish_below_three_generators(rebased_q):
    assert not tensor_D(rebased_q).nonzero()
    assert not tensor_A(rebased_q).nonzero()
    assert not tensor_M(rebased_q).nonzero()


def test_triple_rebased_tensors_are_nonzero(triple_rebased):
    magnitudes = structure_tensors(triple_rebased, sample_points(triple_rebased, 50, 0)).magnitudes()
    assert magnitudes["T"] > 1e-3
    assert magnitudes["E"] > 1e-3
    assert magnitudes["D"] > 1e-3


def test_m_forms_agree(triple_rebased):
    jv = numeric_jets(jet_table(triple_rebased), sample_points(triple_rebased, 30, 0))
    assert np.allclose(m_of(jv).value, m_hamiltonian_of(jv).value, atol=1e-9)
    tensors = structure_tensors(triple_rebased, sample_points(triple_rebased, 30, 0))
    assert tensors.M.shape == (30, 3, 3, 3, 6, 6, 6)
    assert tensors.P1.shape == (30, 6, 3, 6)
    assert tensors.P2.shape == (30, 6, 3, 3, 6, 6)


def test_zero_shift_is_identity(rebased_p):
    tensors = structure_tensors(rebased_p, sample_points(rebased_p, 10, 0))
    shifted = ambiguity_shift(tensors, None, None)
    assert np.array_equal(shifted.E, tensors.E)
    assert np.array_equal(shifted.D, tensors.D)


def test_shift_must_be_antisymmetric(rebased_p):
    tensors = structure_tensors(rebased_p, sample_points(rebased_p, 5, 0))
    e = np.zeros((2, 2, 2, 2))
    e[0, 1, 0, 1] = 1.0
    with pytest.raises(StructureError) as excinfo:
        ambiguity_shift(tensors, e, None)
    assert excinfo.value.kind == "ambiguity-antisymmetry"
    with pytest.raises(StructureError) as excinfo:
        ambiguity_shift(tensors, np.zeros((2, 2, 2)), None)
    assert excinfo.value.kind == "ambiguity-shape"


@pytest.mark.parametrize("name", corpus_names())
def test_shift_leaves_residuals_unchanged(name):
    spec = corpus_model(name)
    m = spec.m
    rng = np.random.default_rng(11)
    e = rng.normal(size=(m,) * 4)
    e = e - np.swapaxes(e, 0, 1)
    d = rng.normal(size=(m,) * 5)

    plain = run_suite(spec, seed=5, count=30)
    shifted = run_suite(spec, seed=5, count=30, shift=(e, d))
    assert plain.passed and shifted.passed
    if m >= 2:
        assert shifted.tensor_magnitudes["E"] != pytest.approx(plain.tensor_magnitudes["E"])
    for before, after in zip(plain.checks, shifted.checks):
        assert before.id == after.id
        assert abs(before.max_residual - after.max_residual) <= AMBIGUITY_TOL, before.id


def test_explore_is_deterministic():
    base = corpus_model("triple-root")
    report = explore_rebase_family(base, "mixed", seed=0, count=5, samples=10)
    again = explore_rebase_family(base, "mixed", seed=0, count=5, samples=10)
    assert report.witnesses == again.witnesses
    assert 0 < len(report.witnesses) <= 5
    assert report.best.max_d == max(w.max_d for w in report.witnesses)
    assert report.found == (report.best.max_d > 1e-8)
    for witness in report.witnesses:
        assert [slot for slot, _ in witness.entries] == list(REBASE_FAMILIES["mixed"])


def test_explore_rejects_small_models(double_root):
    with pytest.raises(ValueError):
        explore_rebase_family(double_root)
    with pytest.raises(KeyError):
        explore_rebase_family(corpus_model("triple-root"), "diagonal")
    assert "mixed" in REBASE_FAMILIES
