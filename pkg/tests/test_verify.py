import json

import pytest

from core.modeldsl import sample_points
from core.verify import CheckError, REGISTRY, check_ids, fd_oracle, identity_residual, run_suite
from helpers import corpus_model, corpus_names, point


@pytest.mark.parametrize("seed", [1, 42, 2024])
@pytest.mark.parametrize("name", corpus_names())
def test_suite_passes_on_corpus(name, seed):
    report = run_suite(corpus_model(name), seed=seed, count=100)
    assert report.passed, [(c.id, c.max_residual) for c in report.failures]
    assert [c.id for c in report.checks] == list(check_ids())


def test_free_sqrt_suite_flags_vacuous_checks():
    report = run_suite(corpus_model("free-sqrt"), seed=42, count=30)
    assert report.check("1.30").vacuous
    assert report.check("2.54=2.55").vacuous
    assert not report.check("1.6").vacuous
    assert report.tensor_magnitudes == {"T": 0.0, "E": 0.0, "D": 0.0, "M": 0.0}


def test_rebased_suite_reports_nonzero_structure():
    report = run_suite(corpus_model("double-root-rebased-q"), seed=42, count=30)
    magnitudes = report.tensor_magnitudes
    assert magnitudes["T"] > 0.1
    assert magnitudes["E"] <= 1e-12
    assert magnitudes["D"] <= 1e-12

    report = run_suite(corpus_model("triple-root-rebased"), seed=42, count=30)
    for check_id in ("1.381", "1.382", "1.41", "1.45", "2.54=2.55"):
        check = report.check(check_id)
        assert check.passed and not check.vacuous, check_id


@pytest.mark.parametrize("name, check_id", [
    ("free-sqrt-badG", "2.8"),
    ("free-sqrt-broken-L", "1.9"),
    ("double-root-rebased-q-badC", "2.24"),
])
def test_mutants_fail_their_check(name, check_id):
    report = run_suite(corpus_model(name, mutant=True), seed=42, count=50)
    assert not report.passed
    check = report.check(check_id)
    assert not check.passed
    assert check.max_residual > 1e-3


def test_bad_constraint_residual():
    report = run_suite(corpus_model("free-sqrt-badG", mutant=True), seed=7, count=20)
    assert report.check("2.8").max_residual == pytest.approx(0.05, abs=1e-12)


def test_report_json_is_deterministic():
    spec = corpus_model("double-root-rebased-q")
    first = run_suite(spec, seed=3, count=20).to_json()
    second = run_suite(spec, seed=3, count=20).to_json()
    assert first == second
    payload = json.loads(first)
    assert payload["model"] == "double-root-rebased-q"
    assert payload["passed"] is True
    assert {"id", "max_residual", "passed", "vacuous"} <= set(payload["checks"][0])


def test_identity_residual_at_a_point():
    assert identity_residual(corpus_model("free-sqrt"), "1.25", point((0.3, -1), (0.5, 1.5))) <= 1e-12
    reference = point((0, 0, 0, 0), (1, 1, 4, 1))
    assert identity_residual(corpus_model("double-root-rebased-p"), "1.23", reference) <= 1e-9
    assert identity_residual(corpus_model("double-root-rebased-p"), "1.24", reference) <= 1e-9
    bad = corpus_model("free-sqrt-badG", mutant=True)
    assert identity_residual(bad, "2.8", point((0, 0), (1, 2))) == pytest.approx(0.05, abs=1e-12)


def test_identity_residual_unknown_check(free_sqrt):
    with pytest.raises(CheckError) as excinfo:
        identity_residual(free_sqrt, "9.99", point((0, 0), (1, 1)))
    assert excinfo.value.kind == "unknown-check"


def test_registry_ids_are_reported():
    ids = check_ids()
    assert ids[:5] == ("1.5", "2.2", "2.8", "2.7", "1.6-kernel")
    assert {identity.id for identity in REGISTRY} <= set(ids)
    assert len(ids) == len(set(ids))


def test_fd_oracle_passes_on_corpus():
    report = fd_oracle(corpus_model("free-sqrt"), seed=42, count=30)
    assert report.passed
    assert report.root_causes == ()
    assert any(c.id == "fd:W" for c in report.checks)

    report = fd_oracle(corpus_model("triple-root-rebased"), seed=42, count=30)
    assert report.passed
    cp = next(c for c in report.checks if c.id == "fd:Cp")
    assert cp.max_residual <= 1e-6


def test_fd_oracle_localizes_corruption():
    spec = corpus_model("free-sqrt")
    report = fd_oracle(spec, seed=42, count=30, corrupt=("W", (0, 0), 1e-3))
    assert not report.passed
    assert report.root_causes == ("W",)
    assert "1.6" in report.blast_radius["W"]
    assert "2.30" in report.blast_radius["W"]
    assert "2.8" not in report.blast_radius["W"]


def test_fd_oracle_rejects_source_corruption(free_sqrt):
    with pytest.raises(ValueError):
        fd_oracle(free_sqrt, seed=42, count=5, corrupt=("L", (), 1e-3))
    with pytest.raises(KeyError):
        fd_oracle(free_sqrt, seed=42, count=5, corrupt=("nope", (), 1e-3))


def test_suite_is_seed_independent():
    spec = corpus_model("double-root-rebased-p")
    for seed in (1, 7):
        assert run_suite(spec, seed=seed, count=20).passed
    assert sample_points(spec, 5, 1) != sample_points(spec, 5, 7)
