import dataclasses

from core.corpus import NONZERO, check_model, list_corpus, load_expectations


def _entry(name):
    return next(entry for entry in list_corpus() if entry.name == name)


def test_list_corpus():
    entries = list_corpus()
    assert len([e for e in entries if not e.mutant]) >= 6
    assert len([e for e in entries if e.mutant]) >= 3
    triple = _entry("triple-root-rebased")
    assert (triple.n, triple.m) == (6, 3)
    assert triple.expected["D"] == NONZERO


def test_every_model_has_expectations():
    expectations = load_expectations()
    for entry in list_corpus():
        table = expectations["mutants" if entry.mutant else "models"]
        assert entry.name in table, entry.name


def test_missing_expectations_file(tmp_path):
    assert load_expectations(str(tmp_path / "none.json")) == {"models": {}, "mutants": {}}


def test_check_model_confirms_mutant():
    outcome = check_model(_entry("free-sqrt-broken-L"), seed=3, count=20)
    assert outcome.mutant
    assert not outcome.passed
    assert outcome.confirmed
    assert "1.9" in outcome.failing


def test_check_model_flags_expectation_mismatch():
    entry = _entry("double-root")
    assert check_model(entry, seed=3, count=10).confirmed
    wrong = dataclasses.replace(entry, expected={"T": NONZERO})
    outcome = check_model(wrong, seed=3, count=10)
    assert outcome.passed
    assert not outcome.confirmed


def test_check_model_compares_recorded_mutant_residual():
    entry = _entry("free-sqrt-badG")
    assert entry.expected["residual"] == 0.05
    assert check_model(entry, seed=3, count=10).confirmed
    moved = dataclasses.replace(entry, expected={"fails": "2.8", "residual": 0.2})
    outcome = check_model(moved, seed=3, count=10)
    assert "2.8" in outcome.failing
    assert not outcome.confirmed
