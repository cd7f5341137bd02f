import os
import json
import logging
from dataclasses import dataclass, field
from typing import Dict, Optional, Tuple

from core.config import (
    CORPUS_DIR, CORPUS_EXPECTATIONS, DEFAULT_SAMPLES, DEFAULT_SEED, IDENTITY_TOL, MODEL_SUFFIX,
    MUTANT_DIR, MUTANT_MIN_RESIDUAL, MUTANT_RESIDUAL_TOL,
)
from core.hamilton import resolve
from core.modeldsl import load_model
from core.verify import fd_oracle, run_suite

logger = logging.getLogger(__name__)

NONZERO = "nonzero"


@dataclass(frozen=True)
class CorpusEntry:
    name: str
    path: str
    n: int
    m: int
    mutant: bool
    expected: Dict = field(default_factory=dict)


@dataclass(frozen=True)
class ModelOutcome:
    """What checking one corpus file produced, and whether it matched expectations."""
    name: str
    mutant: bool
    passed: bool
    confirmed: bool
    failing: Tuple[str, ...] = ()
    magnitudes: Dict[str, float] = field(default_factory=dict)
    error: Optional[str] = None


def load_expectations(path: str = CORPUS_EXPECTATIONS) -> Dict:
    if not os.path.exists(path):
        logger.warning(f"No corpus expectations at {path}")
        return {"models": {}, "mutants": {}}
    with open(path, encoding="utf-8") as handle:
        return json.load(handle)


def _model_files(directory: str) -> Tuple[str, ...]:
    if not os.path.isdir(directory):
        return ()
    return tuple(sorted(
        os.path.join(directory, name) for name in os.listdir(directory) if name.endswith(MODEL_SUFFIX)
    ))


def list_corpus(directory: str = CORPUS_DIR, mutant_directory: str = MUTANT_DIR,
                expectations: Optional[Dict] = None) -> Tuple[CorpusEntry, ...]:
    expectations = expectations if expectations is not None else load_expectations()
    entries = []
    for mutant, folder in ((False, directory), (True, mutant_directory)):
        table = expectations.get("mutants" if mutant else "models", {})
        for path in _model_files(folder):
            spec = load_model(path)
            entries.append(CorpusEntry(spec.name, path, spec.n, spec.m, mutant, table.get(spec.name, {})))
    return tuple(entries)


def _magnitudes_match(expected: Dict, measured: Dict[str, float]) -> bool:
    for tensor, value in expected.items():
        if tensor not in measured:
            continue
        if value == NONZERO:
            if measured[tensor] <= IDENTITY_TOL:
                return False
        elif abs(measured[tensor] - float(value)) > IDENTITY_TOL:
            return False
    return True


def _mutant_confirmed(expected: Dict, failures) -> bool:
    """The named check fails clearly, and by the recorded residual when one is given."""
    target = expected.get("fails")
    recorded = expected.get("residual")
    for check in failures:
        if check.id != target or check.max_residual <= MUTANT_MIN_RESIDUAL:
            continue
        if recorded is None or abs(check.max_residual - float(recorded)) <= MUTANT_RESIDUAL_TOL:
            return True
    return False


def check_model(entry: CorpusEntry, seed: int = DEFAULT_SEED, count: int = DEFAULT_SAMPLES,
                tol: float = IDENTITY_TOL) -> ModelOutcome:
    """
    Full check of one corpus file. Runs in a worker process, so it takes
    the entry (a path) rather than a parsed model.
    """
    spec = resolve(load_model(entry.path))
    report = run_suite(spec, seed, count, tol)
    oracle = fd_oracle(spec, seed, count)
    report = report.with_checks(oracle.checks)
    failing = tuple(check.id for check in report.failures)

    if entry.mutant:
        confirmed = _mutant_confirmed(entry.expected, report.failures)
    else:
        confirmed = report.passed and _magnitudes_match(entry.expected, report.tensor_magnitudes)
    logger.info(f"{entry.name}: passed={report.passed} confirmed={confirmed} failing={list(failing)}")
    return ModelOutcome(entry.name, entry.mutant, report.passed, confirmed, failing, report.tensor_magnitudes)
