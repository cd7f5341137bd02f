import asyncio

import pytest

from core.async_utils import AsyncJobManager, verify_corpus
from core.corpus import CorpusEntry, list_corpus


def _square(n: int) -> int:
    return n * n


def _explode(n: int) -> int:
    raise RuntimeError(f"job {n} failed")


def _entries(*names):
    by_name = {entry.name: entry for entry in list_corpus()}
    return [by_name[name] for name in names]


@pytest.fixture
def manager():
    manager = AsyncJobManager(max_concurrency=2, max_cpu_workers=2)
    yield manager
    manager.shutdown()


@pytest.mark.asyncio
async def test_batched_jobs_keep_order(manager):
    results = await manager.run_batched_jobs(_square, [(n,) for n in range(6)])
    assert results == [0, 1, 4, 9, 16, 25]


@pytest.mark.asyncio
async def test_batched_jobs_return_failures_in_place(manager):
    results = await manager.run_batched_jobs(_explode, [(1,)])
    assert isinstance(results[0], RuntimeError)


@pytest.mark.asyncio
async def test_verify_corpus(manager):
    entries = _entries("free-sqrt", "double-root-rebased-q", "free-sqrt-badG")
    outcomes = await verify_corpus(entries, seed=42, count=15, manager=manager)
    assert [o.name for o in outcomes] == ["free-sqrt", "double-root-rebased-q", "free-sqrt-badG"]
    assert all(o.confirmed for o in outcomes)
    assert outcomes[0].passed
    assert not outcomes[2].passed
    assert "2.8" in outcomes[2].failing


@pytest.mark.asyncio
async def test_verify_corpus_reports_errors(manager):
    broken = CorpusEntry("ghost", "/nonexistent/ghost.gsf", 2, 1, False)
    outcomes = await verify_corpus([broken], seed=1, count=5, manager=manager)
    assert outcomes[0].error is not None
    assert not outcomes[0].confirmed



@pytest.mark.parametrize("shutdown_between", [True, False])
def test_manager_is_reusable_across_event_loops(shutdown_between):
    manager = AsyncJobManager(max_concurrency=1, max_cpu_workers=1)
    try:
        first = asyncio.run(manager.run_batched_jobs(_square, [(n,) for n in range(3)]))
        if shutdown_between:
            manager.shutdown()
        second = asyncio.run(manager.run_batched_jobs(_square, [(n,) for n in range(3)]))
    finally:
        manager.shutdown()
    assert first == [0, 1, 4]
    assert second == [0, 1, 4]
