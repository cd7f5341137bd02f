import asyncio
import logging
import concurrent.futures
from typing import Any, Callable, Iterable, List, Optional, Sequence, Tuple

from core.config import DEFAULT_SAMPLES, DEFAULT_SEED, IDENTITY_TOL
from core.corpus import CorpusEntry, ModelOutcome, check_model

logger = logging.getLogger(__name__)


class AsyncJobManager:
    """
    Runs CPU-heavy model checks in worker processes while the event loop
    stays responsive. The pool is created on first use.
    """
    def __init__(self, max_concurrency: int = 4, max_cpu_workers: Optional[int] = None):
        """
        :param max_concurrency: Max jobs in flight at once.
        :param max_cpu_workers: Max worker processes (defaults to os.cpu_count()).
        """
        self.max_concurrency = max_concurrency
        self.max_cpu_workers = max_cpu_workers
        self._semaphore: Optional[asyncio.Semaphore] = None
        self._semaphore_loop: Optional[asyncio.AbstractEventLoop] = None
        self._executor: Optional[concurrent.futures.Executor] = None

    @property
    def executor(self) -> concurrent.futures.Executor:
        if self._executor is None:
            self._executor = concurrent.futures.ProcessPoolExecutor(max_workers=self.max_cpu_workers)
        return self._executor

    @property
    def semaphore(self) -> asyncio.Semaphore:
        """Semaphore of the running event loop."""
        loop = asyncio.get_running_loop()
        if self._semaphore is None or self._semaphore_loop is not loop:
            self._semaphore = asyncio.Semaphore(self.max_concurrency)
            self._semaphore_loop = loop
        return self._semaphore

    async def run_cpu_job(self, func: Callable, *args) -> Any:
        """Runs a blocking function in the process pool."""
        loop = asyncio.get_running_loop()
        async with self.semaphore:
            try:
                return await loop.run_in_executor(self.executor, func, *args)
            except Exception as e:
                logger.error(f"CPU job {getattr(func, '__name__', func)} failed: {e}")
                raise

    async def run_batched_jobs(self, func: Callable, arguments: Iterable[Tuple]) -> List[Any]:
        """One job per argument tuple; failures come back as exception objects in place."""
        tasks = [self.run_cpu_job(func, *args) for args in arguments]
        return await asyncio.gather(*tasks, return_exceptions=True)

    def shutdown(self):
        if self._executor is not None:
            self._executor.shutdown(wait=True)
            self._executor = None
        self._semaphore = None
        self._semaphore_loop = None


# Global Instance
async_manager = AsyncJobManager()


async def verify_corpus(entries: Sequence[CorpusEntry], seed: int = DEFAULT_SEED, count: int = DEFAULT_SAMPLES,
                        tol: float = IDENTITY_TOL, manager: Optional[AsyncJobManager] = None) -> List[ModelOutcome]:
    """Checks every entry in parallel; results keep the order of entries."""
    manager = manager or async_manager
    logger.info(f"Verifying {len(entries)} corpus models (seed {seed}, {count} points)")
    results = await manager.run_batched_jobs(check_model, [(entry, seed, count, tol) for entry in entries])
    outcomes = []
    for entry, result in zip(entries, results):
        if isinstance(result, BaseException):
            outcomes.append(ModelOutcome(entry.name, entry.mutant, False, False, error=f"{type(result).__name__}: {result}"))
        else:
            outcomes.append(result)
    return outcomes
