# recps/tasks/worker_pool.py
# Bounded process pool for independent training jobs
import logging
from concurrent.futures import ProcessPoolExecutor, as_completed
from typing import Callable, List, Sequence, TypeVar

logger = logging.getLogger(__name__)

J = TypeVar("J")
R = TypeVar("R")


def run_jobs(fn: Callable[[J], R], jobs: Sequence[J], workers: int = 1) -> List[R]:
    """
    Apply fn to every job and return the results in job order.

    workers <= 1 (or a single job) runs inline in this process; otherwise
    fn and the jobs must be picklable. The first failing job's exception is
    re-raised after the pool shuts down.
    """
    jobs = list(jobs)
    if workers <= 1 or len(jobs) <= 1:
        return [fn(job) for job in jobs]

    max_workers = min(workers, len(jobs))
    logger.info(f"Running {len(jobs)} jobs on {max_workers} worker processes")
    results: List[R] = [None] * len(jobs)
    with ProcessPoolExecutor(max_workers=max_workers) as executor:
        futures = {executor.submit(fn, job): index for index, job in enumerate(jobs)}
        for future in as_completed(futures):
            index = futures[future]
            try:
                results[index] = future.result()
            except Exception:
                logger.error(f"Job {index} failed; cancelling the remaining jobs")
                for pending in futures:
                    pending.cancel()
                raise
    return results
