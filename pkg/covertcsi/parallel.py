"""
Deterministic fan-out over a thread pool
"""

import logging
import concurrent.futures
from typing import Callable, List, Sequence

logger = logging.getLogger(__name__)


def run_indexed(func: Callable, items: Sequence, workers: int = 1) -> List:
    """
    Apply func(index, item) to every item.

    Args:
        func: task function
        items: task inputs
        workers: thread count; 1 runs serially

    Returns:
        results in item order, whatever order the workers finish in
    """
    if workers <= 1 or len(items) <= 1:
        return [func(i, item) for i, item in enumerate(items)]
    results = {}
    with concurrent.futures.ThreadPoolExecutor(max_workers=workers) as executor:
        future_to_index = {executor.submit(func, i, item): i for i, item in enumerate(items)}
        for future in concurrent.futures.as_completed(future_to_index):
            index = future_to_index[future]
            try:
                results[index] = future.result()
            except Exception as e:
                logger.error(f"Error in task {index}: {e}", exc_info=True)
                raise
    return [results[i] for i in range(len(items))]
