import logging
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, List, Sequence, Tuple

import sentry_sdk

logger = logging.getLogger(__name__)


class WorkflowRunner:
    """Fans independent tasks out over a thread pool, one solver per task."""

    @staticmethod
    def run_all(
        action_callback: Callable,
        tasks: Sequence,
        action_name: str = "Task",
        threads: int = 1,
        label: Callable = str,
    ) -> Tuple[List, List[Tuple[object, Exception]]]:
        """
        Runs action_callback on every task and collects results in task order.
        Failures are logged, reported to Sentry and returned alongside the task
        that raised them; the result slot for a failed task is None.
        """
        errors = []

        def guarded(task):
            try:
                return action_callback(task)
            except Exception as e:
                logger.error(
                    f"Error executing {action_name} for {label(task)}: {e}",
                    exc_info=True,
                )
                with sentry_sdk.new_scope() as scope:
                    scope.set_tag("task", label(task))
                    scope.set_tag("action", action_name)
                    sentry_sdk.capture_exception(e)
                errors.append((task, e))
                return None

        if threads <= 1 or len(tasks) <= 1:
            results = [guarded(task) for task in tasks]
        else:
            with ThreadPoolExecutor(max_workers=threads) as executor:
                results = list(executor.map(guarded, tasks))
        return results, errors
