from typing import Any, Callable, Dict, List
from enum import Enum
import logging
import time

from .utils.validators import LabError

logger = logging.getLogger(__name__)


class StepStatus(Enum):
    SUCCESS = "success"
    SKIPPED = "skipped"
    ERROR = "error"


class WorkflowSupervisor:
    """Runs named experiment steps in order, timing each and recording the first failure."""

    def __init__(self):
        self.history: List[Dict[str, Any]] = []

    def supervise_step(
        self,
        step_name: str,
        step_func: Callable[[Dict[str, Any]], Dict[str, Any]],
        state: Dict[str, Any],
        enabled: bool = True,
    ) -> Dict[str, Any]:
        """
        Execute one step on the shared state.

        Args:
            step_name: Name of the current step
            step_func: Function taking and returning the workflow state
            state: Current workflow state
            enabled: When False the step is recorded as skipped

        Returns:
            Updated state with `step_status` set

        Raises:
            The step's own error, after `state["error"]` records `failed_step`.
        """
        if not enabled:
            logger.debug("Skipping step: %s", step_name)
            state["step_status"] = StepStatus.SKIPPED
            self.history.append({"step": step_name, "status": StepStatus.SKIPPED.value, "seconds": 0.0})
            return state

        logger.info("--- %s ---", step_name)
        start = time.perf_counter()
        try:
            updated_state = step_func(state)
        except LabError as e:
            self._record_failure(step_name, state, e.to_dict(), start)
            raise
        except Exception as e:
            self._record_failure(
                step_name,
                state,
                {"is_valid": False, "error_message": str(e), "error_type": f"{step_name}_error"},
                start,
            )
            raise

        seconds = time.perf_counter() - start
        logger.info("✓ %s (%.2fs)", step_name, seconds)
        updated_state["step_status"] = StepStatus.SUCCESS
        self.history.append({"step": step_name, "status": StepStatus.SUCCESS.value, "seconds": seconds})
        return updated_state

    def _record_failure(self, step_name: str, state: Dict[str, Any], error: Dict[str, Any], start: float) -> None:
        seconds = time.perf_counter() - start
        logger.error("✗ Step %s failed: %s - %s", step_name, error.get("error_type"), error.get("error_message"))
        state["error"] = {
            **error,
            "error_message": f"Failed in step '{step_name}': {error.get('error_message')}",
            "failed_step": step_name,
        }
        state["step_status"] = StepStatus.ERROR
        self.history.append({"step": step_name, "status": StepStatus.ERROR.value, "seconds": seconds})

    def timings(self) -> Dict[str, float]:
        return {entry["step"]: round(entry["seconds"], 6) for entry in self.history}
