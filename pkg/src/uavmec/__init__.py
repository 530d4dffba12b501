"""Multi-UAV mobile-edge-computing simulator.

Joint task offloading, per-UAV CPU scheduling, and trajectory control
under one scalarized objective (delay + UAV energy - offloaded volume),
solved by guarded block-coordinate descent; plus the baseline policies,
the experiment harness, and the reference oracles behind the tests.
"""

from .scenario import (Scenario, TaskSchedule, TaskSpec, ScenarioError,
                       generate_tasks, load_scenario)
from .cost_model import (AllocationMatrix, ConstraintViolationError,
                         MetricsRecord, OffloadMatrix, TrajectoryPlan,
                         evaluate)
from .optimizer import POLICIES, Solution, compare, optimize, run_policy
from .harness import SweepSpec, oracle_suite, run_sweep

__version__ = "0.1.0"

__all__ = [
    "Scenario", "TaskSchedule", "TaskSpec", "ScenarioError",
    "generate_tasks", "load_scenario",
    "AllocationMatrix", "ConstraintViolationError", "MetricsRecord",
    "OffloadMatrix", "TrajectoryPlan", "evaluate",
    "POLICIES", "Solution", "compare", "optimize", "run_policy",
    "SweepSpec", "oracle_suite", "run_sweep",
    "__version__",
]
