import logging
from typing import List, Optional, Tuple

import numpy as np

from kecusp.core.metrics import continuation_step_counter
from kecusp.services.solver import (
    ContinuationSchedule,
    ConvergenceError,
    PotentialField,
    ReducedProblem,
    SolveReport,
    solve_reduced,
)

logger = logging.getLogger(__name__)

# nodes this close to either Dirichlet end are excluded from the Lipschitz quotients
COMPACT_MARGIN = 10


def compact_nodes(n_t: int, margin: int = COMPACT_MARGIN) -> slice:
    if n_t <= 2 * margin + 1:
        margin = max(1, (n_t - 1) // 4)
    return slice(margin, n_t - margin)


def lipschitz_quotients(
    fields: List[PotentialField], s_values: List[float], margin: int = COMPACT_MARGIN
) -> List[float]:
    """sup_K |φ_{s_j} − φ_{s_{j+1}}| / (s_j − s_{j+1}) for consecutive schedule entries."""
    if not fields:
        return []
    inner = compact_nodes(fields[0].domain.n_t, margin)
    quotients = []
    for a, b, s_a, s_b in zip(fields, fields[1:], s_values, s_values[1:]):
        gap = float(np.max(np.abs(a.phi[inner] - b.phi[inner])))
        quotients.append(gap / (s_a - s_b))
    return quotients


def continuation_solve(
    problem: ReducedProblem,
    schedule: ContinuationSchedule,
    seed: Optional[np.ndarray] = None,
) -> Tuple[List[PotentialField], SolveReport]:
    """Solves the s-problems along the schedule, warm-starting each from the last.

    Raises ConvergenceError carrying the converged prefix if any step fails.
    """
    label = problem.domain.reduction.value
    fields: List[PotentialField] = []
    report = SolveReport(converged=True)
    warm = seed

    for step, s in enumerate(schedule.s_values):
        field_, step_report = solve_reduced(
            problem, s, seed=warm, tol=schedule.tol, max_iter=schedule.max_iter
        )
        report.extend(step_report)
        continuation_step_counter.inc()
        if not step_report.converged:
            report.converged = False
            report.lipschitz = lipschitz_quotients(fields, schedule.s_values)
            logger.error(
                f"[{label}] Continuation stalled at step {step} (s={s:g}), "
                f"residual {step_report.final_residual:.3e}"
            )
            raise ConvergenceError(
                f"continuation failed to converge at s={s:g}", partial=fields, report=report
            )
        logger.info(
            f"[{label}] Continuation step {step}: s={s:g}, {step_report.iterations[0]} iterations"
        )
        fields.append(field_)
        warm = field_.phi

    report.lipschitz = lipschitz_quotients(fields, schedule.s_values)
    if report.lipschitz:
        spread = max(report.lipschitz) / max(min(report.lipschitz), np.finfo(float).tiny)
        logger.info(
            f"[{label}] Lipschitz constant {report.lipschitz_constant:.4e} "
            f"(max/min quotient ratio {spread:.3f})"
        )
    return fields, report
