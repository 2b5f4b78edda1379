"""Central finite-difference verification of tape gradients."""

import logging
from typing import Iterable, Optional, Sequence

import numpy as np

from core.diffcore.tape import Expr, backward, evaluate, forward
from core.errors import ContractError
from core.models import GradReport

logger = logging.getLogger("STRATA.GradCheck")


def numeric_gradient(expr: Expr, inputs: Sequence[float], step: float = 1e-5,
                     coordinates: Optional[Iterable[int]] = None) -> np.ndarray:
    """(f(x+h) - f(x-h)) / 2h per coordinate; unchecked coordinates stay NaN."""
    if step <= 0:
        raise ContractError(f"step must be positive, got {step}")
    x0 = np.asarray(inputs, dtype=float)
    coords = range(len(x0)) if coordinates is None else coordinates
    grad = np.full(len(x0), np.nan)
    for j in coords:
        x = x0.copy()
        x[j] = x0[j] + step
        fplus = evaluate(expr, x)
        x[j] = x0[j] - step
        fminus = evaluate(expr, x)
        grad[j] = (fplus - fminus) / (2 * step)
    return grad


def grad_check(expr: Expr, inputs: Sequence[float], step: float = 1e-5,
               coordinates: Optional[Iterable[int]] = None, floor: float = 1e-7) -> GradReport:
    """Compare backward() against central differences; report the worst coordinate."""
    if step <= 0:
        raise ContractError(f"step must be positive, got {step}")
    x0 = np.asarray(inputs, dtype=float)
    _, tape = forward(expr, x0)
    analytic = backward(tape)

    coords = list(range(len(x0))) if coordinates is None else list(coordinates)
    if not coords:
        raise ContractError("grad_check needs at least one coordinate")
    numeric = numeric_gradient(expr, x0, step, coords)

    worst, worst_err = coords[0], -1.0
    for j in coords:
        a, n = analytic[j], numeric[j]
        err = abs(a - n) / max(abs(a), abs(n), floor)
        if err > worst_err:
            worst, worst_err = j, err

    report = GradReport(
        max_relative_error=worst_err,
        worst_coordinate=worst,
        analytic=float(analytic[worst]),
        numeric=float(numeric[worst]),
    )
    logger.debug(f"grad_check over {len(coords)} coordinates: {report.model_dump()}")
    return report
