"""Log-log slope fitting for order and rate experiments."""

from __future__ import annotations

import numpy as np
from scipy import stats

from .errors import ValidationError


def fit_loglog_slope(xs, ys, min_points: int = 3) -> tuple[float, float, float]:
    """Ordinary least squares of ``log y`` on ``log x``.

    Returns ``(slope, stderr, intercept)`` where ``stderr`` is the standard
    error of the slope from the fit residuals (zero for an exact power law).
    """
    xs = np.asarray(xs, dtype=float).ravel()
    ys = np.asarray(ys, dtype=float).ravel()
    if xs.shape != ys.shape:
        raise ValidationError("xs and ys must have the same length")
    if xs.size < min_points:
        raise ValidationError(f"need at least {min_points} points for a slope fit, got {xs.size}")
    if np.any(~(xs > 0)) or np.any(~(ys > 0)):
        raise ValidationError("log-log fit needs strictly positive values")
    if np.unique(xs).size < 2:
        raise ValidationError("log-log fit needs at least two distinct x values")
    res = stats.linregress(np.log(xs), np.log(ys))
    stderr = float(res.stderr) if xs.size > 2 else 0.0
    return float(res.slope), stderr, float(res.intercept)
