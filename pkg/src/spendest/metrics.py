"""Regression evaluation metrics with explicit undefined-value handling."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DataError


@dataclass
class MetricsReport:
    """Metric values for one evaluation; None marks an undefined metric.

    Every undefined metric adds a human-readable entry to ``warnings``.
    ``mape_excluded`` counts rows dropped from MAPE because y == 0.
    """

    mae: float
    mse: float
    rmse: float
    r2: float | None
    adjusted_r2: float | None
    mape: float | None
    n: int
    p: int
    mape_excluded: int
    warnings: list[str] = field(default_factory=list)

    def to_doc(self) -> dict:
        return {
            "mae": self.mae,
            "mse": self.mse,
            "rmse": self.rmse,
            "r2": self.r2,
            "adjusted_r2": self.adjusted_r2,
            "mape": self.mape,
            "n": self.n,
            "p": self.p,
            "mape_excluded": self.mape_excluded,
            "warnings": list(self.warnings),
        }


def adjusted_r2(r2: float, n: int, p: int) -> float:
    """1 - (1 - r2) * (n - 1) / (n - p - 1); requires n > p + 1."""
    if n <= p + 1:
        raise DataError(f"adjusted R^2 needs n > p + 1, got n={n}, p={p}")
    return 1.0 - (1.0 - r2) * (n - 1) / (n - p - 1)


def evaluate(y: np.ndarray, yhat: np.ndarray, p: int) -> MetricsReport:
    """MAE, MSE, RMSE, R^2, adjusted R^2, and MAPE over y != 0 rows.

    R^2 is undefined when y has zero variance; adjusted R^2 additionally
    needs n > p + 1; MAPE is undefined when every row has y == 0.
    """
    y = np.asarray(y, dtype=np.float64)
    yhat = np.asarray(yhat, dtype=np.float64)
    if y.shape != yhat.shape or y.ndim != 1:
        raise DataError("y and yhat must be 1-D arrays of equal length")
    n = y.size
    if n < 2:
        raise DataError(f"evaluation needs at least 2 rows, got {n}")
    if p < 0:
        raise DataError(f"feature count must be nonnegative, got {p}")
    if not (np.isfinite(y).all() and np.isfinite(yhat).all()):
        raise DataError("evaluation inputs must be finite")

    warnings: list[str] = []
    err = y - yhat
    mae = float(np.mean(np.abs(err)))
    mse = float(np.mean(err * err))
    rmse = math.sqrt(mse)

    ss_res = float(np.sum(err * err))
    ss_tot = float(np.sum((y - np.mean(y)) ** 2))
    if ss_tot == 0.0:
        r2 = None
        warnings.append("r2 undefined: target has zero variance")
    else:
        r2 = 1.0 - ss_res / ss_tot

    if r2 is None:
        adj = None
        warnings.append("adjusted_r2 undefined: r2 is undefined")
    elif n <= p + 1:
        adj = None
        warnings.append(f"adjusted_r2 undefined: needs n > p + 1, got n={n}, p={p}")
    else:
        adj = adjusted_r2(r2, n, p)

    nonzero = y != 0.0
    excluded = int(n - np.count_nonzero(nonzero))
    if excluded == n:
        mape = None
        warnings.append("mape undefined: every row has y == 0")
    else:
        # Subnormal targets can overflow the ratio; report that as
        # undefined rather than letting inf leak into serialization.
        with np.errstate(over="ignore"):
            mape = float(np.mean(np.abs(err[nonzero] / y[nonzero])))
        if not math.isfinite(mape):
            mape = None
            warnings.append("mape undefined: ratio overflow on near-zero targets")

    return MetricsReport(
        mae=mae,
        mse=mse,
        rmse=rmse,
        r2=r2,
        adjusted_r2=adj,
        mape=mape,
        n=n,
        p=int(p),
        mape_excluded=excluded,
        warnings=warnings,
    )
