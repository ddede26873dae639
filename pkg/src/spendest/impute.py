"""Residual-based imputation: per-record intervals, aggregates, keyword
flagging, and fixed-width histograms.

Intervals are prediction +/- one residual standard deviation, floored at
zero because spending cannot be negative.  The zero floor applies to the
low bound, to the point estimate, and (for pathological negative
predictions) to the high bound, so low <= max(0, yhat) <= high always
holds and the interval width never exceeds 2 sigma.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import DataError
from .jsonio import dump_canonical, load_json


@dataclass(frozen=True)
class ResidualSummary:
    sigma_res: float
    mean_residual: float
    n: int


def residual_sigma(y: np.ndarray, yhat: np.ndarray) -> ResidualSummary:
    """Sample standard deviation (ddof=1) of y - yhat."""
    y = np.asarray(y, dtype=np.float64)
    yhat = np.asarray(yhat, dtype=np.float64)
    if y.shape != yhat.shape or y.ndim != 1:
        raise DataError("y and yhat must be 1-D arrays of equal length")
    if y.size < 2:
        raise DataError(f"residual sigma needs at least 2 rows, got {y.size}")
    residuals = y - yhat
    return ResidualSummary(
        sigma_res=float(np.std(residuals, ddof=1)),
        mean_residual=float(np.mean(residuals)),
        n=int(y.size),
    )


def prediction_interval(yhat: float, sigma: float) -> tuple[float, float]:
    """[max(0, yhat - sigma), max(0, yhat + sigma)]."""
    if sigma < 0:
        raise DataError(f"sigma must be nonnegative, got {sigma}")
    return max(0.0, yhat - sigma), max(0.0, yhat + sigma)


@dataclass(frozen=True)
class RecordEstimate:
    """One imputed record; yhat is already floored at zero."""

    record_id: str
    yhat: float
    low: float
    high: float


@dataclass(frozen=True)
class ImputationResult:
    sigma_res: float
    records: tuple[RecordEstimate, ...]
    aggregate_point: float
    aggregate_low: float
    aggregate_high: float

    def to_doc(self) -> dict:
        return {
            "sigma_res": self.sigma_res,
            "per_record": [
                {"id": r.record_id, "yhat": r.yhat, "low": r.low, "high": r.high}
                for r in self.records
            ],
            "aggregate_point": self.aggregate_point,
            "aggregate_low": self.aggregate_low,
            "aggregate_high": self.aggregate_high,
        }

    @classmethod
    def from_doc(cls, doc: dict) -> "ImputationResult":
        expected = {"sigma_res", "per_record", "aggregate_point", "aggregate_low", "aggregate_high"}
        if not isinstance(doc, dict) or set(doc) != expected:
            raise DataError("malformed imputation document")
        records = tuple(
            RecordEstimate(
                record_id=str(r["id"]),
                yhat=float(r["yhat"]),
                low=float(r["low"]),
                high=float(r["high"]),
            )
            for r in doc["per_record"]
        )
        return cls(
            sigma_res=float(doc["sigma_res"]),
            records=records,
            aggregate_point=float(doc["aggregate_point"]),
            aggregate_low=float(doc["aggregate_low"]),
            aggregate_high=float(doc["aggregate_high"]),
        )


def aggregate_estimate(
    record_ids: Sequence[str], yhats: np.ndarray, sigma: float
) -> ImputationResult:
    """Per-record floored estimates and intervals, summed into aggregates."""
    yhats = np.asarray(yhats, dtype=np.float64)
    if yhats.ndim != 1 or len(record_ids) != yhats.size:
        raise DataError("record ids and predictions must align")
    records = []
    for rid, raw in zip(record_ids, yhats):
        low, high = prediction_interval(float(raw), sigma)
        records.append(
            RecordEstimate(record_id=str(rid), yhat=max(0.0, float(raw)), low=low, high=high)
        )
    return ImputationResult(
        sigma_res=float(sigma),
        records=tuple(records),
        aggregate_point=float(sum(r.yhat for r in records)),
        aggregate_low=float(sum(r.low for r in records)),
        aggregate_high=float(sum(r.high for r in records)),
    )


def save_imputation(result: ImputationResult, json_path: str | Path, csv_path: str | Path) -> None:
    dump_canonical(result.to_doc(), json_path)
    with open(csv_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["id", "yhat", "low", "high"])
        for r in result.records:
            writer.writerow([r.record_id, repr(r.yhat), repr(r.low), repr(r.high)])


def load_imputation(json_path: str | Path) -> ImputationResult:
    return ImputationResult.from_doc(load_json(json_path))


def mentions_keyword(text: str, stem: str = "tutor") -> bool:
    """True when any maximal letter run in ``text`` starts with ``stem``.

    Case-insensitive; matching is on word prefixes, so "tutoring" matches
    but "contutor" does not.
    """
    if not stem or not stem.isalpha():
        raise DataError(f"stem must be a nonempty alphabetic string, got {stem!r}")
    stem = stem.lower()
    word: list[str] = []
    for ch in text + " ":
        if ch.isalpha():
            word.append(ch.lower())
            continue
        if word and "".join(word[: len(stem)]) == stem:
            return True
        word.clear()
    return False


def histogram(values: Sequence[float], bin_width: float) -> list[tuple[float, int]]:
    """Half-open fixed-width bins [k*w, (k+1)*w) anchored at zero.

    Bins run from the lowest to the highest occupied bin; empty interior
    bins appear with count zero.  Negative values extend the range
    symmetrically below zero.  Empty input yields an empty list.
    """
    if bin_width <= 0:
        raise DataError(f"bin width must be positive, got {bin_width}")
    if len(values) == 0:
        return []
    ks = [math.floor(v / bin_width) for v in values]
    counts: dict[int, int] = {}
    for k in ks:
        counts[k] = counts.get(k, 0) + 1
    lo, hi = min(ks), max(ks)
    return [(k * bin_width, counts.get(k, 0)) for k in range(lo, hi + 1)]


def save_histogram(bins: Sequence[tuple[float, int]], path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["lower_edge", "count"])
        for edge, count in bins:
            writer.writerow([repr(float(edge)), int(count)])
