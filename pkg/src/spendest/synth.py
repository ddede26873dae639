"""Synthetic district finance data with known ground truth.

The generator draws district covariates, computes a latent tutoring
spend, optionally adds Gaussian noise, then hides the target for a
seeded fraction of rows (marking them as mentioning tutoring without a
figure).  True values for every row land in a ground-truth document so
recovery can be scored exactly.

Covariate distributions, per row in draw order:

* state: uniform over eight two-letter codes
* locale: city/rural/suburb/town with probabilities .25/.25/.3/.2
* enrollment: lognormal(ln 2500, 0.9), rounded, floor 50
* n_schools: enrollment / uniform(300, 600), rounded, floor 1
* total_esser: enrollment * uniform(600, 1400) dollars, cents precision

The "linear" latent is an affine function of the covariates plus two
interactions, clamped at zero; "step" is a sum of indicator jumps on
encoded features, so depth-limited trees can represent it exactly.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DataError
from .tabular import Column, Schema, Table, round_half_up

STATES = ("CA", "CO", "GA", "MA", "OH", "PA", "TX", "WA")
LOCALES = ("city", "rural", "suburb", "town")
_LOCALE_PROBS = (0.25, 0.25, 0.3, 0.2)

SYNTH_SCHEMA = Schema(
    (
        Column("district_id", "id"),
        Column("state", "categorical"),
        Column("locale", "categorical"),
        Column("enrollment", "numeric"),
        Column("n_schools", "numeric"),
        Column("total_esser", "numeric"),
        Column("mentions_tutoring", "mention_flag"),
        Column("tutoring_spend", "target"),
    )
)

LINEAR_COEFFICIENTS = {
    "intercept": 5000.0,
    "enrollment": 12.0,
    "n_schools": 1500.0,
    "total_esser": 0.03,
    "enrollment_x_city": 6.0,
    "esser_x_rural": 0.01,
}

STEP_COEFFICIENTS = {
    "base": 50000.0,
    "enrollment_ge_3000": 150000.0,
    "esser_ge_2500000": 100000.0,
    "city": 75000.0,
    "state_ca_or_tx": 50000.0,
}


@dataclass(frozen=True)
class SynthSpec:
    n_districts: int
    noise_sigma: float = 60000.0
    missing_target_fraction: float = 0.4
    seed: int = 0
    latent: str = "linear"
    coefficients: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.n_districts < 1:
            raise DataError(f"n_districts must be positive, got {self.n_districts}")
        if self.noise_sigma < 0:
            raise DataError(f"noise_sigma must be nonnegative, got {self.noise_sigma}")
        if not 0 <= self.missing_target_fraction <= 1:
            raise DataError(
                f"missing_target_fraction must lie in [0, 1], got {self.missing_target_fraction}"
            )
        if self.latent not in ("linear", "step"):
            raise DataError(f"latent must be 'linear' or 'step', got {self.latent!r}")
        defaults = LINEAR_COEFFICIENTS if self.latent == "linear" else STEP_COEFFICIENTS
        unknown = set(self.coefficients) - set(defaults)
        if unknown:
            raise DataError(f"unknown coefficients for {self.latent} latent: {sorted(unknown)}")

    def resolved_coefficients(self) -> dict:
        defaults = LINEAR_COEFFICIENTS if self.latent == "linear" else STEP_COEFFICIENTS
        merged = dict(defaults)
        merged.update({k: float(v) for k, v in self.coefficients.items()})
        return merged

    def to_doc(self) -> dict:
        return {
            "n_districts": self.n_districts,
            "noise_sigma": self.noise_sigma,
            "missing_target_fraction": self.missing_target_fraction,
            "seed": self.seed,
            "latent": self.latent,
            "coefficients": self.resolved_coefficients(),
        }


def _latent_spend(spec: SynthSpec, state: str, locale: str, enrollment: float,
                  n_schools: float, total_esser: float) -> float:
    c = spec.resolved_coefficients()
    if spec.latent == "linear":
        value = (
            c["intercept"]
            + c["enrollment"] * enrollment
            + c["n_schools"] * n_schools
            + c["total_esser"] * total_esser
            + (c["enrollment_x_city"] * enrollment if locale == "city" else 0.0)
            + (c["esser_x_rural"] * total_esser if locale == "rural" else 0.0)
        )
    else:
        value = (
            c["base"]
            + (c["enrollment_ge_3000"] if enrollment >= 3000 else 0.0)
            + (c["esser_ge_2500000"] if total_esser >= 2.5e6 else 0.0)
            + (c["city"] if locale == "city" else 0.0)
            + (c["state_ca_or_tx"] if state in ("CA", "TX") else 0.0)
        )
    return max(0.0, value)


def generate_synthetic(spec: SynthSpec) -> tuple[Table, dict]:
    """Build the table plus a ground-truth document.

    Hidden rows are chosen by shuffling and cutting the first
    round(missing_target_fraction * n) indices; their target cells are
    missing while the truth document keeps the real values.
    """
    rng = np.random.default_rng(spec.seed)
    n = spec.n_districts
    rows = []
    truth_values = []
    for i in range(n):
        state = str(rng.choice(STATES))
        locale = str(rng.choice(LOCALES, p=_LOCALE_PROBS))
        enrollment = float(max(50, round_half_up(rng.lognormal(math.log(2500.0), 0.9))))
        n_schools = float(max(1, round_half_up(enrollment / rng.uniform(300.0, 600.0))))
        total_esser = round(enrollment * rng.uniform(600.0, 1400.0), 2)
        latent = _latent_spend(spec, state, locale, enrollment, n_schools, total_esser)
        noise = rng.normal(0.0, spec.noise_sigma) if spec.noise_sigma > 0 else 0.0
        spend = round(latent + noise, 2)
        rows.append(
            {
                "district_id": f"D{i:05d}",
                "state": state,
                "locale": locale,
                "enrollment": enrollment,
                "n_schools": n_schools,
                "total_esser": total_esser,
                "mentions_tutoring": True,
                "tutoring_spend": spend,
            }
        )
        truth_values.append(spend)

    n_hidden = round_half_up(spec.missing_target_fraction * n)
    hidden = np.sort(rng.permutation(n)[:n_hidden])
    for i in hidden:
        rows[i] = dict(rows[i])
        rows[i]["tutoring_spend"] = None

    table = Table(SYNTH_SCHEMA, tuple(rows))
    truth = {
        "spec": spec.to_doc(),
        "per_record": {f"D{i:05d}": truth_values[i] for i in range(n)},
        "hidden_ids": [f"D{int(i):05d}" for i in hidden],
        "hidden_aggregate": float(sum(truth_values[int(i)] for i in hidden)),
        "total_aggregate": float(sum(truth_values)),
    }
    return table, truth


def write_table_csv(table: Table, path: str | Path) -> None:
    """Serialize a table; missing cells become empty, flags become 1/0."""
    schema = table.schema
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(schema.names)
        for row in table.rows:
            record = []
            for col in schema.columns:
                cell = row[col.name]
                if cell is None:
                    record.append("")
                elif col.kind == "mention_flag":
                    record.append("1" if cell else "0")
                elif col.kind in ("numeric", "target"):
                    record.append(repr(float(cell)))
                else:
                    record.append(cell)
            writer.writerow(record)
