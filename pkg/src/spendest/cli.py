"""Command-line pipeline: synth, prepare, tune, train, evaluate, impute,
report.

Each command reads a JSON run configuration (plus flag overrides),
consumes the artifacts of earlier stages from the output directory, and
writes its own artifacts deterministically.  Exit codes: 0 success,
2 configuration error, 3 missing prerequisite artifact, 4 data error,
5 internal error.
"""

from __future__ import annotations

import argparse
import csv
import math
import sys
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from . import SCHEMA_VERSION, __version__
from .errors import ConfigError, DataError, MissingArtifactError, SpendestError
from .gbt import Hyperparams, fit, load_model, predict, save_model, tuned_defaults
from .impute import (
    aggregate_estimate,
    histogram,
    load_imputation,
    residual_sigma,
    save_histogram,
    save_imputation,
)
from .jsonio import dump_canonical, load_json
from .metrics import evaluate
from .synth import SYNTH_SCHEMA, SynthSpec, generate_synthetic, write_table_csv
from .tabular import (
    EncodedMatrix,
    Schema,
    clean_target,
    iqr_filter,
    load_csv,
    one_hot_encode,
    train_test_split,
)
from .tune import (
    ParamSpec,
    SearchSpace,
    TpeConfig,
    default_search_space,
    load_study,
    run_study,
    save_study,
)

COMMANDS = ("synth", "prepare", "tune", "train", "evaluate", "impute", "report")

_CONFIG_KEYS = {
    "input",
    "out",
    "model",
    "study",
    "schema",
    "test_fraction",
    "iqr_k",
    "cv_folds",
    "n_trials",
    "seed",
    "expense_bin_width",
    "residual_bin_width",
    "space",
    "synth",
}

_SYNTH_KEYS = {"n_districts", "noise_sigma", "missing_target_fraction", "latent", "coefficients"}


@dataclass(frozen=True)
class RunConfig:
    """Pipeline knobs and artifact locations.

    Stage seeds derive from ``seed``: the train/test split uses seed,
    the study seed + 1, synthetic generation seed + 2, and final model
    training seed + 3.  ``space`` optionally narrows [low, high] of
    named default search-space parameters.
    """

    input: str | None = None
    out: str = "out"
    model: str | None = None
    study: str | None = None
    schema: Schema = SYNTH_SCHEMA
    test_fraction: float = 0.2
    iqr_k: float = 1.5
    cv_folds: int = 5
    n_trials: int = 250
    seed: int = 0
    expense_bin_width: float = 50000.0
    residual_bin_width: float = 20000.0
    space: dict = field(default_factory=dict)
    synth: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        if not 0.0 <= self.test_fraction <= 1.0:
            raise ConfigError(f"test_fraction must lie in [0, 1], got {self.test_fraction}")
        if self.iqr_k < 0:
            raise ConfigError(f"iqr_k must be nonnegative, got {self.iqr_k}")
        if not isinstance(self.cv_folds, int) or self.cv_folds < 2:
            raise ConfigError(f"cv_folds must be an integer >= 2, got {self.cv_folds}")
        if not isinstance(self.n_trials, int) or self.n_trials < 1:
            raise ConfigError(f"n_trials must be a positive integer, got {self.n_trials}")
        if not isinstance(self.seed, int) or self.seed < 0:
            raise ConfigError(f"seed must be a nonnegative integer, got {self.seed}")
        if self.expense_bin_width <= 0 or self.residual_bin_width <= 0:
            raise ConfigError("histogram bin widths must be positive")
        unknown = set(self.synth) - _SYNTH_KEYS
        if unknown:
            raise ConfigError(f"unknown synth keys: {sorted(unknown)}")

    @property
    def out_dir(self) -> Path:
        return Path(self.out)

    @property
    def input_path(self) -> Path:
        return Path(self.input) if self.input else self.out_dir / "synthetic.csv"

    @property
    def model_path(self) -> Path:
        return Path(self.model) if self.model else self.out_dir / "model.json"

    @property
    def study_path(self) -> Path:
        return Path(self.study) if self.study else self.out_dir / "study.json"

    def artifact(self, name: str) -> Path:
        return self.out_dir / name

    def resolved_space(self) -> SearchSpace:
        base = default_search_space()
        if not self.space:
            return base
        by_name = {p.name: p for p in base.params}
        unknown = set(self.space) - set(by_name)
        if unknown:
            raise ConfigError(f"space overrides name unknown parameters: {sorted(unknown)}")
        params = []
        for spec in base.params:
            if spec.name in self.space:
                bounds = self.space[spec.name]
                if not (isinstance(bounds, (list, tuple)) and len(bounds) == 2):
                    raise ConfigError(f"space override for {spec.name!r} must be [low, high]")
                try:
                    spec = ParamSpec(spec.name, spec.kind, float(bounds[0]), float(bounds[1]),
                                     spec.log_scale)
                except DataError as exc:
                    raise ConfigError(str(exc)) from exc
            params.append(spec)
        return SearchSpace(tuple(params))

    def synth_spec(self) -> SynthSpec:
        try:
            return SynthSpec(
                n_districts=int(self.synth.get("n_districts", 2000)),
                noise_sigma=float(self.synth.get("noise_sigma", 60000.0)),
                missing_target_fraction=float(self.synth.get("missing_target_fraction", 0.4)),
                latent=str(self.synth.get("latent", "linear")),
                coefficients=dict(self.synth.get("coefficients", {})),
                seed=self.seed + 2,
            )
        except DataError as exc:
            raise ConfigError(str(exc)) from exc

    @classmethod
    def from_file(cls, path: str | Path) -> "RunConfig":
        if not Path(path).exists():
            raise ConfigError(f"config file {path} not found")
        doc = load_json(path)
        if not isinstance(doc, dict):
            raise ConfigError(f"{path}: config must be a JSON object")
        unknown = set(doc) - _CONFIG_KEYS
        if unknown:
            raise ConfigError(f"{path}: unknown config keys: {sorted(unknown)}")
        kwargs = dict(doc)
        if "schema" in kwargs:
            try:
                kwargs["schema"] = Schema.from_doc(kwargs["schema"])
            except DataError as exc:
                raise ConfigError(f"{path}: bad schema: {exc}") from exc
        try:
            return cls(**kwargs)
        except TypeError as exc:
            raise ConfigError(f"{path}: {exc}") from exc


def _write_matrix_csv(matrix: EncodedMatrix, path: Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["id", *matrix.feature_names])
        for rid, row in zip(matrix.row_ids, matrix.values):
            writer.writerow([rid, *(repr(float(v)) for v in row)])


def _read_matrix_csv(path: Path) -> EncodedMatrix:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if not header or header[0] != "id":
            raise DataError(f"{path}: expected an id-first matrix header")
        names = tuple(header[1:])
        ids = []
        rows = []
        for record in reader:
            ids.append(record[0])
            try:
                rows.append([float(v) for v in record[1:]])
            except ValueError as exc:
                raise DataError(f"{path}: non-numeric matrix cell: {exc}") from exc
    values = np.array(rows, dtype=np.float64).reshape(len(ids), len(names))
    return EncodedMatrix(names, values, tuple(ids))


def _write_targets_csv(ids: Sequence[str], y: np.ndarray, path: Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["id", "target"])
        for rid, value in zip(ids, y):
            writer.writerow([rid, repr(float(value))])


def _read_targets_csv(path: Path) -> tuple[tuple[str, ...], np.ndarray]:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["id", "target"]:
            raise DataError(f"{path}: expected id,target header")
        ids = []
        values = []
        for record in reader:
            ids.append(record[0])
            try:
                values.append(float(record[1]))
            except ValueError as exc:
                raise DataError(f"{path}: non-numeric target: {exc}") from exc
    return tuple(ids), np.asarray(values, dtype=np.float64)


def _require(path: Path, stage: str, hint: str) -> Path:
    if not path.exists():
        raise MissingArtifactError(f"{stage}: missing {path} ({hint})")
    return path


def _load_matrix_with_targets(config: RunConfig, stem: str, stage: str) -> tuple[EncodedMatrix, np.ndarray]:
    matrix = _read_matrix_csv(_require(config.artifact(f"{stem}_matrix.csv"), stage, "run prepare"))
    ids, y = _read_targets_csv(_require(config.artifact(f"{stem}_targets.csv"), stage, "run prepare"))
    if ids != matrix.row_ids:
        raise DataError(f"{stage}: {stem} matrix and target ids disagree")
    return matrix, y


def cmd_synth(config: RunConfig) -> None:
    config.out_dir.mkdir(parents=True, exist_ok=True)
    table, truth = generate_synthetic(config.synth_spec())
    write_table_csv(table, config.input_path)
    dump_canonical(truth, config.artifact("truth.json"))


def cmd_prepare(config: RunConfig) -> None:
    """Load, clean, outlier-filter, split, and encode the input CSV.

    Rows with a present nonzero target train and evaluate the model;
    rows flagged as mentioning the activity with a missing target form
    the imputation set.  Zero-target rows take no part in either.
    """
    config.out_dir.mkdir(parents=True, exist_ok=True)
    table = load_csv(_require(config.input_path, "prepare", "provide --input or run synth"),
                     config.schema)
    labeled = clean_target(table)
    if len(labeled) == 0:
        raise DataError("prepare: no rows with a usable target")
    filtered = iqr_filter(labeled, config.schema.target_column, config.iqr_k)
    split = train_test_split(len(filtered), config.test_fraction, seed=config.seed)
    train_table = filtered.subset(split.train)
    test_table = filtered.subset(split.test)

    train_matrix, encoding = one_hot_encode(train_table)
    test_matrix, _ = one_hot_encode(test_table, encoding)

    mention_col = config.schema.mention_column
    target_col = config.schema.target_column
    mention_rows = [
        i
        for i, row in enumerate(table.rows)
        if row[target_col] is None and (mention_col is None or row[mention_col] is True)
    ]
    impute_matrix, _ = one_hot_encode(table.subset(mention_rows), encoding)

    _write_matrix_csv(train_matrix, config.artifact("train_matrix.csv"))
    _write_targets_csv(train_matrix.row_ids, train_table.target_values(),
                       config.artifact("train_targets.csv"))
    _write_matrix_csv(test_matrix, config.artifact("test_matrix.csv"))
    _write_targets_csv(test_matrix.row_ids, test_table.target_values(),
                       config.artifact("test_targets.csv"))
    _write_matrix_csv(impute_matrix, config.artifact("impute_matrix.csv"))
    dump_canonical(encoding.to_doc(), config.artifact("encoding.json"))


def cmd_tune(config: RunConfig) -> None:
    config.out_dir.mkdir(parents=True, exist_ok=True)
    matrix, y = _load_matrix_with_targets(config, "train", "tune")
    study = run_study(
        matrix,
        y,
        config.resolved_space(),
        n_trials=config.n_trials,
        k=config.cv_folds,
        cfg=TpeConfig(),
        seed=config.seed + 1,
    )
    save_study(study, config.study_path)


def cmd_train(config: RunConfig) -> None:
    config.out_dir.mkdir(parents=True, exist_ok=True)
    matrix, y = _load_matrix_with_targets(config, "train", "train")
    if config.study_path.exists():
        study = load_study(config.study_path)
        try:
            hp = Hyperparams(**study.best_trial.params, seed=config.seed + 3)
        except TypeError as exc:
            raise DataError(f"train: study parameters do not fit the model: {exc}") from exc
    else:
        print(f"train: no study at {config.study_path}, using built-in tuned defaults")
        hp = tuned_defaults(seed=config.seed + 3)

    log_rows: list[tuple[int, float]] = []

    def on_round(t: int, preds: np.ndarray) -> None:
        err = y - preds
        log_rows.append((t, float(math.sqrt(np.mean(err * err)))))

    model = fit(matrix, y, hp, on_round=on_round)
    save_model(model, config.model_path)
    with open(config.artifact("train_log.csv"), "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["round", "train_rmse"])
        for t, rmse in log_rows:
            writer.writerow([t, repr(rmse)])


def cmd_evaluate(config: RunConfig) -> None:
    config.out_dir.mkdir(parents=True, exist_ok=True)
    model = load_model(_require(config.model_path, "evaluate", "run train"))
    matrix, y = _load_matrix_with_targets(config, "test", "evaluate")
    report = evaluate(y, predict(model, matrix), p=matrix.n_features)
    dump_canonical(report.to_doc(), config.artifact("metrics.json"))


def cmd_impute(config: RunConfig) -> None:
    config.out_dir.mkdir(parents=True, exist_ok=True)
    model = load_model(_require(config.model_path, "impute", "run train"))
    train_matrix, y_train = _load_matrix_with_targets(config, "train", "impute")
    test_matrix, y_test = _load_matrix_with_targets(config, "test", "impute")
    impute_matrix = _read_matrix_csv(
        _require(config.artifact("impute_matrix.csv"), "impute", "run prepare")
    )

    # Residual spread over every record with an observed target.
    y_labeled = np.concatenate([y_train, y_test])
    pred_labeled = np.concatenate([predict(model, train_matrix), predict(model, test_matrix)])
    summary = residual_sigma(y_labeled, pred_labeled)

    result = aggregate_estimate(
        impute_matrix.row_ids, predict(model, impute_matrix), summary.sigma_res
    )
    save_imputation(result, config.artifact("imputation.json"), config.artifact("imputation.csv"))
    residuals = y_labeled - pred_labeled
    dump_canonical(
        {
            "sigma_res": summary.sigma_res,
            "mean_residual": summary.mean_residual,
            "n": summary.n,
            "residuals": [float(r) for r in residuals],
        },
        config.artifact("residuals.json"),
    )


def cmd_report(config: RunConfig) -> None:
    config.out_dir.mkdir(parents=True, exist_ok=True)
    result = load_imputation(_require(config.artifact("imputation.json"), "report", "run impute"))
    residual_doc = load_json(_require(config.artifact("residuals.json"), "report", "run impute"))
    metrics_doc = load_json(_require(config.artifact("metrics.json"), "report", "run evaluate"))
    _, y_train = _read_targets_csv(_require(config.artifact("train_targets.csv"), "report", "run prepare"))
    _, y_test = _read_targets_csv(_require(config.artifact("test_targets.csv"), "report", "run prepare"))

    expenses = list(np.concatenate([y_train, y_test]))
    save_histogram(histogram(expenses, config.expense_bin_width),
                   config.artifact("expenses_histogram.csv"))
    save_histogram(histogram([float(r) for r in residual_doc["residuals"]],
                             config.residual_bin_width),
                   config.artifact("residuals_histogram.csv"))

    lines = [
        "imputed records: %d" % len(result.records),
        "sigma_res: %s" % repr(result.sigma_res),
        "aggregate_point: %s" % repr(result.aggregate_point),
        "aggregate_low: %s" % repr(result.aggregate_low),
        "aggregate_high: %s" % repr(result.aggregate_high),
        "",
        "test metrics (n=%d, p=%d):" % (metrics_doc["n"], metrics_doc["p"]),
    ]
    for key in ("mae", "mse", "rmse", "r2", "adjusted_r2", "mape"):
        value = metrics_doc[key]
        lines.append("  %s: %s" % (key, "undefined" if value is None else repr(value)))
    for warning in metrics_doc["warnings"]:
        lines.append("  warning: %s" % warning)
    Path(config.artifact("summary.txt")).write_text("\n".join(lines) + "\n", encoding="utf-8")


_DISPATCH = {
    "synth": cmd_synth,
    "prepare": cmd_prepare,
    "tune": cmd_tune,
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "impute": cmd_impute,
    "report": cmd_report,
}


def run(command: str, config: RunConfig) -> None:
    """Execute one pipeline stage; raises SpendestError subclasses."""
    if command not in _DISPATCH:
        raise ConfigError(f"unknown command {command!r}; choose from {', '.join(COMMANDS)}")
    _DISPATCH[command](config)


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="spendest",
        description="Estimate unreported tutoring expenditures from district finance data.",
    )
    parser.add_argument(
        "--version",
        action="version",
        version=f"spendest {__version__} (artifact schema {SCHEMA_VERSION})",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name, help=f"run the {name} stage")
        p.add_argument("--config", help="JSON run configuration file")
        p.add_argument("--input", help="input CSV path")
        p.add_argument("--out", help="output directory")
        p.add_argument("--model", help="model JSON path")
        p.add_argument("--study", help="study JSON path")
        p.add_argument("--trials", type=int, help="number of tuning trials")
        p.add_argument("--folds", type=int, help="cross-validation folds")
        p.add_argument("--test-fraction", type=float, help="held-out fraction")
        p.add_argument("--iqr-k", type=float, help="IQR fence multiplier")
        p.add_argument("--seed", type=int, help="base seed")
    return parser


def _apply_overrides(config: RunConfig, args: argparse.Namespace) -> RunConfig:
    updates = {}
    for flag, key in (
        ("input", "input"),
        ("out", "out"),
        ("model", "model"),
        ("study", "study"),
        ("trials", "n_trials"),
        ("folds", "cv_folds"),
        ("test_fraction", "test_fraction"),
        ("iqr_k", "iqr_k"),
        ("seed", "seed"),
    ):
        value = getattr(args, flag)
        if value is not None:
            updates[key] = value
    return replace(config, **updates) if updates else config


def main(argv: Sequence[str] | None = None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        config = RunConfig.from_file(args.config) if args.config else RunConfig()
        config = _apply_overrides(config, args)
        run(args.command, config)
    except ConfigError as exc:
        print(f"{args.command}: {exc}", file=sys.stderr)
        return 2
    except MissingArtifactError as exc:
        print(f"{args.command}: {exc}", file=sys.stderr)
        return 3
    except DataError as exc:
        print(f"{args.command}: {exc}", file=sys.stderr)
        return 4
    except SpendestError as exc:
        print(f"{args.command}: internal error: {exc}", file=sys.stderr)
        return 5
    except Exception as exc:  # pragma: no cover - defensive
        print(f"{args.command}: internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 5
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
