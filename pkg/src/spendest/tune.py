"""Hyperparameter search: k-fold CV objective plus a univariate
tree-structured Parzen estimator sampler.

The study minimizes the positive mean cross-validated RMSE.  After a
uniform startup phase the sampler splits history into good/bad sets at
the ceil(gamma_quantile * n) best trials, models each parameter with a
1-D mixture of truncated Gaussians (bandwidth = distance to the farther
neighboring observation, domain endpoints included) plus a uniform
prior component, draws candidates from the good-set density, and keeps
the candidate maximizing the good/bad density ratio.  Log-scaled
parameters are modeled in the log domain; integer parameters are
rounded before scoring.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.special import ndtr, ndtri

from .errors import DataError
from .gbt import Hyperparams, fit, predict
from .jsonio import dump_canonical, load_json
from .tabular import EncodedMatrix, round_half_up

# Bandwidths below this fraction of the domain collapse the kernel onto
# duplicated observations; clip them away.
_MIN_BANDWIDTH_FRACTION = 1e-6

PARAM_KINDS = ("integer", "real")


@dataclass(frozen=True)
class ParamSpec:
    name: str
    kind: str
    low: float
    high: float
    log_scale: bool = False

    def __post_init__(self) -> None:
        if not self.name:
            raise DataError("parameter name must be nonempty")
        if self.kind not in PARAM_KINDS:
            raise DataError(f"parameter kind must be one of {PARAM_KINDS}, got {self.kind!r}")
        if not self.low < self.high:
            raise DataError(f"{self.name}: low must be below high, got [{self.low}, {self.high}]")
        if self.log_scale and self.low <= 0:
            raise DataError(f"{self.name}: log scale needs a positive lower bound")
        if self.kind == "integer" and (self.low != int(self.low) or self.high != int(self.high)):
            raise DataError(f"{self.name}: integer bounds must be whole numbers")

    def to_doc(self) -> dict:
        low = int(self.low) if self.kind == "integer" else float(self.low)
        high = int(self.high) if self.kind == "integer" else float(self.high)
        return {
            "name": self.name,
            "kind": self.kind,
            "low": low,
            "high": high,
            "log_scale": self.log_scale,
        }

    @classmethod
    def from_doc(cls, doc: dict) -> "ParamSpec":
        expected = {"name", "kind", "low", "high", "log_scale"}
        if set(doc) != expected:
            raise DataError(f"parameter document fields {sorted(doc)} != {sorted(expected)}")
        return cls(
            name=str(doc["name"]),
            kind=str(doc["kind"]),
            low=float(doc["low"]),
            high=float(doc["high"]),
            log_scale=bool(doc["log_scale"]),
        )


@dataclass(frozen=True)
class SearchSpace:
    params: tuple[ParamSpec, ...]

    def __post_init__(self) -> None:
        names = [p.name for p in self.params]
        if not names:
            raise DataError("search space needs at least one parameter")
        if len(set(names)) != len(names):
            raise DataError("search space parameter names must be unique")

    def to_doc(self) -> list[dict]:
        return [p.to_doc() for p in self.params]

    @classmethod
    def from_doc(cls, doc: Sequence[dict]) -> "SearchSpace":
        return cls(tuple(ParamSpec.from_doc(d) for d in doc))


def default_search_space() -> SearchSpace:
    """The full 9-parameter boosting search space."""
    return SearchSpace(
        (
            ParamSpec("n_estimators", "integer", 50, 1000),
            ParamSpec("max_depth", "integer", 3, 15),
            ParamSpec("learning_rate", "real", 1e-4, 0.5, log_scale=True),
            ParamSpec("subsample", "real", 0.5, 1.0),
            ParamSpec("colsample_bytree", "real", 0.5, 1.0),
            ParamSpec("min_child_weight", "integer", 1, 7),
            ParamSpec("reg_alpha", "real", 1e-8, 1.0, log_scale=True),
            ParamSpec("reg_lambda", "real", 1e-8, 1.0, log_scale=True),
            ParamSpec("gamma", "real", 1e-8, 1.0, log_scale=True),
        )
    )


@dataclass(frozen=True)
class TpeConfig:
    gamma_quantile: float = 0.25
    startup_trials: int = 10
    ei_candidates: int = 24
    seed: int | None = None

    def __post_init__(self) -> None:
        if not 0 < self.gamma_quantile < 1:
            raise DataError(f"gamma_quantile must lie in (0, 1), got {self.gamma_quantile}")
        if not isinstance(self.startup_trials, int) or self.startup_trials < 1:
            raise DataError(f"startup_trials must be a positive integer, got {self.startup_trials}")
        if not isinstance(self.ei_candidates, int) or self.ei_candidates < 1:
            raise DataError(f"ei_candidates must be a positive integer, got {self.ei_candidates}")
        if self.seed is not None and (not isinstance(self.seed, int) or self.seed < 0):
            raise DataError(f"seed must be None or a nonnegative integer, got {self.seed}")

    def to_doc(self) -> dict:
        return {
            "gamma_quantile": self.gamma_quantile,
            "startup_trials": self.startup_trials,
            "ei_candidates": self.ei_candidates,
            "seed": self.seed,
        }

    @classmethod
    def from_doc(cls, doc: dict) -> "TpeConfig":
        expected = {"gamma_quantile", "startup_trials", "ei_candidates", "seed"}
        if set(doc) != expected:
            raise DataError(f"tpe_config fields {sorted(doc)} != {sorted(expected)}")
        seed = doc["seed"]
        return cls(
            gamma_quantile=float(doc["gamma_quantile"]),
            startup_trials=int(doc["startup_trials"]),
            ei_candidates=int(doc["ei_candidates"]),
            seed=None if seed is None else int(seed),
        )


@dataclass(frozen=True)
class Trial:
    index: int
    params: dict
    value: float
    fold_values: tuple[float, ...]

    def to_doc(self) -> dict:
        return {
            "index": self.index,
            "params": dict(self.params),
            "value": self.value,
            "fold_values": list(self.fold_values),
        }


@dataclass(frozen=True)
class Study:
    seed: int
    space: SearchSpace
    tpe_config: TpeConfig
    trials: tuple[Trial, ...]
    best_index: int

    @property
    def best_trial(self) -> Trial:
        return self.trials[self.best_index]


def kfold_indices(n: int, k: int, seed: int) -> list[tuple[np.ndarray, np.ndarray]]:
    """Seeded shuffle, then k contiguous chunks as validation folds.

    The first n % k folds hold ceil(n / k) rows, the rest floor(n / k).
    """
    if k < 2:
        raise DataError(f"k-fold needs k >= 2, got {k}")
    if k > n:
        raise DataError(f"k-fold needs k <= n, got k={k}, n={n}")
    order = np.random.default_rng(seed).permutation(n)
    base = n // k
    remainder = n % k
    folds = []
    start = 0
    for i in range(k):
        size = base + (1 if i < remainder else 0)
        val = np.sort(order[start : start + size])
        train = np.sort(np.concatenate([order[:start], order[start + size :]]))
        folds.append((train, val))
        start += size
    return folds


def cv_objective(
    matrix: EncodedMatrix,
    y: np.ndarray,
    hp: Hyperparams,
    k: int,
    seed: int = 0,
    folds: Sequence[tuple[np.ndarray, np.ndarray]] | None = None,
) -> tuple[float, list[float]]:
    """Mean out-of-fold RMSE and the per-fold values, in fold order."""
    y = np.asarray(y, dtype=np.float64)
    if y.shape != (matrix.n_rows,):
        raise DataError("target length does not match matrix rows")
    if folds is None:
        folds = kfold_indices(matrix.n_rows, k, seed)
    fold_values = []
    for train_idx, val_idx in folds:
        model = fit(matrix.take(train_idx), y[train_idx], hp)
        pred = predict(model, matrix.take(val_idx))
        err = y[val_idx] - pred
        fold_values.append(float(math.sqrt(np.mean(err * err))))
    return float(np.mean(fold_values)), fold_values


def _to_domain(spec: ParamSpec, value: float) -> float:
    return math.log(value) if spec.log_scale else float(value)


def _from_domain(spec: ParamSpec, t: float):
    value = math.exp(t) if spec.log_scale else t
    if spec.kind == "integer":
        return int(min(max(round_half_up(value), int(spec.low)), int(spec.high)))
    return float(min(max(value, spec.low), spec.high))


def _domain_bounds(spec: ParamSpec) -> tuple[float, float]:
    return _to_domain(spec, spec.low), _to_domain(spec, spec.high)


def uniform_suggest(space: SearchSpace, rng: np.random.Generator) -> dict:
    """One independent uniform draw per parameter (log domain if log-scaled)."""
    params = {}
    for spec in space.params:
        if spec.kind == "integer" and not spec.log_scale:
            params[spec.name] = int(rng.integers(int(spec.low), int(spec.high) + 1))
        else:
            lo, hi = _domain_bounds(spec)
            params[spec.name] = _from_domain(spec, rng.uniform(lo, hi))
    return params


def _parzen_components(obs: np.ndarray, lo: float, hi: float) -> tuple[np.ndarray, np.ndarray]:
    """Kernel centers and bandwidths for a 1-D Parzen density.

    Each observation's bandwidth is its distance to the farther of its
    neighboring observations; the first and last use their single
    neighbor, and a lone observation spans the whole domain.  Bandwidths
    are clipped below at span / min(100, n + 1): generous smoothing
    while history is short, tightening as observations accumulate, so
    suggestions anneal from exploration to exploitation instead of
    seizing on the first decent cluster.
    """
    mus = np.sort(obs)
    span = hi - lo
    if mus.size == 0:
        return mus, mus
    if mus.size == 1:
        return mus, np.array([span], dtype=np.float64)
    gaps = np.diff(mus)
    left = np.concatenate(([0.0], gaps))
    right = np.concatenate((gaps, [0.0]))
    bw = np.maximum(left, right)
    floor = max(span / min(100, mus.size + 1), _MIN_BANDWIDTH_FRACTION * span)
    bw = np.clip(bw, floor, span)
    return mus, bw


def _mixture_pdf(x: np.ndarray, mus: np.ndarray, bws: np.ndarray, lo: float, hi: float) -> np.ndarray:
    """Density of the equal-weight mixture: uniform prior kernel plus one
    truncated Gaussian per observation."""
    n_comp = mus.size + 1
    pdf = np.full(x.shape, 1.0 / (hi - lo))
    if mus.size:
        z = (x[:, None] - mus[None, :]) / bws[None, :]
        norm = (ndtr((hi - mus) / bws) - ndtr((lo - mus) / bws)) * bws
        pdf = pdf + (np.exp(-0.5 * z * z) / math.sqrt(2.0 * math.pi) / norm[None, :]).sum(axis=1)
    return pdf / n_comp


def _mixture_sample(
    count: int,
    mus: np.ndarray,
    bws: np.ndarray,
    lo: float,
    hi: float,
    rng: np.random.Generator,
) -> np.ndarray:
    components = rng.integers(0, mus.size + 1, size=count)
    uniforms = rng.random(count)
    if mus.size:
        f_lo = ndtr((lo - mus) / bws)
        f_hi = ndtr((hi - mus) / bws)
    out = np.empty(count, dtype=np.float64)
    for i in range(count):
        c = components[i]
        if c == 0:
            out[i] = lo + (hi - lo) * uniforms[i]
        else:
            mu, bw = mus[c - 1], bws[c - 1]
            # Inverse-CDF sampling of the truncated Gaussian.
            out[i] = mu + bw * ndtri(f_lo[c - 1] + uniforms[i] * (f_hi[c - 1] - f_lo[c - 1]))
    return np.clip(out, lo, hi)


def tpe_suggest(
    space: SearchSpace,
    history: Sequence[Trial],
    cfg: TpeConfig,
    rng: np.random.Generator,
) -> dict:
    """Propose parameters from history; uniform until startup completes."""
    if len(history) < cfg.startup_trials:
        return uniform_suggest(space, rng)
    ranked = sorted(history, key=lambda t: (t.value, t.index))
    n_good = math.ceil(cfg.gamma_quantile * len(history))
    good, bad = ranked[:n_good], ranked[n_good:]
    params = {}
    for spec in space.params:
        lo, hi = _domain_bounds(spec)
        try:
            good_obs = np.array([_to_domain(spec, t.params[spec.name]) for t in good])
            bad_obs = np.array([_to_domain(spec, t.params[spec.name]) for t in bad])
        except KeyError as exc:
            raise DataError(f"trial history lacks parameter {spec.name!r}") from exc
        good_mus, good_bws = _parzen_components(good_obs, lo, hi)
        bad_mus, bad_bws = _parzen_components(bad_obs, lo, hi)
        candidates = _mixture_sample(cfg.ei_candidates, good_mus, good_bws, lo, hi, rng)
        if spec.kind == "integer":
            # Score the values actually usable, not the raw continuous draws.
            discrete = np.array([_from_domain(spec, c) for c in candidates], dtype=np.float64)
            candidates = np.array([_to_domain(spec, v) for v in discrete])
        density_good = _mixture_pdf(candidates, good_mus, good_bws, lo, hi)
        density_bad = _mixture_pdf(candidates, bad_mus, bad_bws, lo, hi)
        pick = int(np.argmax(density_good / density_bad))
        params[spec.name] = _from_domain(spec, float(candidates[pick]))
    return params


def _hyperparams_from(params: dict, seed: int) -> Hyperparams:
    try:
        return Hyperparams(**params, seed=seed)
    except TypeError as exc:
        raise DataError(f"search space names must be Hyperparams fields: {exc}") from exc


def run_study(
    matrix: EncodedMatrix,
    y: np.ndarray,
    space: SearchSpace,
    n_trials: int,
    k: int = 5,
    cfg: TpeConfig | None = None,
    seed: int = 0,
) -> Study:
    """Sequential TPE study over the CV objective.

    Folds are shuffled once per study from ``seed`` and reused by every
    trial.  Trial i trains with hyperparameter seed ``seed + i``; the
    sampler uses ``cfg.seed`` when set, else the study seed.
    """
    if n_trials < 1:
        raise DataError(f"a study needs at least one trial, got {n_trials}")
    cfg = cfg if cfg is not None else TpeConfig()
    rng = np.random.default_rng(seed if cfg.seed is None else cfg.seed)
    folds = kfold_indices(matrix.n_rows, k, seed)
    trials: list[Trial] = []
    for i in range(n_trials):
        params = tpe_suggest(space, trials, cfg, rng)
        hp = _hyperparams_from(params, seed=seed + i)
        value, fold_values = cv_objective(matrix, y, hp, k, folds=folds)
        trials.append(Trial(index=i, params=params, value=value, fold_values=tuple(fold_values)))
    best_index = min(range(len(trials)), key=lambda i: (trials[i].value, i))
    return Study(
        seed=seed,
        space=space,
        tpe_config=cfg,
        trials=tuple(trials),
        best_index=best_index,
    )


def save_study(study: Study, path: str | Path) -> None:
    doc = {
        "seed": study.seed,
        "space": study.space.to_doc(),
        "tpe_config": study.tpe_config.to_doc(),
        "trials": [t.to_doc() for t in study.trials],
        "best_index": study.best_index,
    }
    dump_canonical(doc, path)


def load_study(path: str | Path) -> Study:
    doc = load_json(path)
    if not isinstance(doc, dict):
        raise DataError(f"{path}: study document must be an object")
    expected = {"seed", "space", "tpe_config", "trials", "best_index"}
    if set(doc) != expected:
        raise DataError(f"{path}: study document fields {sorted(doc)} != {sorted(expected)}")
    trials = []
    for entry in doc["trials"]:
        fields = {"index", "params", "value", "fold_values"}
        if not isinstance(entry, dict) or set(entry) != fields:
            raise DataError(f"{path}: malformed trial entry")
        trials.append(
            Trial(
                index=int(entry["index"]),
                params=dict(entry["params"]),
                value=float(entry["value"]),
                fold_values=tuple(float(v) for v in entry["fold_values"]),
            )
        )
    best_index = int(doc["best_index"])
    if not 0 <= best_index < len(trials):
        raise DataError(f"{path}: best_index {best_index} out of range")
    return Study(
        seed=int(doc["seed"]),
        space=SearchSpace.from_doc(doc["space"]),
        tpe_config=TpeConfig.from_doc(doc["tpe_config"]),
        trials=tuple(trials),
        best_index=best_index,
    )
