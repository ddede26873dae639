"""Second-order gradient-boosted regression trees with exact greedy splits.

Squared-error loss, so per-row gradient g = yhat - y and hessian h = 1.
Leaf weights apply an L1 soft-threshold on the gradient sum:

    w = -sign(G) * max(|G| - alpha, 0) / (H + lambda)

and a split's gain is half the children's score improvement over the
parent minus the per-leaf penalty gamma, with

    score(G, H) = max(|G| - alpha, 0)^2 / (H + lambda).

Split finding is exact: every boundary between distinct sorted feature
values is evaluated, thresholds are midpoints, and rows route left on
strict less-than.  Ties in gain resolve to the lowest feature index,
then the lowest threshold.  The scan kernels are numba-compiled; feature
columns are presorted once per fit and nodes filter the sorted order by
membership instead of re-sorting.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
from numba import njit

from . import SCHEMA_VERSION
from .errors import DataError
from .jsonio import dump_canonical, load_json
from .tabular import EncodedMatrix


@dataclass(frozen=True)
class Hyperparams:
    """Boosting configuration; defaults mirror common library defaults."""

    n_estimators: int = 100
    max_depth: int = 6
    learning_rate: float = 0.3
    subsample: float = 1.0
    colsample_bytree: float = 1.0
    min_child_weight: float = 1.0
    reg_alpha: float = 0.0
    reg_lambda: float = 1.0
    gamma: float = 0.0
    seed: int = 0

    def __post_init__(self) -> None:
        if not isinstance(self.n_estimators, int) or self.n_estimators < 1:
            raise DataError(f"n_estimators must be a positive integer, got {self.n_estimators}")
        if not isinstance(self.max_depth, int) or self.max_depth < 1:
            raise DataError(f"max_depth must be a positive integer, got {self.max_depth}")
        if not self.learning_rate >= 0:
            raise DataError(f"learning_rate must be nonnegative, got {self.learning_rate}")
        if not 0 < self.subsample <= 1:
            raise DataError(f"subsample must lie in (0, 1], got {self.subsample}")
        if not 0 < self.colsample_bytree <= 1:
            raise DataError(f"colsample_bytree must lie in (0, 1], got {self.colsample_bytree}")
        if not self.min_child_weight >= 0:
            raise DataError(f"min_child_weight must be nonnegative, got {self.min_child_weight}")
        if not self.reg_alpha >= 0:
            raise DataError(f"reg_alpha must be nonnegative, got {self.reg_alpha}")
        if not self.reg_lambda >= 0:
            raise DataError(f"reg_lambda must be nonnegative, got {self.reg_lambda}")
        if not self.gamma >= 0:
            raise DataError(f"gamma must be nonnegative, got {self.gamma}")
        if not isinstance(self.seed, int) or self.seed < 0:
            raise DataError(f"seed must be a nonnegative integer, got {self.seed}")


def tuned_defaults(seed: int = 0) -> Hyperparams:
    """Configuration selected by a prior full-scale tuning run.

    Used as the training default when no study artifact is supplied.
    min_child_weight was not recorded by that run; the search-range
    minimum of 1 is used.
    """
    return Hyperparams(
        n_estimators=457,
        max_depth=3,
        learning_rate=0.0108,
        subsample=0.7906,
        colsample_bytree=0.8462,
        min_child_weight=1.0,
        reg_alpha=1e-7,
        reg_lambda=1e-7,
        gamma=1e-7,
        seed=seed,
    )


@dataclass(frozen=True)
class GradHess:
    g: np.ndarray
    h: np.ndarray

    def __post_init__(self) -> None:
        if self.g.shape != self.h.shape or self.g.ndim != 1:
            raise DataError("gradient and hessian must be 1-D arrays of equal length")


def compute_grad_hess(y: np.ndarray, yhat: np.ndarray) -> GradHess:
    """Squared-error derivatives: g = yhat - y, h = 1."""
    y = np.asarray(y, dtype=np.float64)
    yhat = np.asarray(yhat, dtype=np.float64)
    if y.shape != yhat.shape or y.ndim != 1:
        raise DataError("y and yhat must be 1-D arrays of equal length")
    return GradHess(g=yhat - y, h=np.ones_like(y))


def leaf_weight(grad_sum: float, hess_sum: float, reg_lambda: float, alpha: float) -> float:
    """Soft-thresholded Newton step for one leaf."""
    denom = hess_sum + reg_lambda
    if denom <= 0:
        raise DataError(f"hessian sum plus lambda must be positive, got {denom}")
    mag = abs(grad_sum) - alpha
    if mag <= 0:
        return 0.0
    w = mag / denom
    return -w if grad_sum > 0 else w


def _leaf_score(grad_sum: float, hess_sum: float, reg_lambda: float, alpha: float) -> float:
    mag = abs(grad_sum) - alpha
    if mag < 0:
        mag = 0.0
    return mag * mag / (hess_sum + reg_lambda)


def split_gain(
    g_left: float,
    h_left: float,
    g_right: float,
    h_right: float,
    reg_lambda: float = 0.0,
    gamma: float = 0.0,
    alpha: float = 0.0,
) -> float:
    """Gain of splitting a node into the given left/right aggregates."""
    for h in (h_left + reg_lambda, h_right + reg_lambda, h_left + h_right + reg_lambda):
        if h <= 0:
            raise DataError(f"hessian sum plus lambda must be positive, got {h}")
    parent = _leaf_score(g_left + g_right, h_left + h_right, reg_lambda, alpha)
    left = _leaf_score(g_left, h_left, reg_lambda, alpha)
    right = _leaf_score(g_right, h_right, reg_lambda, alpha)
    return 0.5 * (left + right - parent) - gamma


@njit(cache=True)
def _kernel_score(grad_sum, hess_sum, reg_lambda, alpha):
    mag = abs(grad_sum) - alpha
    if mag < 0.0:
        mag = 0.0
    return mag * mag / (hess_sum + reg_lambda)


@njit(cache=True)
def _kernel_grow(values, order, cols, rows, g, h, max_depth, reg_lambda, gamma, alpha, mcw):
    """Grow a whole tree with an explicit stack.

    ``order`` holds per-column presorted row indices for the full matrix;
    node membership filters it, so no sorting happens here.  Split
    candidates where either child's hessian sum falls below ``mcw`` (or
    would make a score denominator nonpositive) are skipped.  The running
    best is replaced only when the new gain clears it by a relative
    epsilon; gains that agree to within accumulation roundoff count as
    ties, and ascending feature and threshold iteration then keeps the
    lowest feature index and lowest threshold.

    Node ids are preorder (parent, left subtree, right subtree): the
    stack pushes the right child first so the left pops first.  ``rows``
    arrives sorted and the partition is stable, so per-node sums always
    accumulate in ascending row order.  Returns a nonzero status when a
    leaf denominator H + lambda is nonpositive.
    """
    n = values.shape[0]
    count = rows.size
    cap = 2 * count
    feature = np.full(cap, -1, np.int64)
    threshold = np.full(cap, np.nan, np.float64)
    left = np.full(cap, -1, np.int64)
    right = np.full(cap, -1, np.int64)
    weight = np.zeros(cap, np.float64)
    gain_arr = np.full(cap, np.nan, np.float64)

    idx = rows.copy()
    buf = np.empty(count, np.int64)
    member = np.zeros(n, np.bool_)

    stack = np.empty((cap, 5), np.int64)  # start, end, depth, parent, is_left
    stack[0, 0] = 0
    stack[0, 1] = count
    stack[0, 2] = 0
    stack[0, 3] = -1
    stack[0, 4] = 0
    top = 1
    next_id = 0
    status = 0

    while top > 0:
        top -= 1
        start = stack[top, 0]
        end = stack[top, 1]
        depth = stack[top, 2]
        parent = stack[top, 3]
        node_id = next_id
        next_id += 1
        if parent >= 0:
            if stack[top, 4] == 1:
                left[parent] = node_id
            else:
                right[parent] = node_id

        gtot = 0.0
        htot = 0.0
        for i in range(start, end):
            r = idx[i]
            gtot += g[r]
            htot += h[r]

        did_split = False
        if depth < max_depth and end - start >= 2 and htot + reg_lambda > 0.0:
            parent_score = _kernel_score(gtot, htot, reg_lambda, alpha)
            for i in range(start, end):
                member[idx[i]] = True
            best_feature = -1
            best_threshold = np.nan
            best_gain = -np.inf
            for jj in range(cols.size):
                j = cols[jj]
                gl = 0.0
                hl = 0.0
                prev = 0.0
                have_prev = False
                for p in range(n):
                    r = order[p, j]
                    if not member[r]:
                        continue
                    xv = values[r, j]
                    if have_prev and xv != prev:
                        hr = htot - hl
                        if (
                            hl >= mcw
                            and hr >= mcw
                            and hl + reg_lambda > 0.0
                            and hr + reg_lambda > 0.0
                        ):
                            gr = gtot - gl
                            gain = (
                                0.5
                                * (
                                    _kernel_score(gl, hl, reg_lambda, alpha)
                                    + _kernel_score(gr, hr, reg_lambda, alpha)
                                    - parent_score
                                )
                                - gamma
                            )
                            scale = abs(best_gain)
                            if scale < 1.0:
                                scale = 1.0
                            if best_feature < 0 or gain > best_gain + 1e-12 * scale:
                                best_gain = gain
                                best_feature = j
                                best_threshold = 0.5 * (prev + xv)
                    gl += g[r]
                    hl += h[r]
                    prev = xv
                    have_prev = True
            for i in range(start, end):
                member[idx[i]] = False
            if best_feature >= 0 and best_gain > 0.0:
                feature[node_id] = best_feature
                threshold[node_id] = best_threshold
                gain_arr[node_id] = best_gain
                nl = 0
                for i in range(start, end):
                    r = idx[i]
                    if values[r, best_feature] < best_threshold:
                        buf[nl] = r
                        nl += 1
                nr = nl
                for i in range(start, end):
                    r = idx[i]
                    if not (values[r, best_feature] < best_threshold):
                        buf[nr] = r
                        nr += 1
                for i in range(end - start):
                    idx[start + i] = buf[i]
                mid = start + nl
                stack[top, 0] = mid
                stack[top, 1] = end
                stack[top, 2] = depth + 1
                stack[top, 3] = node_id
                stack[top, 4] = 0
                top += 1
                stack[top, 0] = start
                stack[top, 1] = mid
                stack[top, 2] = depth + 1
                stack[top, 3] = node_id
                stack[top, 4] = 1
                top += 1
                did_split = True
        if not did_split:
            denom = htot + reg_lambda
            if denom <= 0.0:
                status = 1
                break
            mag = abs(gtot) - alpha
            if mag <= 0.0:
                weight[node_id] = 0.0
            else:
                weight[node_id] = -math.copysign(mag / denom, gtot)
    return feature, threshold, left, right, weight, gain_arr, next_id, status


@njit(cache=True)
def _kernel_route(values, feature, threshold, left, right, weight):
    n = values.shape[0]
    out = np.empty(n, dtype=np.float64)
    for i in range(n):
        node = 0
        while feature[node] >= 0:
            if values[i, feature[node]] < threshold[node]:
                node = left[node]
            else:
                node = right[node]
        out[i] = weight[node]
    return out


@dataclass(frozen=True)
class RegressionTree:
    """Flat node arrays; index 0 is the root, leaves have feature == -1."""

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    weight: np.ndarray
    gain: np.ndarray

    @property
    def n_nodes(self) -> int:
        return int(self.feature.size)

    @property
    def n_leaves(self) -> int:
        return int(np.count_nonzero(self.feature < 0))


def tree_predict(tree: RegressionTree, values: np.ndarray) -> np.ndarray:
    """Leaf weight reached by each row; eta is applied by the caller."""
    return _kernel_route(
        values, tree.feature, tree.threshold, tree.left, tree.right, tree.weight
    )


def presort_columns(values: np.ndarray) -> np.ndarray:
    """Per-column stable argsort, computed once per fit and shared by trees."""
    return np.argsort(values, axis=0, kind="stable").astype(np.int64)


def build_tree(
    matrix: EncodedMatrix,
    gh: GradHess,
    hp: Hyperparams,
    rng: np.random.Generator,
    presorted: np.ndarray | None = None,
) -> RegressionTree:
    """Grow one tree by exact greedy splitting.

    The column subsample (ceil(colsample_bytree * d) features) is drawn
    first, then the row subsample (ceil(subsample * n) rows), both
    without replacement from ``rng``.  A node becomes a leaf at depth
    max_depth, when no candidate satisfies min_child_weight, or when the
    best gain is not positive.
    """
    values = matrix.values
    n, d = values.shape
    if n == 0:
        raise DataError("cannot grow a tree on an empty matrix")
    if gh.g.shape != (n,):
        raise DataError(f"gradient length {gh.g.shape[0]} does not match {n} rows")
    if presorted is None:
        presorted = presort_columns(values)

    n_cols = max(1, math.ceil(hp.colsample_bytree * d))
    n_rows = max(1, math.ceil(hp.subsample * n))
    cols = np.sort(rng.choice(d, size=n_cols, replace=False)).astype(np.int64)
    rows = np.sort(rng.choice(n, size=n_rows, replace=False)).astype(np.int64)

    g = np.ascontiguousarray(gh.g, dtype=np.float64)
    h = np.ascontiguousarray(gh.h, dtype=np.float64)

    feature, threshold, left, right, weight, gain, n_nodes, status = _kernel_grow(
        values,
        presorted,
        cols,
        rows,
        g,
        h,
        hp.max_depth,
        float(hp.reg_lambda),
        float(hp.gamma),
        float(hp.reg_alpha),
        float(hp.min_child_weight),
    )
    if status != 0:
        raise DataError("leaf weight undefined: hessian sum + reg_lambda is nonpositive")
    return RegressionTree(
        feature=feature[:n_nodes].copy(),
        threshold=threshold[:n_nodes].copy(),
        left=left[:n_nodes].copy(),
        right=right[:n_nodes].copy(),
        weight=weight[:n_nodes].copy(),
        gain=gain[:n_nodes].copy(),
    )


@dataclass(frozen=True)
class GBTModel:
    base_score: float
    eta: float
    feature_names: tuple[str, ...]
    trees: tuple[RegressionTree, ...]


def fit(
    matrix: EncodedMatrix,
    y: np.ndarray,
    hp: Hyperparams,
    on_round: Callable[[int, np.ndarray], None] | None = None,
) -> GBTModel:
    """Boost ``hp.n_estimators`` trees against squared error.

    Predictions start at mean(y) and each round adds learning_rate times
    the new tree's output, over all rows.  Round t draws its row and
    column subsamples from a generator seeded by (hp.seed, t), so a fit
    is reproducible from the hyperparameters alone.
    """
    y = np.asarray(y, dtype=np.float64)
    n = matrix.n_rows
    if n == 0:
        raise DataError("cannot fit on an empty matrix")
    if y.shape != (n,):
        raise DataError(f"target length {y.shape} does not match {n} rows")
    if not np.isfinite(y).all():
        raise DataError("target values must be finite")

    presorted = presort_columns(matrix.values)
    base_score = float(np.mean(y))
    preds = np.full(n, base_score, dtype=np.float64)
    trees: list[RegressionTree] = []
    for t in range(1, hp.n_estimators + 1):
        gh = compute_grad_hess(y, preds)
        rng = np.random.default_rng([hp.seed, t])
        tree = build_tree(matrix, gh, hp, rng, presorted=presorted)
        preds = preds + hp.learning_rate * tree_predict(tree, matrix.values)
        trees.append(tree)
        if on_round is not None:
            on_round(t, preds)
    return GBTModel(
        base_score=base_score,
        eta=float(hp.learning_rate),
        feature_names=tuple(matrix.feature_names),
        trees=tuple(trees),
    )


def predict(model: GBTModel, matrix: EncodedMatrix) -> np.ndarray:
    """base_score plus eta times each tree's output, in training order."""
    if tuple(matrix.feature_names) != model.feature_names:
        raise DataError(
            "feature names do not match the model: "
            f"expected {list(model.feature_names)}, got {list(matrix.feature_names)}"
        )
    preds = np.full(matrix.n_rows, model.base_score, dtype=np.float64)
    for tree in model.trees:
        preds = preds + model.eta * tree_predict(tree, matrix.values)
    return preds


def staged_predictions(model: GBTModel, matrix: EncodedMatrix) -> np.ndarray:
    """Prediction state after 0..T rounds, shape (T + 1, n_rows)."""
    if tuple(matrix.feature_names) != model.feature_names:
        raise DataError("feature names do not match the model")
    stages = np.empty((len(model.trees) + 1, matrix.n_rows), dtype=np.float64)
    stages[0] = model.base_score
    preds = stages[0].copy()
    for t, tree in enumerate(model.trees, start=1):
        preds = preds + model.eta * tree_predict(tree, matrix.values)
        stages[t] = preds
    return stages


def _tree_to_doc(tree: RegressionTree) -> list[dict]:
    nodes = []
    for i in range(tree.n_nodes):
        if tree.feature[i] >= 0:
            nodes.append(
                {
                    "feature": int(tree.feature[i]),
                    "threshold": float(tree.threshold[i]),
                    "left": int(tree.left[i]),
                    "right": int(tree.right[i]),
                }
            )
        else:
            nodes.append({"weight": float(tree.weight[i])})
    return nodes


def _tree_from_doc(doc: Sequence[dict], n_features: int) -> RegressionTree:
    n = len(doc)
    if n == 0:
        raise DataError("a tree needs at least one node")
    feature = np.full(n, -1, dtype=np.int64)
    threshold = np.full(n, np.nan, dtype=np.float64)
    left = np.full(n, -1, dtype=np.int64)
    right = np.full(n, -1, dtype=np.int64)
    weight = np.zeros(n, dtype=np.float64)
    for i, node in enumerate(doc):
        if not isinstance(node, dict):
            raise DataError(f"tree node {i} is not an object")
        if set(node) == {"feature", "threshold", "left", "right"}:
            f = int(node["feature"])
            l, r = int(node["left"]), int(node["right"])
            t = float(node["threshold"])
            if not 0 <= f < n_features:
                raise DataError(f"tree node {i} references feature {f} of {n_features}")
            if not (0 <= l < n and 0 <= r < n):
                raise DataError(f"tree node {i} has child index out of range")
            if not math.isfinite(t):
                raise DataError(f"tree node {i} has non-finite threshold")
            feature[i], threshold[i], left[i], right[i] = f, t, l, r
        elif set(node) == {"weight"}:
            w = float(node["weight"])
            if not math.isfinite(w):
                raise DataError(f"tree node {i} has non-finite weight")
            weight[i] = w
        else:
            raise DataError(f"tree node {i} has unexpected fields {sorted(node)}")
    return RegressionTree(
        feature=feature,
        threshold=threshold,
        left=left,
        right=right,
        weight=weight,
        gain=np.full(n, np.nan, dtype=np.float64),
    )


def save_model(model: GBTModel, path: str | Path) -> None:
    doc = {
        "schema_version": SCHEMA_VERSION,
        "base_score": float(model.base_score),
        "eta": float(model.eta),
        "feature_names": list(model.feature_names),
        "trees": [_tree_to_doc(tree) for tree in model.trees],
    }
    dump_canonical(doc, path)


def load_model(path: str | Path) -> GBTModel:
    doc = load_json(path)
    if not isinstance(doc, dict):
        raise DataError(f"{path}: model document must be an object")
    expected = {"schema_version", "base_score", "eta", "feature_names", "trees"}
    if set(doc) != expected:
        raise DataError(f"{path}: model document fields {sorted(doc)} != {sorted(expected)}")
    if doc["schema_version"] != SCHEMA_VERSION:
        raise DataError(
            f"{path}: unsupported schema_version {doc['schema_version']!r}, "
            f"expected {SCHEMA_VERSION}"
        )
    feature_names = tuple(str(f) for f in doc["feature_names"])
    trees = tuple(_tree_from_doc(t, len(feature_names)) for t in doc["trees"])
    base = float(doc["base_score"])
    eta = float(doc["eta"])
    if not (math.isfinite(base) and math.isfinite(eta)):
        raise DataError(f"{path}: base_score and eta must be finite")
    return GBTModel(base_score=base, eta=eta, feature_names=feature_names, trees=trees)
