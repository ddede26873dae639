"""Independent reference implementations used to check the real ones.

Everything here favors clarity over speed: splits come from exhaustive
enumeration with direct masked sums, metrics from plain Python loops.
"""

from __future__ import annotations

import math

import numpy as np


def oracle_score(grad_sum: float, hess_sum: float, lam: float, alpha: float) -> float:
    mag = max(abs(grad_sum) - alpha, 0.0)
    return mag * mag / (hess_sum + lam)


def oracle_leaf_weight(grad_sum: float, hess_sum: float, lam: float, alpha: float) -> float:
    mag = max(abs(grad_sum) - alpha, 0.0)
    if mag == 0.0:
        return 0.0
    return -math.copysign(mag / (hess_sum + lam), grad_sum)


def oracle_best_split(X, g, h, lam, gamma, alpha, mcw):
    """Enumerate every (feature, midpoint threshold) candidate.

    Returns (gain, feature, threshold) for the best legal candidate or
    None.  Ties keep the lowest feature index, then lowest threshold:
    iteration is ascending and replacement requires beating the
    incumbent by a relative epsilon, so gains equal up to accumulation
    roundoff count as ties (mirroring the production scan, which sums
    in a different order).
    """
    n, d = X.shape
    best = None
    parent_g, parent_h = float(np.sum(g)), float(np.sum(h))
    parent = oracle_score(parent_g, parent_h, lam, alpha)
    for j in range(d):
        distinct = np.unique(X[:, j])
        for a, b in zip(distinct[:-1], distinct[1:]):
            thr = 0.5 * (float(a) + float(b))
            mask = X[:, j] < thr
            hl = float(np.sum(h[mask]))
            hr = float(np.sum(h[~mask]))
            if hl < mcw or hr < mcw:
                continue
            gl = float(np.sum(g[mask]))
            gr = float(np.sum(g[~mask]))
            gain = (
                0.5 * (oracle_score(gl, hl, lam, alpha) + oracle_score(gr, hr, lam, alpha) - parent)
                - gamma
            )
            if best is None or gain > best[0] + 1e-12 * max(1.0, abs(best[0])):
                best = (gain, j, thr)
    return best


def assert_tree_matches_enumeration(tree, X, g, h, hp, gain_tol=1e-9):
    """Walk a built tree and check every node against enumeration.

    Assumes the tree was built with subsample = colsample_bytree = 1 so
    node membership is reconstructible by routing.
    """
    lam, gamma, alpha, mcw = hp.reg_lambda, hp.gamma, hp.reg_alpha, hp.min_child_weight

    def walk(node, rows, depth):
        sub_x, sub_g, sub_h = X[rows], g[rows], h[rows]
        best = oracle_best_split(sub_x, sub_g, sub_h, lam, gamma, alpha, mcw)
        if tree.feature[node] >= 0:
            assert depth < hp.max_depth, "split deeper than max_depth"
            assert best is not None, "tree split where enumeration finds no candidate"
            gain, feature, thr = best
            assert gain > 0, f"tree split with nonpositive enumerated gain {gain}"
            assert tree.feature[node] == feature, (
                f"feature {tree.feature[node]} != enumerated {feature}"
            )
            assert tree.threshold[node] == thr, (
                f"threshold {tree.threshold[node]} != enumerated {thr}"
            )
            assert abs(tree.gain[node] - gain) <= gain_tol, (
                f"gain {tree.gain[node]} != enumerated {gain}"
            )
            mask = X[rows, tree.feature[node]] < tree.threshold[node]
            walk(tree.left[node], rows[mask], depth + 1)
            walk(tree.right[node], rows[~mask], depth + 1)
        else:
            if depth < hp.max_depth and best is not None:
                assert best[0] <= gain_tol, (
                    f"leaf emitted but enumeration finds gain {best[0]}"
                )
            expect = oracle_leaf_weight(float(np.sum(sub_g)), float(np.sum(sub_h)), lam, alpha)
            assert abs(tree.weight[node] - expect) <= gain_tol * max(1.0, abs(expect))

    walk(0, np.arange(X.shape[0]), 0)


def oracle_metrics(y, yhat, p):
    """Plain-Python recomputation of every defined metric."""
    n = len(y)
    abs_err = [abs(a - b) for a, b in zip(y, yhat)]
    sq_err = [(a - b) ** 2 for a, b in zip(y, yhat)]
    mae = sum(abs_err) / n
    mse = sum(sq_err) / n
    rmse = math.sqrt(mse)
    mean_y = sum(y) / n
    ss_tot = sum((v - mean_y) ** 2 for v in y)
    r2 = None if ss_tot == 0 else 1.0 - sum(sq_err) / ss_tot
    adj = None
    if r2 is not None and n > p + 1:
        adj = 1.0 - (1.0 - r2) * (n - 1) / (n - p - 1)
    ratios = [abs(a - b) / abs(a) for a, b in zip(y, yhat) if a != 0]
    mape = sum(ratios) / len(ratios) if ratios else None
    return {"mae": mae, "mse": mse, "rmse": rmse, "r2": r2, "adjusted_r2": adj, "mape": mape}
