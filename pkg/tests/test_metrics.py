import math

import numpy as np
import pytest
from hypothesis import assume, given
from hypothesis import strategies as st

from oracles import oracle_metrics
from spendest.errors import DataError
from spendest.metrics import adjusted_r2, evaluate

finite_floats = st.floats(-1e6, 1e6, allow_nan=False, allow_infinity=False)


class TestAdjustedR2:
    def test_hand_example(self):
        assert adjusted_r2(0.5, 11, 2) == 0.375

    def test_p_zero_is_identity(self):
        assert adjusted_r2(0.42, 10, 0) == pytest.approx(0.42)

    def test_perfect_fit_stays_perfect(self):
        for n, p in [(5, 1), (30, 7), (100, 98)]:
            assert adjusted_r2(1.0, n, p) == 1.0

    def test_too_few_rows_rejected(self):
        with pytest.raises(DataError):
            adjusted_r2(0.5, 3, 2)
        with pytest.raises(DataError):
            adjusted_r2(0.5, 2, 5)


class TestEvaluate:
    def test_perfect_fit(self):
        r = evaluate([1.0, 2.0, 3.0], [1.0, 2.0, 3.0], p=1)
        assert r.mae == 0.0
        assert r.mse == 0.0
        assert r.rmse == 0.0
        assert r.r2 == 1.0
        assert r.warnings == []

    def test_constant_offset(self):
        r = evaluate([1.0, 2.0, 3.0], [2.0, 3.0, 4.0], p=1)
        assert r.mae == 1.0
        assert r.mse == 1.0
        assert r.rmse == 1.0
        assert r.r2 == -0.5

    def test_mean_predictor_scores_zero(self):
        y = [3.0, 5.0, 7.0, 9.0]
        r = evaluate(y, [6.0] * 4, p=1)
        assert r.r2 == 0.0

    def test_zero_variance_yields_undefined_r2(self):
        r = evaluate([2.0, 2.0, 2.0], [1.0, 2.0, 3.0], p=1)
        assert r.r2 is None
        assert r.adjusted_r2 is None
        assert any("variance" in w for w in r.warnings)
        assert r.mae == pytest.approx(2.0 / 3.0)

    def test_mape_skips_zero_targets(self):
        r = evaluate([0.0, 2.0, 4.0], [1.0, 1.0, 5.0], p=1)
        assert r.mape == pytest.approx((0.5 + 0.25) / 2)
        assert r.mape_excluded == 1

    def test_all_zero_targets_undefine_mape(self):
        r = evaluate([0.0, 0.0, 0.0], [1.0, 2.0, 3.0], p=1)
        assert r.mape is None
        assert r.mape_excluded == 3
        assert any("mape" in w for w in r.warnings)

    def test_adjusted_undefined_when_n_too_small(self):
        r = evaluate([1.0, 2.0, 3.0], [1.5, 2.0, 2.5], p=2)
        assert r.r2 is not None
        assert r.adjusted_r2 is None
        assert any("adjusted" in w.lower() for w in r.warnings)

    def test_length_mismatch(self):
        with pytest.raises(DataError):
            evaluate([1.0, 2.0], [1.0], p=1)

    def test_single_row_rejected(self):
        with pytest.raises(DataError):
            evaluate([1.0], [1.0], p=1)

    def test_non_finite_rejected(self):
        with pytest.raises(DataError):
            evaluate([1.0, float("nan")], [1.0, 2.0], p=1)

    def test_report_doc_uses_null_for_undefined(self):
        r = evaluate([2.0, 2.0, 2.0], [1.0, 2.0, 3.0], p=1)
        doc = r.to_doc()
        assert doc["r2"] is None
        assert doc["adjusted_r2"] is None
        assert doc["n"] == 3
        assert isinstance(doc["warnings"], list)

    def test_matches_plain_python_recount(self):
        rng = np.random.default_rng(4)
        for _ in range(25):
            n = int(rng.integers(3, 40))
            y = rng.standard_normal(n) * 10
            y[rng.random(n) < 0.1] = 0.0
            yhat = y + rng.standard_normal(n)
            r = evaluate(y, yhat, p=2)
            want = oracle_metrics(y.tolist(), yhat.tolist(), 2)
            for key in ("mae", "mse", "rmse", "r2", "adjusted_r2", "mape"):
                got = getattr(r, key)
                if want[key] is None:
                    assert got is None
                else:
                    assert got == pytest.approx(want[key], rel=1e-12)


class TestProperties:
    @given(st.lists(finite_floats, min_size=2, max_size=30), st.integers(0, 5))
    def test_rmse_squares_to_mse(self, y, shift):
        yhat = [v + shift for v in y]
        r = evaluate(y, yhat, p=1)
        assert r.rmse * r.rmse == pytest.approx(r.mse, rel=1e-12, abs=1e-300)

    @given(
        st.lists(st.tuples(finite_floats, finite_floats), min_size=3, max_size=25),
        st.floats(-1e5, 1e5, allow_nan=False),
    )
    def test_r2_shift_invariance(self, pairs, c):
        y = [a for a, _ in pairs]
        yhat = [b for _, b in pairs]
        # the spread must survive the shift, or ss_tot cancels to zero
        assume(max(y) - min(y) >= 1e-3 * max(1.0, abs(c)))
        base = evaluate(y, yhat, p=1)
        shifted = evaluate([a + c for a in y], [b + c for b in yhat], p=1)
        assert base.r2 is not None and shifted.r2 is not None
        assert shifted.r2 == pytest.approx(base.r2, rel=1e-6, abs=1e-6)

    @given(st.lists(st.tuples(finite_floats, finite_floats), min_size=2, max_size=25))
    def test_exclusion_tally_partitions_rows(self, pairs):
        y = [a for a, _ in pairs]
        yhat = [b for _, b in pairs]
        r = evaluate(y, yhat, p=1)
        included = sum(1 for v in y if v != 0)
        assert r.mape_excluded + included == r.n
