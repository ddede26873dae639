import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from spendest.errors import DataError
from spendest.tabular import (
    Column,
    EncodedMatrix,
    Encoding,
    Schema,
    Table,
    clean_target,
    iqr_fences,
    iqr_filter,
    load_csv,
    one_hot_encode,
    round_half_up,
    train_test_split,
)

SCHEMA = Schema(
    (
        Column("district_id", "id"),
        Column("state", "categorical"),
        Column("enrollment", "numeric"),
        Column("flagged", "mention_flag"),
        Column("spend", "target"),
    )
)


def make_table(rows):
    return Table(SCHEMA, tuple(rows))


def row(rid, state="OH", enrollment=100.0, flagged=True, spend=1.0):
    return {
        "district_id": rid,
        "state": state,
        "enrollment": enrollment,
        "flagged": flagged,
        "spend": spend,
    }


class TestSchema:
    def test_roles(self):
        assert SCHEMA.id_column == "district_id"
        assert SCHEMA.target_column == "spend"
        assert SCHEMA.mention_column == "flagged"
        assert SCHEMA.numeric_columns == ["enrollment"]
        assert SCHEMA.categorical_columns == ["state"]

    def test_requires_one_id_and_target(self):
        with pytest.raises(DataError):
            Schema((Column("a", "numeric"), Column("t", "target")))
        with pytest.raises(DataError):
            Schema((Column("a", "id"), Column("b", "numeric")))

    def test_rejects_duplicate_names_and_bad_kinds(self):
        with pytest.raises(DataError):
            Schema((Column("a", "id"), Column("a", "target")))
        with pytest.raises(DataError):
            Schema((Column("a", "id"), Column("t", "target"), Column("x", "text")))

    def test_at_most_one_mention_flag(self):
        with pytest.raises(DataError):
            Schema(
                (
                    Column("a", "id"),
                    Column("t", "target"),
                    Column("m1", "mention_flag"),
                    Column("m2", "mention_flag"),
                )
            )

    def test_doc_round_trip(self):
        assert Schema.from_doc(SCHEMA.to_doc()) == SCHEMA


class TestLoadCsv:
    def write(self, tmp_path, text):
        path = tmp_path / "data.csv"
        path.write_text(text)
        return path

    def test_loads_and_parses_kinds(self, tmp_path):
        path = self.write(
            tmp_path,
            "district_id,state,enrollment,flagged,spend\n"
            "D1,OH,1200,1,35000.5\n"
            "D2,TX,800,0,\n",
        )
        table = load_csv(path, SCHEMA)
        assert len(table) == 2
        assert table.rows[0]["enrollment"] == 1200.0
        assert table.rows[0]["flagged"] is True
        assert table.rows[1]["flagged"] is False
        assert table.rows[1]["spend"] is None

    def test_header_order_insensitive(self, tmp_path):
        path = self.write(
            tmp_path,
            "spend,district_id,flagged,enrollment,state\n"
            "10,D1,true,5,OH\n",
        )
        table = load_csv(path, SCHEMA)
        assert table.rows[0]["spend"] == 10.0
        assert table.rows[0]["district_id"] == "D1"

    def test_empty_and_na_are_missing_not_zero(self, tmp_path):
        path = self.write(
            tmp_path,
            "district_id,state,enrollment,flagged,spend\n"
            "D1,,NA,,NA\n",
        )
        table = load_csv(path, SCHEMA)
        r = table.rows[0]
        assert r["enrollment"] is None and r["enrollment"] != 0
        assert r["spend"] is None
        assert r["state"] is None
        assert r["flagged"] is None

    def test_missing_column_named_in_error(self, tmp_path):
        path = self.write(tmp_path, "district_id,state,flagged,spend\nD1,OH,1,2\n")
        with pytest.raises(DataError, match="enrollment"):
            load_csv(path, SCHEMA)

    def test_extra_column_named_in_error(self, tmp_path):
        path = self.write(
            tmp_path,
            "district_id,state,enrollment,flagged,spend,bogus\nD1,OH,1,1,2,3\n",
        )
        with pytest.raises(DataError, match="bogus"):
            load_csv(path, SCHEMA)

    def test_unparseable_numeric_reports_row_and_column(self, tmp_path):
        path = self.write(
            tmp_path,
            "district_id,state,enrollment,flagged,spend\n"
            "D1,OH,12,1,5\n"
            "D2,OH,oops,1,5\n",
        )
        with pytest.raises(DataError, match=r"row 2.*enrollment"):
            load_csv(path, SCHEMA)

    def test_non_finite_numeric_rejected(self, tmp_path):
        path = self.write(
            tmp_path, "district_id,state,enrollment,flagged,spend\nD1,OH,inf,1,5\n"
        )
        with pytest.raises(DataError, match="finite"):
            load_csv(path, SCHEMA)

    def test_bad_flag_value_rejected(self, tmp_path):
        path = self.write(
            tmp_path, "district_id,state,enrollment,flagged,spend\nD1,OH,1,maybe,5\n"
        )
        with pytest.raises(DataError, match="flag"):
            load_csv(path, SCHEMA)

    def test_missing_id_rejected(self, tmp_path):
        path = self.write(tmp_path, "district_id,state,enrollment,flagged,spend\n,OH,1,1,5\n")
        with pytest.raises(DataError, match="id"):
            load_csv(path, SCHEMA)

    def test_ragged_row_rejected(self, tmp_path):
        path = self.write(tmp_path, "district_id,state,enrollment,flagged,spend\nD1,OH,1,1\n")
        with pytest.raises(DataError, match="cells"):
            load_csv(path, SCHEMA)


class TestCleanTarget:
    def test_drops_zero_and_missing(self):
        table = make_table(
            [
                row("a", spend=100.0),
                row("b", spend=0.0),
                row("c", spend=None),
                row("d", spend=250.0),
            ]
        )
        cleaned = clean_target(table)
        assert [r["district_id"] for r in cleaned.rows] == ["a", "d"]

    def test_identity_when_all_usable(self):
        table = make_table([row("a", spend=1.0), row("b", spend=-2.0)])
        assert clean_target(table).rows == table.rows

    def test_all_zero_gives_empty(self):
        table = make_table([row("a", spend=0.0)])
        assert len(clean_target(table)) == 0

    def test_idempotent(self):
        table = make_table([row(str(i), spend=s) for i, s in enumerate([1.0, 0.0, None, 3.0])])
        once = clean_target(table)
        assert clean_target(once).rows == once.rows


class TestIqr:
    def test_textbook_example(self):
        low, high = iqr_fences([1, 2, 3, 4, 100], 1.5)
        assert low == -1.0 and high == 7.0
        table = make_table([row(str(i), spend=v) for i, v in enumerate([1, 2, 3, 4, 100])])
        kept = iqr_filter(table, "spend", 1.5)
        assert [r["spend"] for r in kept.rows] == [1, 2, 3, 4]

    def test_uniform_range_keeps_everything(self):
        low, high = iqr_fences(list(range(100)), 1.5)
        assert low == -49.5 and high == 148.5
        table = make_table([row(str(i), spend=float(i)) for i in range(100)])
        assert len(iqr_filter(table, "spend", 1.5)) == 100

    def test_constant_column_keeps_everything(self):
        table = make_table([row(str(i), spend=7.0) for i in range(5)])
        assert len(iqr_filter(table, "spend", 1.5)) == 5

    def test_missing_cells_are_kept(self):
        table = make_table(
            [row("a", enrollment=1.0), row("b", enrollment=None), row("c", enrollment=1000.0)]
        )
        kept = iqr_filter(table, "enrollment", 0.0)
        ids = [r["district_id"] for r in kept.rows]
        assert "b" in ids

    def test_unknown_column_rejected(self):
        with pytest.raises(DataError):
            iqr_filter(make_table([row("a")]), "nope", 1.5)

    def test_categorical_column_rejected(self):
        with pytest.raises(DataError, match="numeric"):
            iqr_filter(make_table([row("a")]), "state", 1.5)

    def test_empty_table_rejected(self):
        with pytest.raises(DataError):
            iqr_filter(make_table([]), "spend", 1.5)

    @given(
        st.lists(st.floats(-1e6, 1e6), min_size=2, max_size=60),
        st.floats(0.0, 4.0),
    )
    def test_fences_match_percentile_oracle(self, values, k):
        low, high = iqr_fences(values, k)
        q1 = float(np.percentile(values, 25, method="linear"))
        q3 = float(np.percentile(values, 75, method="linear"))
        scale = max(1.0, abs(q1), abs(q3))
        assert abs(low - (q1 - k * (q3 - q1))) <= 1e-9 * scale
        assert abs(high - (q3 + k * (q3 - q1))) <= 1e-9 * scale

    @given(st.lists(st.floats(-1e6, 1e6), min_size=1, max_size=60), st.floats(0.0, 3.0))
    def test_filter_keeps_exactly_the_in_fence_rows(self, values, k):
        table = make_table([row(str(i), spend=v) for i, v in enumerate(values)])
        low, high = iqr_fences(values, k)
        kept = iqr_filter(table, "spend", k)
        assert [r["spend"] for r in kept.rows] == [v for v in values if low <= v <= high]


class TestOneHot:
    def test_two_state_example(self):
        table = make_table([row("a", state="OH"), row("b", state="TX")])
        matrix, _ = one_hot_encode(table)
        assert matrix.feature_names == ("enrollment", "state=OH", "state=TX")
        assert matrix.values[0].tolist() == [100.0, 1.0, 0.0]
        assert matrix.values[1].tolist() == [100.0, 0.0, 1.0]
        assert matrix.row_ids == ("a", "b")

    def test_single_category_column_is_all_ones(self):
        table = make_table([row("a"), row("b")])
        matrix, _ = one_hot_encode(table)
        assert matrix.values[:, 1].tolist() == [1.0, 1.0]

    def test_unseen_category_encodes_to_zeros(self):
        train = make_table([row("a", state="OH"), row("b", state="TX")])
        _, encoding = one_hot_encode(train)
        unseen = make_table([row("c", state="WY")])
        matrix, _ = one_hot_encode(unseen, encoding)
        assert matrix.values[0, 1:].tolist() == [0.0, 0.0]

    def test_missing_categorical_encodes_to_zeros(self):
        train = make_table([row("a", state="OH")])
        _, encoding = one_hot_encode(train)
        matrix, _ = one_hot_encode(make_table([row("b", state=None)]), encoding)
        assert matrix.values[0, 1:].tolist() == [0.0]

    def test_missing_numeric_uses_training_mean(self):
        train = make_table([row("a", enrollment=10.0), row("b", enrollment=30.0)])
        _, encoding = one_hot_encode(train)
        assert encoding.numeric_means["enrollment"] == 20.0
        matrix, _ = one_hot_encode(make_table([row("c", enrollment=None)]), encoding)
        assert matrix.values[0, 0] == 20.0

    def test_vocabulary_reuse_is_bit_identical(self):
        table = make_table([row("a", state="TX", enrollment=3.5), row("b", state="OH")])
        matrix1, encoding = one_hot_encode(table)
        matrix2, _ = one_hot_encode(table, encoding)
        assert np.array_equal(matrix1.values, matrix2.values)
        assert matrix1.feature_names == matrix2.feature_names

    def test_categories_sorted_lexicographically(self):
        table = make_table([row("a", state="TX"), row("b", state="GA"), row("c", state="OH")])
        matrix, encoding = one_hot_encode(table)
        assert encoding.categorical["state"] == ["GA", "OH", "TX"]
        assert matrix.feature_names == ("enrollment", "state=GA", "state=OH", "state=TX")

    def test_group_sums_are_one_iff_category_known(self):
        train = make_table([row("a", state="OH"), row("b", state="TX")])
        _, encoding = one_hot_encode(train)
        mixed = make_table([row("c", state="TX"), row("d", state="WY"), row("e", state=None)])
        matrix, _ = one_hot_encode(mixed, encoding)
        sums = matrix.values[:, 1:].sum(axis=1)
        assert sums.tolist() == [1.0, 0.0, 0.0]

    def test_encoding_doc_round_trip(self):
        encoding = Encoding(categorical={"state": ["OH", "TX"]}, numeric_means={"enrollment": 2.5})
        assert Encoding.from_doc(encoding.to_doc()) == encoding

    def test_encoding_missing_column_rejected(self):
        table = make_table([row("a")])
        with pytest.raises(DataError):
            one_hot_encode(table, Encoding(categorical={}, numeric_means={"enrollment": 0.0}))


class TestTrainTestSplit:
    def test_sizes_round_half_up(self):
        split = train_test_split(10, 0.2, seed=0)
        assert len(split.test) == 2 and len(split.train) == 8
        assert len(train_test_split(5, 0.5, seed=0).test) == 3  # round(2.5) -> 3

    def test_extremes(self):
        assert train_test_split(7, 0.0, seed=1).test == ()
        assert train_test_split(7, 1.0, seed=1).train == ()

    def test_deterministic(self):
        assert train_test_split(50, 0.3, seed=9) == train_test_split(50, 0.3, seed=9)
        assert train_test_split(50, 0.3, seed=9) != train_test_split(50, 0.3, seed=10)

    def test_bad_fraction_rejected(self):
        with pytest.raises(DataError):
            train_test_split(10, 1.5, seed=0)

    @given(st.integers(0, 200), st.floats(0.0, 1.0), st.integers(0, 2**32 - 1))
    @settings(max_examples=60)
    def test_partition(self, n, fraction, seed):
        split = train_test_split(n, fraction, seed)
        assert len(split.test) == round_half_up(fraction * n)
        assert sorted(split.train + split.test) == list(range(n))
        assert set(split.train).isdisjoint(split.test)


class TestEncodedMatrix:
    def test_shape_validation(self):
        with pytest.raises(DataError):
            EncodedMatrix(("a",), np.zeros((2, 2)), ("r1", "r2"))
        with pytest.raises(DataError):
            EncodedMatrix(("a",), np.array([[np.nan]]), ("r1",))

    def test_take_preserves_alignment(self):
        matrix = EncodedMatrix(("a",), np.array([[1.0], [2.0], [3.0]]), ("x", "y", "z"))
        sub = matrix.take([2, 0])
        assert sub.row_ids == ("z", "x")
        assert sub.values[:, 0].tolist() == [3.0, 1.0]
