import numpy as np
import pytest
from hypothesis import given, strategies as st

from camlabel.metrics import (
    SavingBandTally,
    aggregate,
    band_from_iou,
    mask_iou,
    relative_time_saving,
    report_to_csv,
    report_to_json,
    round_percent,
)

# the published evaluation counts this module must reproduce exactly
PUBLISHED = {
    "crack": (111, 19, 40, 30, 57),
    "spalling": (65, 17, 19, 14, 58),
    "rust": (89, 22, 14, 9, 40),
}
PUBLISHED_ALL = (265, 58, 73, 53, 51)


def tally(cls, n, g95, g75, g50):
    return SavingBandTally(defect_class=cls, instance_count=n, g95=g95, g75=g75, g50=g50)


class TestRelativeTimeSaving:
    @pytest.mark.parametrize("cls,row", PUBLISHED.items())
    def test_published_rows(self, cls, row):
        n, g95, g75, g50, percent = row
        assert round_percent(relative_time_saving(tally(cls, n, g95, g75, g50))) == percent

    def test_crack_fraction_value(self):
        # (0.95*19 + 0.75*40 + 0.5*30) / 111
        value = relative_time_saving(tally("crack", 111, 19, 40, 30))
        assert value == pytest.approx(63.05 / 111)

    def test_all_defects_row(self):
        n, g95, g75, g50, percent = PUBLISHED_ALL
        assert round_percent(relative_time_saving(tally("all", n, g95, g75, g50))) == percent

    def test_zero_groups(self):
        assert relative_time_saving(tally("crack", 10, 0, 0, 0)) == 0.0

    def test_empty_tally_rejected(self):
        with pytest.raises(ValueError):
            relative_time_saving(tally("crack", 0, 0, 0, 0))

    def test_band_counts_cannot_exceed_total(self):
        with pytest.raises(ValueError):
            tally("crack", 5, 4, 4, 0)

    @given(
        n_extra=st.integers(0, 200),
        g95=st.integers(0, 100),
        g75=st.integers(0, 100),
        g50=st.integers(0, 100),
    )
    def test_bounds(self, n_extra, g95, g75, g50):
        n = g95 + g75 + g50 + n_extra
        if n == 0:
            return
        value = relative_time_saving(tally("x", n, g95, g75, g50))
        assert 0.0 <= value <= 0.95

    @given(
        g75=st.integers(1, 50),
        g50=st.integers(0, 50),
        slack=st.integers(0, 50),
    )
    def test_promoting_an_instance_never_decreases(self, g75, g50, slack):
        n = g75 + g50 + slack
        base = relative_time_saving(tally("x", n, 0, g75, g50))
        promoted = relative_time_saving(tally("x", n, 1, g75 - 1, g50))
        assert promoted >= base


class TestAggregate:
    def test_published_table(self):
        report = aggregate(
            tally(cls, *row[:4]) for cls, row in PUBLISHED.items()
        )
        assert report.percents == {"crack": 57, "spalling": 58, "rust": 40, "all": 51}
        agg = report.aggregate_tally
        assert (agg.instance_count, agg.g95, agg.g75, agg.g50) == PUBLISHED_ALL[:4]

    def test_singleton(self):
        report = aggregate([tally("crack", 111, 19, 40, 30)])
        assert report.savings["all"] == report.savings["crack"]

    def test_identical_tallies_symmetry(self):
        report = aggregate([tally("a", 10, 2, 3, 1), tally("b", 10, 2, 3, 1)])
        assert report.savings["all"] == pytest.approx(report.savings["a"])

    def test_duplicate_class_rejected(self):
        with pytest.raises(ValueError, match="duplicate"):
            aggregate([tally("a", 10, 1, 1, 1), tally("a", 5, 1, 1, 1)])

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            aggregate([])

    @given(
        rows=st.lists(
            st.tuples(st.integers(0, 20), st.integers(0, 20), st.integers(0, 20),
                      st.integers(1, 30)),
            min_size=1, max_size=5,
        )
    )
    def test_aggregate_is_eq_on_summed_counts_not_mean(self, rows):
        tallies = [
            tally(f"c{i}", g95 + g75 + g50 + extra, g95, g75, g50)
            for i, (g95, g75, g50, extra) in enumerate(rows)
        ]
        report = aggregate(tallies)
        total = report.aggregate_tally
        expected = (0.95 * total.g95 + 0.75 * total.g75 + 0.5 * total.g50) / total.instance_count
        assert report.savings["all"] == pytest.approx(expected)

    def test_csv_layout(self):
        report = aggregate(tally(cls, *row[:4]) for cls, row in PUBLISHED.items())
        lines = report_to_csv(report).strip().splitlines()
        assert lines[0] == "defect,instance count,95,75,50,time saved (%)"
        assert lines[1] == "crack,111,19,40,30,57"
        assert lines[-1] == "all defects,265,58,73,53,51"

    def test_json_layout(self):
        import json

        report = aggregate([tally("crack", 111, 19, 40, 30)])
        doc = json.loads(report_to_json(report))
        assert doc["rows"][0]["time_saved_percent"] == 57
        assert doc["rows"][-1]["defect_class"] == "all defects"


class TestMaskIoU:
    def test_identical(self):
        mask = np.zeros((8, 8), dtype=bool)
        mask[2:5, 2:5] = True
        assert mask_iou(mask, mask) == 1.0

    def test_disjoint(self):
        a = np.zeros((8, 8), dtype=bool)
        b = np.zeros((8, 8), dtype=bool)
        a[0, 0] = True
        b[7, 7] = True
        assert mask_iou(a, b) == 0.0

    def test_containment(self):
        a = np.zeros((10, 10), dtype=bool)
        b = np.zeros((10, 10), dtype=bool)
        a.ravel()[:50] = True
        b.ravel()[:100] = True
        assert mask_iou(a, b) == 0.5

    def test_both_empty_is_one(self):
        empty = np.zeros((4, 4), dtype=bool)
        assert mask_iou(empty, empty) == 1.0

    def test_dim_mismatch(self):
        with pytest.raises(ValueError):
            mask_iou(np.zeros((4, 4), dtype=bool), np.zeros((4, 5), dtype=bool))


def test_round_percent_half_up():
    # exact .5 cases round up, not to even (0.625 and 0.125 are exact floats)
    assert round_percent(0.625) == 63
    assert round_percent(0.125) == 13
    assert round_percent(0.5145) == 51


def test_band_from_iou_is_monotone():
    bands = [band_from_iou(i / 100) for i in range(0, 101, 5)]
    order = {None: 0, "g50": 1, "g75": 2, "g95": 3}
    ranks = [order[b] for b in bands]
    assert ranks == sorted(ranks)
