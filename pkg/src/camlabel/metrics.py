"""Evaluation artifacts: time-saving estimates from saving-band tallies and
mask-quality measures.

Saving bands group annotated instances by the estimated percentage of
annotation time saved when starting from a machine proposal instead of a
blank canvas: G95 covers [95, 100], G75 covers [75, 95), G50 covers
[50, 75); anything below 50 counts as no time saved. The relative saving of
a tally is the band-weighted instance fraction

    (0.95 * g95 + 0.75 * g75 + 0.50 * g50) / N

using each band's lower bound, i.e. a conservative estimate.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field

import numpy as np

BAND_WEIGHTS = {"g95": 0.95, "g75": 0.75, "g50": 0.50}


@dataclass(frozen=True)
class SavingBandTally:
    """Per-class instance counts by saving band."""

    defect_class: str
    instance_count: int
    g95: int
    g75: int
    g50: int

    def __post_init__(self):
        for name in ("instance_count", "g95", "g75", "g50"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        if self.g95 + self.g75 + self.g50 > self.instance_count:
            raise ValueError(
                "band counts exceed instance count "
                f"({self.g95}+{self.g75}+{self.g50} > {self.instance_count})"
            )

    @property
    def below_50(self) -> int:
        return self.instance_count - (self.g95 + self.g75 + self.g50)


@dataclass(frozen=True)
class TimeSavingReport:
    """Per-class tallies plus the aggregate ("all") row."""

    per_class: tuple[SavingBandTally, ...]
    aggregate_tally: SavingBandTally
    savings: dict[str, float] = field(default_factory=dict)

    @property
    def percents(self) -> dict[str, int]:
        return {cls: round_percent(v) for cls, v in self.savings.items()}


def round_percent(fraction: float) -> int:
    """Nearest-integer percent with half-up ties (no banker's rounding)."""
    return int(math.floor(fraction * 100.0 + 0.5))


def relative_time_saving(tally: SavingBandTally) -> float:
    """Band-weighted fraction of annotation time saved, in [0, 0.95]."""
    if tally.instance_count == 0:
        raise ValueError("undefined for an empty tally (instance_count == 0)")
    saved = (
        BAND_WEIGHTS["g95"] * tally.g95
        + BAND_WEIGHTS["g75"] * tally.g75
        + BAND_WEIGHTS["g50"] * tally.g50
    )
    return saved / tally.instance_count


def aggregate(tallies) -> TimeSavingReport:
    """Combine per-class tallies into a report with an "all" row.

    The aggregate saving is computed from the columnwise-summed counts, not
    from the mean of the per-class savings.
    """
    tallies = tuple(tallies)
    if not tallies:
        raise ValueError("need at least one tally")
    seen = set()
    for t in tallies:
        if t.defect_class in seen:
            raise ValueError(f"duplicate class row: {t.defect_class!r}")
        seen.add(t.defect_class)
    total = SavingBandTally(
        defect_class="all",
        instance_count=sum(t.instance_count for t in tallies),
        g95=sum(t.g95 for t in tallies),
        g75=sum(t.g75 for t in tallies),
        g50=sum(t.g50 for t in tallies),
    )
    savings = {t.defect_class: relative_time_saving(t) for t in tallies}
    savings["all"] = relative_time_saving(total)
    return TimeSavingReport(per_class=tallies, aggregate_tally=total, savings=savings)


def mask_iou(a, b) -> float:
    """Intersection over union of two equal-size binary masks.

    Two empty masks are defined to have IoU 1.
    """
    a = np.asarray(a, dtype=bool)
    b = np.asarray(b, dtype=bool)
    if a.shape != b.shape:
        raise ValueError(f"mask shape mismatch: {a.shape} vs {b.shape}")
    union = np.logical_or(a, b).sum()
    if union == 0:
        return 1.0
    return float(np.logical_and(a, b).sum() / union)


def band_from_iou(iou: float, thresholds=(0.90, 0.70, 0.40)) -> str | None:
    """EXPERIMENTAL: guess a saving band from proposal/GT mask IoU.

    Band assignment is contractually a human judgement; this helper only
    supports simulations. Returns "g95"/"g75"/"g50" or None (no saving).
    """
    t95, t75, t50 = thresholds
    if iou >= t95:
        return "g95"
    if iou >= t75:
        return "g75"
    if iou >= t50:
        return "g50"
    return None


def report_to_csv(report: TimeSavingReport) -> str:
    """Render a report as CSV mirroring the published table layout."""
    out = io.StringIO()
    writer = csv.writer(out)
    writer.writerow(["defect", "instance count", "95", "75", "50", "time saved (%)"])
    for tally in report.per_class:
        writer.writerow(
            [
                tally.defect_class,
                tally.instance_count,
                tally.g95,
                tally.g75,
                tally.g50,
                round_percent(report.savings[tally.defect_class]),
            ]
        )
    agg = report.aggregate_tally
    writer.writerow(
        ["all defects", agg.instance_count, agg.g95, agg.g75, agg.g50,
         round_percent(report.savings["all"])]
    )
    return out.getvalue()


def report_to_json(report: TimeSavingReport) -> str:
    rows = []
    for tally in report.per_class + (report.aggregate_tally,):
        key = tally.defect_class
        rows.append(
            {
                "defect_class": "all defects" if key == "all" else key,
                "instance_count": tally.instance_count,
                "g95": tally.g95,
                "g75": tally.g75,
                "g50": tally.g50,
                "time_saving": report.savings[key],
                "time_saved_percent": round_percent(report.savings[key]),
            }
        )
    return json.dumps({"rows": rows}, indent=2)
