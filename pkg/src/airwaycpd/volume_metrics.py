"""Trapezium-rule airway volumes and percentage volume change.

Three regions are compared between scans: carina to distal point (c->d),
carina to the dilatation point (c->t) and dilatation point to distal (t->d).
"""

from __future__ import annotations

import csv
from dataclasses import asdict, dataclass

import numpy as np
from scipy.integrate import trapezoid

from .series_prep import AlignedPair, AreaSeries

GRID_ATOL = 1e-9


class VolumeError(ValueError):
    pass


def _grid_index(x: np.ndarray, value: float) -> int:
    i = int(np.searchsorted(x, value))
    for j in (i - 1, i):
        if 0 <= j < x.size and abs(x[j] - value) <= GRID_ATOL:
            return j
    raise VolumeError(f"{value} mm is not a grid point")


def trapezium_volume(series, from_mm: float, to_mm: float) -> float:
    """Composite trapezium integral of area over ``[from_mm, to_mm]``.

    Parameters
    ----------
    series : AreaSeries or (arc_length, area)
        A bare pair of arrays may contain zero areas (e.g. a closed lumen).
    from_mm, to_mm : float
        Grid points of the series, ``from_mm < to_mm``.
    """
    if isinstance(series, AreaSeries):
        x, a = series.arc_length, series.area
    else:
        x, a = (np.asarray(v, dtype=float) for v in series)
        if x.shape != a.shape or np.any(np.diff(x) <= 0) or np.any(a < 0):
            raise VolumeError("need increasing arc lengths and non-negative areas")
    if not from_mm < to_mm:
        raise VolumeError(f"need from_mm < to_mm, got {from_mm} and {to_mm}")
    i, j = _grid_index(x, from_mm), _grid_index(x, to_mm)
    return float(trapezoid(a[i : j + 1], x[i : j + 1]))


def pvc(v_baseline: float, v_followup: float) -> float:
    """Percentage volume change."""
    return 100.0 * (v_followup - v_baseline) / v_baseline


@dataclass
class VolumeReport:
    t_mm: float
    v_total_baseline: float
    v_total_followup: float
    v_pre_baseline: float
    v_pre_followup: float
    v_post_baseline: float
    v_post_followup: float

    @property
    def pvc_total(self) -> float:
        return pvc(self.v_total_baseline, self.v_total_followup)

    @property
    def pvc_pre(self) -> float:
        return pvc(self.v_pre_baseline, self.v_pre_followup)

    @property
    def pvc_post(self) -> float:
        return pvc(self.v_post_baseline, self.v_post_followup)

    def to_dict(self) -> dict:
        return {**asdict(self), "pvc_total": self.pvc_total, "pvc_pre": self.pvc_pre,
                "pvc_post": self.pvc_post}


def volume_report(pair: AlignedPair, t_mm: float) -> VolumeReport:
    """Region volumes on both scans, split at ``t_mm`` (snapped to the
    nearest grid point, which must lie strictly inside the airway)."""
    x = pair.baseline.arc_length
    i = int(np.argmin(np.abs(x - t_mm)))
    if not 0 < i < x.size - 1 or not x[0] < t_mm < x[-1]:
        raise VolumeError(f"t={t_mm} mm must lie strictly between {x[0]:g} and {x[-1]:g} mm")
    c, t, d = x[0], x[i], x[-1]
    vols = {}
    for scan, s in (("baseline", pair.baseline), ("followup", pair.followup)):
        vols[f"v_total_{scan}"] = trapezium_volume(s, c, d)
        vols[f"v_pre_{scan}"] = trapezium_volume(s, c, t)
        vols[f"v_post_{scan}"] = trapezium_volume(s, t, d)
    return VolumeReport(t_mm=float(t), **vols)


REPORT_COLUMNS = ("airway", "pvc_total", "pvc_post", "pvc_pre")


def write_report_csv(rows, fh) -> None:
    """``rows`` is an iterable of ``(airway_name, VolumeReport)``."""
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(REPORT_COLUMNS)
    for name, r in rows:
        w.writerow([name, _pct(r.pvc_total), _pct(r.pvc_post), _pct(r.pvc_pre)])


def _pct(v: float) -> str:
    # adding 0.0 turns a rounded -0.0 into 0.0
    return f"{round(v, 1) + 0.0:.1f}"
