"""Simulated distal dilatation and the detector accuracy sweep.

A logistic step ``M / (1 + exp(-k (x - x_alpha)))`` is added to a healthy
log-difference series.  ``alpha`` is quoted in mm from the distal end, so
on a series of ``n`` samples the ground-truth changepoint sits at
``x_alpha = (n - 1) - alpha`` mm from the carina.
"""

from __future__ import annotations

import csv
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from functools import partial

import numpy as np
from scipy.special import expit

from .baseline_detectors import NoCallError, penalized_cost_detect, threshold_detect
from .posterior_analysis import NoChangepointError, call_dilatation_point, pooled_histogram
from .rjmh_sampler import SamplerConfig, run_chain
from .segment_model import PriorSpec

STEEPNESS = 0.5
ALPHAS_MM = (10, 15, 20, 25, 30, 35, 40)
MAGNITUDES = tuple(round(0.30 + 0.25 * i, 2) for i in range(11))
DETECTORS = ("rjmh", "threshold", "penalized_cost")


@dataclass(frozen=True)
class LogisticDilatation:
    magnitude: float
    alpha: float
    k: float = STEEPNESS

    def __post_init__(self):
        if self.magnitude < 0:
            raise ValueError("magnitude must be non-negative")
        if not self.k > 0:
            raise ValueError("steepness must be positive")

    def center(self, n: int) -> float:
        """Arc length from the carina of the logistic midpoint."""
        if not 0 < self.alpha < n - 1:
            raise ValueError(f"alpha={self.alpha} mm outside a {n}-sample series")
        return (n - 1) - self.alpha

    def profile(self, n: int) -> np.ndarray:
        x = np.arange(n, dtype=float)
        return self.magnitude * expit(self.k * (x - self.center(n)))


def apply_dilatation(y, d: LogisticDilatation) -> np.ndarray:
    """Add the logistic dilatation to ``y``."""
    y = np.asarray(y, dtype=float)
    return y + d.profile(y.size)


def area_increase(magnitude: float) -> float:
    """Fractional area increase corresponding to a log-area rise."""
    return math.expm1(magnitude)


def displacement(predicted_mm: float, truth_mm: float) -> float:
    """Signed error, positive when the prediction lies distal of the truth."""
    return float(predicted_mm) - float(truth_mm)


def synthetic_airway(n: int = 120, sigma: float = 0.1, nu: float = 10.0,
                     trend: float = 0.0, rng=None) -> np.ndarray:
    """Healthy log-difference series: Student-t noise, optional linear trend
    (total rise over the airway)."""
    rng = np.random.default_rng(rng)
    return sigma * rng.standard_t(nu, size=n) + trend * np.linspace(0.0, 1.0, n)


def synthetic_airways(count: int = 14, seed: int = 0, **kw) -> list[np.ndarray]:
    seqs = np.random.SeedSequence(seed).spawn(count)
    return [synthetic_airway(rng=np.random.default_rng(s), **kw) for s in seqs]


# -- detectors -----------------------------------------------------------

def detect_rjmh(y, config: SamplerConfig | None = None, priors: PriorSpec | None = None) -> float:
    trace = run_chain(y, priors, config)
    return call_dilatation_point(pooled_histogram(trace)).point_mm


def detect_threshold(y, config=None, priors=None) -> float:
    return threshold_detect(y).point_mm


def detect_penalized_cost(y, config=None, priors=None) -> float:
    return penalized_cost_detect(y).point_mm


DETECTOR_FUNCS = {
    "rjmh": detect_rjmh,
    "threshold": detect_threshold,
    "penalized_cost": detect_penalized_cost,
}


@dataclass
class HeatmapCell:
    alpha: float
    magnitude: float
    detector: str
    displacements: list[float | None] = field(default_factory=list)

    @property
    def calls(self) -> list[float]:
        return [d for d in self.displacements if d is not None]

    @property
    def n_calls(self) -> int:
        return len(self.calls)

    @property
    def n_nocalls(self) -> int:
        return len(self.displacements) - self.n_calls

    @property
    def median_displacement(self) -> float:
        c = self.calls
        return float(np.median(c)) if c else math.nan


def _cell_seed(seed: int, ia: int, im: int, iw: int) -> int:
    # one independent stream per (alpha, magnitude, airway)
    return int(np.random.SeedSequence([seed, ia, im, iw]).generate_state(1)[0])


def _run_task(task, detectors, config, priors):
    ia, im, iw, alpha, magnitude, y, seed = task
    d = LogisticDilatation(magnitude, alpha)
    yd = apply_dilatation(y, d)
    truth = d.center(yd.size)
    out = {}
    for name in detectors:
        cfg = None
        if name == "rjmh":
            base = config if config is not None else SamplerConfig()
            cfg = SamplerConfig(**{**base.__dict__, "seed": seed})
        try:
            point = DETECTOR_FUNCS[name](yd, cfg, priors)
        except (NoCallError, NoChangepointError):
            out[name] = None
        else:
            out[name] = displacement(point, truth)
    return (ia, im, iw), out


def run_sweep(
    airways,
    detectors=DETECTORS,
    config: SamplerConfig | None = None,
    alphas=ALPHAS_MM,
    magnitudes=MAGNITUDES,
    priors: PriorSpec | None = None,
    seed: int = 0,
    workers: int | None = 1,
) -> list[HeatmapCell]:
    """Run every detector on every (alpha, magnitude, airway) combination.

    Sampler seeds are derived from ``seed`` and the cell coordinates, so the
    result does not depend on ``workers`` or completion order.  Cells are
    returned sorted by (alpha, magnitude, detector order).

    Parameters
    ----------
    airways : list of array_like
        Healthy log-difference series.
    workers : int or None
        Processes to use; 1 runs in-process, None uses all CPUs.
    """
    unknown = set(detectors) - set(DETECTOR_FUNCS)
    if unknown:
        raise ValueError(f"unknown detectors: {sorted(unknown)}")
    if len(airways) == 0:
        raise ValueError("need at least one airway")
    airways = [np.asarray(a, dtype=float) for a in airways]
    tasks = [
        (ia, im, iw, float(a), float(mg), y, _cell_seed(seed, ia, im, iw))
        for ia, a in enumerate(alphas)
        for im, mg in enumerate(magnitudes)
        for iw, y in enumerate(airways)
    ]
    fn = partial(_run_task, detectors=tuple(detectors), config=config, priors=priors)
    if workers == 1:
        results = dict(map(fn, tasks))
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = dict(pool.map(fn, tasks, chunksize=4))

    cells = []
    for ia, a in enumerate(alphas):
        for im, mg in enumerate(magnitudes):
            for name in detectors:
                disp = [results[(ia, im, iw)][name] for iw in range(len(airways))]
                cells.append(HeatmapCell(float(a), float(mg), name, disp))
    return cells


HEATMAP_COLUMNS = ("alpha_mm", "magnitude", "detector", "median_displacement_mm",
                   "n_calls", "n_nocalls")


def write_heatmap_csv(cells, fh) -> None:
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(HEATMAP_COLUMNS)
    for c in cells:
        med = c.median_displacement
        w.writerow([
            f"{c.alpha:g}",
            f"{c.magnitude:.2f}",
            c.detector,
            "" if math.isnan(med) else f"{med:.1f}",
            c.n_calls,
            c.n_nocalls,
        ])


def heatmap_matrix(cells, detector: str, alphas=ALPHAS_MM, magnitudes=MAGNITUDES) -> np.ndarray:
    """Median displacements as an (alpha x magnitude) array for one detector."""
    lookup = {(c.alpha, c.magnitude): c.median_displacement
              for c in cells if c.detector == detector}
    return np.array([[lookup[(float(a), float(m))] for m in magnitudes] for a in alphas])
