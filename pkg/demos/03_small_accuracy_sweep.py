"""A miniature accuracy heatmap.

Logistic dilatations of several sizes are planted 15 and 25 mm from the
distal end of synthetic healthy airways, and each detector's median
displacement from the planted midpoint is tabulated.  Negative means the
call lies proximal of the truth.
"""

from airwaycpd.dilatation_sim import heatmap_matrix, run_sweep, synthetic_airways
from airwaycpd.rjmh_sampler import SamplerConfig

airways = synthetic_airways(6, seed=0)
alphas, magnitudes = (15, 25), (0.55, 1.3, 2.3)
cells = run_sweep(airways, config=SamplerConfig(iterations=40_000), alphas=alphas,
                  magnitudes=magnitudes, workers=None)

for det in ("rjmh", "penalized_cost", "threshold"):
    m = heatmap_matrix(cells, det, alphas, magnitudes)
    print(f"\n{det}  (rows alpha {alphas} mm, columns magnitude {magnitudes})")
    for a, row in zip(alphas, m):
        print(f"  {a:>3} mm  " + "  ".join(f"{v:6.1f}" for v in row))
