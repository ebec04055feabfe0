"""
Density and set forecasts
=========================

One-step-ahead predictive densities are a point mass at zero plus a
continuous part.  Set forecasts keep the zero atom and the highest-density
region of the continuous part; the "average" mode uses one density
threshold for all units and so trades length between units.
"""

import numpy as np

from paneltobit import (DgpSpec, PriorTuning, SamplerSettings, build_predictive_density,
                        estimate, evaluate_density, evaluate_sets, named_spec,
                        predictive_components, simulate_dgp)
from paneltobit.forecast import set_forecasts
from paneltobit.rng import stream

data, _ = simulate_dgp(DgpSpec(N=500, seed=2), rep=0, horizon=1)
y_next = data.holdout_y[:, 0]

draws = estimate(data, named_spec("flexible_hetero", y0_known=(0.0, 1.0)), PriorTuning(),
                 SamplerSettings(n_draws=500, burn_in=500, seed=3))
pd = build_predictive_density(predictive_components(draws, data, h=1), stream(3, 0xF0))

dens = evaluate_density(pd, y_next)
print(f"LPS {dens['lps']:.3f}   CRPS {dens['crps']:.3f}")

for mode in ("average", "pointwise"):
    sets = set_forecasts(pd, alpha=0.10, mode=mode)
    s = evaluate_sets(sets, y_next)
    kinds = {k: round(v, 3) for k, v in s["set_type_fractions"].items() if v}
    print(f"{mode:>9}: coverage {s['coverage_freq']:.3f}  length {s['avg_length']:.3f}  {kinds}")

# A unit with a long zero spell versus one that is always positive.
i_zero = int(np.argmax(pd.pi0))
i_pos = int(np.argmin(pd.pi0))
for i in (i_zero, i_pos):
    sf = set_forecasts(pd.unit(i), 0.10, "pointwise")[0]
    segs = ", ".join(f"[{lo:.2f}, {hi:.2f}]" for lo, hi in sf.segments)
    print(f"unit {i}: P(y=0)={pd.pi0[i]:.2f}  zero in set: {sf.includes_zero}  segments: {segs}")
