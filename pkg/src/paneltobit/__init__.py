"""Bayesian dynamic panel Tobit model with heterogeneous intercepts and
variances: Gibbs sampling, density and set forecasts, scoring, Monte Carlo
designs and diagnostics."""

from .panel import PanelData, read_panel_csv, write_panel_csv, simulate_panel
from .priors import ModelSpec, PriorTuning, default_priors, named_spec, MC_SPECS
from .gibbs import SamplerSettings, PosteriorDraws, run_chain, estimate
from .forecast import (build_predictive_density, hpd_average, hpd_pointwise,
                       hpd_pointwise_all, predictive_components, direct_multistep_estimate)
from .scoring import (crps_pairwise, crps_riemann, evaluate_density, evaluate_sets,
                      log_predictive_score, pit)
from .montecarlo import DgpSpec, run_experiment, simulate_dgp

__version__ = "0.1.0"
