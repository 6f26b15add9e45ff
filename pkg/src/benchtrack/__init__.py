"""Numerics for tracking a ratcheting benchmark with minimal capital
injections: Monte-Carlo and finite-difference solvers for the dual field,
primal recovery of the value and feedback portfolio, geometric-index closed
forms, and path-level strategy evaluation.
"""

from .models import (BenchmarkSpec, DerivedMarket, FactorSpec, GbmIndexSpec,
                     MarketParams, Scenario, ValidationError, derive_market,
                     validate_assumptions)
from .paths import RngSpec, TimeGrid, reflected_bm_cdf, reflected_bm_density
from .dual_mc import Estimate, McConfig, h_mc, h_u_mc, h_uu_mc, h_z_mc, xi_mc
from .dual_pde import (DualField, InstabilityError, SolverConfig, solve_dual,
                       vhat_eval)
from .primal import OutsideRegionError, PrimalSolution
from .gbm import (GbmSolution, SingularBoundaryError, UnsupportedRegimeError,
                  figure_sweep, figure_trends, finite_horizon_sigma0,
                  xi_rate_form, xi_tracking)
from .tracker import (CostReport, StrategySpec, evaluate_strategy,
                      injection_cost, minimal_injection, minimality_oracle,
                      superhedge_check)
from .scenarios import (ScenarioFile, ScenarioFileError, load_scenario_file,
                        scenario_from_payload, scenario_payload)

__version__ = "0.1.0"
