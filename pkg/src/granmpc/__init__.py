"""Moment models, polynomial chaos and stochastic MPC for two-component granulation."""
from .moments import (PAPER_X0, FeedSpec, KernelSpec, MomentState, feed_moments, integrate,
                      moment_rhs, summary)
from .controller import (ControlConfig, NoiseSpec, build_predictions, chance_residuals, kappa,
                         nmpc_step, smpc_objective, smpc_step)
from .harness import (CampaignConfig, ValidationConfig, paper_preset, pce_validation,
                      run_campaign, run_closed_loop)

__version__ = "0.1.0"
