"""Tree-ensemble regression with the complementary log-log link.

Binary, ordinal (proportional and fully nonparametric), stick-breaking
conditional density, and piecewise-exponential survival models, all fit by
conjugate truncated-exponential / log-gamma Gibbs samplers, plus model
comparison tools and an executable verification suite.
"""

from .data import Dataset, Schema, load_dataset, simulate_dunson, write_dataset
from .density import (MixtureState, conditional_density, conditional_mean,
                      fit_density, stick_weights)
from .draws import PosteriorDraws, load_draws, save_draws, summarize
from .evaluation import elpd_loo, kfold_deviance, project_additive
from .forest import (DepthPrior, Forest, LeafStats, NormalLeafPrior, Tree,
                     backfit_tree, draw_leaves, evaluate_forest,
                     integrated_log_marginal, make_forest, tree_log_prior,
                     update_split_probs)
from .ordinal import (OrdinalParams, OrdinalState, cutpoints_from_gamma,
                      fit_binary, fit_ordinal, ordinal_pmf, ordinal_suffstats,
                      predict_binary, predict_ordinal)
from .special import (LogGammaPrior, TruncExpSpec, polygamma, sample_log_gamma,
                      solve_leaf_prior, trunc_exp_inverse_cdf)
from .survival import (HazardGrid, SurvivalData, SurvivalState, fit_survival,
                       make_bins, survival_function, survival_loglik,
                       survival_suffstats, update_lambda)
from .verify import (check_dp_property, check_latent_representation,
                     check_link_equivalence, oracle_integrated_marginal,
                     sbc_run)

__version__ = "0.1.0"

__all__ = [
    "Dataset", "Schema", "load_dataset", "simulate_dunson", "write_dataset",
    "MixtureState", "conditional_density", "conditional_mean", "fit_density",
    "stick_weights",
    "PosteriorDraws", "load_draws", "save_draws", "summarize",
    "elpd_loo", "kfold_deviance", "project_additive",
    "DepthPrior", "Forest", "LeafStats", "NormalLeafPrior", "Tree",
    "backfit_tree", "draw_leaves", "evaluate_forest", "integrated_log_marginal",
    "make_forest", "tree_log_prior", "update_split_probs",
    "OrdinalParams", "OrdinalState", "cutpoints_from_gamma", "fit_binary",
    "fit_ordinal", "ordinal_pmf", "ordinal_suffstats", "predict_binary",
    "predict_ordinal",
    "LogGammaPrior", "TruncExpSpec", "polygamma", "sample_log_gamma",
    "solve_leaf_prior", "trunc_exp_inverse_cdf",
    "HazardGrid", "SurvivalData", "SurvivalState", "fit_survival", "make_bins",
    "survival_function", "survival_loglik", "survival_suffstats", "update_lambda",
    "check_dp_property", "check_latent_representation", "check_link_equivalence",
    "oracle_integrated_marginal", "sbc_run",
    "__version__",
]
