"""Risk-based active learning: EVPI-guided label querying for decision-supporting classifiers."""

__version__ = "0.1.0"

from .decision import DecisionProcess, builtin_process, evpi, expected_utility, optimal_action, perfect_info_policy
from .datasets import Dataset, LabelledSet, SyntheticConfig, UnlabelledPool, generate_synthetic, split_and_init
from .gmm import GmmPosterior, NiwPrior, fit_supervised, predict_posterior, predictive_log_density
from .campaign import AgentConfig, CampaignResult, run_campaign, run_random_baseline

__all__ = [
    "DecisionProcess", "builtin_process", "evpi", "expected_utility", "optimal_action", "perfect_info_policy",
    "Dataset", "LabelledSet", "SyntheticConfig", "UnlabelledPool", "generate_synthetic", "split_and_init",
    "GmmPosterior", "NiwPrior", "fit_supervised", "predict_posterior", "predictive_log_density",
    "AgentConfig", "CampaignResult", "run_campaign", "run_random_baseline",
]
