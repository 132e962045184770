"""Novelty-seeking policy optimization on a continuous four-reward maze."""

from .envs import FourRewardMaze, evaluate, make_env
from .harness import ExperimentReport, relative_novelty, run_population, success_rate, threshold_sweep
from .io import RunConfig, load_config, load_policy, save_policy
from .metric import ReferenceSet, pairwise_novelty_matrix, policy_novelty, wasserstein2_gaussian
from .nn import GaussianPolicyParams, MlpParams, make_policy
from .ppo import PpoConfig, collect_rollout, gae, train
from .strategies import NoveltyConfig, combine_tnb, make_strategy

__version__ = "0.1.0"
