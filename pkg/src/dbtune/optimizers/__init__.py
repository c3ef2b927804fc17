from .bo import BayesianOptimizer, bo_suggest
from .ddpg import DdpgAgent, action_to_config, config_to_action, ddpg_step
from .gp import GpModel, expected_improvement, gp_fit, gp_predict
from .history import Optimizer, Step, TuningError, TuningHistory, reward, run_tuning
from .mlp import Mlp, mlp_backward, mlp_forward
from .random_search import RandomSearch, random_search_suggest

METHODS = ("random", "bo", "rl")

__all__ = [
    "BayesianOptimizer", "DdpgAgent", "GpModel", "METHODS", "Mlp", "Optimizer", "RandomSearch", "Step",
    "TuningError", "TuningHistory", "action_to_config", "bo_suggest", "config_to_action", "ddpg_step",
    "expected_improvement", "gp_fit", "gp_predict", "make_optimizer", "mlp_backward", "mlp_forward",
    "random_search_suggest", "reward", "run_tuning",
]


def make_optimizer(method: str, space, seed: int, steps: int, state_dim: int):
    if method == "random":
        return RandomSearch(space, seed)
    if method == "bo":
        return BayesianOptimizer(space, seed)
    if method == "rl":
        return DdpgAgent(space, state_dim, seed=seed, total_steps=steps)
    raise ValueError(f"unknown optimizer {method!r}; expected one of {METHODS}")
