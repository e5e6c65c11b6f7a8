"""Saliency-token attention networks for noise-robust multi-agent Q-learning
in a gridworld objects-collection game, with a self-contained numpy autodiff
core and a reproducible experiment harness."""

from .autodiff import Graph, Tensor, no_tape
from .config import ExperimentConfig
from .gridworld import (GridMap, Observation, StepOutcome, WorldConfig, WorldState,
                        builtin_map, discounted_return, encode_observation, load_map,
                        reset, step, visible_set, wanderer_policy)
from .model import (ALGOS, AttentionRecord, NetConfig, build_network,
                    extract_heatmap, multi_head_attention, scaled_dot_attention)
from .noise import NoiseSpec, apply_noise, build_spec
from .learner import (AgentLearner, ReplayBuffer, Transition, dqn_loss, iqn_loss,
                      run_training, select_action, sync_target)
from .harness import (evaluate_policy, probe_attention, render_heatmap,
                      resolve_config, run_experiment)

__version__ = "0.1.0"
