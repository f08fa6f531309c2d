from .algos import a2c_update, objective, ppo_update
from .buffer import RolloutBuffer, compute_returns_and_advantages
from .config import EPOCH_TIMESTEPS, AlgoConfig
from .policy import ActorCritic, build_actor_critic, greedy_action, policy_distribution, sample_action
from .trainer import (
    EpochLogger,
    VecEnv,
    collect_rollouts,
    evaluate_policy,
    inference_latency,
    load_checkpoint,
    save_checkpoint,
    train,
)
