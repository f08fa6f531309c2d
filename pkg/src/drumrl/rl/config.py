from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, replace

ALGORITHMS = ("a2c", "ppo")
EPOCH_TIMESTEPS = 30_000


@dataclass(frozen=True)
class AlgoConfig:
    algorithm: str = "ppo"
    c1: float = 0.75  # value-loss coefficient
    c2: float = 0.01  # entropy coefficient
    n_steps: int = 300
    gamma: float = 0.99
    gae_lambda: float = 0.95
    learning_rate: float = 3e-4
    max_grad_norm: float = 5.0
    clip_eps: float = 0.4
    ppo_epochs: int = 10
    minibatch_size: int = 600
    n_workers: int = 20
    total_timesteps: int = 1_200_000
    hidden_sizes: tuple = (64, 64)
    shared_trunk: bool = False
    normalize_reward: bool = True
    reward_clip: float = 10.0

    def __post_init__(self):
        if self.algorithm not in ALGORITHMS:
            raise ValueError(f"algorithm must be one of {ALGORITHMS}, got {self.algorithm!r}")
        if self.c1 < 0 or self.c2 < 0:
            raise ValueError("c1 and c2 must be non-negative")
        if not 0 < self.gamma <= 1:
            raise ValueError("gamma must lie in (0, 1]")
        if not 0 <= self.gae_lambda <= 1:
            raise ValueError("gae_lambda must lie in [0, 1]")
        if self.algorithm == "ppo" and self.clip_eps <= 0:
            raise ValueError("PPO needs clip_eps > 0")
        if self.reward_clip <= 0:
            raise ValueError("reward_clip must be positive")
        if min(self.n_steps, self.n_workers, self.total_timesteps, self.minibatch_size,
               self.ppo_epochs) < 1:
            raise ValueError("step counts, workers and batch sizes must be positive")

    @property
    def rollout_size(self) -> int:
        return self.n_steps * self.n_workers

    @classmethod
    def defaults(cls, algorithm: str, **overrides) -> "AlgoConfig":
        """Tuned defaults per algorithm, with keyword overrides."""
        algorithm = algorithm.lower()
        if algorithm == "a2c":
            base = cls(algorithm="a2c", c1=0.5, c2=0.02, n_steps=200, learning_rate=7e-4,
                       gae_lambda=1.0, max_grad_norm=5.0)
        elif algorithm == "ppo":
            base = cls(algorithm="ppo")
        else:
            raise ValueError(f"unknown algorithm {algorithm!r}")
        return replace(base, **overrides)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["hidden_sizes"] = list(self.hidden_sizes)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "AlgoConfig":
        d = dict(d)
        if "hidden_sizes" in d:
            d["hidden_sizes"] = tuple(d["hidden_sizes"])
        return cls(**d)

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()[:12]
