"""Rollout storage and return/advantage estimation."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class RolloutBuffer:
    """Arrays indexed ``[step, worker]``.

    ``dones[t, w]`` marks that the transition at ``t`` ended an episode, so
    nothing after it is bootstrapped.
    """

    obs: np.ndarray
    actions: np.ndarray
    log_probs: np.ndarray
    rewards: np.ndarray
    values: np.ndarray
    dones: np.ndarray
    last_values: np.ndarray
    advantages: np.ndarray | None = None
    returns: np.ndarray | None = None
    infos: dict = field(default_factory=dict)

    @classmethod
    def empty(cls, n_steps: int, n_workers: int, obs_dim: int, n_heads: int) -> "RolloutBuffer":
        return cls(
            obs=np.zeros((n_steps, n_workers, obs_dim)),
            actions=np.zeros((n_steps, n_workers, n_heads), dtype=np.int64),
            log_probs=np.zeros((n_steps, n_workers)),
            rewards=np.zeros((n_steps, n_workers)),
            values=np.zeros((n_steps, n_workers)),
            dones=np.zeros((n_steps, n_workers), dtype=bool),
            last_values=np.zeros(n_workers),
        )

    @property
    def n_steps(self) -> int:
        return self.rewards.shape[0]

    @property
    def n_workers(self) -> int:
        return self.rewards.shape[1]

    def __len__(self) -> int:
        return self.rewards.size

    def flat(self) -> dict[str, np.ndarray]:
        if self.advantages is None:
            raise RuntimeError("advantages have not been computed")
        n = len(self)
        return {
            "obs": self.obs.reshape(n, -1),
            "actions": self.actions.reshape(n, -1),
            "log_probs": self.log_probs.reshape(n),
            "values": self.values.reshape(n),
            "advantages": self.advantages.reshape(n),
            "returns": self.returns.reshape(n),
        }


def compute_returns_and_advantages(buf: RolloutBuffer, gamma: float, gae_lambda: float = 1.0,
                                   mode: str = "gae") -> RolloutBuffer:
    """Fill ``buf.advantages`` and ``buf.returns``.

    ``mode="nstep"``: bootstrapped discounted returns, advantage ``G - V``.
    ``mode="gae"``: generalised advantage estimation, returns ``A + V``.
    """
    T = buf.n_steps
    not_done = 1.0 - buf.dones.astype(np.float64)
    adv = np.zeros_like(buf.rewards)
    if mode == "nstep":
        ret = np.zeros_like(buf.rewards)
        running = buf.last_values.copy()
        for t in range(T - 1, -1, -1):
            running = buf.rewards[t] + gamma * not_done[t] * running
            ret[t] = running
        adv = ret - buf.values
    elif mode == "gae":
        last = np.zeros(buf.n_workers)
        for t in range(T - 1, -1, -1):
            next_v = buf.last_values if t == T - 1 else buf.values[t + 1]
            delta = buf.rewards[t] + gamma * not_done[t] * next_v - buf.values[t]
            last = delta + gamma * gae_lambda * not_done[t] * last
            adv[t] = last
        ret = adv + buf.values
    else:
        raise ValueError(f"unknown advantage mode {mode!r}")
    buf.advantages, buf.returns = adv, ret
    return buf
