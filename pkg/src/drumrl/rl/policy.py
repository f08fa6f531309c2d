"""Actor-critic with one categorical head per drum."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .. import nn
from ..env import OBS_DIM, scale_observation
from ..oracle import MAX_ANGLE, N_HEXANTS

N_CHOICES = MAX_ANGLE + 1


@dataclass
class ActorCritic:
    """Actor and critic networks.

    With a shared trunk (``value_mlp is None``) the output layout of ``mlp``
    is ``n_heads * n_choices`` logits followed by the state value; otherwise
    ``mlp`` emits only logits and ``value_mlp`` the value.
    """

    mlp: nn.Mlp
    n_heads: int = N_HEXANTS
    n_choices: int = N_CHOICES
    scale_inputs: bool = True
    value_mlp: nn.Mlp | None = None

    @property
    def shared(self) -> bool:
        return self.value_mlp is None

    @property
    def params(self):
        return self.mlp.params + ([] if self.shared else self.value_mlp.params)

    def backward(self, d_logits, d_values, cache) -> list:
        n = d_logits.shape[0]
        flat = d_logits.reshape(n, -1)
        if self.shared:
            return nn.backward(self.mlp, np.concatenate([flat, d_values[:, None]], axis=1), cache[0])
        return (nn.backward(self.mlp, flat, cache[0])
                + nn.backward(self.value_mlp, d_values[:, None], cache[1]))


@dataclass
class PolicyOutput:
    logits: np.ndarray  # (n, heads, choices)
    log_probs: np.ndarray  # (n, heads, choices)
    probs: np.ndarray
    values: np.ndarray  # (n,)

    def entropy(self) -> np.ndarray:
        """Summed per-head entropy for each row, shape ``(n,)``."""
        return -(self.probs * self.log_probs).sum(axis=(1, 2))

    def log_prob(self, actions) -> np.ndarray:
        """Joint log-probability of integer actions ``(n, heads)``."""
        a = np.asarray(actions)
        picked = np.take_along_axis(self.log_probs, a[..., None], axis=2)[..., 0]
        return picked.sum(axis=1)


def build_actor_critic(seed: int = 0, hidden_sizes=(64, 64), obs_dim: int = OBS_DIM,
                       n_heads: int = N_HEXANTS, n_choices: int = N_CHOICES,
                       head_gain: float = 0.01, scale_inputs: bool = True,
                       shared: bool = False) -> ActorCritic:
    """Tanh hidden layers; policy-head weights shrunk by ``head_gain`` so the initial policy is near uniform."""
    n_logits = n_heads * n_choices
    if shared:
        mlp = nn.init_mlp([obs_dim, *hidden_sizes, n_logits + 1], "tanh", seed)
        mlp.weights[-1][:, :-1] *= head_gain
        return ActorCritic(mlp, n_heads, n_choices, scale_inputs)
    pi_seed, vf_seed = np.random.SeedSequence(seed).generate_state(2)
    mlp = nn.init_mlp([obs_dim, *hidden_sizes, n_logits], "tanh", int(pi_seed))
    mlp.weights[-1] *= head_gain
    vf = nn.init_mlp([obs_dim, *hidden_sizes, 1], "tanh", int(vf_seed))
    return ActorCritic(mlp, n_heads, n_choices, scale_inputs, vf)


def _log_softmax(z):
    z = z - z.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def forward(ac: ActorCritic, obs, return_cache: bool = False):
    x = np.atleast_2d(np.asarray(obs, dtype=np.float64))
    if ac.scale_inputs:
        x = scale_observation(x)
    out, cache = nn.forward(ac.mlp, x, return_cache=True)
    n = out.shape[0]
    if ac.shared:
        logits = out[:, :-1].reshape(n, ac.n_heads, ac.n_choices)
        values = out[:, -1].copy()
        caches = (cache,)
    else:
        logits = out.reshape(n, ac.n_heads, ac.n_choices)
        v, vcache = nn.forward(ac.value_mlp, x, return_cache=True)
        values = v[:, 0]
        caches = (cache, vcache)
    logp = _log_softmax(logits)
    po = PolicyOutput(logits, logp, np.exp(logp), values)
    return (po, caches) if return_cache else po


def policy_distribution(ac: ActorCritic, observation) -> PolicyOutput:
    return forward(ac, observation)


def sample_action(dist: PolicyOutput, rng: np.random.Generator) -> np.ndarray:
    """Independent inverse-CDF draw per head; returns ints ``(n, heads)``."""
    cdf = np.cumsum(dist.probs, axis=2)
    u = rng.random(cdf.shape[:2] + (1,))
    idx = (cdf < u * cdf[..., -1:]).sum(axis=2)
    return np.minimum(idx, dist.probs.shape[2] - 1)


def greedy_action(dist: PolicyOutput) -> np.ndarray:
    """Per-head argmax; ``np.argmax`` already breaks ties toward the lowest index."""
    return np.argmax(dist.logits, axis=2)
