"""A2C and PPO updates on the combined actor-critic objective.

The maximised objective is ``policy_term - c1 * value_mse + c2 * entropy``.
Gradients w.r.t. the network outputs are written out by hand and pushed
through :func:`drumrl.nn.backward`.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .. import nn
from . import policy as pol
from .buffer import RolloutBuffer
from .config import AlgoConfig


@dataclass
class ObjectiveResult:
    objective: float
    policy_term: float
    value_loss: float
    entropy: float
    clip_fraction: float
    approx_kl: float
    grads: list  # gradients of the objective (ascent direction)


def ppo_surrogate(ratio, adv, clip_eps: float) -> np.ndarray:
    """Per-sample ``min(ratio * A, clip(ratio, 1 - eps, 1 + eps) * A)``."""
    return np.minimum(ratio * adv, np.clip(ratio, 1.0 - clip_eps, 1.0 + clip_eps) * adv)


def objective(ac: pol.ActorCritic, obs, actions, advantages, returns, c1: float, c2: float,
              old_log_probs=None, clip_eps: float | None = None,
              with_grad: bool = True) -> ObjectiveResult:
    """Combined objective on a batch; PPO clipping is used when ``clip_eps`` is set."""
    out, cache = pol.forward(ac, obs, return_cache=True)
    actions = np.asarray(actions)
    adv = np.asarray(advantages, dtype=np.float64)
    ret = np.asarray(returns, dtype=np.float64)
    n = adv.shape[0]

    lp = out.log_prob(actions)
    ent_rows = -(out.probs * out.log_probs).sum(axis=2)  # (n, heads)
    entropy = float(ent_rows.sum(axis=1).mean())
    v_err = out.values - ret
    value_loss = float(np.mean(v_err * v_err))

    clip_fraction = approx_kl = 0.0
    if clip_eps is None:
        policy_term = float(np.mean(lp * adv))
        d_lp = adv / n
    else:
        log_ratio = lp - np.asarray(old_log_probs, dtype=np.float64)
        ratio = np.exp(log_ratio)
        surr = ppo_surrogate(ratio, adv, clip_eps)
        policy_term = float(np.mean(surr))
        unclipped_active = ratio * adv <= np.clip(ratio, 1.0 - clip_eps, 1.0 + clip_eps) * adv
        d_lp = np.where(unclipped_active, ratio * adv, 0.0) / n
        clip_fraction = float(np.mean(np.abs(ratio - 1.0) > clip_eps))
        approx_kl = float(np.mean((ratio - 1.0) - log_ratio))

    total = policy_term - c1 * value_loss + c2 * entropy
    grads = None
    if with_grad:
        probs = out.probs
        d_logits = -d_lp[:, None, None] * probs
        rows = np.arange(n)[:, None]
        heads = np.arange(ac.n_heads)[None, :]
        d_logits[rows, heads, actions] += d_lp[:, None]
        # dH/dz_j = -p_j (log p_j + H) per head
        d_logits += (c2 / n) * (-probs * (out.log_probs + ent_rows[:, :, None]))
        grads = ac.backward(d_logits, -c1 * 2.0 * v_err / n, cache)
    return ObjectiveResult(total, policy_term, value_loss, entropy, clip_fraction, approx_kl, grads)


def _apply(ac: pol.ActorCritic, res: ObjectiveResult, opt: nn.AdamState, max_grad_norm):
    if not np.isfinite(res.objective):
        raise nn.TrainingError(
            f"non-finite objective (policy={res.policy_term}, value={res.value_loss}, "
            f"entropy={res.entropy})")
    descent = [-g for g in res.grads]
    descent, norm = nn.clip_grad_norm(descent, max_grad_norm)
    nn.adam_step(ac.params, descent, opt)
    return norm, nn.global_norm(descent)


def a2c_update(ac: pol.ActorCritic, buf: RolloutBuffer, cfg: AlgoConfig,
               opt: nn.AdamState) -> dict:
    """One full-batch step on raw n-step advantages."""
    d = buf.flat()
    res = objective(ac, d["obs"], d["actions"], d["advantages"], d["returns"], cfg.c1, cfg.c2)
    norm, used = _apply(ac, res, opt, cfg.max_grad_norm)
    return {"objective": res.objective, "policy_term": res.policy_term,
            "value_loss": res.value_loss, "entropy": res.entropy,
            "grad_norm": norm, "grad_norm_used": used}


def normalize(adv) -> np.ndarray:
    adv = np.asarray(adv, dtype=np.float64)
    if adv.size < 2:
        return adv - adv.mean()
    return (adv - adv.mean()) / (adv.std() + 1e-8)


def ppo_update(ac: pol.ActorCritic, buf: RolloutBuffer, cfg: AlgoConfig,
               opt: nn.AdamState, rng: np.random.Generator) -> dict:
    """``ppo_epochs`` passes of shuffled minibatches against frozen old log-probs."""
    d = buf.flat()
    n = len(buf)
    stats = {k: [] for k in ("objective", "policy_term", "value_loss", "entropy",
                             "clip_fraction", "approx_kl", "grad_norm")}
    for _ in range(cfg.ppo_epochs):
        order = rng.permutation(n)
        for start in range(0, n, cfg.minibatch_size):
            idx = order[start:start + cfg.minibatch_size]
            res = objective(ac, d["obs"][idx], d["actions"][idx], normalize(d["advantages"][idx]),
                            d["returns"][idx], cfg.c1, cfg.c2,
                            old_log_probs=d["log_probs"][idx], clip_eps=cfg.clip_eps)
            norm, _ = _apply(ac, res, opt, cfg.max_grad_norm)
            for k in stats:
                stats[k].append(norm if k == "grad_norm" else getattr(res, k))
    return {k: float(np.mean(v)) for k, v in stats.items()}
