"""Synchronous multi-worker rollouts, the training loop, evaluation and checkpoints."""

from __future__ import annotations

import csv
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .. import nn, oracle
from ..env import OBS_DIM, DrumControlEnv, hptr as hptr_of
from ..oracle import BurnupStep, OracleParams
from . import algos
from . import policy as pol
from .buffer import RolloutBuffer, compute_returns_and_advantages
from .config import EPOCH_TIMESTEPS, AlgoConfig

log = logging.getLogger(__name__)

LOG_HEADER = ["epoch", "timesteps", "reward_mean", "reward_std", "reward_max", "reward_min",
              "keff_dev_mean", "hptr_mean"]
REPORT_HEADER = ["algo", "year", *[f"theta{i}" for i in range(1, 7)], "keff", "hptr"]
CHECKPOINT_VERSION = 1


class CheckpointError(ValueError):
    pass


@dataclass
class EpisodeRecord:
    """Per-episode averages over its three burnup steps."""

    end_timestep: int
    reward: float
    keff_dev: float
    hptr: float


class VecEnv:
    """Lock-step wrapper over independent environments with auto-reset."""

    def __init__(self, envs: list[DrumControlEnv], seeds: list[int]):
        self.envs = envs
        self.obs = np.stack([e.reset(seed=s) for e, s in zip(envs, seeds)])
        self._acc = np.zeros((len(envs), 3))
        self._len = np.zeros(len(envs), dtype=int)
        self.timesteps = 0
        self.episodes: list[EpisodeRecord] = []

    def __len__(self) -> int:
        return len(self.envs)

    def step(self, actions):
        n = len(self.envs)
        rewards, dones = np.zeros(n), np.zeros(n, dtype=bool)
        keffs, hptrs = np.zeros(n), np.zeros(n)
        for i, (env, a) in enumerate(zip(self.envs, actions)):
            self.timesteps += 1
            obs, r, done, info = env.step(a)
            rewards[i], dones[i] = r, done
            keffs[i], hptrs[i] = info["k_eff"], info["hptr"]
            self._acc[i] += (r, abs(info["k_eff"] - 1.0), info["hptr"])
            self._len[i] += 1
            if done:
                m = self._acc[i] / self._len[i]
                self.episodes.append(EpisodeRecord(self.timesteps, *map(float, m)))
                self._acc[i] = 0.0
                self._len[i] = 0
                obs = env.reset()
            self.obs[i] = obs
        return rewards, dones, keffs, hptrs


class RewardNormalizer:
    """Divide rewards by the running std of each worker's discounted return, then clip.

    Only the learning signal is rescaled; logged episode rewards stay raw.
    """

    def __init__(self, n_workers: int, gamma: float, clip: float = 10.0, eps: float = 1e-8):
        self.gamma, self.clip, self.eps = gamma, clip, eps
        self.returns = np.zeros(n_workers)
        self.mean, self.var, self.count = 0.0, 1.0, 1e-4

    def _update(self, x) -> None:
        # parallel mean/variance merge (Chan et al.)
        b_mean, b_var, b_count = float(np.mean(x)), float(np.var(x)), x.size
        delta = b_mean - self.mean
        total = self.count + b_count
        m2 = self.var * self.count + b_var * b_count + delta ** 2 * self.count * b_count / total
        self.mean, self.var, self.count = self.mean + delta * b_count / total, m2 / total, total

    def __call__(self, rewards, dones) -> np.ndarray:
        self.returns = self.returns * self.gamma + rewards
        self._update(self.returns)
        out = np.clip(rewards / np.sqrt(self.var + self.eps), -self.clip, self.clip)
        self.returns[np.asarray(dones, dtype=bool)] = 0.0
        return out


def collect_rollouts(venv: VecEnv, ac: pol.ActorCritic, n_steps: int,
                     rng: np.random.Generator, reward_fn=None) -> RolloutBuffer:
    """Step every worker ``n_steps`` times; ``reward_fn(rewards, dones)`` rescales what is stored."""
    buf = RolloutBuffer.empty(n_steps, len(venv), OBS_DIM, ac.n_heads)
    buf.infos = {"k_eff": np.zeros((n_steps, len(venv))), "hptr": np.zeros((n_steps, len(venv))),
                 "raw_reward": np.zeros((n_steps, len(venv)))}
    for t in range(n_steps):
        dist = pol.forward(ac, venv.obs)
        actions = pol.sample_action(dist, rng)
        buf.obs[t] = venv.obs
        buf.actions[t] = actions
        buf.log_probs[t] = dist.log_prob(actions)
        buf.values[t] = dist.values
        rewards, dones, keffs, hptrs = venv.step(actions)
        buf.rewards[t] = rewards if reward_fn is None else reward_fn(rewards, dones)
        buf.dones[t] = dones
        buf.infos["raw_reward"][t] = rewards
        buf.infos["k_eff"][t], buf.infos["hptr"][t] = keffs, hptrs
    buf.last_values = pol.forward(ac, venv.obs).values
    return buf


class EpochLogger:
    """Groups finished episodes into fixed windows of aggregated timesteps."""

    def __init__(self, epoch_timesteps: int = EPOCH_TIMESTEPS):
        self.epoch_timesteps = epoch_timesteps
        self.rows: list[dict] = []
        self._next = 0  # index into the episode list

    def _row(self, epoch: int, timesteps: int, eps: list[EpisodeRecord]) -> dict:
        r = np.array([e.reward for e in eps])
        return {"epoch": epoch, "timesteps": timesteps,
                "reward_mean": float(r.mean()), "reward_std": float(r.std()),
                "reward_max": float(r.max()), "reward_min": float(r.min()),
                "keff_dev_mean": float(np.mean([e.keff_dev for e in eps])),
                "hptr_mean": float(np.mean([e.hptr for e in eps]))}

    def update(self, episodes: list[EpisodeRecord], timesteps: int, final: bool = False) -> list[dict]:
        new = []
        while True:
            epoch = len(self.rows) + 1
            end = epoch * self.epoch_timesteps
            if end > timesteps:
                break
            chunk = []
            while self._next < len(episodes) and episodes[self._next].end_timestep <= end:
                chunk.append(episodes[self._next])
                self._next += 1
            if chunk:
                self.rows.append(self._row(epoch, end, chunk))
                new.append(self.rows[-1])
            else:
                break
        if final and self._next < len(episodes):
            self.rows.append(self._row(len(self.rows) + 1, timesteps, episodes[self._next:]))
            self._next = len(episodes)
            new.append(self.rows[-1])
        return new


def write_log(path, rows, comments=()) -> None:
    with open(path, "w", newline="") as fh:
        for c in comments:
            fh.write(f"# {c}\n")
        w = csv.DictWriter(fh, LOG_HEADER, lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: repr(v) if isinstance(v, float) else v for k, v in r.items()})


def read_log(path) -> list[dict]:
    with open(path, newline="") as fh:
        lines = [ln for ln in fh if not ln.startswith("#")]
    rows = list(csv.DictReader(lines))
    if not rows and (not lines or lines[0].strip().split(",") != LOG_HEADER):
        raise ValueError(f"{path}: not a training log")
    return [{k: (int(v) if k in ("epoch", "timesteps") else float(v)) for k, v in r.items()}
            for r in rows]


@dataclass
class TrainingResult:
    actor_critic: pol.ActorCritic
    config: AlgoConfig
    rows: list[dict]
    update_stats: list[dict] = field(default_factory=list)
    wall_time: float = 0.0


def worker_seeds(seed: int, n: int) -> tuple[list[int], np.random.Generator, int]:
    """Per-worker env seeds, the action/minibatch RNG and the network init seed."""
    ss = np.random.SeedSequence(seed)
    env_ss, rng_ss, init_ss = ss.spawn(3)
    env_seeds = [int(s.generate_state(1)[0]) for s in env_ss.spawn(n)]
    return env_seeds, np.random.default_rng(rng_ss), int(init_ss.generate_state(1)[0])


def train(cfg: AlgoConfig, env_factory: Callable[[int], DrumControlEnv], seed: int = 0,
          out_dir=None, checkpoint_meta: dict | None = None,
          progress: Callable[[dict], None] | None = None) -> TrainingResult:
    """Alternate rollout collection and updates until ``cfg.total_timesteps``.

    With ``out_dir`` the epoch log is rewritten and the checkpoint refreshed
    at every completed epoch.
    """
    env_seeds, rng, init_seed = worker_seeds(seed, cfg.n_workers)
    ac = pol.build_actor_critic(init_seed, cfg.hidden_sizes, shared=cfg.shared_trunk)
    opt = nn.AdamState.for_params(ac.params, cfg.learning_rate)
    venv = VecEnv([env_factory(i) for i in range(cfg.n_workers)], env_seeds)
    reward_fn = RewardNormalizer(cfg.n_workers, cfg.gamma, cfg.reward_clip) if cfg.normalize_reward else None
    logger = EpochLogger()
    meta = dict(checkpoint_meta or {}, train_seed=seed)
    meta.setdefault("seed", seed)
    out_dir = Path(out_dir) if out_dir is not None else None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
    comments = [f"{k}={meta[k]}" for k in ("seed", "config_hash") if k in meta]
    mode = "gae" if cfg.algorithm == "ppo" else "nstep"
    stats = []
    t0 = time.perf_counter()
    while venv.timesteps < cfg.total_timesteps:
        buf = collect_rollouts(venv, ac, cfg.n_steps, rng, reward_fn)
        compute_returns_and_advantages(buf, cfg.gamma, cfg.gae_lambda, mode)
        if cfg.algorithm == "ppo":
            s = algos.ppo_update(ac, buf, cfg, opt, rng)
        else:
            s = algos.a2c_update(ac, buf, cfg, opt)
        s["timesteps"] = venv.timesteps
        stats.append(s)
        final = venv.timesteps >= cfg.total_timesteps
        new_rows = logger.update(venv.episodes, venv.timesteps, final=final)
        for row in new_rows:
            log.info("%s epoch %d t=%d reward=%.1f |k-1|=%.5f hptr=%.4f", cfg.algorithm,
                     row["epoch"], row["timesteps"], row["reward_mean"], row["keff_dev_mean"],
                     row["hptr_mean"])
            if progress is not None:
                progress(row)
        if new_rows and out_dir is not None:
            write_log(out_dir / "train_log.csv", logger.rows, comments)
            save_checkpoint(out_dir / "checkpoint", ac, cfg,
                            dict(meta, timesteps=venv.timesteps, epoch=logger.rows[-1]["epoch"]))
    return TrainingResult(ac, cfg, logger.rows, stats, time.perf_counter() - t0)


# -- checkpoints -------------------------------------------------------------------

def _value_path(path) -> Path:
    path = Path(path)
    return path.with_name(path.name + "_value")


def save_checkpoint(path, ac: pol.ActorCritic, cfg: AlgoConfig, meta: dict | None = None) -> None:
    """Policy network at ``path``; a separate critic goes to ``<path>_value``."""
    m = dict(meta or {})
    m.update({"kind": "actor_critic", "checkpoint_version": CHECKPOINT_VERSION,
              "algo_config": cfg.to_dict(), "n_heads": ac.n_heads, "n_choices": ac.n_choices,
              "scale_inputs": ac.scale_inputs, "shared_trunk": ac.shared})
    if not ac.shared:
        m["value_file"] = _value_path(path).name
        stamp = {k: m[k] for k in ("seed", "config_hash") if k in m}
        nn.save_mlp(_value_path(path), ac.value_mlp, dict(stamp, kind="value"))
    nn.save_mlp(path, ac.mlp, m)


def load_checkpoint(path) -> tuple[pol.ActorCritic, AlgoConfig, dict]:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"checkpoint not found: {path}")
    mlp = nn.load_mlp(path)
    meta = nn.load_metadata(path)
    if meta.get("kind") != "actor_critic":
        raise CheckpointError(f"{path}: not an actor-critic checkpoint")
    if meta.get("checkpoint_version") != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path}: checkpoint version {meta.get('checkpoint_version')}, "
                              f"expected {CHECKPOINT_VERSION}")
    value_mlp = None
    if not meta.get("shared_trunk", True):
        value_mlp = nn.load_mlp(path.with_name(meta["value_file"]))
    ac = pol.ActorCritic(mlp, int(meta["n_heads"]), int(meta["n_choices"]),
                         bool(meta.get("scale_inputs", True)), value_mlp)
    n_logits = ac.n_heads * ac.n_choices
    if mlp.layer_sizes[-1] != n_logits + ac.shared:
        raise CheckpointError(f"{path}: output width does not match the head layout")
    if value_mlp is not None and value_mlp.layer_sizes[-1] != 1:
        raise CheckpointError(f"{path}: value network must have one output")
    return ac, AlgoConfig.from_dict(meta["algo_config"]), meta


# -- evaluation -------------------------------------------------------------------

def evaluate_policy(ac: pol.ActorCritic, env: DrumControlEnv, algo: str = "",
                    oracle_params: OracleParams | None = None, seed: int = 0) -> list[dict]:
    """One greedy episode; one row per burnup step in the evaluation-report schema.

    The chosen angles are also re-scored by the oracle (``keff_oracle``,
    ``hptr_oracle``) to expose surrogate bias.
    """
    params = oracle_params or oracle.default_params()
    obs = env.reset(seed=seed)
    rows = []
    done = False
    while not done:
        action = pol.greedy_action(pol.forward(ac, obs))[0]
        obs, _, done, info = env.step(action)
        truth = oracle.evaluate(action, info["burnup"], params)
        row = {"algo": algo, "year": info["burnup"].years}
        row.update({f"theta{i + 1}": int(a) for i, a in enumerate(action)})
        row.update({"keff": info["k_eff"], "hptr": info["hptr"],
                    "keff_oracle": truth.k_eff, "hptr_oracle": hptr_of(truth.powers)})
        rows.append(row)
    return rows


def write_report(path, rows, comments=()) -> None:
    header = REPORT_HEADER + ["keff_oracle", "hptr_oracle"]
    with open(path, "w", newline="") as fh:
        for c in comments:
            fh.write(f"# {c}\n")
        w = csv.DictWriter(fh, header, lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: repr(v) if isinstance(v, float) else v for k, v in r.items()})


def read_report(path) -> list[dict]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(ln for ln in fh if not ln.startswith("#")))
    ints = {"year", *[f"theta{i}" for i in range(1, 7)]}
    return [{k: (v if k == "algo" else int(v) if k in ints else float(v)) for k, v in r.items()}
            for r in rows]


def inference_latency(ac: pol.ActorCritic, n: int = 1000, step=BurnupStep.YR0,
                      batch: int = 1, seed: int = 0) -> float:
    """Mean wall-clock seconds per greedy action (per row when ``batch > 1``)."""
    rng = np.random.default_rng(seed)
    p = rng.uniform(size=(batch, oracle.N_HEXANTS))
    obs = np.zeros((batch, OBS_DIM))
    obs[:, int(BurnupStep.parse(step))] = 1.0
    obs[:, 3] = rng.uniform(0.95, 1.05, size=batch)
    obs[:, 4:] = p / p.sum(axis=1, keepdims=True)
    pol.greedy_action(pol.forward(ac, obs))
    t0 = time.perf_counter()
    for _ in range(n):
        pol.greedy_action(pol.forward(ac, obs))
    return (time.perf_counter() - t0) / (n * batch)
