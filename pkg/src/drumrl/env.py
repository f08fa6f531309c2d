"""Three-step drum-angle control episode over the burnup states.

Observation layout (width 10): burnup one-hot (3), ``k_eff``, six hexant
power fractions. Rewards follow the criticality/power-balance shaping with
a running mean-minus-spread across the episode.
"""

from __future__ import annotations

import math
from typing import Protocol, Sequence

import numpy as np

from . import oracle, surrogate
from .oracle import BurnupStep, CoreResponse, DomainError, OracleParams

OBS_DIM = 10
N_STEPS_PER_EPISODE = len(BurnupStep)
REWARD_GUARD = 1e-6
FLAT_POWER = 1.0 / 6.0


class EnvUsageError(RuntimeError):
    pass


class Backing(Protocol):
    def response(self, angles: Sequence[int], step: BurnupStep) -> CoreResponse: ...


class OracleBacking:
    def __init__(self, params: OracleParams | None = None):
        self.params = params or oracle.default_params()

    def response(self, angles, step) -> CoreResponse:
        return oracle.evaluate(angles, step, self.params)


class SurrogateBacking:
    def __init__(self, models: dict):
        missing = [s.name for s in BurnupStep if s not in models]
        if missing:
            raise FileNotFoundError(f"no surrogate for burnup step(s) {missing}")
        self.models = models

    @classmethod
    def from_dir(cls, directory) -> "SurrogateBacking":
        return cls(surrogate.load_all(directory))

    def response(self, angles, step) -> CoreResponse:
        return surrogate.predict(self.models[BurnupStep.parse(step)], angles)


def _six(powers) -> np.ndarray:
    p = np.asarray(powers, dtype=np.float64)
    if p.shape != (oracle.N_HEXANTS,):
        raise DomainError(f"expected six hexant powers, got shape {p.shape}")
    return p


def f1(powers) -> float:
    """Mean absolute deviation of the hexant powers from the flat value."""
    p = _six(powers)
    return math.fsum(abs(x - FLAT_POWER) for x in p) / 6.0


def f2(k_eff: float) -> float:
    return abs(k_eff - 1.0)


def f3(powers) -> float:
    """Population standard deviation of the six hexant powers."""
    p = _six(powers)
    mean = math.fsum(p) / 6.0
    return math.sqrt(math.fsum((x - mean) ** 2 for x in p) / 6.0)


def base_reward(k_eff: float, powers) -> float:
    return 1.0 / max(f1(powers) + f2(k_eff) + f3(powers), REWARD_GUARD)


def sequential_reward(history: Sequence[float]) -> float:
    """Mean minus population std of the base rewards seen so far this episode."""
    if len(history) == 0:
        raise DomainError("reward history is empty")
    h = np.asarray(history, dtype=np.float64)
    if len(h) == 1:
        return float(h[0])
    return float(h.mean() - h.std())


def hptr(powers) -> float:
    p = _six(powers)
    return 6.0 * float(p.max()) / math.fsum(p)


def make_observation(step: BurnupStep, k_eff: float, powers) -> np.ndarray:
    obs = np.zeros(OBS_DIM)
    obs[int(step)] = 1.0
    obs[3] = k_eff
    obs[4:] = powers
    return obs


def scale_observation(obs) -> np.ndarray:
    """Policy-input scaling: one-hot raw, ``(k - 1) * 20``, ``6 P - 1``."""
    obs = np.asarray(obs, dtype=np.float64)
    out = obs.copy()
    out[..., 3] = (obs[..., 3] - 1.0) * 20.0
    out[..., 4:] = 6.0 * obs[..., 4:] - 1.0
    return out


class DrumControlEnv:
    """Gym-style environment; ``step`` returns ``(obs, reward, done, info)``."""

    def __init__(self, backing: Backing, seed: int | None = None):
        self.backing = backing
        self.rng = np.random.default_rng(seed)
        self.t = 0
        self.history: list[float] = []
        self.obs: np.ndarray | None = None
        self.done = True

    def reset(self, seed: int | None = None) -> np.ndarray:
        if seed is not None:
            self.rng = np.random.default_rng(seed)
        k = self.rng.uniform(0.95, 1.05)
        p = self.rng.uniform(0.0, 1.0, size=oracle.N_HEXANTS)
        p = p / p.sum()
        self.t = 0
        self.history = []
        self.done = False
        self.obs = make_observation(BurnupStep.YR0, k, p)
        return self.obs.copy()

    @property
    def burnup(self) -> BurnupStep:
        return BurnupStep(min(self.t, N_STEPS_PER_EPISODE - 1))

    def step(self, action):
        if self.done:
            raise EnvUsageError("episode is over; call reset()")
        angles = oracle.check_config(action)
        current = self.burnup
        resp = self.backing.response(angles, current)
        r0 = base_reward(resp.k_eff, resp.powers)
        self.history.append(r0)
        reward = sequential_reward(self.history)
        self.t += 1
        self.done = self.t >= N_STEPS_PER_EPISODE
        self.obs = make_observation(self.burnup, resp.k_eff, resp.powers)
        info = {"burnup": current, "k_eff": resp.k_eff, "powers": resp.powers,
                "hptr": hptr(resp.powers), "base_reward": r0}
        return self.obs.copy(), reward, self.done, info
