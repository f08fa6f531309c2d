"""Synthetic core physics used as ground truth in place of a transport code.

Maps six hexant drum angles and a burnup state to ``k_eff`` and six
hexant power fractions. The model is built so that the 12-element group
of hexant rotations and reflections is an exact symmetry.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from enum import IntEnum
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

N_HEXANTS = 6
N_SYMMETRY_OPS = 12
MAX_ANGLE = 180


class DomainError(ValueError):
    """Input outside the domain of an operation."""


class BurnupStep(IntEnum):
    YR0 = 0
    YR2 = 1
    YR4 = 2

    @property
    def years(self) -> int:
        return 2 * int(self)

    @property
    def tag(self) -> str:
        return self.name.lower()

    @classmethod
    def parse(cls, value) -> "BurnupStep":
        """Accept a member, its name (``"YR2"``/``"yr2"``) or its index."""
        if isinstance(value, BurnupStep):
            return value
        if isinstance(value, str):
            try:
                return cls[value.upper()]
            except KeyError:
                raise DomainError(f"unknown burnup step {value!r}") from None
        try:
            return cls(int(value))
        except ValueError:
            raise DomainError(f"unknown burnup step {value!r}") from None


DrumConfig = tuple  # six ints in [0, 180]


def check_config(angles: Sequence[int]) -> tuple[int, ...]:
    """Validate a drum configuration and return it as a tuple of ints."""
    if len(angles) != N_HEXANTS:
        raise DomainError(f"expected {N_HEXANTS} drum angles, got {len(angles)}")
    out = []
    for a in angles:
        if a != int(a):
            raise DomainError(f"drum angle {a!r} is not an integer")
        a = int(a)
        if not 0 <= a <= MAX_ANGLE:
            raise DomainError(f"drum angle {a} outside [0, {MAX_ANGLE}]")
        out.append(a)
    return tuple(out)


@dataclass(frozen=True)
class CoreResponse:
    k_eff: float
    powers: tuple[float, ...]

    def __post_init__(self):
        if len(self.powers) != N_HEXANTS:
            raise DomainError("a core response carries six hexant powers")


def worth_curve(theta: float) -> float:
    """Integral drum worth fraction, 0 at 0 degrees and 1 at 180 degrees."""
    if not 0 <= theta <= MAX_ANGLE:
        raise DomainError(f"angle {theta} outside [0, {MAX_ANGLE}]")
    return (1.0 - math.cos(math.pi * theta / 180.0)) / 2.0


def _base_for(theta: float, total_drum_worth: float, interaction_strength: float) -> float:
    w = worth_curve(theta)
    return 1.0 - total_drum_worth * w - interaction_strength * N_HEXANTS * w * w


# uniform critical angles per burnup step (mean drum angles of the reference PPO policy)
DEFAULT_TARGETS = {BurnupStep.YR0: 91, BurnupStep.YR2: 113, BurnupStep.YR4: 136}
_DEFAULT_BASE_K = tuple(_base_for(t, 0.05, 0.002) for t in DEFAULT_TARGETS.values())


@dataclass(frozen=True)
class OracleParams:
    base_k: tuple[float, float, float] = _DEFAULT_BASE_K
    total_drum_worth: float = 0.05
    interaction_strength: float = 0.002
    tilt_gain: float = 0.6
    neighbor_kernel: tuple[float, ...] = (0.6, 0.15, 0.05, 0.0, 0.05, 0.15)
    noise_sigma_k: float = 9.0  # pcm

    def __post_init__(self):
        kern = self.neighbor_kernel
        if len(self.base_k) != 3 or min(self.base_k) <= 0:
            raise DomainError("base_k needs three positive values")
        if self.total_drum_worth <= 0:
            raise DomainError("total_drum_worth must be positive")
        if self.interaction_strength < 0:
            raise DomainError("interaction_strength must be non-negative")
        if len(kern) != N_HEXANTS or min(kern) < 0:
            raise DomainError("neighbor_kernel needs six non-negative weights")
        if any(kern[j] != kern[-j % N_HEXANTS] for j in range(N_HEXANTS)):
            raise DomainError("neighbor_kernel must be symmetric about offset 0")
        if self.noise_sigma_k < 0:
            raise DomainError("noise_sigma_k must be non-negative")

    def to_dict(self) -> dict:
        return {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(self).items()}

    @classmethod
    def from_dict(cls, d: Mapping) -> "OracleParams":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(d) - known
        if unknown:
            raise DomainError(f"unknown oracle parameter(s): {sorted(unknown)}")
        kw = {k: tuple(float(x) for x in v) if isinstance(v, (list, tuple)) else float(v)
              for k, v in d.items()}
        return cls(**kw)

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")

    @classmethod
    def load(cls, path) -> "OracleParams":
        return cls.from_dict(json.loads(Path(path).read_text()))


def _worths(angles) -> list[float]:
    return [worth_curve(a) for a in check_config(angles)]


def _k_from_worths(w: Sequence[float], base: float, params: OracleParams) -> float:
    # fsum is exactly rounded, so permuting hexants cannot change a single bit
    linear = math.fsum(w)
    pairs = math.fsum(w[i] * w[(i + 1) % N_HEXANTS] for i in range(N_HEXANTS))
    return math.fsum([base, params.total_drum_worth / N_HEXANTS * linear,
                      params.interaction_strength * pairs])


def k_eff(config: Sequence[int], step, params: OracleParams) -> float:
    step = BurnupStep.parse(step)
    return _k_from_worths(_worths(config), params.base_k[step], params)


def _powers_from_worths(w: Sequence[float], params: OracleParams) -> tuple[float, ...]:
    mean_w = math.fsum(w) / N_HEXANTS
    dev = [x - mean_w for x in w]
    kern = params.neighbor_kernel
    u = [math.exp(params.tilt_gain * math.fsum(kern[j] * dev[(i + j) % N_HEXANTS]
                                               for j in range(N_HEXANTS)))
         for i in range(N_HEXANTS)]
    total = math.fsum(u)
    return tuple(x / total for x in u)


def hexant_powers(config: Sequence[int], step, params: OracleParams) -> tuple[float, ...]:
    BurnupStep.parse(step)
    return _powers_from_worths(_worths(config), params)


def evaluate(config: Sequence[int], step, params: OracleParams,
             noise_seed: int | None = None) -> CoreResponse:
    """Core response at ``config``; Gaussian Monte Carlo-like noise only if seeded."""
    step = BurnupStep.parse(step)
    w = _worths(config)
    k = _k_from_worths(w, params.base_k[step], params)
    p = _powers_from_worths(w, params)
    if noise_seed is None:
        return CoreResponse(k, p)
    rng = np.random.default_rng(noise_seed)
    sigma = params.noise_sigma_k * 1e-5
    k = k + sigma * rng.standard_normal()
    noisy = np.maximum(np.asarray(p) * (1.0 + sigma * rng.standard_normal(N_HEXANTS)), 1e-12)
    noisy = noisy / noisy.sum()
    return CoreResponse(float(k), tuple(float(x) for x in noisy))


def symmetry_permutation(op_index: int) -> tuple[int, ...]:
    """Source hexant for each destination hexant under symmetry op ``op_index``.

    Ops 0-5 rotate by ``op_index`` hexants; ops 6-11 reverse the hexant order
    (fixing hexant 0) and then rotate by ``op_index - 6``.
    """
    if not 0 <= op_index < N_SYMMETRY_OPS:
        raise DomainError(f"symmetry op {op_index} outside [0, {N_SYMMETRY_OPS - 1}]")
    r = op_index % N_HEXANTS
    if op_index < N_HEXANTS:
        return tuple((i - r) % N_HEXANTS for i in range(N_HEXANTS))
    return tuple((r - i) % N_HEXANTS for i in range(N_HEXANTS))


def apply_symmetry(op_index: int, config: Sequence[int],
                   response: CoreResponse) -> tuple[tuple[int, ...], CoreResponse]:
    perm = symmetry_permutation(op_index)
    config = check_config(config)
    new_cfg = tuple(config[j] for j in perm)
    new_p = tuple(response.powers[j] for j in perm)
    return new_cfg, CoreResponse(response.k_eff, new_p)


def calibrate(targets: Mapping, total_drum_worth: float = 0.05,
              interaction_strength: float = 0.002, **kwargs) -> OracleParams:
    """Choose ``base_k`` so each step is exactly critical at its uniform target angle."""
    base = []
    for step in BurnupStep:
        key = next((t for t in targets if BurnupStep.parse(t) is step), None)
        if key is None:
            raise DomainError(f"no calibration target for {step.name}")
        base.append(_base_for(targets[key], total_drum_worth, interaction_strength))
    return OracleParams(base_k=tuple(base), total_drum_worth=total_drum_worth,
                        interaction_strength=interaction_strength, **kwargs)


def default_params() -> OracleParams:
    """Calibrated parameters for the default targets; equal to ``OracleParams()``."""
    return calibrate(DEFAULT_TARGETS)


def critical_angle(step, params: OracleParams, tol: float = 1e-9) -> float:
    """Uniform drum angle giving ``k_eff = 1``, found by bisection on [0, 180]."""
    step = BurnupStep.parse(step)
    base = params.base_k[step]

    def excess(theta: float) -> float:
        return _k_from_worths([worth_curve(theta)] * N_HEXANTS, base, params) - 1.0

    lo, hi = 0.0, float(MAX_ANGLE)
    if excess(lo) > 0 or excess(hi) < 0:
        raise DomainError(f"no critical uniform angle for {step.name}")
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if excess(mid) < 0:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)
