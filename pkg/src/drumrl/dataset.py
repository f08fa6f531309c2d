"""Labelled drum-configuration data: sampling, group-wise splitting, symmetry augmentation, CSV I/O."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import oracle
from .oracle import BurnupStep, CoreResponse, DomainError, OracleParams

SPLITS = ("train", "validation", "test")
ANGLE_COLS = [f"theta{i}" for i in range(1, 7)]
POWER_COLS = [f"p{i}" for i in range(1, 7)]
HEADER = ["step", "group_id", *ANGLE_COLS, "k_eff", *POWER_COLS]
UNIFORM_FRACTION = 0.10


class DatasetFormatError(ValueError):
    """Malformed dataset file."""


@dataclass(frozen=True)
class Sample:
    config: tuple[int, ...]
    step: BurnupStep
    response: CoreResponse
    group_id: int


@dataclass
class DatasetSplit:
    train: list[Sample] = field(default_factory=list)
    validation: list[Sample] = field(default_factory=list)
    test: list[Sample] = field(default_factory=list)
    seed: int = 0

    def parts(self) -> dict[str, list[Sample]]:
        return {"train": self.train, "validation": self.validation, "test": self.test}

    def group_ids(self, name: str) -> list[int]:
        return sorted({s.group_id for s in self.parts()[name]})


def step_seed(seed: int, step) -> np.random.SeedSequence:
    return np.random.SeedSequence([int(seed), int(BurnupStep.parse(step))])


def sample_configs(n: int, seed) -> list[tuple[int, ...]]:
    """``n`` drum configurations: 90% independent random angles, 10% all-equal angles.

    The all-equal block anchors the critical locus, which independent
    sampling almost never visits.
    """
    if n < 1:
        raise DomainError("need at least one configuration")
    rng = np.random.default_rng(seed)
    n_uniform = int(round(UNIFORM_FRACTION * n))
    rand = rng.integers(0, oracle.MAX_ANGLE + 1, size=(n - n_uniform, oracle.N_HEXANTS))
    uni = rng.integers(0, oracle.MAX_ANGLE + 1, size=n_uniform)
    configs = [tuple(int(a) for a in row) for row in rand]
    configs += [(int(a),) * oracle.N_HEXANTS for a in uni]
    return configs


def generate(step, n: int, seed: int, params: OracleParams) -> list[Sample]:
    step = BurnupStep.parse(step)
    configs = sample_configs(n, step_seed(seed, step))
    return [Sample(c, step, oracle.evaluate(c, step, params), gid)
            for gid, c in enumerate(configs)]


def split_sizes(n_groups: int, fractions) -> list[int]:
    """Largest-remainder apportionment of ``n_groups``; ties go to the later set."""
    quotas = [n_groups * f for f in fractions]
    sizes = [math.floor(q) for q in quotas]
    left = n_groups - sum(sizes)
    order = sorted(range(len(quotas)), key=lambda i: (quotas[i] - sizes[i], i), reverse=True)
    for i in order[:left]:
        sizes[i] += 1
    return sizes


def split(samples, fractions=(0.70, 0.15, 0.15), seed: int = 0) -> DatasetSplit:
    """Partition by ``group_id`` so no source calculation straddles two sets."""
    if len(fractions) != 3 or abs(sum(fractions) - 1.0) > 1e-9 or min(fractions) < 0:
        raise DomainError(f"fractions must be three non-negative values summing to 1, got {fractions}")
    groups = sorted({s.group_id for s in samples})
    if len(groups) < 3:
        raise DomainError(f"need at least 3 groups to split, got {len(groups)}")
    rng = np.random.default_rng(seed)
    order = [groups[i] for i in rng.permutation(len(groups))]
    n_train, n_val, _ = split_sizes(len(groups), fractions)
    where = {}
    for i, g in enumerate(order):
        where[g] = 0 if i < n_train else 1 if i < n_train + n_val else 2
    out = DatasetSplit(seed=seed)
    parts = (out.train, out.validation, out.test)
    for s in samples:
        parts[where[s.group_id]].append(s)
    return out


def augment(samples) -> list[Sample]:
    """All 12 hexant symmetry images of every sample (duplicates kept)."""
    out = []
    for s in samples:
        for op in range(oracle.N_SYMMETRY_OPS):
            cfg, resp = oracle.apply_symmetry(op, s.config, s.response)
            out.append(Sample(cfg, s.step, resp, s.group_id))
    return out


def augment_split(ds: DatasetSplit) -> DatasetSplit:
    return DatasetSplit(augment(ds.train), augment(ds.validation), augment(ds.test), ds.seed)


def to_arrays(samples) -> tuple[np.ndarray, np.ndarray]:
    """``(angles, targets)`` with targets ordered ``k_eff, p1..p6``."""
    x = np.array([s.config for s in samples], dtype=np.float64).reshape(-1, oracle.N_HEXANTS)
    y = np.array([(s.response.k_eff, *s.response.powers) for s in samples],
                 dtype=np.float64).reshape(-1, oracle.N_HEXANTS + 1)
    return x, y


# -- CSV ------------------------------------------------------------------------

def _row(s: Sample) -> list[str]:
    return [s.step.name, str(s.group_id), *map(str, s.config),
            repr(s.response.k_eff), *map(repr, s.response.powers)]


def _write(path, rows, header, comments) -> None:
    with open(path, "w", newline="") as fh:
        for line in comments:
            fh.write(f"# {line}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def save_samples(samples, path, comments=()) -> None:
    _write(path, [_row(s) for s in samples], HEADER, comments)


def save(ds: DatasetSplit, path, comments=()) -> None:
    """One combined file with a trailing ``split`` column; the split seed is a comment."""
    rows = [_row(s) + [name] for name, part in ds.parts().items() for s in part]
    _write(path, rows, HEADER + ["split"], [f"split_seed={ds.seed}", *comments])


def _parse(lineno: int, rec: list[str], with_split: bool):
    want = len(HEADER) + with_split
    if len(rec) != want:
        raise DatasetFormatError(f"line {lineno}: expected {want} fields, got {len(rec)}")
    try:
        step = BurnupStep.parse(rec[0])
        gid = int(rec[1])
        cfg = oracle.check_config([int(a) for a in rec[2:8]])
        k = float(rec[8])
        powers = tuple(float(p) for p in rec[9:15])
        resp = CoreResponse(k, powers)
    except (ValueError, DomainError) as exc:
        raise DatasetFormatError(f"line {lineno}: {exc}") from None
    name = rec[15] if with_split else None
    if with_split and name not in SPLITS:
        raise DatasetFormatError(f"line {lineno}: unknown split {name!r}")
    return Sample(cfg, step, resp, gid), name


def _read(path):
    comments, header, records = {}, None, []
    with open(path, newline="") as fh:
        for lineno, line in enumerate(fh, start=1):
            if header is None and line.startswith("#"):
                key, _, val = line[1:].strip().partition("=")
                comments[key.strip()] = val.strip()
                continue
            rec = next(csv.reader([line]))
            if header is None:
                header = (lineno, rec)
            elif rec:
                records.append((lineno, rec))
    if header is None:
        raise DatasetFormatError(f"{path}: empty file, no header")
    return comments, header, records


def load_samples(path) -> list[Sample]:
    _, (lineno, header), records = _read(path)
    if header != HEADER:
        raise DatasetFormatError(f"line {lineno}: header mismatch, expected {','.join(HEADER)}")
    return [_parse(n, rec, False)[0] for n, rec in records]


def load(path) -> DatasetSplit:
    comments, (lineno, header), records = _read(path)
    if header != HEADER + ["split"]:
        raise DatasetFormatError(
            f"line {lineno}: header mismatch, expected {','.join(HEADER + ['split'])}")
    try:
        seed = int(comments.get("split_seed", 0))
    except ValueError:
        raise DatasetFormatError(f"{path}: bad split_seed comment") from None
    ds = DatasetSplit(seed=seed)
    for n, rec in records:
        s, name = _parse(n, rec, True)
        ds.parts()[name].append(s)
    return ds
