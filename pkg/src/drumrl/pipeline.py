"""Pipeline stages behind the command line: data, surrogates, RL training, evaluation, reports.

Every stage reads a :class:`RunConfig`, writes into a fixed layout under the
output directory and stamps each artifact with the global seed and the
config hash.
"""

from __future__ import annotations

import csv
import hashlib
import json
import logging
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import dataset, oracle, surrogate
from .env import DrumControlEnv, OracleBacking, SurrogateBacking
from .oracle import BurnupStep, OracleParams
from .rl import trainer
from .rl.config import AlgoConfig

log = logging.getLogger(__name__)

KEFF_TOL = 100e-5
ORACLE_KEFF_TOL = 200e-5
HPTR_LIMIT = 1.02
R2_GATE = 0.95
METRICS_HEADER = ["step", "k_mae_pcm", "k_r2", "p_mae", "p_r2"]
BACKINGS = ("surrogate", "oracle")


class PipelineError(RuntimeError):
    """Failure with a short machine-readable ``kind``."""

    def __init__(self, kind: str, message: str, exit_code: int = 1):
        super().__init__(message)
        self.kind = kind
        self.exit_code = exit_code


@dataclass
class OracleSection:
    targets: dict = field(default_factory=lambda: {s.name: float(a) for s, a in oracle.DEFAULT_TARGETS.items()})
    total_drum_worth: float = 0.05
    interaction_strength: float = 0.002
    params_file: str | None = None  # overrides calibration when set


@dataclass
class DataSection:
    n_per_step: int = 250
    fractions: tuple = (0.70, 0.15, 0.15)


@dataclass
class SurrogateSection:
    n_trials: int = 30
    trial_epochs: int = 150
    trial_patience: int = 25
    max_epochs: int = 2000
    patience: int = 50
    batch_size: int = 64


@dataclass
class RunConfig:
    seed: int = 0
    out: str = "runs/default"
    oracle: OracleSection = field(default_factory=OracleSection)
    data: DataSection = field(default_factory=DataSection)
    surrogate: SurrogateSection = field(default_factory=SurrogateSection)
    rl: dict = field(default_factory=dict)  # per-algorithm AlgoConfig overrides

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        sections = {"oracle": OracleSection, "data": DataSection, "surrogate": SurrogateSection}
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise PipelineError("config", f"unknown config key(s): {sorted(unknown)}")
        kw = {}
        for k, v in d.items():
            if k in sections:
                sub = sections[k]
                bad = set(v) - {f.name for f in fields(sub)}
                if bad:
                    raise PipelineError("config", f"unknown key(s) in [{k}]: {sorted(bad)}")
                v = sub(**v)
            kw[k] = v
        cfg = cls(**kw)
        cfg.data.fractions = tuple(cfg.data.fractions)
        for algo in cfg.rl:
            cfg.algo_config(algo)  # fail early on bad overrides
        return cfg

    @classmethod
    def load(cls, path) -> "RunConfig":
        path = Path(path)
        if not path.is_file():
            raise PipelineError("config", f"config file not found: {path}")
        try:
            return cls.from_dict(json.loads(path.read_text()))
        except json.JSONDecodeError as exc:
            raise PipelineError("config", f"{path}: invalid JSON ({exc.msg} at line {exc.lineno})") from None

    def to_dict(self) -> dict:
        d = asdict(self)
        d["data"]["fractions"] = list(self.data.fractions)
        return d

    def digest(self) -> str:
        """Hash of everything that determines results; the output path is excluded."""
        d = self.to_dict()
        d.pop("out")
        return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()[:12]

    def algo_config(self, algo: str) -> AlgoConfig:
        over = dict(self.rl.get(algo, {}))
        if "hidden_sizes" in over:
            over["hidden_sizes"] = tuple(over["hidden_sizes"])
        try:
            return AlgoConfig.defaults(algo, **over)
        except (TypeError, ValueError) as exc:
            raise PipelineError("config", f"bad rl.{algo} settings: {exc}") from None


# -- layout and provenance ------------------------------------------------------------

def data_path(out, step) -> Path:
    return Path(out) / "data" / f"{BurnupStep.parse(step).tag}.csv"


def surrogate_dir(out) -> Path:
    return Path(out) / "surrogates"


def rl_dir(out, algo: str) -> Path:
    return Path(out) / "rl" / algo


def eval_path(out, algo: str, backing: str) -> Path:
    return Path(out) / "eval" / f"{algo}_{backing}.csv"


def stamp(cfg: RunConfig) -> dict:
    return {"seed": cfg.seed, "config_hash": cfg.digest()}


def stamp_comments(cfg: RunConfig) -> list[str]:
    return [f"{k}={v}" for k, v in stamp(cfg).items()]


def _mkdir(path: Path) -> Path:
    try:
        path.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise PipelineError("output", f"cannot create output directory {path}: {exc.strerror}") from None
    return path


def write_manifest(directory: Path, cfg: RunConfig, stage: str, extra: dict | None = None) -> Path:
    body = {"stage": stage, **stamp(cfg), "sequential": True, "config": cfg.to_dict()}
    body["config"].pop("out")
    body.update(extra or {})
    path = directory / "manifest.json"
    path.write_text(json.dumps(body, indent=2, sort_keys=True) + "\n")
    return path


def read_stamp(path) -> dict:
    """Seed and config hash from the ``#`` comment header of a CSV artifact."""
    out = {}
    with open(path) as fh:
        for line in fh:
            if not line.startswith("#"):
                break
            key, _, val = line[1:].strip().partition("=")
            out[key.strip()] = val.strip()
    return out


def oracle_params(cfg: RunConfig) -> OracleParams:
    sec = cfg.oracle
    if sec.params_file:
        try:
            return OracleParams.load(sec.params_file)
        except FileNotFoundError:
            raise PipelineError("config", f"oracle params file not found: {sec.params_file}") from None
    return oracle.calibrate(sec.targets, sec.total_drum_worth, sec.interaction_strength)


def _stage_seed(cfg: RunConfig, stage: int, step: int = 0) -> int:
    return int(np.random.SeedSequence([cfg.seed, stage, step]).generate_state(1)[0])


# -- stages -----------------------------------------------------------------------------

def gen_data(cfg: RunConfig) -> dict[BurnupStep, dataset.DatasetSplit]:
    """Calibrate the oracle, label, split by source group, then augment; one CSV per step."""
    out = _mkdir(Path(cfg.out) / "data")
    params = oracle_params(cfg)
    params.save(out / "oracle_params.json")
    result, counts = {}, {}
    for step in BurnupStep:
        raw = dataset.generate(step, cfg.data.n_per_step, cfg.seed, params)
        ds = dataset.augment_split(dataset.split(raw, cfg.data.fractions, seed=cfg.seed))
        dataset.save(ds, data_path(cfg.out, step), stamp_comments(cfg))
        result[step] = ds
        counts[step.name] = {k: len(v) for k, v in ds.parts().items()}
        log.info("%s: %s", step.name, counts[step.name])
    write_manifest(out, cfg, "gen-data", {"oracle_params": params.to_dict(), "rows": counts})
    return result


def load_data(cfg: RunConfig) -> dict[BurnupStep, dataset.DatasetSplit]:
    out = {}
    for step in BurnupStep:
        path = data_path(cfg.out, step)
        if not path.is_file():
            raise PipelineError("missing-input", f"dataset not found: {path} (run gen-data first)")
        out[step] = dataset.load(path)
    return out


def train_surrogates(cfg: RunConfig) -> dict[BurnupStep, surrogate.SurrogateMetrics]:
    """Search, retrain the winner at the full budget, score on the test set.

    Raises a quality-gate error (after writing every artifact) if any step's
    test-set k_eff R² falls below the gate.
    """
    data = load_data(cfg)
    out = _mkdir(surrogate_dir(cfg.out))
    sec = cfg.surrogate
    metrics, chosen = {}, {}
    for step, ds in data.items():
        trials = []
        best = surrogate.search(ds, sec.n_trials, _stage_seed(cfg, 1, step), sec.trial_epochs,
                                sec.trial_patience, trials)
        final_cfg = surrogate.SurrogateConfig(best.n_hidden_layers, best.nodes_per_layer,
                                              best.learning_rate, sec.max_epochs, sec.batch_size,
                                              sec.patience)
        model, _ = surrogate.train(ds, final_cfg, seed=_stage_seed(cfg, 2, step), step=step)
        metrics[step] = surrogate.evaluate(model, ds.test)
        surrogate.save_model(model, surrogate.model_path(out, step), stamp(cfg))
        chosen[step.name] = asdict(final_cfg)
        _write_trials(out / f"trials_{step.tag}.csv", trials, cfg)
        log.info("%s: %s layers x %s nodes, test %s", step.name, best.n_hidden_layers,
                 best.nodes_per_layer, metrics[step])
    write_metrics(out / "metrics.csv", metrics, cfg)
    write_manifest(out, cfg, "train-surrogate", {"architectures": chosen})
    failing = [s.name for s, m in metrics.items() if m.k_r2 < R2_GATE]
    if failing:
        raise PipelineError("quality-gate", f"k_eff test R2 below {R2_GATE} for {failing}", 3)
    return metrics


def _write_trials(path, trials, cfg) -> None:
    with open(path, "w", newline="") as fh:
        for c in stamp_comments(cfg):
            fh.write(f"# {c}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["trial", "n_hidden_layers", "nodes_per_layer", "learning_rate", "val_mse"])
        for i, t in enumerate(trials):
            w.writerow([i, t.config.n_hidden_layers, t.config.nodes_per_layer,
                        repr(t.config.learning_rate), repr(t.val_mse)])


def write_metrics(path, metrics: dict, cfg: RunConfig) -> None:
    with open(path, "w", newline="") as fh:
        for c in stamp_comments(cfg):
            fh.write(f"# {c}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(METRICS_HEADER)
        for step, m in metrics.items():
            w.writerow([step.name, *map(repr, m.as_row())])


def read_metrics(path) -> dict[BurnupStep, surrogate.SurrogateMetrics]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(ln for ln in fh if not ln.startswith("#")))
    return {BurnupStep.parse(r["step"]): surrogate.SurrogateMetrics(
        float(r["k_mae_pcm"]), float(r["k_r2"]), float(r["p_mae"]), float(r["p_r2"])) for r in rows}


def make_backing(cfg: RunConfig, backing: str):
    if backing == "oracle":
        return OracleBacking(oracle_params(cfg))
    if backing != "surrogate":
        raise PipelineError("usage", f"backing must be one of {BACKINGS}, got {backing!r}", 2)
    try:
        return SurrogateBacking.from_dir(surrogate_dir(cfg.out))
    except FileNotFoundError as exc:
        raise PipelineError("missing-input", f"{exc} (run train-surrogate first)") from None


def train_rl(cfg: RunConfig, algo: str, backing: str = "surrogate",
             progress=None) -> trainer.TrainingResult:
    algo_cfg = cfg.algo_config(algo)
    back = make_backing(cfg, backing)
    out = _mkdir(rl_dir(cfg.out, algo))
    meta = dict(stamp(cfg), backing=backing)
    result = trainer.train(algo_cfg, lambda i: DrumControlEnv(back), seed=_stage_seed(cfg, 3),
                           out_dir=out, checkpoint_meta=meta, progress=progress)
    write_manifest(out, cfg, "train-rl", {"algorithm": algo, "backing": backing,
                                          "algo_config": algo_cfg.to_dict(),
                                          "algo_config_hash": algo_cfg.digest(),
                                          "epochs": len(result.rows)})
    return result


def evaluate(cfg: RunConfig, algo: str, backing: str = "surrogate", checkpoint=None) -> list[dict]:
    """Greedy episode from a checkpoint; writes ``eval/<algo>_<backing>.csv``."""
    path = Path(checkpoint) if checkpoint else rl_dir(cfg.out, algo) / "checkpoint"
    try:
        ac, _, meta = trainer.load_checkpoint(path)
    except FileNotFoundError as exc:
        raise PipelineError("missing-input", f"{exc} (run train-rl first)") from None
    except (trainer.CheckpointError, ValueError) as exc:
        raise PipelineError("checkpoint", str(exc)) from None
    env = DrumControlEnv(make_backing(cfg, backing))
    rows = trainer.evaluate_policy(ac, env, algo, oracle_params(cfg), seed=_stage_seed(cfg, 4))
    target = eval_path(cfg.out, algo, backing)
    _mkdir(target.parent)
    comments = stamp_comments(cfg) + [f"backing={backing}", f"checkpoint_epoch={meta.get('epoch')}"]
    trainer.write_report(target, rows, comments)
    return rows


# -- report -----------------------------------------------------------------------------

PLOT_FILES = {
    "keff": ["epoch", "timesteps", "keff_dev_mean"],
    "hptr": ["epoch", "timesteps", "hptr_mean"],
    "reward": ["epoch", "timesteps", "reward_mean", "reward_std", "reward_lo", "reward_hi",
               "reward_min", "reward_max"],
}


def check_row(row: dict) -> list[str]:
    """Threshold violations of one evaluation-report row."""
    bad = []
    if abs(row["keff"] - 1.0) > KEFF_TOL:
        bad.append(f"|k-1|={abs(row['keff'] - 1.0) * 1e5:.0f}pcm>{KEFF_TOL * 1e5:.0f}")
    if row["hptr"] > HPTR_LIMIT:
        bad.append(f"HPTR={row['hptr']:.5f}>{HPTR_LIMIT}")
    if "keff_oracle" in row and abs(row["keff_oracle"] - 1.0) > ORACLE_KEFF_TOL:
        bad.append(f"oracle |k-1|={abs(row['keff_oracle'] - 1.0) * 1e5:.0f}pcm>{ORACLE_KEFF_TOL * 1e5:.0f}")
    return bad


def report(cfg: RunConfig) -> str:
    """Plot-ready CSVs per algorithm plus ``report/summary.txt``; returns the summary text."""
    root = Path(cfg.out)
    logs = sorted(p for p in (root / "rl").glob("*/train_log.csv")) if (root / "rl").is_dir() else []
    if not logs:
        raise PipelineError("missing-input", f"no training logs under {root / 'rl'}")
    out = _mkdir(root / "report")
    lines = [f"seed={cfg.seed} config_hash={cfg.digest()}"]
    for path in logs:
        algo = path.parent.name
        rows = trainer.read_log(path)
        for name, cols in PLOT_FILES.items():
            with open(out / f"{algo}_{name}.csv", "w", newline="") as fh:
                for c in stamp_comments(cfg):
                    fh.write(f"# {c}\n")
                w = csv.writer(fh, lineterminator="\n")
                w.writerow(cols)
                for r in rows:
                    full = dict(r, reward_lo=r["reward_mean"] - r["reward_std"],
                                reward_hi=r["reward_mean"] + r["reward_std"])
                    w.writerow([full[c] if isinstance(full[c], int) else repr(full[c]) for c in cols])
        last = rows[-1]
        lines.append(f"{algo}: epochs={len(rows)} timesteps={last['timesteps']} "
                     f"final_reward_mean={last['reward_mean']:.6g} "
                     f"keff_dev_mean={last['keff_dev_mean']:.6g} hptr_mean={last['hptr_mean']:.6g}")
        for backing in BACKINGS:
            ep = eval_path(root, algo, backing)
            if not ep.is_file():
                continue
            for r in trainer.read_report(ep):
                bad = check_row(r)
                status = "PASS" if not bad else "FAIL " + " ".join(bad)
                lines.append(f"  {backing} YR{r['year']}: keff={r['keff']:.5f} hptr={r['hptr']:.5f} "
                             f"keff_oracle={r['keff_oracle']:.5f} {status}")
    text = "\n".join(lines) + "\n"
    (out / "summary.txt").write_text(text)
    return text
