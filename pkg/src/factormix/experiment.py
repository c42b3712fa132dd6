"""Experiment configuration, multi-seed runners, and result files.

A run writes one CSV per seed (``step,return,smoothed_return,loss``), a
summary with the mean and standard error of the final smoothed return across
seeds, and weight-map checkpoints.  Seeds are independent: reruns of the
same configuration produce bitwise-identical CSVs regardless of how many
workers execute them.
"""

from __future__ import annotations

import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from .envs import BoxPushing, MatrixGame
from .mixers import ALGORITHMS, INFO_KINDS, QMIX_VARIANTS, QPLEX_VARIANTS
from .training import Hyperparameters, Learner

CSV_HEADER = "step,return,smoothed_return,loss"
SMOOTHING_WINDOW = 10


class ConfigError(ValueError):
    """Invalid experiment configuration; maps to CLI exit code 2."""


@dataclass
class ExperimentConfig:
    env: str = "bp"  # "bp" or "matrix:<path>"
    bp_grid: int = 30
    bp_horizon: int = 100
    bp_full_obs: bool = False
    algorithm: str = "duelmix"
    qmix_variant: str = "state"
    qplex_variant: str = "state"
    central_info: str = "s"
    seeds: tuple[int, ...] = (0,)
    total_steps: int = 200_000
    eval_interval: int = 2_000
    eval_episodes: int = 10
    lr: float = 2.5e-4
    gamma: float = 0.9
    batch_size: int = 64
    buffer_size: int = 10_000
    target_update_freq: int = 2_500
    max_grad_norm: float = 10.0
    epsilon_start: float = 1.0
    epsilon_final: float = 0.05
    epsilon_decay_steps: int = 50_000
    train_start_episodes: int = 200
    agent_hidden: int = 128
    mixing_embed: int = 32
    attention_heads: int = 4
    bootstrap: str = "online_argmax"
    checkpoint_interval: int = 0  # train steps between checkpoints; 0 = final only
    resume: bool = False
    out_dir: str = "runs"
    workers: int = 1

    def validate(self) -> None:
        if self.algorithm not in ALGORITHMS:
            raise ConfigError(f"algorithm must be one of {ALGORITHMS}, got {self.algorithm!r}")
        if self.qmix_variant not in QMIX_VARIANTS:
            raise ConfigError(f"qmix_variant must be one of {QMIX_VARIANTS}, got {self.qmix_variant!r}")
        if self.qplex_variant not in QPLEX_VARIANTS:
            raise ConfigError(f"qplex_variant must be one of {QPLEX_VARIANTS}, got {self.qplex_variant!r}")
        if self.central_info not in INFO_KINDS:
            raise ConfigError(f"central_info must be one of {INFO_KINDS}, got {self.central_info!r}")
        if not (self.env == "bp" or self.env.startswith("matrix:")):
            raise ConfigError(f"env must be 'bp' or 'matrix:<path>', got {self.env!r}")
        if not self.seeds:
            raise ConfigError("at least one seed is required")
        for name in ("total_steps", "eval_interval", "eval_episodes", "batch_size",
                     "buffer_size", "target_update_freq", "workers"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if self.bootstrap not in ("online_argmax", "target_argmax"):
            raise ConfigError(f"bootstrap must be online_argmax or target_argmax, got {self.bootstrap!r}")

    def hyperparameters(self) -> Hyperparameters:
        return Hyperparameters(
            lr=self.lr, gamma=self.gamma, batch_size=self.batch_size,
            buffer_size=self.buffer_size, target_update_freq=self.target_update_freq,
            max_grad_norm=self.max_grad_norm, epsilon_start=self.epsilon_start,
            epsilon_final=self.epsilon_final, epsilon_decay_steps=self.epsilon_decay_steps,
            train_start_episodes=self.train_start_episodes,
            agent_hidden_dim=self.agent_hidden, mixing_embed_dim=self.mixing_embed,
            attention_heads=self.attention_heads, bootstrap=self.bootstrap,
        )

    def env_meta(self) -> dict:
        return {
            "env": self.env, "bp_grid": self.bp_grid, "bp_horizon": self.bp_horizon,
            "bp_full_obs": self.bp_full_obs, "algorithm": self.algorithm,
            "qmix_variant": self.qmix_variant, "qplex_variant": self.qplex_variant,
            "central_info": self.central_info, "agent_hidden": self.agent_hidden,
            "mixing_embed": self.mixing_embed, "attention_heads": self.attention_heads,
        }


_BOOL_VALUES = {"true": True, "1": True, "yes": True,
                "false": False, "0": False, "no": False}


def _coerce(name: str, raw: str, kind):
    raw = raw.strip()
    try:
        if kind is bool:
            return _BOOL_VALUES[raw.lower()]
        if kind is int:
            return int(raw)
        if kind is float:
            return float(raw)
        if kind is tuple or name == "seeds":
            return tuple(int(tok) for tok in raw.replace(",", " ").split())
        return raw
    except (ValueError, KeyError):
        raise ConfigError(f"could not parse {name}={raw!r}") from None


def config_from_items(items: dict[str, str],
                      base: ExperimentConfig | None = None) -> ExperimentConfig:
    """Build a configuration from flat key=value strings, validating names."""
    cfg = base if base is not None else ExperimentConfig()
    typed = {f.name: type(getattr(cfg, f.name)) for f in fields(ExperimentConfig)}
    updates = {}
    for name, raw in items.items():
        if name not in typed:
            raise ConfigError(f"unknown configuration key {name!r}")
        updates[name] = _coerce(name, raw, typed[name])
    cfg = replace(cfg, **updates)
    cfg.validate()
    return cfg


def config_from_file(path, overrides: dict[str, str] | None = None) -> ExperimentConfig:
    """Parse a flat ``key=value`` file (``#`` comments allowed)."""
    items: dict[str, str] = {}
    for line_no, line in enumerate(Path(path).read_text().splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{line_no}: expected key=value, got {line!r}")
        key, value = line.split("=", 1)
        items[key.strip()] = value.strip()
    if overrides:
        items.update(overrides)
    return config_from_items(items)


def build_env(config: ExperimentConfig):
    if config.env == "bp":
        return BoxPushing(grid_size=config.bp_grid, horizon=config.bp_horizon,
                          full_observability=config.bp_full_obs)
    return MatrixGame.from_file(config.env.split(":", 1)[1])


@dataclass
class RunRecord:
    """Evaluation trace of one seed."""

    seed: int
    rows: list[tuple[int, float, float, float]] = field(default_factory=list)

    @property
    def final_smoothed_return(self) -> float:
        return self.rows[-1][2] if self.rows else float("nan")


def seed_csv_path(out_dir, seed: int) -> Path:
    return Path(out_dir) / f"seed{seed}.csv"


def checkpoint_path(out_dir, seed: int) -> Path:
    return Path(out_dir) / f"ckpt_seed{seed}.npz"


def write_run_csv(path, record: RunRecord) -> None:
    lines = [CSV_HEADER]
    for step, ret, smoothed, loss in record.rows:
        lines.append(f"{step},{ret!r},{smoothed!r},{loss!r}")
    Path(path).write_text("\n".join(lines) + "\n")


def read_run_csv(path) -> RunRecord:
    lines = Path(path).read_text().strip().splitlines()
    if not lines or lines[0] != CSV_HEADER:
        raise ConfigError(f"{path}: missing CSV header {CSV_HEADER!r}")
    seed = int(Path(path).stem.removeprefix("seed"))
    record = RunRecord(seed=seed)
    for line in lines[1:]:
        step, ret, smoothed, loss = line.split(",")
        record.rows.append((int(step), float(ret), float(smoothed), float(loss)))
    return record


def run_single_seed(config: ExperimentConfig, seed: int) -> RunRecord:
    """Train one seed to completion, writing its CSV and checkpoint."""
    env = build_env(config)
    root = np.random.default_rng(seed)
    init_rng, collect_rng, eval_rng = root.spawn(3)
    learner = Learner(
        env, config.algorithm, config.central_info, init_rng,
        config.hyperparameters(), qmix_variant=config.qmix_variant,
        qplex_variant=config.qplex_variant,
    )
    record = RunRecord(seed=seed)
    out_dir = Path(config.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    ckpt = checkpoint_path(out_dir, seed)

    if config.resume and ckpt.exists():
        # Resume restores parameters, optimizer state, counters and the eval
        # trace; the exploration RNG streams restart, so a resumed run is a
        # valid continuation but not bitwise-identical to an uninterrupted one.
        meta = learner.load_checkpoint(ckpt)
        for row in meta.get("rows", []):
            record.rows.append((int(row[0]), float(row[1]), float(row[2]), float(row[3])))

    last_loss = float("nan")
    next_eval = (learner.env_steps // config.eval_interval + 1) * config.eval_interval
    returns: list[float] = [r[1] for r in record.rows]

    def meta_now() -> dict:
        return dict(config.env_meta(), rows=[list(r) for r in record.rows],
                    obs_mode="full" if getattr(env, "config", None)
                    and env.config.full_observability else "partial")

    while learner.env_steps < config.total_steps:
        learner.collect(collect_rng)
        result = learner.maybe_train(collect_rng)
        if result is not None:
            last_loss = result.loss
            if config.checkpoint_interval and (
                learner.train_steps % config.checkpoint_interval == 0
            ):
                learner.save_checkpoint(ckpt, meta=meta_now())
        while learner.env_steps >= next_eval and next_eval <= config.total_steps:
            ret = learner.greedy_return(eval_rng, episodes=config.eval_episodes)
            returns.append(ret)
            smoothed = float(np.mean(returns[-SMOOTHING_WINDOW:]))
            record.rows.append((next_eval, ret, smoothed, last_loss))
            next_eval += config.eval_interval

    learner.save_checkpoint(ckpt, meta=meta_now())
    write_run_csv(seed_csv_path(out_dir, seed), record)
    return record


def _seed_worker(args):
    config, seed = args
    try:
        return seed, run_single_seed(config, seed), None
    except Exception:  # noqa: BLE001 - crash is reported, siblings continue
        return seed, None, traceback.format_exc()


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    records: list[RunRecord]
    failures: dict[int, str]

    @property
    def final_returns(self) -> list[float]:
        return [r.final_smoothed_return for r in self.records]

    def summary_row(self) -> dict:
        finals = self.final_returns
        mean = float(np.mean(finals)) if finals else float("nan")
        if len(finals) > 1:
            stderr = float(np.std(finals, ddof=1) / np.sqrt(len(finals)))
        else:
            stderr = 0.0 if finals else float("nan")
        return {
            "algorithm": self.config.algorithm,
            "central_info": self.config.central_info,
            "seeds": len(self.records),
            "mean_final_return": mean,
            "stderr_final_return": stderr,
        }


SUMMARY_HEADER = "algorithm,central_info,seeds,mean_final_return,stderr_final_return"


def write_summary(path, rows: list[dict]) -> None:
    lines = [SUMMARY_HEADER]
    for row in rows:
        lines.append(
            f"{row['algorithm']},{row['central_info']},{row['seeds']},"
            f"{row['mean_final_return']!r},{row['stderr_final_return']!r}"
        )
    Path(path).write_text("\n".join(lines) + "\n")


def run_experiment(config: ExperimentConfig) -> ExperimentResult:
    """Train every seed (optionally in a process pool) and write the summary."""
    config.validate()
    jobs = [(config, seed) for seed in config.seeds]
    outcomes = []
    if config.workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=config.workers) as pool:
            outcomes = list(pool.map(_seed_worker, jobs))
    else:
        outcomes = [_seed_worker(job) for job in jobs]
    records = [rec for _, rec, err in outcomes if err is None]
    failures = {seed: err for seed, _, err in outcomes if err is not None}
    result = ExperimentResult(config=config, records=records, failures=failures)
    out_dir = Path(config.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_summary(out_dir / "summary.csv", [result.summary_row()])
    return result


ABLATION_ALGORITHMS = ("qmix", "qplex", "duelmix")


def run_ablation(config: ExperimentConfig) -> list[dict]:
    """The centralized-information sweep: {state, noise, zeros} for each of
    the three stateful algorithms, nine summary rows in table layout."""
    rows = []
    for algorithm in ABLATION_ALGORITHMS:
        for kind in INFO_KINDS:
            sub = replace(
                config, algorithm=algorithm, central_info=kind,
                out_dir=str(Path(config.out_dir) / f"{algorithm}_{kind}"),
            )
            result = run_experiment(sub)
            if result.failures:
                raise RuntimeError(
                    f"ablation {algorithm}/{kind} failed: {sorted(result.failures)}"
                )
            rows.append(result.summary_row())
    write_summary(Path(config.out_dir) / "ablation_summary.csv", rows)
    return rows


def summarize_directory(out_dir) -> dict:
    """Recompute the summary from the per-seed CSVs (round-trip check)."""
    out_dir = Path(out_dir)
    csvs = sorted(out_dir.glob("seed*.csv"))
    if not csvs:
        raise ConfigError(f"{out_dir}: no seed CSV files found")
    finals = []
    for path in csvs:
        record = read_run_csv(path)
        finals.append(record.final_smoothed_return)
    mean = float(np.mean(finals))
    stderr = float(np.std(finals, ddof=1) / np.sqrt(len(finals))) if len(finals) > 1 else 0.0
    return {"seeds": len(finals), "mean_final_return": mean,
            "stderr_final_return": stderr, "files": [p.name for p in csvs]}
