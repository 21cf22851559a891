"""Experiment orchestration: multi-seed runs, persistence, verification.

A run directory is self-describing: config copy, package version, per-seed
curve CSVs, checkpoints, and evaluation summaries, plus a cross-seed
aggregate CSV.  Seeds are independent jobs and may execute in parallel.
"""

from __future__ import annotations

import csv
import datetime
import json
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import __version__
from . import hybrid as qh
from .config import ConfigError, ExperimentConfig, load_preset, save_config
from .envs import env_spec
from .ppo import (
    CURVE_FIELDS,
    Trainer,
    TrainingAbort,
    action_interface,
    build_agents,
    evaluate_policy,
)

CHECKPOINT_FORMAT_VERSION = 1

# dotted target lines for the learning-curve plots (benchmark conventions)
TARGET_RETURNS = {
    "CartPole-v1": 475.0,
    "CartPole-v0": 195.0,
    "MountainCar-v0": -110.0,
    "MountainCarContinuous-v0": 90.0,
    "Acrobot-v1": -100.0,
    "Pendulum-v1": -200.0,
}


class RunExistsError(RuntimeError):
    pass


# --------------------------------------------------------------------------
# checkpoint file format
# --------------------------------------------------------------------------


def save_checkpoint(path, config: ExperimentConfig, seed: int, state: dict) -> None:
    """Versioned .npz: named float arrays + one JSON metadata entry."""
    arrays: dict[str, np.ndarray] = {}
    for group in ("actor_params", "critic_params"):
        for k, v in state[group].items():
            arrays[f"{group}/{k}"] = v
    for group in ("actor_opt", "critic_opt"):
        for moment in ("m", "v"):
            for k, v in state[group][moment].items():
                arrays[f"{group}/{moment}/{k}"] = v
    arrays["current_states"] = state["current_states"]
    meta = {
        "format_version": CHECKPOINT_FORMAT_VERSION,
        "config": config.to_dict(),
        "seed": seed,
        "opt_t": {"actor": state["actor_opt"]["t"], "critic": state["critic_opt"]["t"]},
        "env_snapshots": state["env_snapshots"],
        "tracker": state["tracker"],
        "rng": state["rng"],
        "iteration": state["iteration"],
        "env_steps": state["env_steps"],
        "solved_at_steps": state["solved_at_steps"],
        "recent_returns": state["recent_returns"],
        "last_eval_iter": state["last_eval_iter"],
    }
    arrays["meta_json"] = np.array(json.dumps(meta))
    np.savez(path, **arrays)


def load_checkpoint(path) -> tuple[ExperimentConfig, int, dict]:
    with np.load(path, allow_pickle=False) as data:
        meta = json.loads(str(data["meta_json"]))
        if meta["format_version"] != CHECKPOINT_FORMAT_VERSION:
            raise ConfigError(f"unsupported checkpoint version {meta['format_version']}")
        state: dict = {
            "actor_params": {},
            "critic_params": {},
            "actor_opt": {"m": {}, "v": {}, "t": meta["opt_t"]["actor"]},
            "critic_opt": {"m": {}, "v": {}, "t": meta["opt_t"]["critic"]},
            "current_states": np.array(data["current_states"]),
        }
        for key in data.files:
            parts = key.split("/")
            if parts[0] in ("actor_params", "critic_params") and len(parts) == 2:
                state[parts[0]][parts[1]] = np.array(data[key])
            elif parts[0] in ("actor_opt", "critic_opt") and len(parts) == 3:
                state[parts[0]][parts[1]][parts[2]] = np.array(data[key])
    for field_name in (
        "env_snapshots",
        "tracker",
        "rng",
        "iteration",
        "env_steps",
        "solved_at_steps",
        "recent_returns",
        "last_eval_iter",
    ):
        state[field_name] = meta[field_name]
    config = ExperimentConfig.from_dict(meta["config"])
    return config, meta["seed"], state


# --------------------------------------------------------------------------
# single-seed job
# --------------------------------------------------------------------------


def _backend_seed(seed: int) -> int:
    return int(np.random.SeedSequence((seed, 0x51C)).generate_state(1)[0])


def make_trainer(config: ExperimentConfig, seed: int) -> Trainer:
    spec = env_spec(config.env)
    output, _bounds = action_interface(spec)
    net_config = config.network.to_hybrid_config(spec.state_dim, output)
    return Trainer(
        config.env,
        net_config,
        config.ppo,
        seed,
        eval_config=config.evaluation,
        backend_mode=config.backend.to_mode(_backend_seed(seed)),
        critic_hidden=config.critic_hidden,
    )


def write_curve_csv(path, rows: list[dict]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=CURVE_FIELDS)
        writer.writeheader()
        for row in rows:
            writer.writerow({k: row[k] for k in CURVE_FIELDS})


def read_curve_csv(path) -> list[dict]:
    with open(path, newline="") as fh:
        return [
            {k: (int(v) if k in ("iteration", "env_steps", "episodes") else float(v)) for k, v in row.items()}
            for row in csv.DictReader(fh)
        ]


def run_seed(config: ExperimentConfig, seed: int, seed_dir: Path) -> dict:
    """Train one seed, persist curve/checkpoint/eval, return a summary."""
    seed_dir.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    trainer = make_trainer(config, seed)
    try:
        result = trainer.run()
    except TrainingAbort as abort:
        (seed_dir / "abort.json").write_text(json.dumps(abort.diagnostics, indent=2))
        raise
    if result.solved_at_steps is not None and result.final_eval is not None:
        final_eval = result.final_eval
    else:
        final_eval = evaluate_policy(
            result.actor,
            config.env,
            config.evaluation.episodes,
            trainer.eval_rng.integers(0, 2**63 - 1),
            result.bounds,
        )
    write_curve_csv(seed_dir / "curve.csv", result.rows)
    save_checkpoint(seed_dir / "checkpoint.npz", config, seed, trainer.state_dict())
    summary = {
        "seed": seed,
        "iterations": trainer.iteration,
        "env_steps": trainer.env_steps,
        "solved_at_steps": result.solved_at_steps,
        "final_eval": final_eval,
        "wallclock_seconds": time.perf_counter() - t0,
    }
    (seed_dir / "eval.json").write_text(json.dumps(summary, indent=2))
    return summary


def _run_seed_job(config_dict: dict, seed: int, seed_dir: str) -> dict:
    return run_seed(ExperimentConfig.from_dict(config_dict), seed, Path(seed_dir))


# --------------------------------------------------------------------------
# multi-seed run + aggregation
# --------------------------------------------------------------------------


def default_out_root() -> Path:
    return Path(os.environ.get("QPPO_OUT_ROOT", "runs"))


@dataclass
class RunRecord:
    out_dir: Path
    config: ExperimentConfig
    config_hash: str
    seed_summaries: list[dict]


def aggregate_curves(seed_curves: dict[int, list[dict]]) -> list[dict]:
    """Cross-seed mean/std of the per-iteration return over available seeds."""
    if not seed_curves:
        return []
    max_len = max(len(rows) for rows in seed_curves.values())
    out = []
    for i in range(max_len):
        vals = [rows[i]["return_mean"] for rows in seed_curves.values() if len(rows) > i]
        steps = [rows[i]["env_steps"] for rows in seed_curves.values() if len(rows) > i]
        finite = np.array([v for v in vals if not np.isnan(v)], dtype=float)
        out.append(
            {
                "iteration": i + 1,
                "env_steps": float(np.mean(steps)),
                "return_mean": float(finite.mean()) if finite.size else float("nan"),
                "return_std": float(finite.std()) if finite.size else float("nan"),
                "n_seeds": len(vals),
            }
        )
    return out


def write_aggregate_csv(path, rows: list[dict]) -> None:
    fields = ("iteration", "env_steps", "return_mean", "return_std", "n_seeds")
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=fields)
        writer.writeheader()
        writer.writerows(rows)


def read_aggregate_csv(path) -> list[dict]:
    with open(path, newline="") as fh:
        return [
            {k: (int(v) if k in ("iteration", "n_seeds") else float(v)) for k, v in row.items()}
            for row in csv.DictReader(fh)
        ]


def run(
    config: ExperimentConfig,
    out_root=None,
    force: bool = False,
    workers: int = 1,
    seeds: list[int] | None = None,
) -> RunRecord:
    """Train every seed independently and persist a self-describing record."""
    config.validate(for_run=True)
    if seeds is not None:
        config.seeds = list(seeds)
        config.validate(for_run=True)
    out_dir = Path(out_root) if out_root else default_out_root() / config.name
    record_path = out_dir / "record.json"
    cfg_hash = config.config_hash()
    if record_path.exists():
        previous = json.loads(record_path.read_text())
        if previous.get("config_hash") == cfg_hash and not force:
            raise RunExistsError(
                f"run with identical config hash {cfg_hash} already exists at {out_dir} "
                "(use --force to overwrite)"
            )
    out_dir.mkdir(parents=True, exist_ok=True)
    save_config(config, out_dir / "config.yaml")

    t0 = time.perf_counter()
    jobs = [(seed, out_dir / f"seed_{seed}") for seed in config.seeds]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futures = [
                pool.submit(_run_seed_job, config.to_dict(), seed, str(seed_dir))
                for seed, seed_dir in jobs
            ]
            summaries = [f.result() for f in futures]
    else:
        summaries = [run_seed(config, seed, seed_dir) for seed, seed_dir in jobs]

    curves = {seed: read_curve_csv(out_dir / f"seed_{seed}" / "curve.csv") for seed in config.seeds}
    write_aggregate_csv(out_dir / "aggregate.csv", aggregate_curves(curves))

    record = {
        "config_hash": cfg_hash,
        "name": config.name,
        "env": config.env,
        "scheme": config.scheme,
        "qppo_version": __version__,
        "numpy_version": np.__version__,
        "seeds": config.seeds,
        "per_seed": {str(s["seed"]): s for s in summaries},
        "wallclock_seconds": time.perf_counter() - t0,
        "created_utc": datetime.datetime.now(datetime.timezone.utc).isoformat(),
    }
    record_path.write_text(json.dumps(record, indent=2))
    return RunRecord(out_dir, config, cfg_hash, summaries)


# --------------------------------------------------------------------------
# evaluation of stored checkpoints
# --------------------------------------------------------------------------


def evaluate_checkpoint(
    checkpoint_path,
    episodes: int | None = None,
    backend_mode=None,
    deterministic: bool = False,
    seed: int = 0,
    env_id: str | None = None,
) -> dict:
    """Rebuild the actor from a checkpoint and run evaluation episodes.

    The backend mode may differ from training (robustness experiments)."""
    config, train_seed, state = load_checkpoint(checkpoint_path)
    if env_id is not None and env_id != config.env:
        raise ConfigError(
            f"checkpoint was trained on {config.env!r}, cannot evaluate on {env_id!r}"
        )
    spec = env_spec(config.env)
    output, bounds = action_interface(spec)
    net_config = config.network.to_hybrid_config(spec.state_dim, output)
    actor, _critic, bounds = build_agents(
        config.ppo.scheme,
        spec,
        net_config,
        np.random.default_rng(0),
        backend_mode or config.backend.to_mode(_backend_seed(train_seed)),
        config.critic_hidden,
    )
    for k, v in actor.parameters().items():
        v[:] = state["actor_params"][k]
    stats = evaluate_policy(
        actor, config.env, episodes or config.evaluation.episodes, seed, bounds, deterministic
    )
    stats["env"] = config.env
    stats["scheme"] = config.ppo.scheme
    stats["deterministic"] = deterministic
    return stats


# --------------------------------------------------------------------------
# Table-of-configurations verification
# --------------------------------------------------------------------------

# (row, preset, state_dim, output, expected quantum params, expected total)
NETWORK_TABLE = (
    ("CartPole", "cartpole", 4, qh.Discrete(2), 24, 32),
    ("MountainCar", "mountaincar", 2, qh.Discrete(3), 28, 34),
    ("Acrobot", "acrobot", 6, qh.Discrete(3), 24, 60),
    ("LunarLander", "lunarlander", 8, qh.Discrete(4), 24, 72),
    ("Pendulum", "pendulum", 3, qh.ContinuousBeta(1), 30, 36),
    ("MountainCar(C)", "mountaincar_continuous", 2, qh.ContinuousBeta(1), 28, 32),
    ("BipedalWalker", "bipedalwalker", 24, qh.ContinuousBeta(4), 24, 152),
    ("LunarLander(C)", "lunarlander_continuous", 8, qh.ContinuousBeta(2), 24, 72),
)


def verify_tables(overrides: dict | None = None) -> tuple[list[dict], bool]:
    """Build all eight shipped network configurations and check their
    quantum / total trainable-parameter counts; returns (rows, all_pass)."""
    rng = np.random.default_rng(0)
    rows = []
    all_pass = True
    for name, preset, state_dim, output, want_q, want_total in NETWORK_TABLE:
        config = (overrides or {}).get(name) or load_preset(preset)
        net = qh.HybridNet(config.network.to_hybrid_config(state_dim, output), rng)
        got_q, got_total = net.count_parameters()
        ok = (got_q, got_total) == (want_q, want_total)
        all_pass &= ok
        rows.append(
            {
                "name": name,
                "expected_quantum": want_q,
                "actual_quantum": got_q,
                "expected_total": want_total,
                "actual_total": got_total,
                "pass": ok,
            }
        )
    return rows, all_pass


def format_verify_report(rows: list[dict]) -> str:
    lines = [f"{'configuration':<16} {'quantum':>16} {'total':>16}  result"]
    for r in rows:
        lines.append(
            f"{r['name']:<16} "
            f"{r['actual_quantum']:>6} / {r['expected_quantum']:<7} "
            f"{r['actual_total']:>6} / {r['expected_total']:<7}  "
            f"{'PASS' if r['pass'] else 'FAIL'}"
        )
    return "\n".join(lines)
