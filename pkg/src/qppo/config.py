"""Experiment configuration: YAML schema, validation, presets, hashing.

One preset ships per studied environment row; the Box2D rows (LunarLander,
LunarLander(C), BipedalWalker) are present for network parameter counting
but cannot be trained here, so `run` rejects them while `verify-tables`
accepts them.
"""

from __future__ import annotations

import hashlib
import importlib.resources
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import yaml

from . import hybrid as qh
from .backend import Exact, Noisy, Shots
from .envs import ENV_IDS, env_spec
from .nets import Constant, InitStrategy, Orthogonal, Xavier
from .ppo import SCHEMES, EvalConfig, PpoConfig


class ConfigError(ValueError):
    pass


def _init_to_dict(strategy: InitStrategy | None):
    if strategy is None:
        return None
    if isinstance(strategy, Xavier):
        return {"kind": "xavier"}
    if isinstance(strategy, Orthogonal):
        return {"kind": "orthogonal", "gain": strategy.gain}
    if isinstance(strategy, Constant):
        return {"kind": "constant", "value": strategy.value}
    raise ConfigError(f"unknown init strategy {strategy!r}")


def _init_from_dict(d) -> InitStrategy | None:
    if d is None:
        return None
    kind = d.get("kind")
    if kind == "xavier":
        return Xavier()
    if kind == "orthogonal":
        return Orthogonal(float(d.get("gain", 1.0)))
    if kind == "constant":
        return Constant(float(d.get("value", 0.1)))
    raise ConfigError(f"unknown init kind {kind!r}")


@dataclass(frozen=True)
class NetworkSection:
    n_qubits: int
    n_layers: int
    use_pre_encoding: bool = False
    pre_init: InitStrategy | None = None
    post_init: InitStrategy = Xavier()
    policy_mode: str = "post"
    weighted_temperature: float = 1.0
    temperature_trainable: bool = False
    pi_scaled_encoding: bool = False
    lambda_init: float = 1.0

    def to_hybrid_config(self, state_dim: int, output: qh.OutputSpec) -> qh.HybridNetConfig:
        return qh.HybridNetConfig(
            n_qubits=self.n_qubits,
            n_layers=self.n_layers,
            state_dim=state_dim,
            output=output,
            use_pre_encoding=self.use_pre_encoding,
            pre_init=self.pre_init or Xavier(),
            post_init=self.post_init,
            policy_mode=self.policy_mode,
            weighted_temperature=self.weighted_temperature,
            temperature_trainable=self.temperature_trainable,
            pi_scaled_encoding=self.pi_scaled_encoding,
            lambda_init=self.lambda_init,
        )

    def to_dict(self) -> dict:
        d = asdict(self)
        d["pre_init"] = _init_to_dict(self.pre_init)
        d["post_init"] = _init_to_dict(self.post_init)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "NetworkSection":
        d = dict(d)
        d["pre_init"] = _init_from_dict(d.get("pre_init"))
        d["post_init"] = _init_from_dict(d.get("post_init")) or Xavier()
        try:
            return cls(**d)
        except TypeError as exc:
            raise ConfigError(f"bad network section: {exc}") from exc


@dataclass(frozen=True)
class BackendSection:
    mode: str = "exact"  # exact | shots | noisy
    shots: int = 1000
    depolarizing_prob: float = 0.0
    readout_flip_prob: float = 0.0

    def to_mode(self, seed: int | None = None):
        if self.mode == "exact":
            return Exact()
        if self.mode == "shots":
            return Shots(self.shots, seed)
        if self.mode == "noisy":
            return Noisy(self.shots, self.depolarizing_prob, self.readout_flip_prob, seed)
        raise ConfigError(f"unknown backend mode {self.mode!r}")

    @classmethod
    def from_dict(cls, d: dict | None) -> "BackendSection":
        try:
            return cls(**(d or {}))
        except TypeError as exc:
            raise ConfigError(f"bad backend section: {exc}") from exc


@dataclass
class ExperimentConfig:
    name: str
    env: str
    scheme: str
    network: NetworkSection
    ppo: PpoConfig
    evaluation: EvalConfig
    seeds: list[int] = field(default_factory=lambda: list(range(10)))
    backend: BackendSection = field(default_factory=BackendSection)
    critic_hidden: tuple[int, ...] = (64, 64)

    def validate(self, for_run: bool = True) -> None:
        if self.scheme not in SCHEMES:
            raise ConfigError(f"unknown scheme {self.scheme!r}")
        if not self.seeds:
            raise ConfigError("seed list is empty")
        if len(set(self.seeds)) != len(self.seeds):
            raise ConfigError("seed list has duplicates")
        if for_run:
            if self.env not in ENV_IDS:
                raise ConfigError(f"environment {self.env!r} is not in scope for training")
            spec = env_spec(self.env)
            # building the hybrid config exercises its cross-field invariants
            from .ppo import action_interface

            output, _ = action_interface(spec)
            self.network.to_hybrid_config(spec.state_dim, output)

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "env": self.env,
            "scheme": self.scheme,
            "seeds": list(self.seeds),
            "backend": asdict(self.backend),
            "network": self.network.to_dict(),
            "ppo": asdict(self.ppo),
            "evaluation": asdict(self.evaluation),
            "critic_hidden": list(self.critic_hidden),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        try:
            ppo_cfg = PpoConfig(**d["ppo"])
            eval_cfg = EvalConfig(**d.get("evaluation", {}))
        except (TypeError, KeyError, ValueError) as exc:
            raise ConfigError(f"bad config: {exc}") from exc
        return cls(
            name=d.get("name", "experiment"),
            env=d["env"],
            scheme=d.get("scheme", "HybridQuantumActor"),
            network=NetworkSection.from_dict(d["network"]),
            ppo=ppo_cfg,
            evaluation=eval_cfg,
            seeds=list(d.get("seeds", range(10))),
            backend=BackendSection.from_dict(d.get("backend")),
            critic_hidden=tuple(d.get("critic_hidden", (64, 64))),
        )

    def config_hash(self) -> str:
        """Stable under key reordering: canonical JSON of the dict form."""
        canonical = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode()).hexdigest()[:16]


def load_config(path) -> ExperimentConfig:
    text = Path(path).read_text()
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"unparseable YAML: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError("config must be a mapping")
    return ExperimentConfig.from_dict(data)


def save_config(config: ExperimentConfig, path) -> None:
    Path(path).write_text(yaml.safe_dump(config.to_dict(), sort_keys=False))


def preset_path(name: str) -> Path:
    base = importlib.resources.files("qppo") / "presets"
    path = Path(str(base / f"{name}.yaml"))
    if not path.exists():
        raise ConfigError(f"no preset named {name!r}")
    return path


def load_preset(name: str) -> ExperimentConfig:
    return load_config(preset_path(name))


def list_presets() -> list[str]:
    base = Path(str(importlib.resources.files("qppo") / "presets"))
    return sorted(p.stem for p in base.glob("*.yaml"))
