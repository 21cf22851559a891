"""Hybrid quantum-classical networks: pre-encoder -> ansatz -> post-processor.

One network plays one of three roles: discrete actor (softmax over
post-processed Z readouts, or softmax over inverse-temperature-weighted
observables), continuous actor (per-dimension Beta shape pairs, alpha and
beta kept > 1 via 1 + softplus), or critic (scalar value).  Pre- and
post-processing layers are single bias-free linear maps; all trainable
parameters live on the network and are updated in place by the optimizer.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np
from scipy.special import digamma, expit, gammaln, polygamma

from . import ansatz as ansatz_mod
from .backend import Exact, Noisy, QuantumBackend, Shots, _expectations_from_amps
from .nets import Constant, InitStrategy, Orthogonal, Xavier, init_weights


@dataclass(frozen=True)
class Discrete:
    n: int

    def __post_init__(self):
        if self.n < 2:
            raise ValueError("discrete output needs >= 2 actions")


@dataclass(frozen=True)
class ContinuousBeta:
    dims: int

    def __post_init__(self):
        if self.dims < 1:
            raise ValueError("continuous output needs >= 1 dimension")


@dataclass(frozen=True)
class Value:
    pass


OutputSpec = Discrete | ContinuousBeta | Value

POLICY_MODE_POST = "post"
POLICY_MODE_WEIGHTED = "weighted"


@dataclass(frozen=True)
class HybridNetConfig:
    n_qubits: int
    n_layers: int
    state_dim: int
    output: OutputSpec
    use_pre_encoding: bool = False
    pre_init: InitStrategy = Xavier()
    post_init: InitStrategy = Xavier()
    policy_mode: str = POLICY_MODE_POST
    weighted_temperature: float = 1.0
    temperature_trainable: bool = False
    pi_scaled_encoding: bool = False
    lambda_init: float = 1.0

    def __post_init__(self):
        if not self.use_pre_encoding and self.state_dim != self.n_qubits:
            raise ValueError(
                "without pre-encoding the state dimension must equal n_qubits "
                f"(got {self.state_dim} vs {self.n_qubits})"
            )
        if self.policy_mode not in (POLICY_MODE_POST, POLICY_MODE_WEIGHTED):
            raise ValueError(f"unknown policy mode {self.policy_mode!r}")
        if self.policy_mode == POLICY_MODE_WEIGHTED:
            if not isinstance(self.output, Discrete):
                raise ValueError("weighted-observable mode only supports discrete actions")
            if self.output.n > self.n_qubits:
                raise ValueError("action count exceeds available observables")

    def out_width(self) -> int:
        if isinstance(self.output, Discrete):
            return self.output.n
        if isinstance(self.output, ContinuousBeta):
            return 2 * self.output.dims
        return 1


@dataclass
class PolicyOutput:
    """Batch of head outputs: probs (discrete), alpha/beta (continuous), or value."""

    kind: str  # "discrete" | "beta" | "value"
    probs: np.ndarray | None = None
    alpha: np.ndarray | None = None
    beta: np.ndarray | None = None
    value: np.ndarray | None = None

    def validate(self) -> None:
        if self.kind == "discrete":
            if not np.all(np.isfinite(self.probs)) or np.any(self.probs < 0):
                raise ValueError("probabilities must be finite and nonnegative")
            if not np.allclose(self.probs.sum(axis=-1), 1.0, atol=1e-9):
                raise ValueError("probabilities must sum to 1")
        elif self.kind == "beta":
            if not (np.all(self.alpha > 1.0) and np.all(self.beta > 1.0)):
                raise ValueError("beta shapes must be > 1")
            if not (np.all(np.isfinite(self.alpha)) and np.all(np.isfinite(self.beta))):
                raise ValueError("beta shapes must be finite")
        elif self.kind == "value":
            if not np.all(np.isfinite(self.value)):
                raise ValueError("values must be finite")
        else:
            raise ValueError(f"unknown output kind {self.kind!r}")


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def softplus(x: np.ndarray) -> np.ndarray:
    return np.where(x > 30.0, x, np.log1p(np.exp(np.minimum(x, 30.0))))


class HybridNet:
    """Owns every trainable scalar of one actor or critic network."""

    def __init__(
        self,
        config: HybridNetConfig,
        rng: np.random.Generator,
        backend: QuantumBackend | None = None,
    ):
        self.config = config
        self.backend = backend or QuantumBackend(Exact())
        self.spec = ansatz_mod.AnsatzSpec(
            config.n_qubits, config.n_layers, config.pi_scaled_encoding
        )
        self.template = ansatz_mod.build(self.spec)

        self.pre_weights = (
            init_weights(config.n_qubits, config.state_dim, config.pre_init, rng)
            if config.use_pre_encoding
            else None
        )
        self.ansatz_params = ansatz_mod.AnsatzParameters.init(
            self.spec, rng, lambda_init=config.lambda_init
        )
        if config.policy_mode == POLICY_MODE_POST:
            self.post_weights = init_weights(config.out_width(), config.n_qubits, config.post_init, rng)
            self.omega = None
        else:
            self.post_weights = None
            self.omega = np.ones(config.output.n)
        self.temperature = np.array([config.weighted_temperature])
        self._cache: dict | None = None

    # ---- parameter bookkeeping ------------------------------------------

    def parameters(self) -> dict[str, np.ndarray]:
        params: dict[str, np.ndarray] = {}
        if self.pre_weights is not None:
            params["pre.weight"] = self.pre_weights
        params["ansatz.phi"] = self.ansatz_params.phi
        params["ansatz.lambda"] = self.ansatz_params.lam
        if self.post_weights is not None:
            params["post.weight"] = self.post_weights
        if self.omega is not None:
            params["omega"] = self.omega
        if self.config.temperature_trainable:
            params["temperature"] = self.temperature
        return params

    def count_parameters(self) -> tuple[int, int]:
        """(quantum trainable scalars, total trainable scalars)."""
        quantum = self.ansatz_params.phi.size + self.ansatz_params.lam.size
        total = sum(v.size for v in self.parameters().values())
        return quantum, total

    # ---- forward ----------------------------------------------------------

    def features(self, states: np.ndarray) -> np.ndarray:
        if states.shape[-1] != self.config.state_dim:
            raise ValueError(
                f"expected state width {self.config.state_dim}, got {states.shape[-1]}"
            )
        if self.pre_weights is None:
            return states
        return states @ self.pre_weights.T

    def _readouts(self, enc_flat: np.ndarray, cache: bool) -> tuple[np.ndarray, np.ndarray | None]:
        phi_flat = self.ansatz_params.phi.reshape(-1)
        mode = self.backend.mode
        if isinstance(mode, Exact):
            amps = self.template.program.forward(phi_flat, enc_flat)
            return _expectations_from_amps(amps, self.config.n_qubits), (amps if cache else None)
        if isinstance(mode, Shots):
            amps = self.template.program.forward(phi_flat, enc_flat)
            z = _sample_batch(amps, self.config.n_qubits, mode.n_shots, self.backend.rng)
            return z, None
        # Noisy: one trajectory ensemble per sample
        from .backend import _noisy_expectations

        params = self.ansatz_params
        z = np.empty((enc_flat.shape[0], self.config.n_qubits))
        for i in range(enc_flat.shape[0]):
            gates = _bind_flat(self.template, params, enc_flat[i])
            z[i] = _noisy_expectations(self.config.n_qubits, gates, mode, self.backend.rng)
        return z, None

    def forward(self, states: np.ndarray, cache: bool = False) -> PolicyOutput:
        states = np.atleast_2d(np.asarray(states, dtype=float))
        if not np.all(np.isfinite(states)):
            raise ValueError("non-finite state input")
        feats = self.features(states)
        enc = ansatz_mod.encoding_angles(self.spec, self.ansatz_params, feats)
        enc_flat = enc.reshape(enc.shape[0], -1)
        z, amps = self._readouts(enc_flat, cache)

        cfg = self.config
        out: PolicyOutput
        if isinstance(cfg.output, Discrete):
            if cfg.policy_mode == POLICY_MODE_WEIGHTED:
                logits = self.temperature[0] * (self.omega[None, :] * z[:, : cfg.output.n])
            else:
                logits = z @ self.post_weights.T
            probs = softmax(logits)
            out = PolicyOutput("discrete", probs=probs)
            head_cache = {"logits": logits, "probs": probs}
        elif isinstance(cfg.output, ContinuousBeta):
            h = z @ self.post_weights.T
            pairs = h.reshape(h.shape[0], cfg.output.dims, 2)
            sp = softplus(pairs)
            alpha = 1.0 + sp[..., 0]
            beta = 1.0 + sp[..., 1]
            out = PolicyOutput("beta", alpha=alpha, beta=beta)
            head_cache = {"h_pairs": pairs}
        else:
            v = (z @ self.post_weights.T)[:, 0]
            out = PolicyOutput("value", value=v)
            head_cache = {}

        if not np.all(np.isfinite(z)):
            raise FloatingPointError("non-finite circuit readout")
        if cache:
            self._cache = {
                "states": states,
                "features": feats,
                "enc_flat": enc_flat,
                "z": z,
                "amps": amps,
                **head_cache,
            }
        return out

    # ---- backward ---------------------------------------------------------

    def backward(self, upstream) -> dict[str, np.ndarray]:
        """Chain upstream head gradients to every trainable parameter.

        upstream: dL/dlogits (discrete), (dL/dalpha, dL/dbeta) (continuous
        Beta), or dL/dvalue (value head).  Requires a prior forward with
        cache=True on the same inputs.
        """
        if self._cache is None:
            raise RuntimeError("backward called without a cached forward pass")
        c = self._cache
        cfg = self.config
        grads: dict[str, np.ndarray] = {}

        if isinstance(cfg.output, Discrete):
            dlogits = np.asarray(upstream)
            if cfg.policy_mode == POLICY_MODE_WEIGHTED:
                k = cfg.output.n
                dz = np.zeros_like(c["z"])
                dz[:, :k] = dlogits * self.temperature[0] * self.omega[None, :]
                grads["omega"] = self.temperature[0] * (dlogits * c["z"][:, :k]).sum(axis=0)
                if cfg.temperature_trainable:
                    grads["temperature"] = np.array(
                        [(dlogits * self.omega[None, :] * c["z"][:, :k]).sum()]
                    )
            else:
                dz = dlogits @ self.post_weights
                grads["post.weight"] = dlogits.T @ c["z"]
        elif isinstance(cfg.output, ContinuousBeta):
            dalpha, dbeta = upstream
            dpairs = np.stack([dalpha, dbeta], axis=-1) * expit(c["h_pairs"])
            dh = dpairs.reshape(dpairs.shape[0], -1)
            dz = dh @ self.post_weights
            grads["post.weight"] = dh.T @ c["z"]
        else:
            dvalue = np.asarray(upstream)
            dh = dvalue[:, None]
            dz = dh @ self.post_weights
            grads["post.weight"] = dh.T @ c["z"]

        dphi_flat, denc = self._quantum_vjp(c, dz)
        grads["ansatz.phi"] = dphi_flat.reshape(self.ansatz_params.phi.shape)

        denc = denc.reshape((-1,) + self.spec.lambda_shape())
        da_dlam, da_df = ansatz_mod.input_gradient_factors(
            self.spec, self.ansatz_params, c["features"]
        )
        grads["ansatz.lambda"] = (denc * da_dlam).sum(axis=0)
        if self.pre_weights is not None:
            dfeat = (denc * da_df).sum(axis=(1, 3))  # (B, n_qubits)
            grads["pre.weight"] = dfeat.T @ c["states"]
        return grads

    def _quantum_vjp(self, cache: dict, dz: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        phi_flat = self.ansatz_params.phi.reshape(-1)
        if isinstance(self.backend.mode, Exact):
            return self.template.program.adjoint_vjp(
                phi_flat, cache["enc_flat"], dz, amps=cache["amps"]
            )
        return _parameter_shift_vjp(self, phi_flat, cache["enc_flat"], dz)

    def _readouts_at(self, var: np.ndarray, enc: np.ndarray) -> np.ndarray:
        """Readouts at explicitly given angles (parameter-shift evaluations)."""
        mode = self.backend.mode
        if isinstance(mode, Shots):
            amps = self.template.program.forward(var, enc)
            return _sample_batch(amps, self.config.n_qubits, mode.n_shots, self.backend.rng)
        if isinstance(mode, Noisy):
            from .backend import _noisy_expectations

            z = np.empty((enc.shape[0], self.config.n_qubits))
            params = replace(self.ansatz_params, phi=var.reshape(self.ansatz_params.phi.shape))
            for i in range(enc.shape[0]):
                gates = _bind_flat(self.template, params, enc[i])
                z[i] = _noisy_expectations(self.config.n_qubits, gates, mode, self.backend.rng)
            return z
        amps = self.template.program.forward(var, enc)
        return _expectations_from_amps(amps, self.config.n_qubits)


def _bind_flat(template, params, enc_flat_row: np.ndarray):
    """Gate list for one sample given flattened encoding angles."""
    from .backend import SRC_ENC, SRC_VAR, Gate

    phi_flat = params.phi.reshape(-1)
    gates = []
    for kind, targets, src, idx in template.program.ops:
        if src == SRC_VAR:
            gates.append(Gate(kind, targets, float(phi_flat[idx]), trainable=True))
        elif src == SRC_ENC:
            gates.append(Gate(kind, targets, float(enc_flat_row[idx]), trainable=True))
        else:
            gates.append(Gate(kind, targets))
    return gates


def _sample_batch(amps: np.ndarray, n_qubits: int, n_shots: int, rng: np.random.Generator) -> np.ndarray:
    """Per-row empirical <Z> from n_shots basis samples of each row's state."""
    probs = amps.real**2 + amps.imag**2
    probs /= probs.sum(axis=-1, keepdims=True)
    cdf = np.cumsum(probs, axis=-1)
    u = rng.random((probs.shape[0], n_shots))
    outcomes = (u[:, :, None] > cdf[:, None, :]).sum(axis=-1)
    bits = (outcomes[..., None] >> np.arange(n_qubits)) & 1
    return (1.0 - 2.0 * bits).mean(axis=1)


def _parameter_shift_vjp(net: HybridNet, phi_flat, enc_flat, dz):
    """Shift-rule VJP for sampled modes; 2 batch evaluations per angle."""
    program = net.template.program
    dphi = np.zeros_like(phi_flat)
    denc = np.zeros_like(enc_flat)
    for j in range(program.n_var):
        for sign in (1.0, -1.0):
            shifted = phi_flat.copy()
            shifted[j] += sign * math.pi / 2.0
            z = net._readouts_at(shifted, enc_flat)
            dphi[j] += sign * 0.5 * float((dz * z).sum())
    for j in range(program.n_enc):
        for sign in (1.0, -1.0):
            shifted = enc_flat.copy()
            shifted[:, j] += sign * math.pi / 2.0
            z = net._readouts_at(phi_flat, shifted)
            denc[:, j] += sign * 0.5 * (dz * z).sum(axis=1)
    return dphi, denc


# --------------------------------------------------------------------------
# distribution utilities shared by actors
# --------------------------------------------------------------------------

LOG_EPS = 1e-12


@dataclass(frozen=True)
class ActionBounds:
    low: np.ndarray
    high: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "low", np.atleast_1d(np.asarray(self.low, dtype=float)))
        object.__setattr__(self, "high", np.atleast_1d(np.asarray(self.high, dtype=float)))
        if self.low.shape != self.high.shape or np.any(self.high <= self.low):
            raise ValueError("bounds must satisfy low < high per dimension")

    @property
    def span(self) -> np.ndarray:
        return self.high - self.low


def _log_beta_fn(a, b):
    return gammaln(a) + gammaln(b) - gammaln(a + b)


def beta_log_prob(alpha, beta, x):
    """Log density of Beta(alpha, beta) at x in (0, 1)."""
    x = np.clip(x, LOG_EPS, 1.0 - LOG_EPS)
    return (alpha - 1.0) * np.log(x) + (beta - 1.0) * np.log1p(-x) - _log_beta_fn(alpha, beta)


def sample_and_logprob(
    output: PolicyOutput,
    rng: np.random.Generator,
    bounds: ActionBounds | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Sample actions and their log-probabilities from a batch of outputs."""
    if output.kind == "discrete":
        probs = output.probs
        cdf = np.cumsum(probs, axis=-1)
        u = rng.random(probs.shape[0])
        actions = (u[:, None] > cdf).sum(axis=1)
        logp = np.log(np.maximum(probs[np.arange(len(actions)), actions], LOG_EPS))
        return actions, logp
    if output.kind == "beta":
        if bounds is None:
            raise ValueError("continuous sampling requires action bounds")
        x = rng.beta(output.alpha, output.beta)
        actions = bounds.low + bounds.span * x
        logp = log_prob(output, actions, bounds)
        return actions, logp
    raise ValueError("cannot sample from a value head")


def log_prob(output: PolicyOutput, actions: np.ndarray, bounds: ActionBounds | None = None) -> np.ndarray:
    if output.kind == "discrete":
        actions = np.asarray(actions, dtype=int)
        return np.log(np.maximum(output.probs[np.arange(len(actions)), actions], LOG_EPS))
    if output.kind == "beta":
        if bounds is None:
            raise ValueError("continuous log-prob requires action bounds")
        x = (np.asarray(actions) - bounds.low) / bounds.span
        lp = beta_log_prob(output.alpha, output.beta, x) - np.log(bounds.span)
        return lp.sum(axis=-1)
    raise ValueError("value head has no log-probability")


def entropy(output: PolicyOutput, bounds: ActionBounds | None = None) -> np.ndarray:
    """Per-sample entropy (differential entropy for the scaled Beta)."""
    if output.kind == "discrete":
        p = output.probs
        plogp = np.where(p > 0.0, p * np.log(np.maximum(p, LOG_EPS)), 0.0)
        return -plogp.sum(axis=-1)
    if output.kind == "beta":
        if bounds is None:
            raise ValueError("continuous entropy requires action bounds")
        a, b = output.alpha, output.beta
        ent = (
            _log_beta_fn(a, b)
            - (a - 1.0) * digamma(a)
            - (b - 1.0) * digamma(b)
            + (a + b - 2.0) * digamma(a + b)
        )
        return (ent + np.log(bounds.span)).sum(axis=-1)
    raise ValueError("value head has no entropy")


def deterministic_action(output: PolicyOutput, bounds: ActionBounds | None = None) -> np.ndarray:
    """Greedy action: argmax probability, or the Beta mode for alpha,beta > 1."""
    if output.kind == "discrete":
        return output.probs.argmax(axis=-1)
    if output.kind == "beta":
        mode = (output.alpha - 1.0) / (output.alpha + output.beta - 2.0)
        return bounds.low + bounds.span * mode
    raise ValueError("value head has no action")


def log_prob_grads(output: PolicyOutput, actions: np.ndarray, bounds: ActionBounds | None = None):
    """d log pi(a|s) / d(head parameters) per sample.

    Discrete: gradient w.r.t. logits, (B, k).  Beta: gradients w.r.t.
    (alpha, beta), each (B, d).
    """
    if output.kind == "discrete":
        actions = np.asarray(actions, dtype=int)
        g = -output.probs.copy()
        g[np.arange(len(actions)), actions] += 1.0
        return g
    if output.kind == "beta":
        a, b = output.alpha, output.beta
        x = (np.asarray(actions) - bounds.low) / bounds.span
        x = np.clip(x, LOG_EPS, 1.0 - LOG_EPS)
        dig_ab = digamma(a + b)
        da = np.log(x) - digamma(a) + dig_ab
        db = np.log1p(-x) - digamma(b) + dig_ab
        return da, db
    raise ValueError("value head has no log-probability")


def entropy_grads(output: PolicyOutput):
    """d entropy / d(head parameters) per sample, matching log_prob_grads."""
    if output.kind == "discrete":
        p = output.probs
        logp = np.log(np.maximum(p, LOG_EPS))
        ent = -(p * logp).sum(axis=-1, keepdims=True)
        return -p * (logp + ent)
    if output.kind == "beta":
        a, b = output.alpha, output.beta
        tri_ab = polygamma(1, a + b)
        da = -(a - 1.0) * polygamma(1, a) + (a + b - 2.0) * tri_ab
        db = -(b - 1.0) * polygamma(1, b) + (a + b - 2.0) * tri_ab
        return da, db
    raise ValueError("value head has no entropy")
