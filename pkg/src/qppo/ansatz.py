"""Hardware-efficient ansatz with data re-uploading input encoding.

Layout on n qubits, N layers: H on every qubit, then per layer a variational
block (RY, RZ per qubit), an entangling block (CZ on adjacent pairs, ring
closed for n >= 3), and an encoding block (RY, RZ per qubit with angles
tanh(lambda * feature)), followed by one terminal variational block.  Z is
measured on every qubit.

Trainable-parameter count: 2 n (2 N + 1), split into variational angles phi
of shape (N+1, n, 2) and encoding scalings lambda of shape (N, n, 2).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .backend import SRC_ENC, SRC_FIXED, SRC_VAR, CircuitProgram, Gate


@dataclass(frozen=True)
class AnsatzSpec:
    n_qubits: int
    n_layers: int
    pi_scaled_encoding: bool = False  # multiply tanh(lambda*s) by pi

    def __post_init__(self):
        if self.n_qubits < 1:
            raise ValueError("n_qubits must be >= 1")
        if self.n_layers < 1:
            raise ValueError("n_layers must be >= 1")

    def param_count(self) -> int:
        return 2 * self.n_qubits * (2 * self.n_layers + 1)

    def phi_shape(self) -> tuple[int, int, int]:
        return (self.n_layers + 1, self.n_qubits, 2)

    def lambda_shape(self) -> tuple[int, int, int]:
        return (self.n_layers, self.n_qubits, 2)


@dataclass
class AnsatzParameters:
    """Variational angles phi (radians) and encoding scalings lam."""

    phi: np.ndarray
    lam: np.ndarray

    @classmethod
    def init(
        cls,
        spec: AnsatzSpec,
        rng: np.random.Generator,
        lambda_init: float = 1.0,
        phi_scale: float = math.pi,
    ) -> "AnsatzParameters":
        phi = rng.uniform(-phi_scale, phi_scale, size=spec.phi_shape())
        lam = np.full(spec.lambda_shape(), lambda_init, dtype=float)
        return cls(phi, lam)

    def validate(self, spec: AnsatzSpec) -> None:
        if self.phi.shape != spec.phi_shape() or self.lam.shape != spec.lambda_shape():
            raise ValueError("parameter shapes do not match the ansatz spec")
        if not (np.isfinite(self.phi).all() and np.isfinite(self.lam).all()):
            raise ValueError("ansatz parameters must be finite")
        assert self.phi.size + self.lam.size == spec.param_count()


def _entangler_pairs(n_qubits: int) -> list[tuple[int, int]]:
    if n_qubits < 2:
        return []
    pairs = [(q, q + 1) for q in range(n_qubits - 1)]
    if n_qubits >= 3:
        pairs.append((n_qubits - 1, 0))
    return pairs


@dataclass
class AnsatzTemplate:
    """Immutable compiled circuit with variational and encoding angle slots.

    Slot orders follow C order of the parameter arrays: variational slot
    (layer, qubit, rot) -> layer*2n + qubit*2 + rot, likewise for encoding.
    """

    spec: AnsatzSpec
    program: CircuitProgram
    # encoding slot -> (layer, qubit, rot); rot 0 = RY, 1 = RZ
    enc_slots: list[tuple[int, int, int]] = field(default_factory=list)

    @property
    def n_var(self) -> int:
        return self.program.n_var

    @property
    def n_enc(self) -> int:
        return self.program.n_enc


def build(spec: AnsatzSpec) -> AnsatzTemplate:
    """Compile the Fig.-style layered circuit for the given spec."""
    n = spec.n_qubits
    ops: list[tuple] = []
    enc_slots: list[tuple[int, int, int]] = []

    def var_slot(layer: int, q: int, rot: int) -> int:
        return (layer * n + q) * 2 + rot

    def enc_slot(layer: int, q: int, rot: int) -> int:
        enc_slots.append((layer, q, rot))
        return (layer * n + q) * 2 + rot

    for q in range(n):
        ops.append(("h", (q,), SRC_FIXED, 0.0))
    for layer in range(spec.n_layers):
        for q in range(n):
            ops.append(("ry", (q,), SRC_VAR, var_slot(layer, q, 0)))
            ops.append(("rz", (q,), SRC_VAR, var_slot(layer, q, 1)))
        for q1, q2 in _entangler_pairs(n):
            ops.append(("cz", (q1, q2), SRC_FIXED, 0.0))
        for q in range(n):
            ops.append(("ry", (q,), SRC_ENC, enc_slot(layer, q, 0)))
            ops.append(("rz", (q,), SRC_ENC, enc_slot(layer, q, 1)))
    for q in range(n):
        ops.append(("ry", (q,), SRC_VAR, var_slot(spec.n_layers, q, 0)))
        ops.append(("rz", (q,), SRC_VAR, var_slot(spec.n_layers, q, 1)))

    n_var = 2 * n * (spec.n_layers + 1)
    n_enc = 2 * n * spec.n_layers
    program = CircuitProgram(n, ops, n_var, n_enc)
    return AnsatzTemplate(spec, program, enc_slots)


def encoding_angles(
    spec: AnsatzSpec, params: AnsatzParameters, features: np.ndarray
) -> np.ndarray:
    """tanh(lambda * feature) per encoding slot; features (..., n_qubits).

    Returns shape (..., N, n, 2); the same feature feeds both rotations of
    its qubit in every layer.
    """
    features = np.asarray(features, dtype=float)
    if features.shape[-1] != spec.n_qubits:
        raise ValueError(
            f"expected {spec.n_qubits} features, got {features.shape[-1]}"
        )
    if not np.isfinite(features).all():
        raise ValueError("features must be finite")
    f = features[..., None, :, None]  # (..., 1, n, 1)
    a = np.tanh(params.lam * f)
    if spec.pi_scaled_encoding:
        a = a * math.pi
    return a


def bind_inputs(
    template: AnsatzTemplate, params: AnsatzParameters, features: np.ndarray
) -> list[Gate]:
    """Concrete gate list for one feature vector, all angles marked trainable."""
    params.validate(template.spec)
    features = np.asarray(features, dtype=float)
    if features.ndim != 1:
        raise ValueError("bind_inputs takes a single feature vector")
    angles = encoding_angles(template.spec, params, features)
    phi_flat = params.phi.reshape(-1)
    enc_flat = angles.reshape(-1)
    gates: list[Gate] = []
    for kind, targets, src, idx in template.program.ops:
        if src == SRC_VAR:
            gates.append(Gate(kind, targets, float(phi_flat[idx]), trainable=True))
        elif src == SRC_ENC:
            gates.append(Gate(kind, targets, float(enc_flat[idx]), trainable=True))
        else:
            gates.append(Gate(kind, targets))
    return gates


def input_gradient_factors(
    spec: AnsatzSpec, params: AnsatzParameters, features: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """(d angle/d lambda, d angle/d feature) per encoding slot.

    Shapes (..., N, n, 2): with t = tanh(lambda*f), da/dlambda = f (1 - t^2)
    and da/df = lambda (1 - t^2) (times pi when pi-scaled encoding is on).
    """
    features = np.asarray(features, dtype=float)
    f = features[..., None, :, None]
    t = np.tanh(params.lam * f)
    sech2 = 1.0 - t * t
    scale = math.pi if spec.pi_scaled_encoding else 1.0
    da_dlam = scale * f * sech2
    da_df = scale * params.lam * sech2
    return da_dlam, da_df
