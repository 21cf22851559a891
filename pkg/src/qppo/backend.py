"""Complex statevector simulation of {H, RY, RZ, CZ} circuits.

Qubit ordering is little-endian: qubit 0 is the least-significant bit of the
amplitude index, so basis state |q_{n-1} ... q_1 q_0> sits at index
sum_k q_k 2^k.  Rotation conventions: RY(t) = exp(-i t Y / 2),
RZ(t) = exp(-i t Z / 2).

Three gradient engines are provided for Pauli-Z expectations of circuits with
marked trainable angles: an adjoint sweep (exact state only), the +-pi/2
parameter-shift rule (works under sampling), and a central finite-difference
oracle.  Batched kernels (leading batch axes on the amplitude array) back the
hybrid networks; the single-state functions below are thin wrappers.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Protocol, Sequence

import numpy as np

SQRT1_2 = 1.0 / math.sqrt(2.0)

GATE_KINDS = ("h", "ry", "rz", "cz")
ROTATION_KINDS = ("ry", "rz")


class BackendError(ValueError):
    """Invalid gate, target, or mode usage."""


@dataclass(frozen=True)
class Gate:
    """One gate: kind in {h, ry, rz, cz}, targets, optional angle (radians)."""

    kind: str
    targets: tuple[int, ...]
    angle: float | None = None
    trainable: bool = False

    def __post_init__(self):
        if self.kind not in GATE_KINDS:
            raise BackendError(f"unknown gate kind {self.kind!r}")
        n_targets = 2 if self.kind == "cz" else 1
        if len(self.targets) != n_targets:
            raise BackendError(f"{self.kind} takes {n_targets} target(s), got {self.targets}")
        if self.kind == "cz" and self.targets[0] == self.targets[1]:
            raise BackendError("cz targets must be distinct")
        if self.kind in ROTATION_KINDS:
            if self.angle is None or not math.isfinite(self.angle):
                raise BackendError(f"{self.kind} requires a finite angle, got {self.angle}")
        elif self.trainable:
            raise BackendError(f"{self.kind} has no angle and cannot be trainable")


def h(q: int) -> Gate:
    return Gate("h", (q,))


def ry(q: int, angle: float, trainable: bool = False) -> Gate:
    return Gate("ry", (q,), angle, trainable)


def rz(q: int, angle: float, trainable: bool = False) -> Gate:
    return Gate("rz", (q,), angle, trainable)


def cz(q1: int, q2: int) -> Gate:
    return Gate("cz", (q1, q2))


@dataclass
class Statevector:
    """2^n complex amplitudes over n qubits (little-endian index order)."""

    n_qubits: int
    amplitudes: np.ndarray

    def __post_init__(self):
        if self.n_qubits < 1:
            raise BackendError("n_qubits must be >= 1")
        self.amplitudes = np.asarray(self.amplitudes, dtype=np.complex128)
        if self.amplitudes.shape != (1 << self.n_qubits,):
            raise BackendError(
                f"amplitude vector must have length {1 << self.n_qubits}, "
                f"got {self.amplitudes.shape}"
            )

    @classmethod
    def zero_state(cls, n_qubits: int) -> "Statevector":
        amps = np.zeros(1 << n_qubits, dtype=np.complex128)
        amps[0] = 1.0
        return cls(n_qubits, amps)

    def norm_error(self) -> float:
        return abs(float(np.sum(self.amplitudes.real**2 + self.amplitudes.imag**2)) - 1.0)

    def probabilities(self) -> np.ndarray:
        return self.amplitudes.real**2 + self.amplitudes.imag**2


# --------------------------------------------------------------------------
# batched gate kernels: amps has shape (..., 2**n), modified in place
# --------------------------------------------------------------------------


def _split(amps: np.ndarray, n_qubits: int, q: int) -> np.ndarray:
    lead = amps.shape[:-1]
    return amps.reshape(*lead, 1 << (n_qubits - 1 - q), 2, 1 << q)


def _bcast(x, lead_ndim: int):
    # reshape per-batch coefficients (batch shape) -> (batch, 1, 1) for _split views
    if np.ndim(x) == 0:
        return x
    return np.reshape(x, np.shape(x) + (1,) * 2)


def _apply_h(amps: np.ndarray, n_qubits: int, q: int) -> None:
    v = _split(amps, n_qubits, q)
    a0 = v[..., 0, :].copy()
    a1 = v[..., 1, :]
    v[..., 0, :] = SQRT1_2 * (a0 + a1)
    v[..., 1, :] = SQRT1_2 * (a0 - a1)


def _apply_ry(amps: np.ndarray, n_qubits: int, q: int, angle) -> None:
    c = _bcast(np.cos(np.multiply(angle, 0.5)), amps.ndim - 1)
    s = _bcast(np.sin(np.multiply(angle, 0.5)), amps.ndim - 1)
    v = _split(amps, n_qubits, q)
    a0 = v[..., 0, :].copy()
    a1 = v[..., 1, :]
    v[..., 0, :] = c * a0 - s * a1
    v[..., 1, :] = s * a0 + c * a1


def _apply_rz(amps: np.ndarray, n_qubits: int, q: int, angle) -> None:
    half = np.multiply(angle, 0.5)
    e0 = _bcast(np.cos(half) - 1j * np.sin(half), amps.ndim - 1)
    v = _split(amps, n_qubits, q)
    v[..., 0, :] *= e0
    v[..., 1, :] *= np.conj(e0)


_CZ_MASKS: dict[tuple[int, int, int], np.ndarray] = {}


def _cz_mask(n_qubits: int, q1: int, q2: int) -> np.ndarray:
    key = (n_qubits, min(q1, q2), max(q1, q2))
    mask = _CZ_MASKS.get(key)
    if mask is None:
        idx = np.arange(1 << n_qubits)
        mask = ((idx >> q1) & 1).astype(bool) & ((idx >> q2) & 1).astype(bool)
        _CZ_MASKS[key] = mask
    return mask


def _apply_cz(amps: np.ndarray, n_qubits: int, q1: int, q2: int) -> None:
    amps[..., _cz_mask(n_qubits, q1, q2)] *= -1.0


def _apply_pauli(amps: np.ndarray, n_qubits: int, q: int, pauli: str) -> None:
    v = _split(amps, n_qubits, q)
    if pauli == "x":
        a0 = v[..., 0, :].copy()
        v[..., 0, :] = v[..., 1, :]
        v[..., 1, :] = a0
    elif pauli == "y":
        a0 = v[..., 0, :].copy()
        v[..., 0, :] = -1j * v[..., 1, :]
        v[..., 1, :] = 1j * a0
    elif pauli == "z":
        v[..., 1, :] *= -1.0
    else:  # pragma: no cover
        raise BackendError(f"unknown pauli {pauli!r}")


def _apply_gate_inplace(amps: np.ndarray, n_qubits: int, gate: Gate, dagger: bool = False) -> None:
    if gate.kind == "h":
        _apply_h(amps, n_qubits, gate.targets[0])
    elif gate.kind == "ry":
        _apply_ry(amps, n_qubits, gate.targets[0], -gate.angle if dagger else gate.angle)
    elif gate.kind == "rz":
        _apply_rz(amps, n_qubits, gate.targets[0], -gate.angle if dagger else gate.angle)
    else:
        _apply_cz(amps, n_qubits, gate.targets[0], gate.targets[1])


def _check_targets(n_qubits: int, gate: Gate) -> None:
    for t in gate.targets:
        if not 0 <= t < n_qubits:
            raise BackendError(f"gate target {t} out of range for {n_qubits} qubit(s)")


# --------------------------------------------------------------------------
# public single-state operations
# --------------------------------------------------------------------------


def apply_gate(state: Statevector, gate: Gate) -> Statevector:
    """Apply one gate, returning a new normalized Statevector."""
    _check_targets(state.n_qubits, gate)
    amps = state.amplitudes.copy()
    _apply_gate_inplace(amps, state.n_qubits, gate)
    return Statevector(state.n_qubits, amps)


def apply_circuit(state: Statevector, gates: Sequence[Gate]) -> Statevector:
    for g in gates:
        _check_targets(state.n_qubits, g)
    amps = state.amplitudes.copy()
    for g in gates:
        _apply_gate_inplace(amps, state.n_qubits, g)
    return Statevector(state.n_qubits, amps)


def run_circuit(n_qubits: int, gates: Sequence[Gate]) -> Statevector:
    """Run gates on |0...0>."""
    return apply_circuit(Statevector.zero_state(n_qubits), gates)


_Z_SIGNS: dict[int, np.ndarray] = {}


def _z_signs(n_qubits: int) -> np.ndarray:
    """(2^n, n) matrix of +-1: column q holds the Z eigenvalue of qubit q."""
    signs = _Z_SIGNS.get(n_qubits)
    if signs is None:
        idx = np.arange(1 << n_qubits)
        bits = (idx[:, None] >> np.arange(n_qubits)[None, :]) & 1
        signs = 1.0 - 2.0 * bits
        _Z_SIGNS[n_qubits] = signs
    return signs


def expectation_z(state: Statevector, qubit: int) -> float:
    """<Z_qubit> of the exact state, in [-1, 1]."""
    if not 0 <= qubit < state.n_qubits:
        raise BackendError(f"qubit {qubit} out of range")
    return float(state.probabilities() @ _z_signs(state.n_qubits)[:, qubit])


def expectation_all_z(state: Statevector) -> np.ndarray:
    """Vector of <Z_q> for every qubit, one pass over the amplitudes."""
    return state.probabilities() @ _z_signs(state.n_qubits)


def _expectations_from_amps(amps: np.ndarray, n_qubits: int) -> np.ndarray:
    probs = amps.real**2 + amps.imag**2
    return probs @ _z_signs(n_qubits)


def sample_shots(state: Statevector, n_shots: int, rng: np.random.Generator) -> np.ndarray:
    """Per-qubit empirical <Z> from n_shots computational-basis samples."""
    if n_shots < 1:
        raise BackendError("n_shots must be >= 1")
    probs = state.probabilities()
    probs = probs / probs.sum()
    outcomes = rng.choice(probs.size, size=n_shots, p=probs)
    bits = (outcomes[:, None] >> np.arange(state.n_qubits)[None, :]) & 1
    return (1.0 - 2.0 * bits).mean(axis=0)


# --------------------------------------------------------------------------
# backend execution modes
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class Exact:
    """Noiseless expectations straight from the statevector."""


@dataclass(frozen=True)
class Shots:
    """Finite-shot sampling of the exact distribution."""

    n_shots: int
    seed: int | None = None

    def __post_init__(self):
        if self.n_shots < 1:
            raise BackendError("shot count must be >= 1")


@dataclass(frozen=True)
class Noisy:
    """Finite shots with per-gate depolarizing insertions and readout flips.

    After each gate, each target qubit independently suffers a uniform
    {X, Y, Z} insertion with probability depolarizing_prob (trajectory
    sampling, one trajectory per affected shot); each measured bit flips
    with probability readout_flip_prob.
    """

    n_shots: int
    depolarizing_prob: float
    readout_flip_prob: float
    seed: int | None = None

    def __post_init__(self):
        if self.n_shots < 1:
            raise BackendError("shot count must be >= 1")
        if not 0.0 <= self.depolarizing_prob <= 1.0:
            raise BackendError("depolarizing probability must lie in [0, 1]")
        if not 0.0 <= self.readout_flip_prob <= 1.0:
            raise BackendError("readout flip probability must lie in [0, 1]")


BackendMode = Exact | Shots | Noisy


class QuantumBackend:
    """Executes circuits under a BackendMode with a private RNG stream.

    Safe to instantiate one per rollout worker; instances share no state.
    """

    def __init__(self, mode: BackendMode):
        self.mode = mode
        seed = getattr(mode, "seed", None)
        self.rng = np.random.default_rng(seed)

    @property
    def is_exact(self) -> bool:
        return isinstance(self.mode, Exact)

    def expectations(self, n_qubits: int, gates: Sequence[Gate]) -> np.ndarray:
        """Per-qubit <Z> for a single circuit on |0...0>."""
        return self.expectations_batch(n_qubits, [list(gates)])[0]

    def expectations_batch(self, n_qubits: int, circuits: Sequence[Sequence[Gate]]) -> np.ndarray:
        """Per-qubit <Z> for a batch of independent circuits, shape (B, n)."""
        out = np.empty((len(circuits), n_qubits))
        if isinstance(self.mode, Exact):
            for i, gates in enumerate(circuits):
                out[i] = expectation_all_z(run_circuit(n_qubits, gates))
        elif isinstance(self.mode, Shots):
            for i, gates in enumerate(circuits):
                out[i] = sample_shots(run_circuit(n_qubits, gates), self.mode.n_shots, self.rng)
        else:
            for i, gates in enumerate(circuits):
                out[i] = _noisy_expectations(n_qubits, list(gates), self.mode, self.rng)
        return out


def _noisy_expectations(
    n_qubits: int, gates: list[Gate], mode: Noisy, rng: np.random.Generator
) -> np.ndarray:
    sites = [(i, t) for i, g in enumerate(gates) for t in g.targets]
    n_shots = mode.n_shots
    p = mode.depolarizing_prob

    # which shots suffer at least one insertion, and where
    insert = rng.random((n_shots, len(sites))) < p if sites and p > 0.0 else np.zeros((n_shots, 0), bool)
    noisy_shots = np.flatnonzero(insert.any(axis=1))
    paulis = rng.integers(0, 3, size=insert.shape)  # drawn for all sites; used where insert

    # simulate: row 0 = clean trajectory, rows 1.. = one per noisy shot
    n_rows = 1 + noisy_shots.size
    amps = np.zeros((n_rows, 1 << n_qubits), dtype=np.complex128)
    amps[:, 0] = 1.0
    pauli_names = ("x", "y", "z")
    site_idx = 0
    for g in gates:
        _apply_gate_inplace(amps, n_qubits, g)
        for t in g.targets:
            if noisy_shots.size:
                hit = np.flatnonzero(insert[noisy_shots, site_idx])
                for k in range(3):
                    rows = 1 + hit[paulis[noisy_shots[hit], site_idx] == k]
                    if rows.size:
                        sub = amps[rows]
                        _apply_pauli(sub, n_qubits, t, pauli_names[k])
                        amps[rows] = sub
            site_idx += 1

    probs = amps.real**2 + amps.imag**2
    probs /= probs.sum(axis=1, keepdims=True)

    outcomes = np.empty(n_shots, dtype=np.int64)
    clean = np.setdiff1d(np.arange(n_shots), noisy_shots, assume_unique=False)
    if clean.size:
        outcomes[clean] = rng.choice(probs.shape[1], size=clean.size, p=probs[0])
    if noisy_shots.size:
        cdf = np.cumsum(probs[1:], axis=1)
        u = rng.random(noisy_shots.size)
        outcomes[noisy_shots] = (u[:, None] > cdf).sum(axis=1)

    bits = (outcomes[:, None] >> np.arange(n_qubits)[None, :]) & 1
    if mode.readout_flip_prob > 0.0:
        flips = rng.random(bits.shape) < mode.readout_flip_prob
        bits = bits ^ flips
    return (1.0 - 2.0 * bits).mean(axis=0)


# --------------------------------------------------------------------------
# gradient engines
# --------------------------------------------------------------------------


def _trainable_indices(gates: Sequence[Gate]) -> list[int]:
    return [i for i, g in enumerate(gates) if g.trainable]


def _observable_list(n_qubits: int, observables: Sequence[int] | None) -> list[int]:
    obs = list(range(n_qubits)) if observables is None else list(observables)
    for q in obs:
        if not 0 <= q < n_qubits:
            raise BackendError(f"observable qubit {q} out of range")
    return obs


def gradient_adjoint(
    n_qubits: int,
    gates: Sequence[Gate],
    observables: Sequence[int] | None = None,
    mode: BackendMode = Exact(),
) -> np.ndarray:
    """d<Z_obs>/d(angle) for each trainable angle, one forward + one backward sweep.

    Returns shape (n_observables, n_trainable); observables default to Z on
    every qubit.  Exact mode only: the method needs the exact state.
    """
    if not isinstance(mode, Exact):
        raise BackendError("adjoint gradients require the Exact backend mode")
    obs = _observable_list(n_qubits, observables)
    trainable = _trainable_indices(gates)
    grad = np.zeros((len(obs), len(trainable)))
    if not trainable:
        return grad

    ket = Statevector.zero_state(n_qubits).amplitudes
    for g in gates:
        _check_targets(n_qubits, g)
        _apply_gate_inplace(ket, n_qubits, g)

    # one bra per observable: bras[j] = Z_obs[j] |psi>
    signs = _z_signs(n_qubits)
    bras = ket[None, :] * signs.T[obs]

    col = len(trainable) - 1
    for i in range(len(gates) - 1, -1, -1):
        g = gates[i]
        _apply_gate_inplace(ket, n_qubits, g, dagger=True)
        if g.trainable:
            # dU = 0.5 * U(angle + pi) for both RY and RZ
            tket = ket.copy()
            shifted = Gate(g.kind, g.targets, g.angle + math.pi)
            _apply_gate_inplace(tket, n_qubits, shifted)
            grad[:, col] = 2.0 * 0.5 * np.real(np.conj(bras) @ tket)
            col -= 1
        _apply_gate_inplace(bras, n_qubits, g, dagger=True)
    return grad


def gradient_parameter_shift(
    n_qubits: int,
    gates: Sequence[Gate],
    observables: Sequence[int] | None = None,
    backend: QuantumBackend | None = None,
) -> np.ndarray:
    """Parameter-shift gradients: (<O>(t + pi/2) - <O>(t - pi/2)) / 2.

    Works under any backend mode (estimates are sampled per evaluation when
    the mode is Shots/Noisy).  Every trainable gate must be RY or RZ.
    """
    obs = _observable_list(n_qubits, observables)
    trainable = _trainable_indices(gates)
    for i in trainable:
        if gates[i].kind not in ROTATION_KINDS:
            raise BackendError(f"no shift rule for gate kind {gates[i].kind!r}")
    backend = backend or QuantumBackend(Exact())
    grad = np.zeros((len(obs), len(trainable)))
    gates = list(gates)
    for col, i in enumerate(trainable):
        g = gates[i]
        plus = gates[:i] + [Gate(g.kind, g.targets, g.angle + math.pi / 2.0)] + gates[i + 1 :]
        minus = gates[:i] + [Gate(g.kind, g.targets, g.angle - math.pi / 2.0)] + gates[i + 1 :]
        e = backend.expectations_batch(n_qubits, [plus, minus])
        grad[:, col] = (e[0, obs] - e[1, obs]) / 2.0
    return grad


def gradient_finite_difference(
    n_qubits: int,
    gates: Sequence[Gate],
    observables: Sequence[int] | None = None,
    step: float = 1e-5,
) -> np.ndarray:
    """Central finite-difference oracle on the exact expectations."""
    obs = _observable_list(n_qubits, observables)
    trainable = _trainable_indices(gates)
    grad = np.zeros((len(obs), len(trainable)))
    gates = list(gates)
    for col, i in enumerate(trainable):
        g = gates[i]
        plus = gates[:i] + [Gate(g.kind, g.targets, g.angle + step)] + gates[i + 1 :]
        minus = gates[:i] + [Gate(g.kind, g.targets, g.angle - step)] + gates[i + 1 :]
        e_plus = expectation_all_z(run_circuit(n_qubits, plus))[obs]
        e_minus = expectation_all_z(run_circuit(n_qubits, minus))[obs]
        grad[:, col] = (e_plus - e_minus) / (2.0 * step)
    return grad


# --------------------------------------------------------------------------
# batched program used by the hybrid networks
# --------------------------------------------------------------------------

SRC_FIXED = 0
SRC_VAR = 1
SRC_ENC = 2

_KIND_CODE = {"h": 0, "ry": 1, "rz": 2, "cz": 3}


@dataclass
class CircuitProgram:
    """Compiled circuit whose rotation angles come from shared (variational)
    or per-sample (encoding) angle arrays.

    ops entries: (kind, targets, source, index_or_angle).  A numba fast path
    sweeps the whole program per call when available; the numpy kernels above
    are the reference implementation (QPPO_NO_NUMBA forces them).
    """

    n_qubits: int
    ops: list[tuple]
    n_var: int
    n_enc: int

    def __post_init__(self):
        n_ops = len(self.ops)
        self._kinds = np.empty(n_ops, dtype=np.int8)
        self._q1 = np.empty(n_ops, dtype=np.int32)
        self._q2 = np.full(n_ops, -1, dtype=np.int32)
        self._needs_grad = np.zeros(n_ops, dtype=np.bool_)
        fixed_ops, fixed_vals = [], []
        var_ops, var_slots = [], []
        enc_ops, enc_slots = [], []
        for i, (kind, targets, src, idx) in enumerate(self.ops):
            self._kinds[i] = _KIND_CODE[kind]
            self._q1[i] = targets[0]
            if kind == "cz":
                self._q2[i] = targets[1]
            if kind in ROTATION_KINDS:
                if src == SRC_VAR:
                    var_ops.append(i)
                    var_slots.append(idx)
                    self._needs_grad[i] = True
                elif src == SRC_ENC:
                    enc_ops.append(i)
                    enc_slots.append(idx)
                    self._needs_grad[i] = True
                else:
                    fixed_ops.append(i)
                    fixed_vals.append(idx)
        self._fixed_ops = np.array(fixed_ops, dtype=np.intp)
        self._fixed_vals = np.array(fixed_vals, dtype=float)
        self._var_ops = np.array(var_ops, dtype=np.intp)
        self._var_slots = np.array(var_slots, dtype=np.intp)
        self._enc_ops = np.array(enc_ops, dtype=np.intp)
        self._enc_slots = np.array(enc_slots, dtype=np.intp)

    def _angle_matrix(self, var_angles, enc_angles, batch: int) -> np.ndarray:
        angles = np.zeros((batch, len(self.ops)))
        if self._fixed_ops.size:
            angles[:, self._fixed_ops] = self._fixed_vals
        if self._var_ops.size:
            angles[:, self._var_ops] = np.asarray(var_angles)[self._var_slots]
        if self._enc_ops.size:
            angles[:, self._enc_ops] = np.asarray(enc_angles)[:, self._enc_slots]
        return angles

    @classmethod
    def from_gates(cls, n_qubits: int, gates: Sequence[Gate]) -> "CircuitProgram":
        """All trainable angles become 'variational' slots in gate order."""
        ops = []
        n_var = 0
        for g in gates:
            if g.trainable:
                ops.append((g.kind, g.targets, SRC_VAR, n_var))
                n_var += 1
            elif g.kind in ROTATION_KINDS:
                ops.append((g.kind, g.targets, SRC_FIXED, g.angle))
            else:
                ops.append((g.kind, g.targets, SRC_FIXED, 0.0))
        return cls(n_qubits, ops, n_var, 0)

    def _angle(self, op, var_angles, enc_angles):
        kind, targets, src, idx = op
        if src == SRC_VAR:
            return var_angles[idx]
        if src == SRC_ENC:
            return enc_angles[..., idx]
        return idx

    def forward(self, var_angles: np.ndarray, enc_angles: np.ndarray | None = None) -> np.ndarray:
        """Amplitudes of shape (B, 2^n) (or (2^n,) when enc_angles is None)."""
        from ._kernels import HAVE_NUMBA, forward_sweep

        squeeze = enc_angles is None
        if squeeze:
            enc_angles = np.zeros((1, self.n_enc))
        batch = enc_angles.shape[0]
        amps = np.zeros((batch, 1 << self.n_qubits), dtype=np.complex128)
        amps[:, 0] = 1.0
        if HAVE_NUMBA:
            angles = self._angle_matrix(var_angles, enc_angles, batch)
            forward_sweep(amps, self._kinds, self._q1, self._q2, angles)
        else:
            for op in self.ops:
                kind, targets, src, idx = op
                if kind == "h":
                    _apply_h(amps, self.n_qubits, targets[0])
                elif kind == "cz":
                    _apply_cz(amps, self.n_qubits, targets[0], targets[1])
                else:
                    angle = self._angle(op, var_angles, enc_angles)
                    if kind == "ry":
                        _apply_ry(amps, self.n_qubits, targets[0], angle)
                    else:
                        _apply_rz(amps, self.n_qubits, targets[0], angle)
        return amps[0] if squeeze else amps

    def expectations(self, var_angles, enc_angles=None) -> np.ndarray:
        return _expectations_from_amps(self.forward(var_angles, enc_angles), self.n_qubits)

    def adjoint_vjp(
        self,
        var_angles: np.ndarray,
        enc_angles: np.ndarray | None,
        upstream: np.ndarray,
        amps: np.ndarray | None = None,
    ) -> tuple[np.ndarray, np.ndarray]:
        """Chain upstream dL/d<Z_q> (shape (B, n)) through the circuit.

        Returns (dL/d var_angles summed over the batch, per-sample dL/d
        enc_angles of shape (B, n_enc)).  Exact-state method.
        """
        from ._kernels import HAVE_NUMBA, adjoint_sweep

        squeeze = enc_angles is None
        if amps is None:
            amps = self.forward(var_angles, enc_angles)
        if squeeze:
            enc_angles = np.zeros((1, self.n_enc))
            amps = amps[None, :]
            upstream = np.atleast_2d(upstream)
        weights = upstream @ _z_signs(self.n_qubits).T  # (B, 2^n)

        if HAVE_NUMBA:
            batch = enc_angles.shape[0]
            angles = self._angle_matrix(var_angles, enc_angles, batch)
            grads = adjoint_sweep(
                amps, weights, self._kinds, self._q1, self._q2, angles, self._needs_grad
            )
            d_var = np.zeros(self.n_var)
            if self._var_ops.size:
                d_var[self._var_slots] = grads[:, self._var_ops].sum(axis=0)
            d_enc = np.zeros((batch, self.n_enc))
            if self._enc_ops.size:
                d_enc[:, self._enc_slots] = grads[:, self._enc_ops]
            return (d_var, d_enc[0]) if squeeze else (d_var, d_enc)

        lead = amps.shape[:-1]
        d_var = np.zeros(self.n_var)
        d_enc = np.zeros(lead + (self.n_enc,))

        ket = amps.copy()
        # bra = (sum_q upstream_q Z_q) |psi>, a per-sample diagonal observable
        bra = weights * amps

        for op in reversed(self.ops):
            kind, targets, src, idx = op
            if kind == "h":
                _apply_h(ket, self.n_qubits, targets[0])
                _apply_h(bra, self.n_qubits, targets[0])
                continue
            if kind == "cz":
                _apply_cz(ket, self.n_qubits, targets[0], targets[1])
                _apply_cz(bra, self.n_qubits, targets[0], targets[1])
                continue
            angle = self._angle(op, var_angles, enc_angles)
            apply = _apply_ry if kind == "ry" else _apply_rz
            apply(ket, self.n_qubits, targets[0], np.negative(angle))
            if src != SRC_FIXED:
                # g = 2 Re <bra| dU |ket>, dU = 0.5 U(angle + pi)
                tket = ket.copy()
                apply(tket, self.n_qubits, targets[0], np.add(angle, math.pi))
                g = np.real(np.sum(np.conj(bra) * tket, axis=-1))
                if src == SRC_VAR:
                    d_var[idx] = float(np.sum(g))
                else:
                    d_enc[..., idx] = g
            apply(bra, self.n_qubits, targets[0], np.negative(angle))
        return (d_var, d_enc[0]) if squeeze else (d_var, d_enc)


# --------------------------------------------------------------------------
# circuit text serialization + remote-backend interface
# --------------------------------------------------------------------------

CIRCUIT_FORMAT_HEADER = "qppo-circuit v1"


def serialize_circuit(n_qubits: int, gates: Sequence[Gate]) -> str:
    """Versioned text form: one gate per line, 't' marks trainable angles."""
    lines = [CIRCUIT_FORMAT_HEADER, f"qubits {n_qubits}"]
    for g in gates:
        parts = [g.kind] + [str(t) for t in g.targets]
        if g.kind in ROTATION_KINDS:
            parts.append(repr(g.angle))
            if g.trainable:
                parts.append("t")
        lines.append(" ".join(parts))
    return "\n".join(lines) + "\n"


def parse_circuit(text: str) -> tuple[int, list[Gate]]:
    lines = [ln.strip() for ln in text.splitlines() if ln.strip() and not ln.startswith("#")]
    if not lines or lines[0] != CIRCUIT_FORMAT_HEADER:
        raise BackendError("unrecognized circuit format header")
    if len(lines) < 2 or not lines[1].startswith("qubits "):
        raise BackendError("missing qubit-count line")
    n_qubits = int(lines[1].split()[1])
    gates = []
    for ln in lines[2:]:
        parts = ln.split()
        kind = parts[0]
        if kind == "cz":
            gates.append(cz(int(parts[1]), int(parts[2])))
        elif kind == "h":
            gates.append(h(int(parts[1])))
        elif kind in ROTATION_KINDS:
            trainable = len(parts) > 3 and parts[3] == "t"
            gates.append(Gate(kind, (int(parts[1]),), float(parts[2]), trainable))
        else:
            raise BackendError(f"unknown gate line {ln!r}")
    return n_qubits, gates


class RemoteBackend(Protocol):
    """Submit a serialized circuit, receive per-qubit <Z> estimates."""

    def run(self, circuit_text: str, shots: int) -> list[float]: ...


class LoopbackRemoteBackend:
    """Local stand-in for a cloud device: parses and samples the circuit."""

    def __init__(self, seed: int | None = None):
        self.rng = np.random.default_rng(seed)

    def run(self, circuit_text: str, shots: int) -> list[float]:
        n_qubits, gates = parse_circuit(circuit_text)
        state = run_circuit(n_qubits, gates)
        return sample_shots(state, shots, self.rng).tolist()
