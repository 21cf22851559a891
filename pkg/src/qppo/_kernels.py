"""Numba-compiled statevector kernels for the compiled circuit programs.

The pure-numpy gate kernels in backend.py pay per-call dispatch overhead on
every gate, which dominates for few-qubit circuits.  These loops fuse a whole
program sweep (forward or adjoint) into one compiled call.  Everything here
is an internal fast path: backend.CircuitProgram falls back to the numpy
implementation when numba is unavailable or QPPO_NO_NUMBA is set.

Op encoding shared with CircuitProgram: kind 0=H, 1=RY, 2=RZ, 3=CZ; angles
arrive as a dense (batch, n_ops) matrix (zeros for angle-free gates).
"""

from __future__ import annotations

import math
import os

import numpy as np

try:
    if os.environ.get("QPPO_NO_NUMBA"):
        raise ImportError("numba disabled via QPPO_NO_NUMBA")
    from numba import njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - exercised via QPPO_NO_NUMBA
    HAVE_NUMBA = False

    def njit(*args, **kwargs):
        def wrap(fn):
            return fn

        return wrap if not (args and callable(args[0])) else args[0]


@njit(cache=True, inline="always")
def _h_row(row, q):
    step = 1 << q
    n = row.shape[0]
    inv = 1.0 / math.sqrt(2.0)
    for base in range(0, n, step << 1):
        for i in range(base, base + step):
            a0 = row[i]
            a1 = row[i + step]
            row[i] = inv * (a0 + a1)
            row[i + step] = inv * (a0 - a1)


@njit(cache=True, inline="always")
def _ry_row(row, q, angle):
    step = 1 << q
    n = row.shape[0]
    c = math.cos(0.5 * angle)
    s = math.sin(0.5 * angle)
    for base in range(0, n, step << 1):
        for i in range(base, base + step):
            a0 = row[i]
            a1 = row[i + step]
            row[i] = c * a0 - s * a1
            row[i + step] = s * a0 + c * a1


@njit(cache=True, inline="always")
def _rz_row(row, q, angle):
    step = 1 << q
    n = row.shape[0]
    c = math.cos(0.5 * angle)
    s = math.sin(0.5 * angle)
    e0 = complex(c, -s)
    e1 = complex(c, s)
    for base in range(0, n, step << 1):
        for i in range(base, base + step):
            row[i] = e0 * row[i]
            row[i + step] = e1 * row[i + step]


@njit(cache=True, inline="always")
def _cz_row(row, qa, qb):
    n = row.shape[0]
    ma = 1 << qa
    mb = 1 << qb
    for i in range(n):
        if (i & ma) and (i & mb):
            row[i] = -row[i]


@njit(cache=True, inline="always")
def _rot_inner_real(bra, ket, kind, q, angle):
    """Re <bra| U(angle) |ket> for a rotation gate applied to ket."""
    step = 1 << q
    n = ket.shape[0]
    c = math.cos(0.5 * angle)
    s = math.sin(0.5 * angle)
    acc = 0.0 + 0.0j
    if kind == 1:
        for base in range(0, n, step << 1):
            for i in range(base, base + step):
                k0 = ket[i]
                k1 = ket[i + step]
                acc += np.conj(bra[i]) * (c * k0 - s * k1)
                acc += np.conj(bra[i + step]) * (s * k0 + c * k1)
    else:
        e0 = complex(c, -s)
        e1 = complex(c, s)
        for base in range(0, n, step << 1):
            for i in range(base, base + step):
                acc += np.conj(bra[i]) * (e0 * ket[i])
                acc += np.conj(bra[i + step]) * (e1 * ket[i + step])
    return acc.real


@njit(cache=True)
def forward_sweep(amps, kinds, q1, q2, angles):
    """Apply the whole program in place; amps (B, 2^n), angles (B, n_ops)."""
    n_batch = amps.shape[0]
    for op in range(kinds.shape[0]):
        k = kinds[op]
        if k == 0:
            for b in range(n_batch):
                _h_row(amps[b], q1[op])
        elif k == 1:
            for b in range(n_batch):
                _ry_row(amps[b], q1[op], angles[b, op])
        elif k == 2:
            for b in range(n_batch):
                _rz_row(amps[b], q1[op], angles[b, op])
        else:
            for b in range(n_batch):
                _cz_row(amps[b], q1[op], q2[op])


@njit(cache=True)
def adjoint_sweep(amps, weights, kinds, q1, q2, angles, needs_grad):
    """One reverse sweep computing d(sum_q w_q <Z_q>)/d(angle) per gate.

    amps is the forward-pass final state (B, 2^n); weights the per-sample
    diagonal observable (B, 2^n).  Returns (B, n_ops) gradients, zero for
    angle-free gates.  grad = 2 Re <bra| dU |ket> with dU = U(angle+pi)/2.
    """
    n_batch, dim = amps.shape
    n_ops = kinds.shape[0]
    grads = np.zeros((n_batch, n_ops))
    ket = amps.copy()
    bra = np.empty_like(amps)
    for b in range(n_batch):
        for i in range(dim):
            bra[b, i] = weights[b, i] * amps[b, i]
    for op in range(n_ops - 1, -1, -1):
        k = kinds[op]
        if k == 0:
            for b in range(n_batch):
                _h_row(ket[b], q1[op])
                _h_row(bra[b], q1[op])
        elif k == 3:
            for b in range(n_batch):
                _cz_row(ket[b], q1[op], q2[op])
                _cz_row(bra[b], q1[op], q2[op])
        elif k == 1:
            for b in range(n_batch):
                _ry_row(ket[b], q1[op], -angles[b, op])
                if needs_grad[op]:
                    grads[b, op] = _rot_inner_real(
                        bra[b], ket[b], 1, q1[op], angles[b, op] + math.pi
                    )
                _ry_row(bra[b], q1[op], -angles[b, op])
        else:
            for b in range(n_batch):
                _rz_row(ket[b], q1[op], -angles[b, op])
                if needs_grad[op]:
                    grads[b, op] = _rot_inner_real(
                        bra[b], ket[b], 2, q1[op], angles[b, op] + math.pi
                    )
                _rz_row(bra[b], q1[op], -angles[b, op])
    return grads
