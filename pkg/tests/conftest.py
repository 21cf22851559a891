import numpy as np
import pytest


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_circuit(rng, n_qubits, n_rotation_layers, trainable=True):
    """Random {H, RY, RZ, CZ} circuit with marked trainable rotations."""
    from qppo.backend import cz, h, ry, rz

    gates = [h(q) for q in range(n_qubits)]
    for _ in range(n_rotation_layers):
        for q in range(n_qubits):
            make = ry if rng.random() < 0.5 else rz
            gates.append(make(q, float(rng.uniform(-np.pi, np.pi)), trainable=trainable))
        if n_qubits >= 2:
            for q in range(n_qubits - 1):
                gates.append(cz(q, q + 1))
    return gates


def central_difference(f, x, h=1e-5):
    """Gradient of scalar f at 1-D point x by central differences."""
    x = np.asarray(x, dtype=float)
    grad = np.zeros_like(x)
    for i in range(x.size):
        xp = x.copy()
        xm = x.copy()
        xp[i] += h
        xm[i] -= h
        grad[i] = (f(xp) - f(xm)) / (2.0 * h)
    return grad
