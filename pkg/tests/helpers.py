import numpy as np

from quanvnn.quantum import CircuitSpec, Gate


def random_circuit(rng: np.random.Generator, n_gates: int = 5) -> CircuitSpec:
    """Random gate list over every gate kind, each parametrised gate with fresh slots."""
    gates, slot = [], 0
    for _ in range(n_gates):
        kind = rng.choice(["RX", "RY", "RZ", "Rot", "CNOT", "CZ"])
        if kind in ("CNOT", "CZ"):
            a, b = rng.choice(5, size=2, replace=False)
            gates.append(Gate(kind, (int(a), int(b))))
        else:
            width = 3 if kind == "Rot" else 1
            gates.append(Gate(kind, (int(rng.integers(5)),), tuple(range(slot, slot + width))))
            slot += width
    return CircuitSpec(tuple(gates), slot, "random-test")


def random_window(rng: np.random.Generator) -> np.ndarray:
    return rng.random(32)
