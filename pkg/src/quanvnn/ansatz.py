"""The three quanvolution kernels and their angle initialisation."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .quantum import N_QUBITS, ROTATIONS, CircuitSpec, Gate

N_LAYERS = 3


def build_strongly_entangling(n_layers: int = N_LAYERS) -> CircuitSpec:
    """Per layer: ``Rot`` on every qubit, then a closed CNOT ring 0->1->...->4->0."""
    gates = []
    slot = 0
    for _ in range(n_layers):
        for q in range(N_QUBITS):
            gates.append(Gate("Rot", (q,), (slot, slot + 1, slot + 2)))
            slot += 3
        for q in range(N_QUBITS):
            gates.append(Gate("CNOT", (q, (q + 1) % N_QUBITS)))
    return CircuitSpec(tuple(gates), slot, "strongly_entangling")


def build_two_design(n_layers: int = N_LAYERS) -> CircuitSpec:
    """Initial RY layer, then blocks of CZ(0,1) CZ(2,3), RY on 0-3, CZ(1,2) CZ(3,4), RY on 1-4."""
    gates = [Gate("RY", (q,), (q,)) for q in range(N_QUBITS)]
    slot = N_QUBITS
    for _ in range(n_layers):
        gates += [Gate("CZ", (0, 1)), Gate("CZ", (2, 3))]
        for q in range(4):
            gates.append(Gate("RY", (q,), (slot,)))
            slot += 1
        gates += [Gate("CZ", (1, 2)), Gate("CZ", (3, 4))]
        for q in range(1, 5):
            gates.append(Gate("RY", (q,), (slot,)))
            slot += 1
    return CircuitSpec(tuple(gates), slot, "two_design")


def build_random(seed: int, gate_count: int = 30) -> CircuitSpec:
    """Random arrangement of trainable RX/RY/RZ and CNOT gates.

    Each gate is a rotation with probability 2/3 (kind and qubit uniform,
    fresh parameter slot) or a CNOT on a uniformly drawn ordered qubit pair.
    """
    if gate_count < 1:
        raise ValueError("gate_count must be >= 1")
    rng = np.random.Generator(np.random.PCG64(seed))
    gates = []
    slot = 0
    for _ in range(gate_count):
        if rng.random() < 2 / 3:
            kind = ROTATIONS[rng.integers(3)]
            gates.append(Gate(kind, (int(rng.integers(N_QUBITS)),), (slot,)))
            slot += 1
        else:
            ctrl, tgt = rng.choice(N_QUBITS, size=2, replace=False)
            gates.append(Gate("CNOT", (int(ctrl), int(tgt))))
    return CircuitSpec(tuple(gates), slot, f"random(seed={seed},gates={gate_count})")


@dataclass(frozen=True)
class AnsatzKind:
    """Serializable descriptor: ``name`` is ``se``, ``td`` or ``random``."""

    name: str = "se"
    seed: int = 0
    gate_count: int = 30

    def __post_init__(self):
        if self.name not in ("se", "td", "random"):
            raise ValueError(f"unknown ansatz {self.name!r}")
        if self.name == "random" and self.gate_count < 1:
            raise ValueError("gate_count must be >= 1")

    def build(self) -> CircuitSpec:
        if self.name == "se":
            return build_strongly_entangling()
        if self.name == "td":
            return build_two_design()
        return build_random(self.seed, self.gate_count)

    def to_dict(self) -> dict:
        return {"name": self.name, "seed": self.seed, "gate_count": self.gate_count}

    @classmethod
    def from_dict(cls, d: dict) -> "AnsatzKind":
        return cls(d["name"], int(d.get("seed", 0)), int(d.get("gate_count", 30)))


def init_params(circuit: CircuitSpec, rng: np.random.Generator) -> np.ndarray:
    """Angles uniform in ``[-pi, pi)``."""
    return rng.uniform(-np.pi, np.pi, size=circuit.n_params)
