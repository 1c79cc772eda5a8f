"""Dense state-vector simulation of the 5-qubit quanvolution kernel.

Conventions
-----------
* Qubit 0 is the most significant bit of the basis index, so the basis
  state ``|b0 b1 b2 b3 b4>`` sits at index ``16*b0 + 8*b1 + 4*b2 + 2*b3 + b4``.
* States are complex128 arrays with a trailing axis of length 32. Every
  routine accepts either a single state ``(32,)`` or a batch ``(B, 32)``;
  batching is how a whole spectrum (169 windows) is simulated at once.
* Rotations follow ``R_P(t) = exp(-i t P / 2)``. ``Rot(a, b, c)`` applies
  ``RZ(a)``, then ``RY(b)``, then ``RZ(c)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .errors import NumericError, ShapeError, UnsupportedGateError

N_QUBITS = 5
DIM = 2**N_QUBITS

ROTATIONS = ("RX", "RY", "RZ")
GATE_KINDS = ("RX", "RY", "RZ", "Rot", "CNOT", "CZ")
_N_SLOTS = {"RX": 1, "RY": 1, "RZ": 1, "Rot": 3, "CNOT": 0, "CZ": 0}
_N_TARGETS = {"RX": 1, "RY": 1, "RZ": 1, "Rot": 1, "CNOT": 2, "CZ": 2}

_INDEX = np.arange(DIM)
# _BITS[q, j] is the value of qubit q in basis state j
_BITS = np.array([(_INDEX >> (N_QUBITS - 1 - q)) & 1 for q in range(N_QUBITS)])
_ZSIGN = (1 - 2 * _BITS).astype(float)

PAULI = {
    "X": np.array([[0, 1], [1, 0]], dtype=complex),
    "Y": np.array([[0, -1j], [1j, 0]], dtype=complex),
    "Z": np.array([[1, 0], [0, -1]], dtype=complex),
}


@dataclass(frozen=True)
class Gate:
    """One gate of a circuit.

    ``slots`` index into the flat parameter vector; CNOT and CZ have none.
    For CNOT the targets are ``(control, target)``.
    """

    kind: str
    targets: tuple[int, ...]
    slots: tuple[int, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "targets", tuple(int(t) for t in self.targets))
        object.__setattr__(self, "slots", tuple(int(s) for s in self.slots))
        if self.kind not in GATE_KINDS:
            raise UnsupportedGateError(f"unknown gate kind {self.kind!r}")
        if len(self.targets) != _N_TARGETS[self.kind]:
            raise ValueError(f"{self.kind} needs {_N_TARGETS[self.kind]} target(s), got {self.targets}")
        if len(set(self.targets)) != len(self.targets):
            raise ValueError(f"{self.kind} targets must be distinct, got {self.targets}")
        if any(not 0 <= t < N_QUBITS for t in self.targets):
            raise ValueError(f"qubit index out of range in {self.targets}")
        if len(self.slots) != _N_SLOTS[self.kind]:
            raise ValueError(f"{self.kind} needs {_N_SLOTS[self.kind]} parameter slot(s), got {self.slots}")
        if any(s < 0 for s in self.slots):
            raise ValueError("parameter slots must be non-negative")

    def to_dict(self) -> dict:
        return {"kind": self.kind, "targets": list(self.targets), "slots": list(self.slots)}

    @classmethod
    def from_dict(cls, d: dict) -> "Gate":
        return cls(d["kind"], tuple(d["targets"]), tuple(d.get("slots", ())))


@dataclass(frozen=True)
class CircuitSpec:
    """An ordered gate list with ``n_params`` trainable angle slots."""

    gates: tuple[Gate, ...]
    n_params: int
    label: str = ""

    def __post_init__(self):
        object.__setattr__(self, "gates", tuple(self.gates))
        used = set()
        for g in self.gates:
            for s in g.slots:
                if s >= self.n_params:
                    raise ValueError(f"slot {s} out of range for n_params={self.n_params}")
                used.add(s)
        if len(used) != self.n_params:
            missing = sorted(set(range(self.n_params)) - used)
            raise ValueError(f"parameter slots never referenced: {missing}")

    def to_dict(self) -> dict:
        return {"label": self.label, "n_params": self.n_params, "gates": [g.to_dict() for g in self.gates]}

    @classmethod
    def from_dict(cls, d: dict) -> "CircuitSpec":
        return cls(tuple(Gate.from_dict(g) for g in d["gates"]), int(d["n_params"]), d.get("label", ""))


@dataclass(frozen=True)
class NoiseConfig:
    """Readout amplitude damping applied to every measured qubit."""

    gamma: float = 0.02
    enabled: bool = False

    def __post_init__(self):
        if not 0.0 <= self.gamma <= 1.0:
            raise ValueError(f"gamma must lie in [0, 1], got {self.gamma}")


NOISELESS = NoiseConfig(enabled=False)


@dataclass(frozen=True)
class _Prim:
    # primitive op after Rot expansion; slot is -1 for CNOT/CZ
    kind: str
    targets: tuple[int, ...]
    slot: int = -1
    pauli: str = field(default="", compare=False)


def expand(gates: Iterable[Gate]) -> list[_Prim]:
    """Decompose ``Rot`` into its three Pauli rotations."""
    prims = []
    for g in gates:
        if g.kind == "Rot":
            a, b, c = g.slots
            q = g.targets
            prims += [_Prim("RZ", q, a, "Z"), _Prim("RY", q, b, "Y"), _Prim("RZ", q, c, "Z")]
        elif g.kind in ROTATIONS:
            prims.append(_Prim(g.kind, g.targets, g.slots[0], g.kind[1]))
        elif g.kind in ("CNOT", "CZ"):
            prims.append(_Prim(g.kind, g.targets))
        else:
            raise UnsupportedGateError(f"cannot expand gate kind {g.kind!r}")
    return prims


def rotation_matrix(kind: str, theta: float) -> np.ndarray:
    c, s = np.cos(theta / 2), np.sin(theta / 2)
    if kind == "RX":
        return np.array([[c, -1j * s], [-1j * s, c]])
    if kind == "RY":
        return np.array([[c, -s], [s, c]], dtype=complex)
    if kind == "RZ":
        return np.array([[np.exp(-0.5j * theta), 0], [0, np.exp(0.5j * theta)]])
    raise UnsupportedGateError(f"{kind} is not a Pauli rotation")


def gate_matrix(gate: Gate, params: Sequence[float] = ()) -> np.ndarray:
    """Local matrix of ``gate`` (2x2 or 4x4, first target most significant)."""
    if gate.kind in ROTATIONS:
        return rotation_matrix(gate.kind, params[gate.slots[0]])
    if gate.kind == "Rot":
        a, b, c = (params[s] for s in gate.slots)
        return rotation_matrix("RZ", c) @ rotation_matrix("RY", b) @ rotation_matrix("RZ", a)
    if gate.kind == "CNOT":
        return np.array([[1, 0, 0, 0], [0, 1, 0, 0], [0, 0, 0, 1], [0, 0, 1, 0]], dtype=complex)
    if gate.kind == "CZ":
        return np.diag([1, 1, 1, -1]).astype(complex)
    raise UnsupportedGateError(gate.kind)


# ---------------------------------------------------------------- kernels


def _apply_1q(states: np.ndarray, u: np.ndarray, q: int) -> np.ndarray:
    b = states.shape[0]
    psi = states.reshape(b, 2**q, 2, 2 ** (N_QUBITS - 1 - q))
    return np.matmul(u, psi).reshape(b, DIM)


def _cnot_perm(control: int, target: int) -> np.ndarray:
    flip = 1 << (N_QUBITS - 1 - target)
    return np.where(_BITS[control] == 1, _INDEX ^ flip, _INDEX)


_CNOT_PERM = {(c, t): _cnot_perm(c, t) for c in range(N_QUBITS) for t in range(N_QUBITS) if c != t}
_CZ_SIGN = {
    (a, b): np.where((_BITS[a] & _BITS[b]) == 1, -1.0, 1.0)
    for a in range(N_QUBITS)
    for b in range(N_QUBITS)
    if a != b
}


def _apply_prim(states: np.ndarray, prim: _Prim, theta: float = 0.0, adjoint: bool = False) -> np.ndarray:
    """Apply one primitive (or its inverse) to a ``(B, 32)`` batch."""
    if prim.kind == "CNOT":
        return states[:, _CNOT_PERM[prim.targets]]
    if prim.kind == "CZ":
        return states * _CZ_SIGN[prim.targets]
    if adjoint:
        theta = -theta
    q = prim.targets[0]
    if prim.kind == "RZ":
        phase = np.where(_BITS[q] == 1, np.exp(0.5j * theta), np.exp(-0.5j * theta))
        return states * phase
    return _apply_1q(states, rotation_matrix(prim.kind, theta), q)


def _apply_pauli(states: np.ndarray, prim: _Prim) -> np.ndarray:
    return _apply_1q(states, PAULI[prim.pauli], prim.targets[0])


# ---------------------------------------------------------------- public API


def _as_batch(x: np.ndarray, width: int = DIM) -> tuple[np.ndarray, bool]:
    x = np.asarray(x)
    if x.shape[-1:] != (width,) or x.ndim not in (1, 2):
        raise ShapeError(f"expected shape ({width},) or (B, {width}), got {x.shape}")
    return (x[None, :], True) if x.ndim == 1 else (x, False)


def _check_params(params, n_params: int) -> np.ndarray:
    params = np.asarray(params, dtype=float).reshape(-1)
    if params.size < n_params:
        raise ValueError(f"circuit needs {n_params} parameters, got {params.size}")
    if not np.all(np.isfinite(params)):
        raise NumericError("non-finite rotation angle")
    return params


def amplitude_embed(window) -> np.ndarray:
    """Embed 32 non-negative reals as normalised state amplitudes.

    A zero window maps to the uniform superposition.
    """
    x, single = _as_batch(np.asarray(window, dtype=float))
    if not np.all(np.isfinite(x)):
        raise NumericError("window contains non-finite values")
    norm = np.linalg.norm(x, axis=1, keepdims=True)
    zero = norm[:, 0] == 0
    out = np.empty(x.shape, dtype=complex)
    out[~zero] = x[~zero] / norm[~zero]
    out[zero] = 1 / np.sqrt(DIM)
    return out[0] if single else out


def apply_gate(state, gate: Gate, params=()) -> np.ndarray:
    """Return ``U state`` for a single gate. The input is not modified."""
    psi, single = _as_batch(state)
    psi = np.asarray(psi, dtype=complex)
    if gate.slots:
        params = _check_params(params, max(gate.slots) + 1)
    for prim in expand([gate]):
        psi = _apply_prim(psi, prim, params[prim.slot] if prim.slot >= 0 else 0.0)
    return psi[0] if single else psi


def expect_z(state, qubit: int):
    """Pauli-Z expectation of ``qubit``."""
    if not 0 <= qubit < N_QUBITS:
        raise IndexError(f"qubit {qubit} out of range")
    probs = np.abs(np.asarray(state)) ** 2
    return probs @ _ZSIGN[qubit]


def expect_z_all(states) -> np.ndarray:
    """``<Z_i>`` for all five qubits; trailing axis of length 5."""
    probs = np.abs(np.asarray(states)) ** 2
    return probs @ _ZSIGN.T


def readout_damping(z, gamma: float):
    """Image of ``<Z>`` under an amplitude-damping channel of strength ``gamma``."""
    return (1.0 - gamma) * np.asarray(z) + gamma


def _evolve(states: np.ndarray, prims: list[_Prim], angles: np.ndarray) -> np.ndarray:
    for k, prim in enumerate(prims):
        states = _apply_prim(states, prim, angles[k])
    return states


def _occurrence_angles(prims: list[_Prim], params: np.ndarray) -> np.ndarray:
    return np.array([params[p.slot] if p.slot >= 0 else 0.0 for p in prims])


def final_state(window, circuit: CircuitSpec, params) -> np.ndarray:
    """Embed ``window`` and apply every gate of ``circuit``."""
    params = _check_params(params, circuit.n_params)
    psi, single = _as_batch(amplitude_embed(window))
    prims = expand(circuit.gates)
    psi = _evolve(psi, prims, _occurrence_angles(prims, params))
    return psi[0] if single else psi


def run_circuit(window, circuit: CircuitSpec, params, noise: NoiseConfig = NOISELESS) -> np.ndarray:
    """Per-qubit ``<Z>`` after embedding ``window`` and running ``circuit``.

    ``window`` may be a batch ``(B, 32)``; the result is then ``(B, 5)``.
    """
    z = expect_z_all(final_state(window, circuit, params))
    if noise.enabled:
        z = readout_damping(z, noise.gamma)
    return z


def _require_shiftable(prims: list[_Prim]):
    for p in prims:
        if p.slot >= 0 and p.kind not in ROTATIONS:
            raise UnsupportedGateError(f"parameter shift needs Pauli rotations, got {p.kind}")


def param_shift_grad(window, circuit: CircuitSpec, params) -> np.ndarray:
    """Jacobian ``d<Z_i>/d theta_j`` by the two-term shift rule.

    Returns ``(5, n_params)`` for one window or ``(B, 5, n_params)`` for a
    batch. Costs two circuit evaluations per parameterised primitive.
    """
    params = _check_params(params, circuit.n_params)
    psi0, single = _as_batch(amplitude_embed(window))
    prims = expand(circuit.gates)
    _require_shiftable(prims)
    angles = _occurrence_angles(prims, params)
    jac = np.zeros((psi0.shape[0], N_QUBITS, circuit.n_params))
    for k, prim in enumerate(prims):
        if prim.slot < 0:
            continue
        shifted = angles.copy()
        shifted[k] += np.pi / 2
        plus = expect_z_all(_evolve(psi0, prims, shifted))
        shifted[k] -= np.pi
        minus = expect_z_all(_evolve(psi0, prims, shifted))
        jac[:, :, prim.slot] += 0.5 * (plus - minus)
    return jac[0] if single else jac


def _adjoint_sweep(psi: np.ndarray, lam: np.ndarray, prims: list[_Prim], angles: np.ndarray, n_params: int):
    """Reverse sweep. ``lam`` is ``O psi`` with an optional observable axis.

    ``psi`` is ``(B, 32)``; ``lam`` is ``(B, K, 32)``. Returns ``(B, K, n_params)``.
    """
    b, k = lam.shape[:2]
    grad = np.zeros((b, k, n_params))
    lam = lam.reshape(b * k, DIM)
    for idx in range(len(prims) - 1, -1, -1):
        prim = prims[idx]
        if prim.slot >= 0:
            ppsi = _apply_pauli(psi, prim)
            # d<O>/dtheta = Im <lam| P |psi> for U = exp(-i theta P / 2)
            overlap = np.einsum("bkj,bj->bk", lam.reshape(b, k, DIM).conj(), ppsi)
            grad[:, :, prim.slot] += overlap.imag
        psi = _apply_prim(psi, prim, angles[idx], adjoint=True)
        lam = _apply_prim(lam, prim, angles[idx], adjoint=True)
    return grad


def adjoint_grad(window, circuit: CircuitSpec, params, noise: NoiseConfig = NOISELESS) -> np.ndarray:
    """Jacobian ``d<Z_i>/d theta_j`` by one forward and one reverse sweep.

    Same shapes as :func:`param_shift_grad`. Only defined for noiseless
    circuits.
    """
    if noise.enabled:
        raise UnsupportedGateError("adjoint differentiation requires a noiseless circuit")
    params = _check_params(params, circuit.n_params)
    psi0, single = _as_batch(amplitude_embed(window))
    prims = expand(circuit.gates)
    _require_shiftable(prims)
    angles = _occurrence_angles(prims, params)
    psi = _evolve(psi0, prims, angles)
    lam = psi[:, None, :] * _ZSIGN[None, :, :]
    jac = _adjoint_sweep(psi, lam, prims, angles, circuit.n_params)
    return jac[0] if single else jac


def adjoint_vjp(windows, circuit: CircuitSpec, params, upstream) -> np.ndarray:
    """``sum_b sum_i upstream[b, i] * d<Z_i>_b / d theta``, noiseless.

    This is the quantity the model needs during backprop; the observable
    ``sum_i upstream[b, i] Z_i`` is folded into a single reverse sweep.
    """
    params = _check_params(params, circuit.n_params)
    psi0, _ = _as_batch(amplitude_embed(windows))
    upstream = np.asarray(upstream, dtype=float).reshape(psi0.shape[0], N_QUBITS)
    prims = expand(circuit.gates)
    _require_shiftable(prims)
    angles = _occurrence_angles(prims, params)
    psi = _evolve(psi0, prims, angles)
    lam = (psi * (upstream @ _ZSIGN))[:, None, :]
    return _adjoint_sweep(psi, lam, prims, angles, circuit.n_params)[:, 0, :].sum(axis=0)


def param_shift_vjp(windows, circuit: CircuitSpec, params, upstream) -> np.ndarray:
    """Same contraction as :func:`adjoint_vjp` using the shift rule."""
    jac = param_shift_grad(np.atleast_2d(windows), circuit, params)
    upstream = np.asarray(upstream, dtype=float).reshape(jac.shape[0], N_QUBITS)
    return np.einsum("bi,bij->j", upstream, jac)
