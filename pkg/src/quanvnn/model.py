"""Peak-finding network with a pluggable convolution front end.

Data flow for one spectrum (batch axis omitted)::

    200 -> conv/quanv (5 x 169) -> ReLU -> maxpool (5 x 33) -> flatten 165
        -> dense 128 + ReLU -> dropout -> dense 10 -> output activation

The front end is either a classical valid cross-correlation with five
32-tap kernels or the quanvolution: every 32-point window is amplitude
embedded into five qubits, run through the ansatz, and the five ``<Z_i>``
become the five channels. Everything after the front end is shared code.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from . import quantum
from .ansatz import AnsatzKind, init_params
from .errors import ShapeError, UnsupportedGateError
from .quantum import NOISELESS, CircuitSpec, NoiseConfig
from .rng import INIT_FRONTEND, INIT_HEAD, stream

N_POINTS = 200
KERNEL = 32
N_CHANNELS = 5
N_WINDOWS = N_POINTS - KERNEL + 1  # 169
POOL = 5
N_POOLED = N_WINDOWS // POOL  # 33; the last 4 windows are dropped
FLAT = N_CHANNELS * N_POOLED  # 165
HIDDEN = 128
N_OUT = 10

FORMAT_VERSION = 1
FRONTENDS = ("quantum", "classical")
ACTIVATIONS = ("logistic", "softmax")
GRAD_BACKENDS = ("adjoint", "parameter-shift")


def _check(arr: np.ndarray, shape: tuple, what: str) -> np.ndarray:
    if arr.shape[-len(shape):] != shape:
        raise ShapeError(f"{what}: expected trailing shape {shape}, got {arr.shape}")
    return arr


@dataclass
class ModelParams:
    """All trainable arrays.

    ``frontend`` holds the ansatz angles (quantum) or the ``5 x 32`` kernel
    (classical). The flat view concatenates the fields in declaration order,
    so the first ``frontend_size`` entries are the front end.
    """

    frontend_kind: str
    frontend: np.ndarray
    conv_bias: np.ndarray
    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray

    ARRAYS = ("frontend", "conv_bias", "w1", "b1", "w2", "b2")

    def __post_init__(self):
        if self.frontend_kind not in FRONTENDS:
            raise ValueError(f"unknown frontend {self.frontend_kind!r}")
        for name in self.ARRAYS:
            setattr(self, name, np.asarray(getattr(self, name), dtype=float))
        if self.frontend_kind == "classical":
            _check(self.frontend, (N_CHANNELS, KERNEL), "kernel")
        elif self.frontend.ndim != 1:
            raise ShapeError("quantum angles must be a vector")
        for name, shape in (("conv_bias", (N_CHANNELS,)), ("w1", (FLAT, HIDDEN)), ("b1", (HIDDEN,)),
                            ("w2", (HIDDEN, N_OUT)), ("b2", (N_OUT,))):
            if getattr(self, name).shape != shape:
                raise ShapeError(f"{name}: expected {shape}, got {getattr(self, name).shape}")

    @property
    def frontend_size(self) -> int:
        return self.frontend.size + self.conv_bias.size

    @property
    def size(self) -> int:
        return sum(getattr(self, n).size for n in self.ARRAYS)

    def flat(self) -> np.ndarray:
        return np.concatenate([getattr(self, n).reshape(-1) for n in self.ARRAYS])

    def with_flat(self, vec) -> "ModelParams":
        vec = np.asarray(vec, dtype=float)
        if vec.shape != (self.size,):
            raise ShapeError(f"flat vector must have length {self.size}, got {vec.shape}")
        out, start = {}, 0
        for n in self.ARRAYS:
            arr = getattr(self, n)
            out[n] = vec[start:start + arr.size].reshape(arr.shape).copy()
            start += arr.size
        return replace(self, **out)

    def zeros_like(self) -> "ModelParams":
        return self.with_flat(np.zeros(self.size))

    def copy(self) -> "ModelParams":
        return self.with_flat(self.flat())

    def to_dict(self) -> dict:
        return {n: getattr(self, n).tolist() for n in self.ARRAYS}

    @classmethod
    def from_dict(cls, frontend_kind: str, d: dict) -> "ModelParams":
        return cls(frontend_kind, *(np.array(d[n], dtype=float) for n in cls.ARRAYS))


@dataclass
class ForwardTrace:
    windows: np.ndarray  # (B, 169, 32)
    conv_pre: np.ndarray  # (B, 5, 169) before ReLU
    conv_out: np.ndarray  # (B, 5, 169)
    pooled: np.ndarray  # (B, 5, 33)
    argmax: np.ndarray  # (B, 5, 33) offset inside each pool block
    flat: np.ndarray  # (B, 165)
    hidden_pre: np.ndarray  # (B, 128)
    hidden: np.ndarray  # (B, 128) after ReLU and dropout
    dropout_mask: np.ndarray | None
    out_pre: np.ndarray  # (B, 10)
    prediction: np.ndarray  # (B, 10)
    noisy: bool = False


# ------------------------------------------------------------------ layers


def sliding_windows(spectra) -> np.ndarray:
    x = np.asarray(spectra, dtype=float)
    _check(x, (N_POINTS,), "spectrum")
    return sliding_window_view(x, KERNEL, axis=-1)


def quanv_forward(spectrum, circuit: CircuitSpec, angles, biases, noise: NoiseConfig = NOISELESS) -> np.ndarray:
    """Quanvolution, bias and ReLU: ``(..., 200) -> (..., 5, 169)``."""
    return np.maximum(_quanv_pre(sliding_windows(spectrum), circuit, angles, biases, noise), 0.0)


def _quanv_pre(windows, circuit, angles, biases, noise):
    lead = windows.shape[:-2]
    z = quantum.run_circuit(windows.reshape(-1, KERNEL), circuit, angles, noise)
    z = z.reshape(*lead, N_WINDOWS, N_CHANNELS)
    return np.swapaxes(z, -1, -2) + np.asarray(biases)[:, None]


def conv1d_forward(spectrum, kernel, biases) -> np.ndarray:
    """Valid cross-correlation, bias and ReLU: ``(..., 200) -> (..., 5, 169)``."""
    return np.maximum(_conv_pre(sliding_windows(spectrum), kernel, biases), 0.0)


def _conv_pre(windows, kernel, biases):
    kernel = _check(np.asarray(kernel, dtype=float), (N_CHANNELS, KERNEL), "kernel")
    return np.einsum("...ij,cj->...ci", windows, kernel) + np.asarray(biases)[:, None]


def maxpool(fm) -> tuple[np.ndarray, np.ndarray]:
    """Non-overlapping max pool of width 5; returns values and in-block argmax."""
    fm = _check(np.asarray(fm, dtype=float), (N_CHANNELS, N_WINDOWS), "feature map")
    blocks = fm[..., : N_POOLED * POOL].reshape(*fm.shape[:-1], N_POOLED, POOL)
    arg = blocks.argmax(axis=-1)
    return np.take_along_axis(blocks, arg[..., None], axis=-1)[..., 0], arg


def _activate(z: np.ndarray, activation: str) -> np.ndarray:
    if activation == "logistic":
        return 0.5 * (1.0 + np.tanh(0.5 * z))
    if activation == "softmax":
        e = np.exp(z - z.max(axis=-1, keepdims=True))
        return e / e.sum(axis=-1, keepdims=True)
    raise ValueError(f"unknown activation {activation!r}")


def head_forward(flat, params: ModelParams, dropout_mask=None, activation: str = "logistic") -> np.ndarray:
    """Dense 165->128, ReLU, optional dropout mask, dense 128->10, activation."""
    flat = _check(np.asarray(flat, dtype=float), (FLAT,), "flattened features")
    h = np.maximum(flat @ params.w1 + params.b1, 0.0)
    if dropout_mask is not None:
        h = h * dropout_mask
    return _activate(h @ params.w2 + params.b2, activation)


# ------------------------------------------------------------------ model


@dataclass
class PeakModel:
    """Architecture settings; parameters live separately in :class:`ModelParams`."""

    frontend_kind: str = "quantum"
    ansatz: AnsatzKind = field(default_factory=AnsatzKind)
    output_activation: str = "logistic"
    dropout: float = 0.1
    noise: NoiseConfig = NOISELESS

    def __post_init__(self):
        if self.frontend_kind not in FRONTENDS:
            raise ValueError(f"unknown frontend {self.frontend_kind!r}")
        if self.output_activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.output_activation!r}")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must lie in [0, 1)")
        self._circuit = self.ansatz.build() if self.frontend_kind == "quantum" else None

    @property
    def circuit(self) -> CircuitSpec | None:
        return self._circuit

    def init_params(self, seed: int) -> ModelParams:
        """Front end and head use separate streams, so either can be frozen
        without changing the other's initial values."""
        rf = stream(seed, INIT_FRONTEND)
        rh = stream(seed, INIT_HEAD)
        if self.frontend_kind == "quantum":
            front = init_params(self.circuit, rf)
        else:
            bound = 1 / np.sqrt(KERNEL)
            front = rf.uniform(-bound, bound, (N_CHANNELS, KERNEL))
        b1, b2 = 1 / np.sqrt(FLAT), 1 / np.sqrt(HIDDEN)
        return ModelParams(
            self.frontend_kind, front, np.zeros(N_CHANNELS),
            rh.uniform(-b1, b1, (FLAT, HIDDEN)), np.zeros(HIDDEN),
            rh.uniform(-b2, b2, (HIDDEN, N_OUT)), np.zeros(N_OUT),
        )

    def frontend_features(self, params: ModelParams, spectra, noisy: bool = False) -> np.ndarray:
        """Pre-ReLU front-end output ``(B, 5, 169)``."""
        windows = sliding_windows(np.atleast_2d(spectra))
        return self._frontend_pre(params, windows, noisy)

    def _frontend_pre(self, params, windows, noisy):
        if self.frontend_kind == "quantum":
            noise = self.noise if noisy else NOISELESS
            return _quanv_pre(windows, self.circuit, params.frontend, params.conv_bias, noise)
        return _conv_pre(windows, params.frontend, params.conv_bias)

    def forward(self, params: ModelParams, spectra, train: bool = False, rng: np.random.Generator | None = None,
                noisy: bool = False) -> tuple[np.ndarray, ForwardTrace]:
        """Batched forward pass ``(B, 200) -> (B, 10)``.

        Dropout is active only when ``train`` is true (``rng`` required).
        ``noisy`` routes quanvolution through the readout-damping channel.
        """
        x = np.atleast_2d(np.asarray(spectra, dtype=float))
        _check(x, (N_POINTS,), "spectra")
        windows = sliding_windows(x)
        pre = _check(self._frontend_pre(params, windows, noisy), (N_CHANNELS, N_WINDOWS), "front end")
        out = np.maximum(pre, 0.0)
        pooled, arg = maxpool(out)
        _check(pooled, (N_CHANNELS, N_POOLED), "pooling")
        flat = _check(pooled.reshape(x.shape[0], FLAT), (FLAT,), "flatten")
        h_pre = _check(flat @ params.w1 + params.b1, (HIDDEN,), "hidden")
        h = np.maximum(h_pre, 0.0)
        mask = None
        if train and self.dropout > 0:
            if rng is None:
                raise ValueError("training forward pass needs an rng for dropout")
            keep = 1.0 - self.dropout
            mask = (rng.random(h.shape) < keep) / keep
            h = h * mask
        z = _check(h @ params.w2 + params.b2, (N_OUT,), "output")
        pred = _activate(z, self.output_activation)
        trace = ForwardTrace(windows, pre, out, pooled, arg, flat, h_pre, h, mask, z, pred, noisy)
        return pred, trace

    def predict(self, params: ModelParams, spectra, noisy: bool = False, batch_size: int = 64) -> np.ndarray:
        x = np.atleast_2d(np.asarray(spectra, dtype=float))
        return np.concatenate([self.forward(params, x[i:i + batch_size], noisy=noisy)[0]
                               for i in range(0, len(x), batch_size)]) if len(x) else np.zeros((0, N_OUT))

    def head_backward(self, params: ModelParams, trace: ForwardTrace, d_pred) -> tuple[dict, np.ndarray]:
        """Gradients of the dense head and the upstream gradient at the pre-ReLU front-end output."""
        d_pred = _check(np.atleast_2d(np.asarray(d_pred, dtype=float)), (N_OUT,), "upstream gradient")
        p = trace.prediction
        if self.output_activation == "logistic":
            dz = d_pred * p * (1.0 - p)
        else:
            dz = p * (d_pred - (d_pred * p).sum(axis=-1, keepdims=True))
        grads = {"w2": trace.hidden.T @ dz, "b2": dz.sum(axis=0)}
        dh = dz @ params.w2.T
        if trace.dropout_mask is not None:
            dh = dh * trace.dropout_mask
        dh = dh * (trace.hidden_pre > 0)
        grads["w1"] = trace.flat.T @ dh
        grads["b1"] = dh.sum(axis=0)
        d_pooled = (dh @ params.w1.T).reshape(-1, N_CHANNELS, N_POOLED)
        d_fm = np.zeros_like(trace.conv_out)
        b, c, k = np.indices(d_pooled.shape)
        d_fm[b, c, k * POOL + trace.argmax] = d_pooled
        return grads, d_fm * (trace.conv_pre > 0)

    def backward(self, params: ModelParams, trace: ForwardTrace, d_pred, grad_backend: str = "adjoint",
                 frontend: bool = True) -> ModelParams:
        """Exact reverse-mode gradient of ``sum(d_pred * prediction)``.

        With ``frontend=False`` the front-end weights get a zero gradient
        (their outputs are treated as constants); the channel biases are
        still differentiated.
        """
        if grad_backend not in GRAD_BACKENDS:
            raise ValueError(f"unknown gradient backend {grad_backend!r}")
        grads, d_pre = self.head_backward(params, trace, d_pred)
        grads["conv_bias"] = d_pre.sum(axis=(0, 2))
        if not frontend:
            grads["frontend"] = np.zeros_like(params.frontend)
        elif self.frontend_kind == "classical":
            grads["frontend"] = np.einsum("bci,bij->cj", d_pre, trace.windows)
        else:
            if trace.noisy and self.noise.enabled:
                raise UnsupportedGateError("quantum gradients are only available for noiseless circuits")
            upstream = np.swapaxes(d_pre, 1, 2).reshape(-1, N_CHANNELS)
            windows = trace.windows.reshape(-1, KERNEL)
            vjp = quantum.adjoint_vjp if grad_backend == "adjoint" else quantum.param_shift_vjp
            grads["frontend"] = vjp(windows, self.circuit, params.frontend, upstream)
        return replace(params, **grads)

    # ---------------------------------------------------------- persistence

    def to_dict(self) -> dict:
        return {
            "frontend_kind": self.frontend_kind,
            "ansatz": self.ansatz.to_dict() if self.frontend_kind == "quantum" else None,
            "circuit": self.circuit.to_dict() if self.circuit is not None else None,
            "output_activation": self.output_activation,
            "dropout": self.dropout,
            "noise": {"gamma": self.noise.gamma, "enabled": self.noise.enabled},
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PeakModel":
        ansatz = AnsatzKind.from_dict(d["ansatz"]) if d.get("ansatz") else AnsatzKind()
        model = cls(d["frontend_kind"], ansatz, d.get("output_activation", "logistic"), float(d.get("dropout", 0.1)),
                    NoiseConfig(**d.get("noise", {"gamma": 0.02, "enabled": False})))
        if d.get("circuit") and CircuitSpec.from_dict(d["circuit"]) != model.circuit:
            raise ValueError("checkpoint circuit does not match its ansatz descriptor")
        return model


def model_forward(model: PeakModel, spectrum, params: ModelParams, mode: str = "eval",
                  rng: np.random.Generator | None = None) -> tuple[np.ndarray, ForwardTrace]:
    """Single-spectrum convenience wrapper; ``mode`` is ``train`` or ``eval``."""
    if mode not in ("train", "eval"):
        raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
    pred, trace = model.forward(params, np.asarray(spectrum)[None, :], train=mode == "train", rng=rng)
    return pred[0], trace


def model_backward(model: PeakModel, params: ModelParams, trace: ForwardTrace, d_pred,
                   grad_backend: str = "adjoint") -> ModelParams:
    return model.backward(params, trace, d_pred, grad_backend)


def save_checkpoint(path, model: PeakModel, params: ModelParams, extra: dict | None = None) -> None:
    doc = {"format_version": FORMAT_VERSION, **model.to_dict(), "params": params.to_dict()}
    if extra:
        doc.update(extra)
    Path(path).write_text(json.dumps(doc) + "\n")


def load_checkpoint(path) -> tuple[PeakModel, ModelParams, dict]:
    doc = json.loads(Path(path).read_text())
    if doc.get("format_version") != FORMAT_VERSION:
        raise ValueError(f"unsupported checkpoint format {doc.get('format_version')!r}")
    model = PeakModel.from_dict(doc)
    params = ModelParams.from_dict(model.frontend_kind, doc["params"])
    return model, params, doc
