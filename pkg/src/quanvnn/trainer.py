"""Optimisers, learning-rate schedule and the training loop.

Training follows one protocol for both front ends: Adam on mini-batches,
an epoch-wise cosine learning-rate decay, and dropout on the hidden layer.
Two variations exist for quantum front ends:

* static front end: angles and channel biases are never updated;
* noisy phase: from ``noisy_start_epoch`` on, circuits are evaluated with
  readout damping and the ansatz angles are updated by SPSA, while every
  other parameter keeps using Adam with exact gradients.
"""

from __future__ import annotations

import csv
import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .ansatz import AnsatzKind
from .errors import NumericError
from .loss import batch_loss
from .model import GRAD_BACKENDS, ModelParams, PeakModel, save_checkpoint
from .quantum import NoiseConfig
from .rng import DROPOUT, SHUFFLE, SPSA, stream
from .specgen import Spectrum

log = logging.getLogger(__name__)

FORMAT_VERSION = 1


@dataclass
class SpsaConfig:
    a: float = 0.2
    c: float = 0.1
    A: float = 10.0
    alpha: float = 0.602
    gamma: float = 0.101


@dataclass
class TrainConfig:
    epochs: int = 100
    batch_size: int = 16
    lr_max: float = 0.01
    lr_min: float = 1e-4
    dropout: float = 0.1
    seed: int = 0
    frontend: str = "quantum"
    ansatz: AnsatzKind = field(default_factory=AnsatzKind)
    learnable_frontend: bool = True
    noisy: bool = False
    noisy_start_epoch: int = 80
    noise_gamma: float = 0.02
    spsa: SpsaConfig = field(default_factory=SpsaConfig)
    spsa_all: bool = False
    grad_backend: str = "adjoint"
    output_activation: str = "logistic"

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be positive")
        if not 0 < self.lr_min <= self.lr_max:
            raise ValueError("need 0 < lr_min <= lr_max")
        if self.noisy and not 0 <= self.noisy_start_epoch <= self.epochs:
            raise ValueError("noisy_start_epoch must not exceed epochs")
        if self.grad_backend not in GRAD_BACKENDS:
            raise ValueError(f"unknown gradient backend {self.grad_backend!r}")
        if self.noisy and self.frontend != "quantum":
            raise ValueError("noisy training needs a quantum front end")

    def build_model(self) -> PeakModel:
        return PeakModel(self.frontend, self.ansatz, self.output_activation, self.dropout,
                         NoiseConfig(self.noise_gamma, enabled=self.noisy))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["ansatz"] = self.ansatz.to_dict()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        d["ansatz"] = AnsatzKind.from_dict(d.get("ansatz", {"name": "se"}))
        d["spsa"] = SpsaConfig(**d.get("spsa", {}))
        return cls(**d)


# ------------------------------------------------------------------ schedule / optimisers


def cosine_lr(epoch: int, config: TrainConfig) -> float:
    """Cosine decay from ``lr_max`` at epoch 0 to ``lr_min`` at the last epoch."""
    if not 0 <= epoch < config.epochs:
        raise ValueError(f"epoch {epoch} outside [0, {config.epochs})")
    if config.epochs == 1:
        return config.lr_max
    frac = epoch / (config.epochs - 1)
    return config.lr_min + 0.5 * (config.lr_max - config.lr_min) * (1 + math.cos(math.pi * frac))


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros(cls, n: int) -> "AdamState":
        return cls(np.zeros(n), np.zeros(n))


def adam_step(params, grads, state: AdamState, lr: float, active=None) -> tuple[np.ndarray, AdamState]:
    """One bias-corrected Adam update. Entries outside ``active`` are left alone."""
    params = np.asarray(params, dtype=float)
    grads = np.asarray(grads, dtype=float)
    if params.shape != grads.shape or params.shape != state.m.shape:
        raise ValueError(f"shape mismatch: params {params.shape}, grads {grads.shape}, state {state.m.shape}")
    sel = slice(None) if active is None else np.asarray(active)
    t = state.t + 1
    m, v = state.m.copy(), state.v.copy()
    m[sel] = state.beta1 * m[sel] + (1 - state.beta1) * grads[sel]
    v[sel] = state.beta2 * v[sel] + (1 - state.beta2) * grads[sel] ** 2
    m_hat = m[sel] / (1 - state.beta1**t)
    v_hat = v[sel] / (1 - state.beta2**t)
    out = params.copy()
    out[sel] = params[sel] - lr * m_hat / (np.sqrt(v_hat) + state.eps)
    return out, AdamState(m, v, t, state.beta1, state.beta2, state.eps)


@dataclass
class SpsaState:
    config: SpsaConfig = field(default_factory=SpsaConfig)
    k: int = 0
    evaluations: int = 0


def spsa_step(params, loss_fn: Callable[[np.ndarray], float], state: SpsaState,
              rng: np.random.Generator) -> tuple[np.ndarray, SpsaState]:
    """One SPSA update from two loss evaluations along a Rademacher direction."""
    cfg = state.config
    params = np.asarray(params, dtype=float)
    a_k = cfg.a / (cfg.A + state.k + 1) ** cfg.alpha
    c_k = cfg.c / (state.k + 1) ** cfg.gamma
    delta = rng.choice([-1.0, 1.0], size=params.shape)
    diff = loss_fn(params + c_k * delta) - loss_fn(params - c_k * delta)
    g_hat = diff / (2 * c_k) / delta
    return params - a_k * g_hat, SpsaState(cfg, state.k + 1, state.evaluations + 2)


# ------------------------------------------------------------------ training loop


@dataclass
class RunRecord:
    train_loss: list[float]
    val_loss: list[float]
    lr: list[float]
    noisy: list[bool]
    final_params: ModelParams
    seed: int
    config: TrainConfig
    wall_time: float = 0.0

    def to_dict(self) -> dict:
        """Deterministic content only; the wall time is kept out."""
        return {"format_version": FORMAT_VERSION, "seed": self.seed, "config": self.config.to_dict(),
                "epochs": [{"epoch": e, "lr": self.lr[e], "train_loss": self.train_loss[e],
                            "val_loss": self.val_loss[e], "noisy": self.noisy[e]} for e in range(len(self.lr))]}


def _stack(spectra: Sequence[Spectrum]) -> tuple[np.ndarray, list]:
    return np.stack([s.points for s in spectra]), [s.label for s in spectra]


def dataset_loss(model: PeakModel, params: ModelParams, spectra: Sequence[Spectrum], noisy: bool = False,
                 batch_size: int = 64) -> float:
    """Mean combined loss in eval mode (no dropout)."""
    x, targets = _stack(spectra)
    total = 0.0
    for i in range(0, len(x), batch_size):
        pred, _ = model.forward(params, x[i:i + batch_size], noisy=noisy)
        value, _ = batch_loss(pred, targets[i:i + batch_size])
        total += value * len(pred)
    return total / len(x)


def train(model: PeakModel, train_set: Sequence[Spectrum], val_set: Sequence[Spectrum], config: TrainConfig,
          init: ModelParams | None = None, progress: Callable[[int, float, float], None] | None = None) -> RunRecord:
    """Train ``model`` and return the per-epoch record and final parameters."""
    if not train_set or not val_set:
        raise ValueError("training and validation splits must be non-empty")
    start = time.perf_counter()
    params = init.copy() if init is not None else model.init_params(config.seed)
    n_front = params.frontend_size
    n_angles = params.frontend.size
    flat = params.flat()
    frozen = np.zeros(flat.size, dtype=bool)
    if not config.learnable_frontend:
        frozen[:n_front] = True

    x, targets = _stack(train_set)
    adam = AdamState.zeros(flat.size)
    spsa = SpsaState(config.spsa)
    drop_rng = stream(config.seed, DROPOUT)
    spsa_rng = stream(config.seed, SPSA)
    record = RunRecord([], [], [], [], params, config.seed, config)

    for epoch in range(config.epochs):
        lr = cosine_lr(epoch, config)
        noisy = config.noisy and epoch >= config.noisy_start_epoch
        order = stream(config.seed, SHUFFLE, epoch).permutation(len(x))
        losses = []
        for i in range(0, len(order), config.batch_size):
            idx = order[i:i + config.batch_size]
            xb, tb = x[idx], [targets[j] for j in idx]
            params = params.with_flat(flat)
            pred, trace = model.forward(params, xb, train=True, rng=drop_rng, noisy=noisy)
            value, d_pred = batch_loss(pred, tb)
            losses.append(value)
            if not noisy:
                grads = model.backward(params, trace, d_pred, config.grad_backend,
                                       frontend=config.learnable_frontend)
                flat, adam = adam_step(flat, grads.flat(), adam, lr, active=~frozen)
                continue
            # noisy phase: SPSA for the angles (or everything), Adam for the rest
            spsa_mask = ~frozen
            if not config.spsa_all:
                spsa_mask[n_angles:] = False
            adam_mask = ~frozen & ~spsa_mask
            if adam_mask.any():
                grads = model.backward(params, trace, d_pred, config.grad_backend, frontend=False)
                flat, adam = adam_step(flat, grads.flat(), adam, lr, active=adam_mask)
            if spsa_mask.any():
                base = flat.copy()

                def loss_fn(sub, base=base, xb=xb, tb=tb):
                    trial = base.copy()
                    trial[spsa_mask] = sub
                    p, _ = model.forward(params.with_flat(trial), xb, noisy=True)
                    return batch_loss(p, tb)[0]

                new_sub, spsa = spsa_step(flat[spsa_mask], loss_fn, spsa, spsa_rng)
                flat = flat.copy()
                flat[spsa_mask] = new_sub
        params = params.with_flat(flat)
        if not np.all(np.isfinite(flat)):
            raise NumericError(f"non-finite parameters after epoch {epoch}")
        val = dataset_loss(model, params, val_set, noisy=noisy)
        record.train_loss.append(float(np.mean(losses)))
        record.val_loss.append(float(val))
        record.lr.append(lr)
        record.noisy.append(noisy)
        log.info("epoch %d lr=%.5f train=%.5f val=%.5f%s", epoch, lr, record.train_loss[-1], val,
                 " (noisy)" if noisy else "")
        if progress is not None:
            progress(epoch, record.train_loss[-1], val)
    record.final_params = params
    record.wall_time = time.perf_counter() - start
    return record


def write_run(rundir, model: PeakModel, record: RunRecord, extra: dict | None = None) -> Path:
    """Write ``checkpoint.json``, ``run.json``, ``epochs.csv`` and ``metadata.json``.

    Only ``metadata.json`` carries timing information, so the other three
    files are identical across repeated runs with the same seed.
    """
    rundir = Path(rundir)
    rundir.mkdir(parents=True, exist_ok=True)
    save_checkpoint(rundir / "checkpoint.json", model, record.final_params,
                    {"seed": record.seed, "learnable_frontend": record.config.learnable_frontend,
                     "trained_noisy": record.config.noisy, **(extra or {})})
    (rundir / "run.json").write_text(json.dumps(record.to_dict()) + "\n")
    with (rundir / "epochs.csv").open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["epoch", "lr", "train_loss", "val_loss"])
        for e in range(len(record.lr)):
            w.writerow([e, repr(record.lr[e]), repr(record.train_loss[e]), repr(record.val_loss[e])])
    (rundir / "metadata.json").write_text(json.dumps({"wall_time_s": record.wall_time,
                                                      "finished_at": time.strftime("%Y-%m-%dT%H:%M:%S")}) + "\n")
    return rundir
