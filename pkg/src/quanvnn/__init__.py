"""Quanvolutional and classical 1-D peak finders on synthetic spectra.

Five-qubit state-vector simulation with exact circuit gradients, a hybrid
network with a quantum or classical front end, a permutation-invariant
loss, a difficulty-controlled spectrum generator, training and evaluation.
"""

from .ansatz import AnsatzKind, build_random, build_strongly_entangling, build_two_design
from .errors import NumericError, QuanvError, ShapeError, UnsupportedGateError
from .loss import TargetLabel, combined_loss, decode, hungarian_assignment, hungarian_loss
from .metrics import MetricsReport, aggregate, count_metrics, evaluate, position_errors, wilcoxon_one_sided
from .model import ModelParams, PeakModel, load_checkpoint, save_checkpoint
from .quantum import CircuitSpec, Gate, NoiseConfig, adjoint_grad, amplitude_embed, param_shift_grad, run_circuit
from .specgen import Spectrum, build_hard_dataset, build_mixed_dataset, generate_spectrum, stratified_split
from .trainer import TrainConfig, adam_step, cosine_lr, spsa_step, train

__version__ = "0.1.0"
