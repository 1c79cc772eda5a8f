"""Embed a window, run the three ansatz families, and compare gradient routes."""

import numpy as np

from quanvnn import (adjoint_grad, amplitude_embed, build_random, build_strongly_entangling, build_two_design,
                     param_shift_grad, run_circuit)
from quanvnn.quantum import readout_damping

rng = np.random.default_rng(0)
window = rng.random(32)
psi = amplitude_embed(window)
print("embedded norm:", np.linalg.norm(psi))

# the same 32-point window through each family
for circuit in (build_strongly_entangling(), build_two_design(), build_random(42, 30)):
    theta = rng.uniform(-np.pi, np.pi, circuit.n_params)
    z = run_circuit(window, circuit, theta)
    shift = param_shift_grad(window, circuit, theta)
    adj = adjoint_grad(window, circuit, theta)
    print(f"{circuit.label:>22}: {circuit.n_params:2d} angles, <Z> = {np.round(z, 3)}, "
          f"|shift - adjoint| = {np.abs(shift - adj).max():.1e}")

# readout damping pulls every expectation toward +1
for gamma in (0.0, 0.1, 0.5, 1.0):
    print(f"gamma={gamma}: {np.round(readout_damping(z, gamma), 3)}")
