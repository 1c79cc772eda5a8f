"""Draw spectra at each difficulty and look at the datasets and their splits."""

from collections import Counter

import numpy as np

from quanvnn import build_hard_dataset, build_mixed_dataset, generate_spectrum, stratified_split
from quanvnn.specgen import PRESETS, placement_pdf

rng = np.random.default_rng(3)
for name, preset in PRESETS.items():
    s = generate_spectrum(preset, rng)
    print(f"{name:>6}: {s.count} peaks at {np.round(s.label.positions[:s.count], 3)}, max {s.points.max():.2f}, "
          f"argmax {s.points.argmax()}")

x = np.linspace(0, 1, 11)
print("placement density (easy):", np.round(placement_pdf(x, PRESETS["easy"].placement_mu,
                                                           PRESETS["easy"].placement_sigma), 3))

mixed = build_mixed_dataset(0)
print("mixed:", Counter(s.difficulty for s in mixed), "zero-peak:", sum(s.count == 0 for s in mixed))
print("mixed splits:", [len(p) for p in stratified_split(mixed, seed=0)])
print("hard splits:", [len(p) for p in stratified_split(build_hard_dataset(0), seed=0)])
