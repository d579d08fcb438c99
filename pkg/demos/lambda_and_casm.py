"""Inspect the adaptive weighting and the spectral mixer without training anything.

Run: python demos/lambda_and_casm.py
"""

import numpy as np

from spdda.sdm import build_mixer
from spdda.sscom import lambda_schedule

# Spatial fidelity low and continuity high pushes lambda toward 2; the reverse pushes it toward 0.
print("lambda over (l_sf, l_sc):")
sf_values = [0.02, 0.1, 0.2, 0.5]
sc_values = [0.0, 0.25, 0.5, 1.0, 2.0]
print("  l_sf \\ l_sc " + "".join(f"{v:>9.2f}" for v in sc_values))
for sf in sf_values:
    print(f"  {sf:>11.2f} " + "".join(f"{lambda_schedule(sf, sc):>9.4f}" for sc in sc_values))

# Taps whose Gaussian weight exceeds sigma are dropped before the softmax, so a small sigma removes
# the peak and leaves a flat spread over the neighbours while a large sigma keeps a smooth bump.
sigmas = np.array([0.05, 0.3, 1.0, 3.0])
mixer = build_mixer(sigmas)
np.set_printoptions(precision=3, suppress=True, linewidth=140)
print("\nmixing kernels, 21 taps each, rows sum to one:")
for s, row in zip(sigmas, mixer.weights):
    print(f"  sigma {s:<5} kept {np.count_nonzero(row):>2} taps  centre {row[10]:.3f}")
print(mixer.weights)
