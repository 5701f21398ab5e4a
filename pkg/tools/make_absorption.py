"""Regenerate src/ch4map/data/synthetic_ch4_absorption.txt.

Lorentzian lines with pseudo-random positions and strengths under a band
envelope centred near 2310 nm, plus a weaker band near 2200 nm. Values are
scaled so the 9 nm band-averaged absorption peaks near 1.5e-5 per ppm·m.
"""

from pathlib import Path

import numpy as np

rng = np.random.default_rng(20240309)
grid = np.round(np.arange(1950.0, 2600.0 + 1e-9, 0.1), 1)
k = np.zeros_like(grid)
for center, width, n_lines, strength in [(2310.0, 45.0, 160, 1.0), (2205.0, 25.0, 50, 0.35)]:
    pos = rng.normal(center, width, n_lines)
    amp = strength * rng.lognormal(0.0, 0.6, n_lines) * np.exp(-0.5 * ((pos - center) / width) ** 2)
    hwhm = rng.uniform(0.15, 0.5, n_lines)
    for p, a, h in zip(pos, amp, hwhm):
        k += a * h**2 / ((grid - p) ** 2 + h**2)

sigma = 9.0 / 2.3548
kernel = np.exp(-0.5 * (np.arange(-400, 401) * 0.1 / sigma) ** 2)
smooth = np.convolve(k, kernel / kernel.sum(), mode="same")
k *= 1.5e-5 / smooth.max()

out = Path(__file__).resolve().parents[1] / "src" / "ch4map" / "data" / "synthetic_ch4_absorption.txt"
np.savetxt(out, np.column_stack([grid, k]), fmt="%.1f %.6e",
           header="synthetic methane-like unit absorption\nwavelength_nm k_per_ppm_m")
print(out, k.max(), smooth.max())
