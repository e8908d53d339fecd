"""
Correlating simulated speckle frames
====================================

Instead of evaluating the correlation function in closed form, simulate
what the experiment records: frames of speckle on two sensors, lit by a
chaotic source. The covariance of the recorded intensities converges to
the analytic tensor.
"""

import numpy as np

from cpisim import gamma_map, ghost_image, make_slit_mask, paper_setup
from cpisim.speckle import estimate_gamma, fine_grid, g2_zero, generate_frames

cfg = paper_setup(z_b=92e-3)             # object in focus
mask = make_slit_mask(2, 99e-6, 198e-6)

frames = generate_frames(cfg, mask, n_frames=2000, seed=1, pixels_a=128, pixels_b=64)
print(f"{frames.n_frames} frames, S_a {frames.grid_a.n} px, S_b {frames.grid_b.n} px")

# Chaotic light: the intensity at one point is exponentially distributed.
print(f"g2(0) on S_a: {g2_zero(frames.intensities_a[:, 64]):.2f} (7.2 um pixels average a little)")

# %%
# Analytic reference integrated over the same pixels.
fa = fine_grid(128, cfg.pixel_dx, 3)
fb = fine_grid(64, cfg.pixel_du, 30)
ref = gamma_map(cfg, mask, fa, fb).values.reshape(128, 3, 64, 30).sum(axis=(1, 3))

for n in (200, 2000):
    est = estimate_gamma(frames.head(n)).values
    scale = np.sum(est * ref) / np.sum(ref * ref)
    err = np.sqrt(np.mean((est - scale * ref) ** 2)) / (scale * ref.max())
    print(f"N = {n:>5}: normalized RMSE {err:.3f}")

# %%
# Summing over S_b turns the correlation into a ghost image of the slits.
ghost = ghost_image(estimate_gamma(frames))
y = ghost.values / ghost.values.max()
for x, v in zip(ghost.x[40:88:3], y[40:88:3]):
    print(f"{x * 1e6:7.1f} um  {'#' * int(40 * max(v, 0))}")
