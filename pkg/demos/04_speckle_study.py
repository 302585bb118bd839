"""
Speckle case study: denoising a flow map with the same pipeline
================================================================

A 'UK'-shaped vessel phantom is imaged as gated speckle frames. Local
speckle contrast over a 3x3 window gives a blood-flow index, which is
inverted into a noisy flow estimate. Patches from the left half train the
codec and latent diffusion model; the right half is denoised patch by
patch and stitched back together.

    python3 demos/04_speckle_study.py [out_dir]
"""

import sys

import numpy as np

from ctstandard import speckle
from ctstandard.phantom import gen_uk_phantom, simulate_gated_speckle

out_dir = sys.argv[1] if len(sys.argv) > 1 else "demo_out/speckle"

# Speckle contrast falls as more gates are averaged, so BFI rises roughly
# in proportion to the gate count.
flow = 0.2 + 0.8 * gen_uk_phantom(192)
stack = simulate_gated_speckle(flow, gates=10, seed=0, flow_gain=4.0, read_noise=0.02)
for n in (1, 5, 10):
    k = speckle.speckle_contrast(speckle.gate_average(stack, n))
    print(f"{n:2d} gates: median K_s {np.median(k):.3f}, median BFI {np.median(speckle.bfi(k)):6.1f}")

# A lighter configuration than the default study, to keep the demo short.
cfg = speckle.StudyConfig.from_dict({"train_stride": 2, "codec": {"epochs": 6}, "diffusion": {"epochs": 10}})
report = speckle.run_denoise_study(cfg, out_dir)
print(f"\n{report.n_train_patches} training patches, {report.n_test_patches} test patches")
for m in ("ssim", "psnr", "ccc"):
    print(f"{m.upper():>5}: {getattr(report, m + '_in'):.3f} -> {getattr(report, m + '_out'):.3f}")
print(f"report and PNGs in {out_dir}/")
