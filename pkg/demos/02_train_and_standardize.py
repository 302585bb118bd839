"""
Latent diffusion standardization, end to end
============================================

Trains the codec (encoder + decoder) on both kernels, freezes it, trains
the conditional latent denoiser on (smooth, sharp) pairs and then maps a
held-out smooth slice towards the sharp kernel.

Hyperparameters come from ``configs/acceptance.json``; expect about ten
minutes on one CPU core.

    python3 demos/02_train_and_standardize.py [out_dir]
"""

import os
import sys

import numpy as np

from ctstandard import codec as cm
from ctstandard import diffusion as dm
from ctstandard import evaluation as ev
from ctstandard import phantom
from ctstandard.cli import RunConfig
from ctstandard.dataio import ImageTensor, Unit, WindowLevel, render_png, save_checkpoint

out_dir = sys.argv[1] if len(sys.argv) > 1 else "demo_out/standardize"
os.makedirs(out_dir, exist_ok=True)

run = RunConfig.load(os.path.join(os.path.dirname(__file__), "..", "configs", "acceptance.json"))
train = phantom.gen_paired_dataset(seed=1, n=64, size=128)
test = phantom.gen_paired_dataset(seed=2, n=4, size=128)

# Stage 1: the codec sees every image from both domains.
ccfg = run.codec_config()
rows = []
codec_ckpt = cm.train_codec([s.a for s in train] + [s.b for s in train], ccfg, rows)
print(f"codec: {len(rows)} steps, final recon MSE {rows[-1][1]:.4f} (normalized units)")

codec = cm.Codec.from_checkpoint(codec_ckpt)
recon = codec.decode(codec.encode(test[0].b))
print(f"codec PSNR on a held-out sharp slice: {ev.psnr(recon, test[0].b, peak=1400):.1f} dB")

# Stage 2: the denoiser learns B latents conditioned on A latents.
# The codec checkpoint is never touched from here on.
dcfg = run.diffusion_config()
drows = []
diff_ckpt = dm.train_diffusion(codec_ckpt, train, dcfg, drows)
print(f"diffusion: L1 noise loss {drows[0][1]:.3f} -> {np.mean([r[1] for r in drows[-20:]]):.3f}")
print(f"held-out loss {dm.diffusion_loss(codec_ckpt, diff_ckpt, test):.3f}")

save_checkpoint(codec_ckpt, f"{out_dir}/codec.ctck")
save_checkpoint(diff_ckpt, f"{out_dir}/diffusion.ctck")

# Stage 3: standardize. Sampling is seeded, so the output is reproducible.
std = dm.Standardizer(codec_ckpt, diff_ckpt)
soft = WindowLevel(-160, 240)
for i, s in enumerate(test):
    out = std(s.a, seed=i)
    za, zb, zs = codec.encode(s.a), codec.encode(s.b), codec.encode(out)
    print(f"slice {i}: latent distance to B {np.linalg.norm(za - zb):.2f} -> {np.linalg.norm(zs - zb):.2f}, "
          f"PSNR vs B {ev.psnr(s.a, s.b, 1400):.1f} -> {ev.psnr(out, s.b, 1400):.1f} dB")
    for name, img in (("input", s.a), ("standardized", out), ("target", s.b)):
        render_png(ImageTensor(img.astype(np.float32), Unit.HU), soft, f"{out_dir}/{i}_{name}.png")
print(f"checkpoints and images in {out_dir}/")
