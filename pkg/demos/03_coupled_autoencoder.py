"""Train the coupled autoencoder on a handful of scenes and inspect the
stop-gradient dependency structure. Run (about a minute):

    python demos/03_coupled_autoencoder.py
"""

from pathlib import Path

import numpy as np

from svq import autodiff as ad
from svq import pipeline
from svq.autoencoder import decode_image, decode_semantic, encode_joint
from svq.data import generate_dataset
from svq.metrics import miou, ssim

cfg = pipeline.RunConfig(variant="svqvae", n_train=8, batch_size=8,
                         steps_stage1=250, lr=1e-3, channels=(16, 32, 48),
                         k_image=128, k_semantic=32, latent_dim=32)
data = generate_dataset(8, seed=21)

out = Path("demo_out/coupled")
ckpt = pipeline.train_stage1(cfg, data, out_dir=out)
model, _ = pipeline.load_stage1(ckpt)

with ad.no_grad():
    z_x, z_s, _, _ = encode_joint(model, data)
    recon = decode_image(model, z_x, z_s).data
    logits = decode_semantic(model, z_s).data

gt = np.stack([s.image for s in data])
pred = np.argmax(logits, axis=-1)
maps = np.stack([s.semantics for s in data])
print("reconstruction MSE %.5f" % float(np.mean((recon - gt) ** 2)))
print("reconstruction SSIM %.4f" % float(np.mean([ssim(r, g) for r, g in zip(recon, gt)])))
print("semantic mIOU %.2f%%" % miou(pred.reshape(-1), maps.reshape(-1), 8)[0])

# the two latents are asymmetric by construction: image losses cannot
# reach the semantic branch
img = decode_image(model, z_x, z_s)
ad.mean(img * img).backward()
print("image-loss grad on semantic codebook:",
      model.semantic_codebook.entries.grad)
print("image-loss grad on image codebook is nonzero:",
      float(np.abs(model.image_codebook.entries.grad).max()) > 0)
print("reconstruction grids:", sorted(p.name for p in out.glob("recon_*.ppm")))
