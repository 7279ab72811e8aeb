"""The three evaluation metrics and their closed-form anchor points. Run:

    python demos/05_metrics.py
"""

import numpy as np

from svq.metrics import frechet_distance, frechet_from_features, miou, ssim

rng = np.random.Generator(np.random.PCG64(0))

x = rng.random((32, 32, 3))
print("ssim(x, x) = %.12f" % ssim(x, x))
a, b = np.full((16, 16), 0.2), np.full((16, 16), 0.8)
c1 = 0.01 ** 2
print("constant images: ssim %.6f  closed form %.6f"
      % (ssim(a, b), (2 * 0.2 * 0.8 + c1) / (0.2 ** 2 + 0.8 ** 2 + c1)))

gt = np.array([[0, 0], [1, 1]])
pred = np.array([[0, 1], [1, 1]])
value, per_class = miou(pred, gt, 2)
print("hand-counted mIOU: %.2f%% (IoU_0=1/2, IoU_1=2/3)" % value)

# FD-r between identical image sets is zero; between disjoint color
# distributions it is clearly positive
imgs = rng.random((24, 32, 32, 3)).astype(np.float32)
print("FD-r(identical sets) = %.2e" % frechet_distance(imgs, imgs))
dark = imgs * 0.25
print("FD-r(bright vs dark) = %.4f" % frechet_distance(imgs, dark))

# 1-D sanity: two Gaussians have closed-form distance (mu1-mu2)^2 + (s1-s2)^2
gauss = np.random.Generator(np.random.PCG64(4))
s1 = gauss.normal(0.0, 1.0, (10_000, 1))
s2 = gauss.normal(1.0, 1.5, (10_000, 1))
print("1-D Frechet: estimate %.4f  closed form %.4f"
      % (frechet_from_features(s1, s2), 1.0 + 0.25))
