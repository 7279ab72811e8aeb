"""The discrete bottleneck in isolation.

Shows nearest-vector quantization against a brute-force check, the
straight-through estimator's identity backward pass, and the two
regularizer terms. Run:

    python demos/02_quantizer.py
"""

import numpy as np

from svq import autodiff as ad
from svq.quantizer import Codebook, quantize, straight_through, vq_regularizers

rng = np.random.Generator(np.random.PCG64(0))
codebook = Codebook(8, 4, rng, dtype=np.float64)
pre = ad.Tensor(rng.standard_normal((3, 3, 4)), requires_grad=True)

grid, quantized = quantize(pre, codebook)
print("assignments:\n", grid.indices)

# brute force agreement on every cell
flat = pre.data.reshape(-1, 4)
dists = ((flat[:, None, :] - codebook.entries.data[None]) ** 2).sum(-1)
assert np.array_equal(np.argmin(dists, axis=1).reshape(3, 3), grid.indices)
print("matches exhaustive nearest-neighbor search: True")

st = straight_through(pre, quantized)
print("forward equals quantized bitwise:", np.array_equal(st.data, quantized.data))

upstream = rng.standard_normal(st.shape)
st.backward(upstream)
print("backward is exactly identity:", np.array_equal(pre.grad, upstream))

cb_loss, commit = vq_regularizers(pre, codebook, grid.indices)
print("codebook loss %.4f  commitment loss %.4f" % (cb_loss.item(), commit.item()))
cb_loss.backward()
print("codebook loss trains only the codebook:", pre.grad is not None,
      "(encoder grad is the straight-through one from above)")
print("usage counts:", codebook.usage_counts)
