"""Stage 2 in isolation: overfit the conditional transformer on a few token
sequences, then sample image latents back out greedily. Run (1-2 minutes):

    python demos/04_latent_transformer.py
"""

import numpy as np

from svq.nn import Adam
from svq.quantizer import LatentGrid
from svq.transformer import (TransformerModel, conditional_nll, pack_sequence,
                             sample, unpack_sequence)

rng = np.random.Generator(np.random.PCG64(0))
K_S, K_X = 16, 64
model = TransformerModel(k_semantic=K_S, k_image=K_X, sem_shape=(4, 4), img_shape=(4, 4),
                         width=64, blocks=2, heads=4, rng=rng)

# four fixed (semantic, image) latent pairs to memorize
pairs = [(rng.integers(0, K_S, (4, 4)), rng.integers(0, K_X, (4, 4))) for _ in range(4)]
tokens = np.stack([pack_sequence(LatentGrid(s, "semantic"), LatentGrid(x, "image"),
                                 K_S, K_X).tokens for s, x in pairs])
print("sequence layout: 16 semantic tokens + 16 image tokens =", tokens.shape[1])
print("uniform NLL would be ln(%d) = %.3f nats/token" % (K_X, np.log(K_X)))

opt = Adam(model.parameters(), lr=1e-3)
for step in range(600):
    loss = conditional_nll(model, tokens)
    opt.zero_grad()
    loss.backward()
    opt.step()
    if step % 100 == 0 or step == 599:
        print("step %4d  nll %.4f" % (step, loss.item()))

hits = 0
for s, x in pairs:
    drawn = sample(model, LatentGrid(s, "semantic"), top_k=1, seed=0)
    hits += int(np.array_equal(drawn.indices, x))
print("greedy decoding reproduces %d/4 memorized grids" % hits)

seq = pack_sequence(LatentGrid(pairs[0][0], "semantic"),
                    LatentGrid(pairs[0][1], "image"), K_S, K_X)
z_s, z_x = unpack_sequence(seq)
print("pack/unpack round trip:", np.array_equal(z_x.indices, pairs[0][1]))
