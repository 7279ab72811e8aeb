"""Patch discriminator and hinge losses turning a VQVAE into the GAN variant.

The discriminator maps an image to a score map over patches. Training uses
the hinge objective; the generator side is the plain non-saturating
-mean(D(fake)). With adversarial weight 0 the GAN variant reduces bitwise
to the plain VQVAE.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ConfigurationError
from .nn import Conv2d, Module


class PatchDiscriminator(Module):
    """Small CNN: (B, 3, H, W) image -> (B, 1, H/4, W/4) real/fake scores."""

    def __init__(self, channels=(32, 64), rng=None, dtype=np.float32):
        super().__init__()
        rng = rng if rng is not None else np.random.Generator(np.random.PCG64(0))
        ch0, ch1 = channels
        self.dtype = dtype
        self.c1 = self.sub("c1", Conv2d(3, ch0, 3, rng, stride=2, dtype=dtype))
        self.c2 = self.sub("c2", Conv2d(ch0, ch1, 3, rng, stride=2, dtype=dtype))
        self.head = self.sub("head", Conv2d(ch1, 1, 3, rng, dtype=dtype))

    def __call__(self, x):
        x = ad.leaky_relu(self.c1(x), 0.2)
        x = ad.leaky_relu(self.c2(x), 0.2)
        return self.head(x)


def _as_image_tensor(x, dtype):
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=dtype))


def d_loss(disc, real, fake):
    """Hinge discriminator loss mean(relu(1 - D(real))) + mean(relu(1 + D(fake))).

    The fake image is detached so the generator never receives gradients
    from the discriminator update.
    """
    real = _as_image_tensor(real, disc.dtype)
    fake = _as_image_tensor(fake, disc.dtype)
    if real.shape != fake.shape:
        raise ConfigurationError(f"shape mismatch {real.shape} vs {fake.shape}")
    d_real = disc(real)
    d_fake = disc(ad.detach(fake))
    return ad.mean(ad.relu(1.0 - d_real)) + ad.mean(ad.relu(1.0 + d_fake))


def g_loss(disc, fake):
    """Generator objective -mean(D(fake)); lower when D rates fakes higher."""
    fake = _as_image_tensor(fake, disc.dtype)
    return -ad.mean(disc(fake))
