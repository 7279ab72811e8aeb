"""Stage-1 models: the semantically coupled VQ autoencoder and the
decoupled two-model baseline.

The coupled model runs one shared encoder over the concatenated image and
one-hot semantics, splits the feature map channelwise into an image and a
semantic pre-latent, and quantizes each against its own codebook. The
semantic decoder sees only the semantic latent; the image decoder sees the
image latent plus a stop-gradient copy of the semantic latent, so the image
reconstruction can use semantic information without training it. The
baseline is two fully independent VQ models, one per modality.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .data import NUM_CLASSES, PairedSample
from .errors import ConfigurationError, DataError
from .nn import Conv2d, Module, ResBlock
from .quantizer import Codebook, LatentGrid, quantize, straight_through, vq_regularizers

DOWNSAMPLE_FACTOR = 4  # two stride-2 stages


def batch_arrays(samples, num_classes, dtype=np.float32):
    """Stack PairedSamples into (B,3,H,W) images and (B,H,W) class maps."""
    if isinstance(samples, PairedSample):
        samples = [samples]
    images = np.stack([s.image for s in samples]).astype(dtype)
    sems = np.stack([s.semantics for s in samples])
    if sems.min() < 0 or sems.max() >= num_classes:
        raise DataError(f"class id outside [0, {num_classes})")
    return np.ascontiguousarray(images.transpose(0, 3, 1, 2)), sems


class Encoder(Module):
    """Two stride-2 stages; the residual compute sits at the 8x8 bottleneck."""

    def __init__(self, c_in, out_dim, channels, rng, dtype=np.float32):
        super().__init__()
        ch0, ch1, ch2 = channels
        self.c_in = self.sub("c_in", Conv2d(c_in, ch0, 3, rng, dtype=dtype))
        self.down1 = self.sub("down1", Conv2d(ch0, ch1, 3, rng, stride=2, dtype=dtype))
        self.down2 = self.sub("down2", Conv2d(ch1, ch2, 3, rng, stride=2, dtype=dtype))
        self.res = self.sub("res", ResBlock(ch2, rng, dtype=dtype))
        self.out = self.sub("out", Conv2d(ch2, out_dim, 1, rng, padding=0, dtype=dtype))

    def __call__(self, x):
        x = ad.silu(self.c_in(x))
        x = ad.silu(self.down1(x))
        x = self.res(ad.silu(self.down2(x)))
        return self.out(x)


class Decoder(Module):
    def __init__(self, in_dim, c_out, channels, rng, dtype=np.float32, bounded=False):
        super().__init__()
        ch0, ch1, ch2 = channels
        self.bounded = bounded
        self.c_in = self.sub("c_in", Conv2d(in_dim, ch2, 3, rng, dtype=dtype))
        self.res = self.sub("res", ResBlock(ch2, rng, dtype=dtype))
        self.up1 = self.sub("up1", Conv2d(ch2, ch1, 3, rng, dtype=dtype))
        self.up2 = self.sub("up2", Conv2d(ch1, ch0, 3, rng, dtype=dtype))
        self.out = self.sub("out", Conv2d(ch0, c_out, 3, rng, dtype=dtype))

    def __call__(self, z):
        x = self.res(ad.silu(self.c_in(z)))
        x = ad.silu(self.up1(ad.upsample2x(x)))
        x = ad.silu(self.up2(ad.upsample2x(x)))
        x = self.out(x)
        return ad.sigmoid(x) if self.bounded else x


class SemanticDecoder(Module):
    """Class-logit decoder with a sub-pixel head.

    The last 2x upsampling is a pixel shuffle of a 4C-channel 3x3 conv at
    half resolution: each output pixel gets its own filter instead of a
    shared post-upsample kernel, which keeps shape boundaries crisp where
    nearest-upsample-plus-conv smears them.
    """

    def __init__(self, in_dim, c_out, channels, rng, dtype=np.float32):
        super().__init__()
        _, ch1, ch2 = channels
        self.c_in = self.sub("c_in", Conv2d(in_dim, ch2, 3, rng, dtype=dtype))
        self.res = self.sub("res", ResBlock(ch2, rng, dtype=dtype))
        self.up1 = self.sub("up1", Conv2d(ch2, ch1, 3, rng, dtype=dtype))
        self.mix = self.sub("mix", Conv2d(ch1, ch1, 3, rng, dtype=dtype))
        self.head = self.sub("head", Conv2d(ch1, 4 * c_out, 3, rng, dtype=dtype))

    def __call__(self, z):
        x = self.res(ad.silu(self.c_in(z)))
        x = ad.silu(self.up1(ad.upsample2x(x)))
        x = ad.silu(self.mix(x))
        return ad.pixel_shuffle2x(self.head(x))


def _to_nchw(latents):
    """(B, H, W, D) latent Tensor -> (B, D, H, W)."""
    return ad.transpose(latents, (0, 3, 1, 2))


def _pixel_cross_entropy(logits, sems, num_classes):
    """Mean per-pixel cross-entropy; logits (B,C,H,W), targets (B,H,W)."""
    onehot = ad.one_hot(sems, num_classes, dtype=logits.dtype).transpose(0, 3, 1, 2)
    logp = ad.log_softmax(logits, axis=1)
    return ad.mean(ad.tsum(Tensor(-onehot) * logp, axis=1))


class CoupledAutoencoder(Module):
    """Shared encoder, dual decoders, two codebooks, stop-gradient coupling."""

    def __init__(self, image_size=32, num_classes=NUM_CLASSES, latent_dim=64,
                 k_image=512, k_semantic=64, channels=(32, 64, 96),
                 lam=0.1, beta=0.25, rng=None, dtype=np.float32):
        super().__init__()
        if lam < 0:
            raise ConfigurationError(f"lambda must be >= 0, got {lam}")
        if image_size % DOWNSAMPLE_FACTOR != 0:
            raise ConfigurationError(f"image size {image_size} not divisible by {DOWNSAMPLE_FACTOR}")
        rng = rng if rng is not None else np.random.Generator(np.random.PCG64(0))
        self.image_size = image_size
        self.num_classes = num_classes
        self.latent_dim = latent_dim
        self.latent_size = image_size // DOWNSAMPLE_FACTOR
        self.lam = float(lam)
        self.beta = float(beta)
        self.dtype = dtype
        self.encoder = self.sub("encoder", Encoder(3 + num_classes, 2 * latent_dim,
                                                   channels, rng, dtype))
        self.image_decoder = self.sub("image_decoder", Decoder(2 * latent_dim, 3,
                                                               channels, rng, dtype,
                                                               bounded=True))
        self.semantic_decoder = self.sub("semantic_decoder",
                                         SemanticDecoder(latent_dim, num_classes,
                                                         channels, rng, dtype))
        self.image_codebook = Codebook(k_image, latent_dim, rng, dtype,
                                       codebook_id="image")
        self.semantic_codebook = Codebook(k_semantic, latent_dim, rng, dtype,
                                          codebook_id="semantic")
        self._params["image_codebook.entries"] = self.image_codebook.entries
        self._params["semantic_codebook.entries"] = self.semantic_codebook.entries

    # forward pieces -------------------------------------------------------

    def encode_pre(self, images_nchw, sems):
        """One encoder pass -> (pre_x, pre_s), each (B, H_z, W_z, D)."""
        onehot = ad.one_hot(sems, self.num_classes, dtype=self.dtype).transpose(0, 3, 1, 2)
        inp = Tensor(np.concatenate([images_nchw.astype(self.dtype), onehot], axis=1))
        feats = self.encoder(inp)
        feats = ad.transpose(feats, (0, 2, 3, 1))
        pre_x = feats[:, :, :, :self.latent_dim]
        pre_s = feats[:, :, :, self.latent_dim:]
        return pre_x, pre_s

    def decode_image_latents(self, zq_x, zq_s):
        """Image decoder on embedded latents; semantic side stop-gradiented."""
        z = ad.concat([_to_nchw(zq_x), ad.stop_gradient(_to_nchw(zq_s))], axis=1)
        return self.image_decoder(z)

    def decode_semantic_latents(self, zq_s):
        return self.semantic_decoder(_to_nchw(zq_s))

    def embed_grid(self, grid, codebook):
        grid.validate(codebook)
        idx = grid.indices[None] if grid.indices.ndim == 2 else grid.indices
        return ad.embedding(codebook.entries, idx)


def _as_grid_batch(grids):
    if isinstance(grids, LatentGrid):
        return [grids], True
    return list(grids), False


def encode_joint(model, sample):
    """Encode a PairedSample (or list) into image/semantic latent grids.

    Returns (z_x, z_s, pre_x, pre_s); grids are LatentGrids (lists for
    batched input), pre-latents are (B, H_z, W_z, D) Tensors.
    """
    images, sems = batch_arrays(sample, model.num_classes, model.dtype)
    pre_x, pre_s = model.encode_pre(images, sems)
    z_x, q_x = quantize(pre_x, model.image_codebook)
    z_s, q_s = quantize(pre_s, model.semantic_codebook)
    del q_x, q_s
    if isinstance(sample, PairedSample):
        return z_x[0], z_s[0], pre_x, pre_s
    return z_x, z_s, pre_x, pre_s


def decode_image(model, z_x, z_s):
    """Decode latent grids to an image in [0,1], shape (H, W, 3).

    The embedded semantic latent enters through a stop-gradient, so image
    losses cannot train the semantic codebook or anything behind it.
    """
    grids_x, single = _as_grid_batch(z_x)
    grids_s, _ = _as_grid_batch(z_s)
    for g in grids_x:
        g.validate(model.image_codebook)
    for g in grids_s:
        g.validate(model.semantic_codebook)
    emb_x = ad.embedding(model.image_codebook.entries,
                         np.stack([g.indices for g in grids_x]))
    emb_s = ad.embedding(model.semantic_codebook.entries,
                         np.stack([g.indices for g in grids_s]))
    out = model.decode_image_latents(emb_x, emb_s)
    out = ad.transpose(out, (0, 2, 3, 1))
    return out[0] if single else out


def decode_semantic(model, z_s):
    """Decode a semantic latent grid to per-pixel class logits (H, W, C)."""
    grids, single = _as_grid_batch(z_s)
    for g in grids:
        g.validate(model.semantic_codebook)
    emb = ad.embedding(model.semantic_codebook.entries,
                       np.stack([g.indices for g in grids]))
    logits = ad.transpose(model.decode_semantic_latents(emb), (0, 2, 3, 1))
    return logits[0] if single else logits


def svq_forward(model, sample, lam=None, discriminator=None, gan_weight=0.0,
                generator_loss=None):
    """Full coupled forward pass; returns (total, parts, aux).

    total = image branch + lambda * semantic branch, where the image branch
    is pixel MSE + image codebook/commitment (+ the weighted adversarial
    generator term when a discriminator is supplied) and the semantic
    branch is per-pixel cross-entropy + semantic codebook/commitment.
    """
    lam = model.lam if lam is None else float(lam)
    if lam < 0:
        raise ConfigurationError(f"lambda must be >= 0, got {lam}")
    images, sems = batch_arrays(sample, model.num_classes, model.dtype)
    pre_x, pre_s = model.encode_pre(images, sems)
    grids_x, q_x = quantize(pre_x, model.image_codebook)
    grids_s, q_s = quantize(pre_s, model.semantic_codebook)
    st_x = straight_through(pre_x, q_x)
    st_s = straight_through(pre_s, q_s)

    x_hat = model.decode_image_latents(st_x, st_s)
    diff = x_hat - Tensor(images.astype(model.dtype))
    image_recon = ad.mean(diff * diff)
    cb_x, com_x = vq_regularizers(pre_x, model.image_codebook,
                                  np.stack([g.indices for g in grids_x]))
    logits = model.decode_semantic_latents(st_s)
    semantic_ce = _pixel_cross_entropy(logits, sems, model.num_classes)
    cb_s, com_s = vq_regularizers(pre_s, model.semantic_codebook,
                                  np.stack([g.indices for g in grids_s]))

    image_branch = image_recon + cb_x + model.beta * com_x
    parts = {
        "image_recon": image_recon.item(),
        "codebook_x": cb_x.item(),
        "commit_x": com_x.item(),
        "semantic_ce": semantic_ce.item(),
        "codebook_s": cb_s.item(),
        "commit_s": com_s.item(),
    }
    if discriminator is not None and gan_weight > 0.0:
        from .adversarial import g_loss
        gan_g = g_loss(discriminator, x_hat) if generator_loss is None else generator_loss
        image_branch = image_branch + gan_weight * gan_g
        parts["gan_g"] = gan_g.item()
    semantic_branch = semantic_ce + cb_s + model.beta * com_s
    total = image_branch + lam * semantic_branch
    aux = {"x_hat": x_hat, "logits": logits, "grids_x": grids_x, "grids_s": grids_s,
           "pre_x": pre_x, "pre_s": pre_s}
    return total, parts, aux


def svq_loss(model, sample, lam=None, discriminator=None, gan_weight=0.0):
    """Coupled training loss; returns (total Tensor, parts dict)."""
    total, parts, _ = svq_forward(model, sample, lam=lam,
                                  discriminator=discriminator, gan_weight=gan_weight)
    return total, parts


class VQModel(Module):
    """Independent single-modality VQ autoencoder (baseline building block)."""

    def __init__(self, c_in, c_out, latent_dim, k, channels, rng,
                 dtype=np.float32, bounded=False, semantic=False,
                 codebook_id="codebook", beta=0.25):
        super().__init__()
        self.latent_dim = latent_dim
        self.beta = float(beta)
        self.dtype = dtype
        self.encoder = self.sub("encoder", Encoder(c_in, latent_dim, channels, rng, dtype))
        if semantic:
            decoder = SemanticDecoder(latent_dim, c_out, channels, rng, dtype)
        else:
            decoder = Decoder(latent_dim, c_out, channels, rng, dtype, bounded=bounded)
        self.decoder = self.sub("decoder", decoder)
        self.codebook = Codebook(k, latent_dim, rng, dtype, codebook_id=codebook_id)
        self._params["codebook.entries"] = self.codebook.entries

    def encode_pre(self, x_nchw):
        return ad.transpose(self.encoder(Tensor(x_nchw.astype(self.dtype))), (0, 2, 3, 1))

    def vq_parts(self, x_nchw):
        pre = self.encode_pre(x_nchw)
        grids, q = quantize(pre, self.codebook)
        st = straight_through(pre, q)
        recon = self.decoder(_to_nchw(st))
        cb, com = vq_regularizers(pre, self.codebook,
                                  np.stack([g.indices for g in grids]))
        return recon, cb, com, grids, pre


class DecoupledBaseline(Module):
    """Two independent VQ models: one over images, one over semantics."""

    def __init__(self, image_size=32, num_classes=NUM_CLASSES, latent_dim=64,
                 k_image=512, k_semantic=64, channels=(32, 64, 96),
                 beta=0.25, rng=None, dtype=np.float32):
        super().__init__()
        rng = rng if rng is not None else np.random.Generator(np.random.PCG64(0))
        self.image_size = image_size
        self.num_classes = num_classes
        self.latent_dim = latent_dim
        self.latent_size = image_size // DOWNSAMPLE_FACTOR
        self.beta = float(beta)
        self.dtype = dtype
        self.image_vq = self.sub("image_vq", VQModel(3, 3, latent_dim, k_image, channels,
                                                     rng, dtype, bounded=True,
                                                     codebook_id="image", beta=beta))
        self.semantic_vq = self.sub("semantic_vq", VQModel(num_classes, num_classes,
                                                           latent_dim, k_semantic, channels,
                                                           rng, dtype, semantic=True,
                                                           codebook_id="semantic", beta=beta))

    def encode_semantics(self, sems):
        onehot = ad.one_hot(sems, self.num_classes, dtype=self.dtype).transpose(0, 3, 1, 2)
        pre = self.semantic_vq.encode_pre(onehot)
        grids, _ = quantize(pre, self.semantic_vq.codebook)
        return grids

    def encode_images(self, images_nchw):
        pre = self.image_vq.encode_pre(images_nchw)
        grids, _ = quantize(pre, self.image_vq.codebook)
        return grids


def baseline_forward(baseline, sample, discriminator=None, gan_weight=0.0):
    """Independent losses for the two baseline sub-models.

    Returns (image_loss, semantic_loss, parts, aux); no term mixes
    parameters of the two sub-models.
    """
    images, sems = batch_arrays(sample, baseline.num_classes, baseline.dtype)
    x_hat, cb_x, com_x, _, _ = baseline.image_vq.vq_parts(images)
    diff = x_hat - Tensor(images.astype(baseline.dtype))
    image_recon = ad.mean(diff * diff)
    image_loss = image_recon + cb_x + baseline.beta * com_x
    parts = {
        "image_recon": image_recon.item(),
        "codebook_x": cb_x.item(),
        "commit_x": com_x.item(),
    }
    if discriminator is not None and gan_weight > 0.0:
        from .adversarial import g_loss
        gan_g = g_loss(discriminator, x_hat)
        image_loss = image_loss + gan_weight * gan_g
        parts["gan_g"] = gan_g.item()

    onehot = ad.one_hot(sems, baseline.num_classes, dtype=baseline.dtype).transpose(0, 3, 1, 2)
    logits, cb_s, com_s, _, _ = baseline.semantic_vq.vq_parts(onehot)
    semantic_ce = _pixel_cross_entropy(logits, sems, baseline.num_classes)
    semantic_loss = semantic_ce + cb_s + baseline.beta * com_s
    parts.update({
        "semantic_ce": semantic_ce.item(),
        "codebook_s": cb_s.item(),
        "commit_s": com_s.item(),
    })
    return image_loss, semantic_loss, parts, {"x_hat": x_hat, "logits": logits}


def baseline_losses(baseline, sample, discriminator=None, gan_weight=0.0):
    """(image_loss, semantic_loss) for the decoupled baseline."""
    image_loss, semantic_loss, parts, _ = baseline_forward(
        baseline, sample, discriminator=discriminator, gan_weight=gan_weight)
    return image_loss, semantic_loss, parts
