"""Causal transformer over latent token sequences.

Sequences are the row-major semantic grid followed by the row-major image
grid, in one shared vocabulary where image ids are offset by the semantic
codebook size. The model is trained on the conditional likelihood of the
image tokens given the full semantic prefix; semantic positions contribute
context but never loss. Sampling is ancestral, seeded, and reproducible.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ConfigurationError, DataError
from .nn import Embedding, LayerNorm, Linear, Module
from .quantizer import LatentGrid


@dataclass
class TokenSequence:
    """[semantic tokens | image tokens] with the shared offset vocabulary."""

    tokens: np.ndarray
    sem_shape: tuple
    img_shape: tuple
    k_semantic: int
    k_image: int

    def __post_init__(self):
        self.tokens = np.asarray(self.tokens, dtype=np.int64)
        n_s, n_x = self.n_semantic, self.n_image
        if self.tokens.shape != (n_s + n_x,):
            raise DataError(
                f"token length {self.tokens.shape} != layout ({n_s} + {n_x},)"
            )
        sem, img = self.tokens[:n_s], self.tokens[n_s:]
        if sem.size and (sem.min() < 0 or sem.max() >= self.k_semantic):
            raise DataError(f"semantic ids must lie in [0, {self.k_semantic})")
        if img.size and (img.min() < self.k_semantic or
                         img.max() >= self.k_semantic + self.k_image):
            raise DataError(
                f"image ids must lie in [{self.k_semantic}, {self.k_semantic + self.k_image})"
            )

    @property
    def n_semantic(self):
        return self.sem_shape[0] * self.sem_shape[1]

    @property
    def n_image(self):
        return self.img_shape[0] * self.img_shape[1]

    @property
    def vocab_size(self):
        return self.k_semantic + self.k_image


def pack_sequence(z_s, z_x, k_semantic, k_image):
    """Flatten both grids row-major, offset image ids, concatenate."""
    z_s = z_s if isinstance(z_s, LatentGrid) else LatentGrid(z_s, "semantic")
    z_x = z_x if isinstance(z_x, LatentGrid) else LatentGrid(z_x, "image")
    sem = z_s.flatten()
    img = z_x.flatten()
    if sem.size and (sem.min() < 0 or sem.max() >= k_semantic):
        raise DataError(f"semantic index outside [0, {k_semantic})")
    if img.size and (img.min() < 0 or img.max() >= k_image):
        raise DataError(f"image index outside [0, {k_image})")
    tokens = np.concatenate([sem, img + k_semantic])
    return TokenSequence(tokens, z_s.shape, z_x.shape, k_semantic, k_image)


def unpack_sequence(seq):
    """Inverse of pack_sequence: (z_s, z_x) latent grids."""
    n_s = seq.n_semantic
    z_s = LatentGrid.from_tokens(seq.tokens[:n_s], seq.sem_shape, "semantic")
    z_x = LatentGrid.from_tokens(seq.tokens[n_s:] - seq.k_semantic, seq.img_shape, "image")
    return z_s, z_x


class TransformerModel(Module):
    """Decoder-only transformer; output head covers the image vocabulary."""

    def __init__(self, k_semantic, k_image, sem_shape, img_shape,
                 width=128, blocks=4, heads=4, rng=None, dtype=np.float32):
        super().__init__()
        if width % heads != 0:
            raise ConfigurationError(f"width {width} not divisible by heads {heads}")
        rng = rng if rng is not None else np.random.Generator(np.random.PCG64(0))
        self.k_semantic = k_semantic
        self.k_image = k_image
        self.sem_shape = tuple(sem_shape)
        self.img_shape = tuple(img_shape)
        self.n_semantic = sem_shape[0] * sem_shape[1]
        self.n_image = img_shape[0] * img_shape[1]
        self.n_total = self.n_semantic + self.n_image
        self.width = width
        self.heads = heads
        self.dtype = dtype
        self.tok_emb = self.sub("tok_emb", Embedding(k_semantic + k_image, width, rng, dtype))
        self.pos_emb = self.param("pos_emb",
                                  (rng.standard_normal((self.n_total, width)) * 0.02).astype(dtype))
        self.blocks = []
        for i in range(blocks):
            blk = Block(width, heads, rng, dtype)
            self.sub(f"block{i}", blk)
            self.blocks.append(blk)
        self.ln_f = self.sub("ln_f", LayerNorm(width, dtype))
        self.head = self.sub("head", Linear(width, k_image, rng, dtype))
        # strictly-upper -inf additive mask; exp underflows to exact zero,
        # which is what makes causality bitwise rather than approximate
        mask = np.zeros((self.n_total, self.n_total), dtype=dtype)
        mask[np.triu_indices(self.n_total, k=1)] = -np.inf
        self._mask = mask

    def __call__(self, tokens):
        """tokens (B, T) ints -> logits Tensor (B, T, k_image)."""
        tokens = np.asarray(tokens)
        if tokens.ndim != 2:
            raise DataError(f"expected (B, T) tokens, got {tokens.shape}")
        b, t = tokens.shape
        if t > self.n_total:
            raise DataError(f"sequence length {t} exceeds maximum {self.n_total}")
        if tokens.min() < 0 or tokens.max() >= self.k_semantic + self.k_image:
            raise DataError("token id outside the unified vocabulary")
        h = self.tok_emb(tokens) + self.pos_emb[:t, :]
        mask = self._mask[:t, :t]
        for blk in self.blocks:
            h = blk(h, mask)
        return self.head(self.ln_f(h))


class Block(Module):
    def __init__(self, width, heads, rng, dtype):
        super().__init__()
        self.width = width
        self.heads = heads
        self.ln1 = self.sub("ln1", LayerNorm(width, dtype))
        self.qkv = self.sub("qkv", Linear(width, 3 * width, rng, dtype))
        self.proj = self.sub("proj", Linear(width, width, rng, dtype,
                                            scale=np.sqrt(1.0 / width) * 0.5))
        self.ln2 = self.sub("ln2", LayerNorm(width, dtype))
        self.fc1 = self.sub("fc1", Linear(width, 4 * width, rng, dtype))
        self.fc2 = self.sub("fc2", Linear(4 * width, width, rng, dtype,
                                          scale=np.sqrt(1.0 / (4 * width)) * 0.5))

    def __call__(self, h, mask):
        b, t = h.shape[0], h.shape[1]
        w, nh = self.width, self.heads
        hd = w // nh
        a = self.ln1(h)
        qkv = self.qkv(a)
        q = _split_heads(qkv[:, :, 0 * w:1 * w], nh, hd)
        k = _split_heads(qkv[:, :, 1 * w:2 * w], nh, hd)
        v = _split_heads(qkv[:, :, 2 * w:3 * w], nh, hd)
        scores = ad.matmul(q, ad.transpose(k, (0, 1, 3, 2))) * (1.0 / np.sqrt(hd))
        scores = scores + Tensor(mask)
        att = ad.exp(ad.log_softmax(scores, axis=-1))
        o = ad.matmul(att, v)
        o = ad.reshape(ad.transpose(o, (0, 2, 1, 3)), (b, t, w))
        h = h + self.proj(o)
        m = self.ln2(h)
        return h + self.fc2(ad.silu(self.fc1(m)))


def _split_heads(x, heads, head_dim):
    b, t = x.shape[0], x.shape[1]
    return ad.transpose(ad.reshape(x, (b, t, heads, head_dim)), (0, 2, 1, 3))


def _validate_layout(model, tokens):
    tokens = np.asarray(tokens)
    if tokens.ndim == 1:
        tokens = tokens[None]
    if tokens.shape[1] != model.n_total:
        raise DataError(
            f"sequence length {tokens.shape[1]} != layout {model.n_semantic}+{model.n_image}"
        )
    sem = tokens[:, :model.n_semantic]
    img = tokens[:, model.n_semantic:]
    if sem.min() < 0 or sem.max() >= model.k_semantic:
        raise DataError("semantic segment outside its id range")
    if img.min() < model.k_semantic or img.max() >= model.k_semantic + model.k_image:
        raise DataError("image segment outside its id range")
    return tokens


def conditional_nll(model, seq):
    """Mean negative log-likelihood per image token.

    Position i >= n_s is predicted from all semantic tokens plus image
    tokens before i; the first image token is predicted from the full
    semantic prefix. Semantic positions contribute no loss terms.
    """
    tokens = seq.tokens if isinstance(seq, TokenSequence) else seq
    tokens = _validate_layout(model, tokens)
    n_s, n_x = model.n_semantic, model.n_image
    logits = model(tokens)
    pred = logits[:, n_s - 1:n_s + n_x - 1, :]
    targets = tokens[:, n_s:] - model.k_semantic
    logp = ad.log_softmax(pred, axis=-1)
    onehot = ad.one_hot(targets, model.k_image, dtype=logp.dtype)
    return -ad.mean(ad.tsum(Tensor(onehot) * logp, axis=-1))


def sample(model, z_s, temperature=1.0, top_k=None, seed=0):
    """Ancestral sampling of an image latent grid given a semantic grid.

    Logits are divided by temperature, truncated to the top_k best ids
    (stable order, so ties resolve to the lowest index), renormalized, and
    drawn with a per-call seeded generator. top_k=1 is greedy argmax and
    ignores temperature.
    """
    if temperature <= 0:
        raise ConfigurationError(f"temperature must be > 0, got {temperature}")
    top_k = model.k_image if top_k is None else int(top_k)
    if top_k < 1:
        raise ConfigurationError(f"top_k must be >= 1, got {top_k}")
    if top_k > model.k_image:
        warnings.warn(f"top_k {top_k} > vocabulary {model.k_image}; clipping")
        top_k = model.k_image
    z_s = z_s if isinstance(z_s, LatentGrid) else LatentGrid(z_s, "semantic")
    if z_s.shape != model.sem_shape:
        raise DataError(f"semantic grid {z_s.shape} != expected {model.sem_shape}")
    sem = z_s.flatten()
    if sem.min() < 0 or sem.max() >= model.k_semantic:
        raise DataError("semantic index outside codebook range")

    rng = np.random.Generator(np.random.PCG64(seed))
    tokens = list(sem)
    drawn = []
    with ad.no_grad():
        for _ in range(model.n_image):
            logits = model(np.asarray(tokens, dtype=np.int64)[None]).data[0, -1]
            logits = logits.astype(np.float64)
            order = np.argsort(-logits, kind="stable")[:top_k]
            if top_k == 1:
                choice = int(order[0])
            else:
                z = logits[order] / float(temperature)
                p = np.exp(z - z.max())
                p /= p.sum()
                r = rng.random()
                choice = int(order[min(np.searchsorted(np.cumsum(p), r, side="right"),
                                       top_k - 1)])
            drawn.append(choice)
            tokens.append(model.k_semantic + choice)
    return LatentGrid(np.asarray(drawn, dtype=np.int64).reshape(model.img_shape), "image")
