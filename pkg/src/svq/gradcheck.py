"""Finite-difference verification of every analytic gradient path.

All checks run at 64-bit on micro-sized models. Because the quantizer's
straight-through estimator is deliberately biased w.r.t. the true loss
surface, finite differences are taken on the surrogate function instead:
the first evaluation records every stop-gradient value and assignment on a
freeze tape, and perturbed re-evaluations replay it, so the function being
differenced is exactly the one the backward pass differentiates.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .adversarial import PatchDiscriminator, d_loss, g_loss
from .autoencoder import CoupledAutoencoder, DecoupledBaseline, baseline_losses, svq_loss
from .data import PairedSample
from .quantizer import Codebook, quantize, straight_through, vq_regularizers
from .transformer import TransformerModel, conditional_nll


@dataclass
class CheckResult:
    name: str
    max_rel_err: float
    tolerance: float

    @property
    def passed(self):
        return self.max_rel_err < self.tolerance

    def line(self):
        status = "PASS" if self.passed else "FAIL"
        return f"{status}  {self.name}: max rel err {self.max_rel_err:.3e} (tol {self.tolerance:.0e})"


def finite_difference_grads(build_loss, params, h=1e-5, probes_per_tensor=6, seed=0):
    """Central-difference gradients for a probe subset of each parameter.

    Returns (analytic, fd, probe_indices) aligned lists, one entry per
    parameter tensor. build_loss must be a pure closure over the params.
    """
    tape = ad.freeze_tape("record")
    with tape:
        loss = build_loss()
    for p in params:
        p.grad = None
    loss.backward()
    analytic = [np.zeros_like(p.data) if p.grad is None else p.grad.copy() for p in params]

    rng = np.random.Generator(np.random.PCG64(seed))
    fd = []
    probes = []
    for p in params:
        flat = p.data.reshape(-1)
        n = flat.size
        idx = np.arange(n) if n <= probes_per_tensor else \
            np.sort(rng.choice(n, size=probes_per_tensor, replace=False))
        grads = np.zeros(idx.size)
        for j, i in enumerate(idx):
            orig = flat[i]
            flat[i] = orig + h
            with ad.freeze_tape("replay", tape.values):
                up = build_loss().item()
            flat[i] = orig - h
            with ad.freeze_tape("replay", tape.values):
                down = build_loss().item()
            flat[i] = orig
            grads[j] = (up - down) / (2.0 * h)
        fd.append(grads)
        probes.append(idx)
    return analytic, fd, probes


def max_relative_error(analytic, fd, probes):
    """max over tensors of |fd - an|_inf / max(|an|_inf, |fd|_inf, 1e-7)."""
    worst = 0.0
    for an, f, idx in zip(analytic, fd, probes):
        a = an.reshape(-1)[idx]
        scale = max(np.abs(a).max(initial=0.0), np.abs(f).max(initial=0.0), 1e-7)
        worst = max(worst, float(np.abs(f - a).max(initial=0.0) / scale))
    return worst


def _fd_result(name, build_loss, params, tolerance, h=1e-5, seed=0):
    an, fd, probes = finite_difference_grads(build_loss, params, h=h, seed=seed)
    return CheckResult(name, max_relative_error(an, fd, probes), tolerance)


# micro fixtures ---------------------------------------------------------------


def _micro_sample(rng, size=8, num_classes=4):
    image = rng.random((size, size, 3)).astype(np.float64)
    sems = rng.integers(0, num_classes, size=(size, size))
    return PairedSample(image, sems)


def _micro_coupled(rng, lam=0.7):
    return CoupledAutoencoder(image_size=8, num_classes=4, latent_dim=6,
                              k_image=12, k_semantic=7, channels=(6, 8, 10),
                              lam=lam, beta=0.25, rng=rng, dtype=np.float64)


def check_straight_through(seed=0):
    """Identity backward: dL/d pre_latents equals the incoming gradient exactly."""
    rng = np.random.Generator(np.random.PCG64(seed))
    cb = Codebook(9, 5, rng, dtype=np.float64)
    pre = ad.Tensor(rng.standard_normal((3, 4, 5)), requires_grad=True)
    _, q = quantize(pre, cb)
    out = straight_through(pre, q)
    weights = rng.standard_normal(out.shape)
    ad.tsum(out * ad.Tensor(weights)).backward()
    exact = np.array_equal(pre.grad, weights) and np.array_equal(out.data, q.data)
    return CheckResult("straight-through identity (exact)", 0.0 if exact else 1.0, 1e-12)


def check_codebook_loss_form(seed=0):
    """entries.grad == 2 (c - z_e) / N_cells at assigned rows, FD-confirmed."""
    rng = np.random.Generator(np.random.PCG64(seed))
    cb = Codebook(10, 4, rng, dtype=np.float64)
    pre_data = rng.standard_normal((4, 4, 4))
    pre = ad.Tensor(pre_data, requires_grad=True)

    def build():
        cb_loss, _ = vq_regularizers(pre, cb)
        return cb_loss

    loss = build()
    pre.grad = None
    cb.entries.grad = None
    loss.backward()
    from .quantizer import nearest_indices
    idx = nearest_indices(pre_data, cb)
    expected = np.zeros_like(cb.entries.data)
    n_cells = idx.size
    flat = pre_data.reshape(-1, 4)
    for cell, row in enumerate(idx.reshape(-1)):
        expected[row] += 2.0 * (cb.entries.data[row] - flat[cell]) / n_cells
    form_err = float(np.abs(cb.entries.grad - expected).max())
    if pre.grad is not None and np.abs(pre.grad).max() > 0:
        form_err = max(form_err, 1.0)  # codebook loss must not touch the encoder
    res = _fd_result("codebook loss gradient 2(c - z_e)/N vs finite differences",
                     build, [cb.entries], tolerance=1e-4)
    return [CheckResult("codebook loss closed-form gradient", form_err, 1e-12), res]


def check_svq_end_to_end(seed=0, with_gan=False):
    rng = np.random.Generator(np.random.PCG64(seed))
    model = _micro_coupled(rng)
    sample = _micro_sample(rng)
    disc = PatchDiscriminator(channels=(6, 8), rng=rng, dtype=np.float64) if with_gan else None
    gan_weight = 0.3 if with_gan else 0.0

    def build():
        total, _ = svq_loss(model, sample, discriminator=disc, gan_weight=gan_weight)
        return total

    params = list(model.named_parameters().values())
    if disc is not None:
        params += list(disc.named_parameters().values())
    name = "full sVQ loss end-to-end" + (" (adversarial variant)" if with_gan else "")
    return _fd_result(name, build, params, tolerance=1e-3, seed=seed)


def check_baseline_losses(seed=0):
    rng = np.random.Generator(np.random.PCG64(seed))
    baseline = DecoupledBaseline(image_size=8, num_classes=4, latent_dim=6,
                                 k_image=12, k_semantic=7, channels=(6, 8, 10),
                                 rng=rng, dtype=np.float64)
    sample = _micro_sample(rng)

    def build():
        image_loss, semantic_loss, _ = baseline_losses(baseline, sample)
        return image_loss + semantic_loss

    return _fd_result("decoupled baseline losses end-to-end", build,
                      list(baseline.named_parameters().values()), tolerance=1e-3, seed=seed)


def check_discriminator_loss(seed=0):
    rng = np.random.Generator(np.random.PCG64(seed))
    disc = PatchDiscriminator(channels=(6, 8), rng=rng, dtype=np.float64)
    real = rng.random((2, 3, 8, 8))
    fake = rng.random((2, 3, 8, 8))

    def build():
        return d_loss(disc, real, fake)

    return _fd_result("hinge discriminator loss", build,
                      list(disc.named_parameters().values()), tolerance=1e-3, seed=seed)


def check_generator_loss(seed=0):
    rng = np.random.Generator(np.random.PCG64(seed))
    disc = PatchDiscriminator(channels=(6, 8), rng=rng, dtype=np.float64)
    fake = ad.Tensor(rng.random((2, 3, 8, 8)), requires_grad=True)

    def build():
        return g_loss(disc, fake)

    return _fd_result("generator adversarial loss", build,
                      [fake] + list(disc.named_parameters().values()),
                      tolerance=1e-3, seed=seed)


def check_transformer_nll(seed=0):
    rng = np.random.Generator(np.random.PCG64(seed))
    model = TransformerModel(k_semantic=5, k_image=7, sem_shape=(2, 2), img_shape=(2, 2),
                             width=32, blocks=2, heads=2, rng=rng, dtype=np.float64)
    sem = rng.integers(0, 5, size=(2, 4))
    img = rng.integers(0, 7, size=(2, 4)) + 5
    tokens = np.concatenate([sem, img], axis=1)

    def build():
        return conditional_nll(model, tokens)

    return _fd_result("transformer conditional NLL", build,
                      list(model.named_parameters().values()), tolerance=1e-3, seed=seed)


def check_stop_gradient_structure(seed=0):
    """Exactly-zero cross-branch gradients in the coupled model."""
    rng = np.random.Generator(np.random.PCG64(seed))
    model = _micro_coupled(rng)
    sample = _micro_sample(rng)

    from .autoencoder import svq_forward
    total, _, aux = svq_forward(model, sample)
    for p in model.parameters():
        p.grad = None
    diff = aux["x_hat"] - ad.Tensor(np.transpose(sample.image, (2, 0, 1))[None])
    image_loss = ad.mean(diff * diff)
    image_loss.backward()
    sem_dec = model.semantic_decoder.named_parameters()
    bad = 0.0
    if model.semantic_codebook.entries.grad is not None and \
            np.abs(model.semantic_codebook.entries.grad).max() > 0:
        bad = 1.0
    for t in sem_dec.values():
        if t.grad is not None and np.abs(t.grad).max() > 0:
            bad = 1.0
    enc_grads = [t.grad for t in model.encoder.named_parameters().values()]
    if all(g is None or np.abs(g).max() == 0 for g in enc_grads):
        bad = 1.0  # sanity: the image loss must reach the shared encoder

    for p in model.parameters():
        p.grad = None
    total2, _, aux2 = svq_forward(model, sample)
    from .autoencoder import _pixel_cross_entropy
    _, sems = _sample_arrays(sample, model)
    semantic_loss = _pixel_cross_entropy(aux2["logits"], sems, model.num_classes)
    semantic_loss.backward()
    if model.image_codebook.entries.grad is not None and \
            np.abs(model.image_codebook.entries.grad).max() > 0:
        bad = 1.0
    for t in model.image_decoder.named_parameters().values():
        if t.grad is not None and np.abs(t.grad).max() > 0:
            bad = 1.0
    return CheckResult("stop-gradient dependency structure (exact zeros)", bad, 1e-12)


def _sample_arrays(sample, model):
    from .autoencoder import batch_arrays
    return batch_arrays(sample, model.num_classes, model.dtype)


def run_all(seed=0):
    """Every gradient suite; returns a flat list of CheckResults."""
    results = [check_straight_through(seed)]
    results.extend(check_codebook_loss_form(seed))
    results.append(check_svq_end_to_end(seed, with_gan=False))
    results.append(check_svq_end_to_end(seed, with_gan=True))
    results.append(check_baseline_losses(seed))
    results.append(check_discriminator_loss(seed))
    results.append(check_generator_loss(seed))
    results.append(check_transformer_nll(seed))
    results.append(check_stop_gradient_structure(seed))
    return results
