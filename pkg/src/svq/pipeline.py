"""Orchestration: run configuration, checkpoints, two-stage training,
synthesis with metrics, and the coupled-vs-decoupled comparison harness.

Every artifact written here (datasets, checkpoints, logs, reports, image
grids) is a pure function of the config plus its seeds; reruns are
byte-identical.
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass, fields, replace
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .adversarial import PatchDiscriminator, d_loss
from .autoencoder import (CoupledAutoencoder, DecoupledBaseline, baseline_forward,
                          batch_arrays, decode_image, encode_joint, svq_forward)
from .data import (NUM_CLASSES, PairedSample, colorize_semantics, generate_dataset,
                   write_image_ppm)
from .errors import (ConfigurationError, FormatError, NumericError,
                     TrainingDiverged)
from .metrics import MetricsReport, frechet_distance, miou, ssim
from .nn import Adam
from .quantizer import LatentGrid
from .transformer import TransformerModel, conditional_nll, pack_sequence
from .transformer import sample as sample_tokens

VARIANTS = ("svqvae", "svqgan", "baseline-vqvae", "baseline-vqgan")
VARIANT_LABELS = {
    "baseline-vqvae": "VQVAE-T",
    "svqvae": "sVQVAE-T",
    "baseline-vqgan": "VQGAN-T",
    "svqgan": "sVQGAN-T",
}


# configuration ----------------------------------------------------------------


@dataclass
class RunConfig:
    # [run]
    variant: str = "svqvae"
    seed: int = 0
    dtype: str = "float32"
    # [data]
    n_train: int = 2000
    n_heldout: int = 200
    image_size: int = 32
    data_seed: int = 1234
    # [model]
    lambda_weight: float = 0.1
    beta: float = 0.25
    gan_weight: float = 0.1
    gan_warmup_frac: float = 0.25
    k_image: int = 512
    k_semantic: int = 64
    latent_dim: int = 64
    channels: tuple = (32, 64, 96)
    # [transformer]
    tf_blocks: int = 4
    tf_width: int = 128
    tf_heads: int = 4
    # [optim]
    lr: float = 2e-4
    adam_beta1: float = 0.9
    adam_beta2: float = 0.95
    batch_size: int = 16
    steps_stage1: int = 3000
    steps_stage2: int = 3000
    # [sampling]
    temperature: float = 1.0
    top_k: int = 64
    samples_per_condition: int = 3

    def validate(self):
        if self.variant not in VARIANTS:
            raise ConfigurationError(f"unknown variant {self.variant!r}")
        if self.dtype not in ("float32", "float64"):
            raise ConfigurationError(f"unknown dtype {self.dtype!r}")
        positive = ("n_train", "n_heldout", "image_size", "k_image", "k_semantic",
                    "latent_dim", "tf_blocks", "tf_width", "tf_heads", "batch_size",
                    "samples_per_condition", "top_k")
        for name in positive:
            if getattr(self, name) < 1:
                raise ConfigurationError(f"{name} must be >= 1")
        nonneg = ("seed", "data_seed", "lambda_weight", "beta", "gan_weight",
                  "steps_stage1", "steps_stage2")
        for name in nonneg:
            if getattr(self, name) < 0:
                raise ConfigurationError(f"{name} must be >= 0")
        if self.k_image < 2 or self.k_semantic < 2:
            raise ConfigurationError("codebook sizes must be >= 2")
        if not 0.0 <= self.gan_warmup_frac <= 1.0:
            raise ConfigurationError("gan_warmup_frac must lie in [0, 1]")
        if self.image_size % 4 != 0:
            raise ConfigurationError("image_size must be divisible by 4")
        if self.lr <= 0 or self.temperature <= 0:
            raise ConfigurationError("lr and temperature must be > 0")
        if not 0.0 < self.adam_beta1 < 1.0 or not 0.0 < self.adam_beta2 < 1.0:
            raise ConfigurationError("adam betas must lie in (0, 1)")
        if len(self.channels) != 3 or any(c < 1 for c in self.channels):
            raise ConfigurationError("channels must be three positive ints")
        if self.tf_width % self.tf_heads != 0:
            raise ConfigurationError("tf_width must divide by tf_heads")
        return self

    @property
    def np_dtype(self):
        return np.float32 if self.dtype == "float32" else np.float64

    @property
    def latent_size(self):
        return self.image_size // 4

    @property
    def is_coupled(self):
        return self.variant in ("svqvae", "svqgan")

    @property
    def is_gan(self):
        return self.variant in ("svqgan", "baseline-vqgan")


_SECTIONS = {
    "run": ("variant", "seed", "dtype"),
    "data": ("n_train", "n_heldout", "image_size", "data_seed"),
    "model": ("lambda_weight", "beta", "gan_weight", "gan_warmup_frac",
              "k_image", "k_semantic", "latent_dim", "channels"),
    "transformer": ("tf_blocks", "tf_width", "tf_heads"),
    "optim": ("lr", "adam_beta1", "adam_beta2", "batch_size",
              "steps_stage1", "steps_stage2"),
    "sampling": ("temperature", "top_k", "samples_per_condition"),
}
_FIELD_TYPES = {f.name: f.type for f in fields(RunConfig)}


def _format_value(value):
    if isinstance(value, tuple):
        return ",".join(str(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _parse_value(name, raw):
    kind = _FIELD_TYPES[name]
    try:
        if kind == "int":
            return int(raw)
        if kind == "float":
            return float(raw)
        if kind == "tuple":
            return tuple(int(v) for v in raw.split(","))
        return raw
    except ValueError as exc:
        raise ConfigurationError(f"bad value for {name}: {raw!r}") from exc


def serialize_config(cfg):
    """Canonical 'key = value' text with [section] headers."""
    lines = []
    for section, names in _SECTIONS.items():
        lines.append(f"[{section}]")
        for name in names:
            lines.append(f"{name} = {_format_value(getattr(cfg, name))}")
        lines.append("")
    return "\n".join(lines)


def parse_config(text):
    """Strict inverse of serialize_config; unknown sections/keys rejected."""
    values = {}
    section = None
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("[") and line.endswith("]"):
            section = line[1:-1].strip()
            if section not in _SECTIONS:
                raise ConfigurationError(f"unknown section [{section}] (line {lineno})")
            continue
        if "=" not in line:
            raise ConfigurationError(f"expected 'key = value' (line {lineno})")
        if section is None:
            raise ConfigurationError(f"key before any [section] (line {lineno})")
        key, raw_value = (part.strip() for part in line.split("=", 1))
        if key not in _SECTIONS[section]:
            raise ConfigurationError(f"unknown key {key!r} in [{section}] (line {lineno})")
        if key in values:
            raise ConfigurationError(f"duplicate key {key!r} (line {lineno})")
        values[key] = _parse_value(key, raw_value)
    return RunConfig(**values).validate()


def load_config(path):
    return parse_config(Path(path).read_text(encoding="utf-8"))


# checkpoint container ----------------------------------------------------------

_MAGIC = b"SVQC1"
_DTYPE_CODES = {0: np.dtype("<f4"), 1: np.dtype("<i4")}


@dataclass
class Checkpoint:
    arrays: dict
    config: RunConfig
    stage: int
    step: int
    path: Path | None = None


def _encode_entry(name, array):
    if array.dtype.kind == "f":
        code, arr = 0, array.astype("<f4")
    elif array.dtype.kind in "iu":
        code, arr = 1, array.astype("<i4")
    else:
        raise ConfigurationError(f"unsupported dtype {array.dtype} for entry {name!r}")
    nb = name.encode("utf-8")
    head = struct.pack("<H", len(nb)) + nb + struct.pack("<BB", code, arr.ndim)
    dims = b"".join(struct.pack("<I", d) for d in arr.shape)
    return head + dims + arr.tobytes()


def checkpoint_bytes(ckpt):
    entries = dict(ckpt.arrays)
    config_bytes = serialize_config(ckpt.config).encode("utf-8")
    entries["__config__"] = np.frombuffer(config_bytes, dtype=np.uint8).astype(np.int32)
    entries["__stage__"] = np.array([ckpt.stage], dtype=np.int32)
    entries["__step__"] = np.array([ckpt.step], dtype=np.int32)
    blob = bytearray(_MAGIC)
    blob += struct.pack("<I", len(entries))
    for name in sorted(entries):
        blob += _encode_entry(name, np.asarray(entries[name]))
    return bytes(blob)


def save_checkpoint(ckpt, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(checkpoint_bytes(ckpt))
    ckpt.path = path
    return path


def load_checkpoint(path):
    data = Path(path).read_bytes()
    if data[:5] != _MAGIC:
        raise FormatError(f"bad magic {data[:5]!r}", offset=0)
    pos = 5
    if len(data) < pos + 4:
        raise FormatError("truncated entry count", offset=pos)
    (count,) = struct.unpack_from("<I", data, pos)
    pos += 4
    entries = {}
    for _ in range(count):
        if len(data) < pos + 2:
            raise FormatError("truncated name length", offset=pos)
        (nlen,) = struct.unpack_from("<H", data, pos)
        pos += 2
        name = data[pos:pos + nlen].decode("utf-8")
        pos += nlen
        if len(data) < pos + 2:
            raise FormatError(f"truncated header for {name!r}", offset=pos)
        code, rank = struct.unpack_from("<BB", data, pos)
        pos += 2
        if code not in _DTYPE_CODES:
            raise FormatError(f"unknown dtype code {code}", offset=pos - 2)
        if len(data) < pos + 4 * rank:
            raise FormatError(f"truncated dims for {name!r}", offset=pos)
        shape = struct.unpack_from(f"<{rank}I", data, pos) if rank else ()
        pos += 4 * rank
        dtype = _DTYPE_CODES[code]
        nbytes = int(np.prod(shape, dtype=np.int64)) * dtype.itemsize if rank else dtype.itemsize
        if rank == 0:
            nbytes = dtype.itemsize
        if len(data) < pos + nbytes:
            raise FormatError(f"truncated payload for {name!r}", offset=pos)
        arr = np.frombuffer(data[pos:pos + nbytes], dtype=dtype).reshape(shape)
        pos += nbytes
        entries[name] = arr
    if pos != len(data):
        raise FormatError(f"{len(data) - pos} trailing bytes", offset=pos)
    for key in ("__config__", "__stage__", "__step__"):
        if key not in entries:
            raise FormatError(f"missing reserved entry {key!r}")
    config = parse_config(bytes(entries["__config__"].astype(np.uint8)).decode("utf-8"))
    stage = int(entries["__stage__"][0])
    step = int(entries["__step__"][0])
    arrays = {k: v for k, v in entries.items() if not k.startswith("__")}
    return Checkpoint(arrays, config, stage, step, Path(path))


def parameter_digest(arrays):
    h = hashlib.sha256()
    for name in sorted(arrays):
        h.update(name.encode())
        h.update(np.ascontiguousarray(arrays[name]).tobytes())
    return h.hexdigest()


# model construction ------------------------------------------------------------


def _rng(seed, stream):
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, stream])))


def build_stage1(cfg):
    """(model, disc-or-None) freshly initialized from config seeds."""
    rng = _rng(cfg.seed, 0)
    if cfg.is_coupled:
        model = CoupledAutoencoder(image_size=cfg.image_size, num_classes=NUM_CLASSES,
                                   latent_dim=cfg.latent_dim, k_image=cfg.k_image,
                                   k_semantic=cfg.k_semantic, channels=cfg.channels,
                                   lam=cfg.lambda_weight, beta=cfg.beta,
                                   rng=rng, dtype=cfg.np_dtype)
    else:
        model = DecoupledBaseline(image_size=cfg.image_size, num_classes=NUM_CLASSES,
                                  latent_dim=cfg.latent_dim, k_image=cfg.k_image,
                                  k_semantic=cfg.k_semantic, channels=cfg.channels,
                                  beta=cfg.beta, rng=rng, dtype=cfg.np_dtype)
    disc = None
    if cfg.is_gan:
        disc = PatchDiscriminator(rng=_rng(cfg.seed, 1), dtype=cfg.np_dtype)
    return model, disc


def build_transformer(cfg):
    shape = (cfg.latent_size, cfg.latent_size)
    return TransformerModel(k_semantic=cfg.k_semantic, k_image=cfg.k_image,
                            sem_shape=shape, img_shape=shape, width=cfg.tf_width,
                            blocks=cfg.tf_blocks, heads=cfg.tf_heads,
                            rng=_rng(cfg.seed, 3), dtype=cfg.np_dtype)


def _stage1_arrays(model, disc):
    arrays = {f"model.{k}": v for k, v in model.state_arrays().items()}
    if disc is not None:
        arrays.update({f"disc.{k}": v for k, v in disc.state_arrays().items()})
    return arrays


def load_stage1(ckpt, semantic_ckpt=None):
    """Rebuild stage-1 models from a checkpoint (stage tag 1).

    For baselines, `semantic_ckpt` optionally supplies the semantic
    sub-model from a second independently trained container.
    """
    if ckpt.stage != 1:
        raise ConfigurationError(f"expected a stage-1 checkpoint, got stage {ckpt.stage}")
    cfg = ckpt.config
    model, disc = build_stage1(cfg)
    model.load_state({k[len("model."):]: v for k, v in ckpt.arrays.items()
                      if k.startswith("model.")})
    if disc is not None:
        disc.load_state({k[len("disc."):]: v for k, v in ckpt.arrays.items()
                         if k.startswith("disc.")})
    if semantic_ckpt is not None:
        if cfg.is_coupled:
            raise ConfigurationError("a second stage-1 checkpoint only applies to baselines")
        sem_arrays = {k[len("model.semantic_vq."):]: v
                      for k, v in semantic_ckpt.arrays.items()
                      if k.startswith("model.semantic_vq.")}
        model.semantic_vq.load_state(sem_arrays)
    return model, disc


# training ---------------------------------------------------------------------


def _write_log(out_dir, name, lines):
    if out_dir is None:
        return
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / name).write_text("".join(lines), encoding="utf-8")


def images_to_grid(rows):
    """rows: list of lists of (H, W, 3) float images -> one grid image."""
    sep = 2
    row_arrays = []
    for row in rows:
        h = max(img.shape[0] for img in row)
        padded = []
        for img in row:
            img = np.asarray(img, dtype=np.float32)
            if img.shape[0] != h:
                pad = np.zeros((h - img.shape[0],) + img.shape[1:], dtype=np.float32)
                img = np.concatenate([img, pad], axis=0)
            padded.append(img)
            padded.append(np.ones((h, sep, 3), dtype=np.float32))
        row_arrays.append(np.concatenate(padded[:-1], axis=1))
    w = max(r.shape[1] for r in row_arrays)
    stacked = []
    for r in row_arrays:
        if r.shape[1] != w:
            pad = np.zeros((r.shape[0], w - r.shape[1], 3), dtype=np.float32)
            r = np.concatenate([r, pad], axis=1)
        stacked.append(r)
        stacked.append(np.ones((sep, w, 3), dtype=np.float32))
    return np.clip(np.concatenate(stacked[:-1], axis=0), 0.0, 1.0)


def _reconstruction_rows(model, samples, cfg, max_rows=8):
    rows = []
    with ad.no_grad():
        for s in samples[:max_rows]:
            if cfg.is_coupled:
                z_x, z_s, _, _ = encode_joint(model, s)
                recon = decode_image(model, z_x, z_s).data
            else:
                images, _ = batch_arrays(s, NUM_CLASSES, model.dtype)
                grids = model.encode_images(images)
                emb = ad.embedding(model.image_vq.codebook.entries, grids[0].indices[None])
                recon = model.image_vq.decoder(ad.transpose(emb, (0, 3, 1, 2))).data
                recon = recon.transpose(0, 2, 3, 1)[0]
            rows.append([colorize_semantics(s.semantics), s.image,
                         np.asarray(recon, dtype=np.float32)])
    return rows


def train_stage1(cfg, dataset, out_dir=None):
    """Train the configured stage-1 variant; returns a Checkpoint.

    Deterministic given config seeds. Writes train_stage1.tsv plus periodic
    reconstruction grids when out_dir is given. Raises TrainingDiverged if
    the loss leaves the finite range.
    """
    cfg.validate()
    model, disc = build_stage1(cfg)
    opt = Adam(model.parameters(), lr=cfg.lr, beta1=cfg.adam_beta1, beta2=cfg.adam_beta2)
    d_opt = Adam(disc.parameters(), lr=cfg.lr, beta1=cfg.adam_beta1,
                 beta2=cfg.adam_beta2) if disc is not None else None
    batch_rng = _rng(cfg.seed, 2)
    n = len(dataset)
    warmup = int(cfg.gan_warmup_frac * cfg.steps_stage1)
    log = ["step\ttotal\tparts\n"]
    last_parts = {}
    grid_every = max(1, cfg.steps_stage1 // 4)

    for step in range(cfg.steps_stage1):
        if cfg.batch_size >= n:
            batch = list(dataset)
        else:
            idx = batch_rng.integers(0, n, size=cfg.batch_size)
            batch = [dataset[i] for i in idx]
        gan_on = cfg.is_gan and step >= warmup
        try:
            if cfg.is_coupled:
                total, parts, aux = svq_forward(model, batch,
                                                discriminator=disc if gan_on else None,
                                                gan_weight=cfg.gan_weight if gan_on else 0.0)
            else:
                image_loss, semantic_loss, parts, aux = baseline_forward(
                    model, batch, discriminator=disc if gan_on else None,
                    gan_weight=cfg.gan_weight if gan_on else 0.0)
                total = image_loss + semantic_loss
        except NumericError:
            raise TrainingDiverged(step, last_parts) from None
        x_hat = aux["x_hat"]
        value = total.item()
        if not np.isfinite(value):
            raise TrainingDiverged(step, last_parts)
        last_parts = dict(parts)
        opt.zero_grad()
        total.backward()
        opt.step()

        if gan_on:
            images, _ = batch_arrays(batch, NUM_CLASSES, model.dtype)
            loss_d = d_loss(disc, images, x_hat.data)
            if not np.isfinite(loss_d.item()):
                raise TrainingDiverged(step, {"d_loss": loss_d.item(), **last_parts})
            d_opt.zero_grad()
            loss_d.backward()
            d_opt.step()
            parts = dict(parts)
            parts["d_loss"] = loss_d.item()

        part_text = ",".join(f"{k}={parts[k]:.6g}" for k in sorted(parts))
        log.append(f"{step}\t{value:.6g}\t{part_text}\n")
        if out_dir is not None and (step + 1) % grid_every == 0:
            grid = images_to_grid(_reconstruction_rows(model, dataset, cfg))
            Path(out_dir).mkdir(parents=True, exist_ok=True)
            (Path(out_dir) / f"recon_{step + 1:06d}.ppm").write_bytes(write_image_ppm(grid))

    _write_log(out_dir, "train_stage1.tsv", log)
    ckpt = Checkpoint(_stage1_arrays(model, disc), cfg, stage=1, step=cfg.steps_stage1)
    if out_dir is not None:
        save_checkpoint(ckpt, Path(out_dir) / "stage1.svqc")
    return ckpt


def encode_dataset_tokens(model, cfg, dataset, chunk=64):
    """Frozen stage-1 encode of every sample into packed token rows."""
    rows = []
    with ad.no_grad():
        for start in range(0, len(dataset), chunk):
            part = dataset[start:start + chunk]
            if cfg.is_coupled:
                z_x, z_s, _, _ = encode_joint(model, part)
            else:
                images, sems = batch_arrays(part, NUM_CLASSES, model.dtype)
                z_x = model.encode_images(images)
                z_s = model.encode_semantics(sems)
            for gs, gx in zip(z_s, z_x):
                rows.append(pack_sequence(gs, gx, cfg.k_semantic, cfg.k_image).tokens)
    return np.asarray(rows, dtype=np.int64)


def evaluate_nll(tf_model, tokens, chunk=64):
    """Mean conditional NLL (nats/image-token) over token rows, no training."""
    totals = []
    with ad.no_grad():
        for start in range(0, len(tokens), chunk):
            part = tokens[start:start + chunk]
            totals.append(conditional_nll(tf_model, part).item() * len(part))
    return float(np.sum(totals) / len(tokens))


def train_stage2(cfg, stage1_ckpt, dataset, out_dir=None, stage1_semantic_ckpt=None):
    """Train the conditional latent transformer on a frozen stage-1 model.

    Accepts one coupled/baseline checkpoint, or, for baselines, a second
    checkpoint supplying the independently trained semantic sub-model.
    Asserts bitwise that stage-1 parameters never change.
    """
    cfg.validate()
    model, _ = load_stage1(stage1_ckpt, stage1_semantic_ckpt)
    digest_before = parameter_digest(model.state_arrays())
    tokens = encode_dataset_tokens(model, cfg, dataset)

    tf_model = build_transformer(cfg)
    opt = Adam(tf_model.parameters(), lr=cfg.lr, beta1=cfg.adam_beta1, beta2=cfg.adam_beta2)
    batch_rng = _rng(cfg.seed, 4)
    n = len(tokens)
    log = ["step\tnll\n"]
    last = {}
    for step in range(cfg.steps_stage2):
        if cfg.batch_size >= n:
            batch = tokens
        else:
            batch = tokens[batch_rng.integers(0, n, size=cfg.batch_size)]
        loss = conditional_nll(tf_model, batch)
        value = loss.item()
        if not np.isfinite(value):
            raise TrainingDiverged(step, last)
        last = {"nll": value}
        opt.zero_grad()
        loss.backward()
        opt.step()
        log.append(f"{step}\t{value:.6g}\n")

    digest_after = parameter_digest(model.state_arrays())
    if digest_before != digest_after:
        raise ConfigurationError("stage-1 parameters changed during stage 2")
    _write_log(out_dir, "train_stage2.tsv", log)
    arrays = {f"transformer.{k}": v for k, v in tf_model.state_arrays().items()}
    ckpt = Checkpoint(arrays, cfg, stage=2, step=cfg.steps_stage2)
    if out_dir is not None:
        save_checkpoint(ckpt, Path(out_dir) / "stage2.svqc")
    return ckpt


def load_stage2(ckpt):
    if ckpt.stage != 2:
        raise ConfigurationError(f"expected a stage-2 checkpoint, got stage {ckpt.stage}")
    tf_model = build_transformer(ckpt.config)
    tf_model.load_state({k[len("transformer."):]: v for k, v in ckpt.arrays.items()
                         if k.startswith("transformer.")})
    return tf_model


# synthesis and evaluation -------------------------------------------------------


def _encode_condition(model, cfg, sample):
    """Semantic conditioning grid for one held-out sample.

    The coupled encoder needs the full (image, semantics) pair, mirroring
    the reference-image requirement at inference; the baseline encodes the
    semantic map alone.
    """
    if cfg.is_coupled:
        _, z_s, _, _ = encode_joint(model, sample)
        return z_s
    _, sems = batch_arrays(sample, NUM_CLASSES, model.dtype)
    return model.encode_semantics(sems)[0]


def _decode_generation(model, cfg, z_x, z_s):
    if cfg.is_coupled:
        return np.asarray(decode_image(model, z_x, z_s).data, dtype=np.float32)
    emb = ad.embedding(model.image_vq.codebook.entries, z_x.indices[None])
    out = model.image_vq.decoder(ad.transpose(emb, (0, 3, 1, 2))).data
    return np.asarray(out.transpose(0, 2, 3, 1)[0], dtype=np.float32)


def _predict_semantics(model, cfg, image, sems):
    """Re-encode a generated image and decode its semantic map."""
    if cfg.is_coupled:
        probe = PairedSample(image, sems)
        _, z_s, _, _ = encode_joint(model, probe)
        from .autoencoder import decode_semantic
        logits = decode_semantic(model, z_s)
        return np.argmax(logits.data, axis=-1)
    grids = model.encode_semantics(sems[None])
    emb = ad.embedding(model.semantic_vq.codebook.entries, grids[0].indices[None])
    logits = model.semantic_vq.decoder(ad.transpose(emb, (0, 3, 1, 2))).data
    return np.argmax(logits[0], axis=0)


def synthesize(stage1_ckpt, stage2_ckpt, samples, out_dir=None, temperature=None,
               top_k=None, seed=None, replicates=None, grid_rows=8):
    """Sample image latents for held-out conditions, decode, and score.

    Per sample: encode the conditioning grid, draw `replicates` image-latent
    grids with independent seeds, decode each, then report SSIM against the
    paired ground-truth image, FD-r between the generated and real sets,
    and mIOU of the re-encoded generations' semantics against the input
    maps. Returns (generations, MetricsReport).
    """
    cfg = stage2_ckpt.config
    model, _ = load_stage1(stage1_ckpt)
    tf_model = load_stage2(stage2_ckpt)
    temperature = cfg.temperature if temperature is None else temperature
    top_k = cfg.top_k if top_k is None else top_k
    seed = cfg.seed if seed is None else seed
    replicates = cfg.samples_per_condition if replicates is None else replicates

    generations = []
    ssims = []
    pred_maps = []
    gt_maps = []
    rows = []
    with ad.no_grad():
        for i, s in enumerate(samples):
            z_s = _encode_condition(model, cfg, s)
            per_sample = []
            for r in range(replicates):
                draw_seed = int(np.random.SeedSequence([seed, 5, i, r]).generate_state(1)[0])
                z_x = sample_tokens(tf_model, z_s, temperature=temperature,
                                    top_k=top_k, seed=draw_seed)
                img = _decode_generation(model, cfg, z_x, z_s)
                per_sample.append(img)
                ssims.append(ssim(img, s.image))
            generations.extend(per_sample)
            pred_maps.append(_predict_semantics(model, cfg, per_sample[0], s.semantics))
            gt_maps.append(s.semantics)
            if i < grid_rows:
                rows.append([colorize_semantics(s.semantics), s.image] + per_sample)

    gt_images = np.stack([s.image for s in samples])
    gen_images = np.stack(generations)
    fd = frechet_distance(gen_images, gt_images)
    miou_val, per_class = miou(np.concatenate([p.reshape(-1) for p in pred_maps]),
                               np.concatenate([g.reshape(-1) for g in gt_maps]),
                               NUM_CLASSES)
    report = MetricsReport(ssim_mean=float(np.mean(ssims)), frechet_distance=fd,
                           miou_percent=miou_val, n_samples=len(samples),
                           per_class_iou=per_class)
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "generations.ppm").write_bytes(write_image_ppm(images_to_grid(rows)))
        (out / "metrics.tsv").write_text(report.to_tsv(), encoding="utf-8")
    return gen_images, report


def evaluate_reconstruction(stage1_ckpt, samples):
    """Stage-1 reconstruction metrics: SSIM, FD-r, pooled semantic mIOU."""
    cfg = stage1_ckpt.config
    model, _ = load_stage1(stage1_ckpt)
    recons = []
    preds = []
    with ad.no_grad():
        for start in range(0, len(samples), 64):
            part = samples[start:start + 64]
            if cfg.is_coupled:
                z_x, z_s, _, _ = encode_joint(model, part)
                recon = decode_image(model, z_x, z_s).data
                from .autoencoder import decode_semantic
                logits = decode_semantic(model, z_s).data
                preds.append(np.argmax(logits, axis=-1))
            else:
                images, sems = batch_arrays(part, NUM_CLASSES, model.dtype)
                gx = model.encode_images(images)
                emb = ad.embedding(model.image_vq.codebook.entries,
                                   np.stack([g.indices for g in gx]))
                recon = model.image_vq.decoder(ad.transpose(emb, (0, 3, 1, 2))).data
                recon = recon.transpose(0, 2, 3, 1)
                gs = model.encode_semantics(sems)
                emb_s = ad.embedding(model.semantic_vq.codebook.entries,
                                     np.stack([g.indices for g in gs]))
                logits = model.semantic_vq.decoder(ad.transpose(emb_s, (0, 3, 1, 2))).data
                preds.append(np.argmax(logits, axis=1))
            recons.append(np.asarray(recon, dtype=np.float32))
    recon_images = np.concatenate(recons)
    pred_maps = np.concatenate(preds)
    gt_images = np.stack([s.image for s in samples])
    gt_maps = np.stack([s.semantics for s in samples])
    ssims = [ssim(r, g) for r, g in zip(recon_images, gt_images)]
    miou_val, per_class = miou(pred_maps.reshape(-1), gt_maps.reshape(-1), NUM_CLASSES)
    fd = frechet_distance(recon_images, gt_images)
    return MetricsReport(ssim_mean=float(np.mean(ssims)), frechet_distance=fd,
                         miou_percent=miou_val, n_samples=len(samples),
                         per_class_iou=per_class)


# comparison harness -------------------------------------------------------------


def compare(cfg, out_dir, seeds=(0, 1, 2)):
    """Train all four variants over shared data and seeds; emit the report.

    Writes compare.tsv (variant rows x FD-r/SSIM/mIOU columns, means over
    seeds), compare_details.tsv (per seed and variant), and nll_summary.tsv
    with the coupled-vs-decoupled stage-2 NLL comparison.
    """
    cfg.validate()
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    dataset = generate_dataset(cfg.n_train + cfg.n_heldout, cfg.data_seed, cfg.image_size)
    train, heldout = dataset[:cfg.n_train], dataset[cfg.n_train:]

    results = {v: [] for v in VARIANTS}
    for seed in seeds:
        for variant in VARIANTS:
            run_cfg = replace(cfg, variant=variant, seed=seed)
            run_dir = out / f"{variant}_seed{seed}"
            ck1 = train_stage1(run_cfg, train, out_dir=run_dir)
            ck2 = train_stage2(run_cfg, ck1, train, out_dir=run_dir)
            model, _ = load_stage1(ck1)
            tf_model = load_stage2(ck2)
            nll = evaluate_nll(tf_model, encode_dataset_tokens(model, run_cfg, heldout))
            _, report = synthesize(ck1, ck2, heldout, out_dir=run_dir)
            results[variant].append({"seed": seed, "nll": nll,
                                     "fd_r": report.frechet_distance,
                                     "ssim": report.ssim_mean,
                                     "miou": report.miou_percent})

    lines = ["variant\tFD-r\tSSIM\tmIOU\n"]
    for variant in ("baseline-vqvae", "svqvae", "baseline-vqgan", "svqgan"):
        rs = results[variant]
        lines.append(f"{VARIANT_LABELS[variant]}\t"
                     f"{np.mean([r['fd_r'] for r in rs]):.4f}\t"
                     f"{np.mean([r['ssim'] for r in rs]):.4f}\t"
                     f"{np.mean([r['miou'] for r in rs]):.2f}\n")
    (out / "compare.tsv").write_text("".join(lines), encoding="utf-8")

    detail = ["variant\tseed\tnll\tFD-r\tSSIM\tmIOU\n"]
    for variant in VARIANTS:
        for r in results[variant]:
            detail.append(f"{VARIANT_LABELS[variant]}\t{r['seed']}\t{r['nll']:.6f}\t"
                          f"{r['fd_r']:.4f}\t{r['ssim']:.4f}\t{r['miou']:.2f}\n")
    (out / "compare_details.tsv").write_text("".join(detail), encoding="utf-8")

    nll_lines = ["pair\tcoupled_mean\tcoupled_std\tbaseline_mean\tbaseline_std\tcoupled_within_or_below\n"]
    summary = {}
    for coupled, baseline, label in (("svqvae", "baseline-vqvae", "vqvae"),
                                     ("svqgan", "baseline-vqgan", "vqgan")):
        cm = float(np.mean([r["nll"] for r in results[coupled]]))
        cs = float(np.std([r["nll"] for r in results[coupled]]))
        bm = float(np.mean([r["nll"] for r in results[baseline]]))
        bs = float(np.std([r["nll"] for r in results[baseline]]))
        ok = cm <= bm + bs
        summary[label] = {"coupled_mean": cm, "coupled_std": cs,
                          "baseline_mean": bm, "baseline_std": bs, "within": ok}
        nll_lines.append(f"{label}\t{cm:.6f}\t{cs:.6f}\t{bm:.6f}\t{bs:.6f}\t{ok}\n")
    (out / "nll_summary.tsv").write_text("".join(nll_lines), encoding="utf-8")
    return {"results": results, "nll_summary": summary,
            "compare_tsv": out / "compare.tsv"}
