"""Synthetic paired dataset: semantic maps plus rendered images.

Scenes composite 1-4 shapes over a sky/ground split (or a flat backdrop, so
the background class actually occurs). Geometry alone determines the class
map; appearance (per-class color jitter and a global illumination scalar)
only affects the rendered image, which is what makes the image genuinely
stochastic given its semantics. All rasterization is integer-exact: no
anti-aliasing, colors quantized to 8 bits, so datasets are bit-reproducible.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .errors import DataError, FormatError

CLASS_NAMES = ("background", "sky", "ground", "circle", "square", "triangle",
               "stripe", "border")
NUM_CLASSES = len(CLASS_NAMES)

BASE_COLORS = np.array([
    (44, 44, 52),     # background
    (96, 144, 212),   # sky
    (90, 120, 62),    # ground
    (212, 68, 52),    # circle
    (238, 200, 64),   # square
    (64, 182, 96),    # triangle
    (164, 84, 176),   # stripe
    (230, 230, 234),  # border
], dtype=np.int64)


@dataclass(frozen=True)
class SceneSpec:
    """Fully determines one sample; rendering is a pure function of this."""

    size: int
    horizon: int | None                  # None = flat background
    shapes: tuple                        # ("circle", cx, cy, r) and friends
    border: int                          # frame thickness, 0 = none
    class_colors: tuple                  # C x 3 jittered ints, pre-illumination
    illumination: float
    seed: int = 0

    def with_appearance(self, class_colors, illumination):
        return replace(self, class_colors=tuple(map(tuple, class_colors)),
                       illumination=float(illumination))


@dataclass
class PairedSample:
    """Image in [0,1] (H, W, 3) with an aligned per-pixel class map."""

    image: np.ndarray
    semantics: np.ndarray

    def __post_init__(self):
        self.image = np.asarray(self.image, dtype=np.float32)
        self.semantics = np.asarray(self.semantics)
        if self.image.shape[:2] != self.semantics.shape:
            raise DataError(
                f"image {self.image.shape} and semantics {self.semantics.shape} disagree"
            )
        if self.semantics.min() < 0 or self.semantics.max() >= NUM_CLASSES:
            raise DataError("semantic class id outside the palette")


def _sample_rngs(seed, index):
    geom = np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, index, 0])))
    look = np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, index, 1])))
    return geom, look


def sample_scene_spec(seed, index, size=32):
    """Draw geometry and appearance for sample `index` of dataset `seed`."""
    geom, look = _sample_rngs(seed, index)

    def even(lo, hi):
        # geometry snaps to even pixels: halves boundary-phase diversity per
        # axis, which keeps the desk-scale latent grid learnable
        return 2 * int(geom.integers(lo // 2, hi // 2 + 1))

    if geom.random() < 0.15:
        horizon = None
    else:
        horizon = even(int(size * 0.3), int(size * 0.7))

    shapes = []
    for _ in range(int(geom.integers(1, 5))):
        kind = ("circle", "square", "triangle", "stripe")[int(geom.integers(0, 4))]
        if kind == "circle":
            r = int(geom.integers(4, max(6, size // 4) + 1))
            cx = even(4, size - 4)
            cy = even(4, size - 4)
            shapes.append(("circle", cx, cy, r))
        elif kind == "square":
            side = even(max(6, size // 5), max(8, int(size * 0.45)))
            x0 = even(0, size - side)
            y0 = even(0, size - side)
            shapes.append(("square", x0, y0, side))
        elif kind == "triangle":
            height = even(max(6, size // 5), max(8, int(size * 0.5)))
            half_base = even(4, max(6, int(size * 0.3)))
            ax = even(4, size - 4)
            ay = even(0, max(0, size - height))
            shapes.append(("triangle", ax, ay, height, half_base))
        else:
            t = even(2, max(4, size // 8))
            pos = even(0, size - t)
            orientation = int(geom.integers(0, 2))
            shapes.append(("stripe", orientation, pos, t))

    border = 0
    if geom.random() < 0.25:
        border = int(geom.integers(1, max(2, size // 16) + 1))

    jitter = look.integers(-26, 27, size=BASE_COLORS.shape)
    colors = np.clip(BASE_COLORS + jitter, 0, 255)
    illumination = float(look.uniform(0.8, 1.2))
    return SceneSpec(size=size, horizon=horizon, shapes=tuple(shapes), border=border,
                     class_colors=tuple(map(tuple, colors.tolist())),
                     illumination=illumination, seed=seed)


def render_semantics(spec):
    """Class map from geometry alone; appearance never touches it."""
    s = spec.size
    yy, xx = np.mgrid[0:s, 0:s]
    if spec.horizon is None:
        sem = np.zeros((s, s), dtype=np.int64)
    else:
        sem = np.where(yy < spec.horizon, 1, 2).astype(np.int64)
    for shape in spec.shapes:
        kind = shape[0]
        if kind == "circle":
            _, cx, cy, r = shape
            mask = (xx - cx) ** 2 + (yy - cy) ** 2 <= r * r
            sem[mask] = 3
        elif kind == "square":
            _, x0, y0, side = shape
            sem[y0:y0 + side, x0:x0 + side] = 4
        elif kind == "triangle":
            _, ax, ay, height, half_base = shape
            rel = yy - ay
            mask = (rel >= 0) & (rel <= height) & \
                   (np.abs(xx - ax) * height <= rel * half_base)
            sem[mask] = 5
        elif kind == "stripe":
            _, orientation, pos, t = shape
            if orientation == 0:
                sem[pos:pos + t, :] = 6
            else:
                sem[:, pos:pos + t] = 6
    if spec.border:
        b = spec.border
        sem[:b, :] = 7
        sem[-b:, :] = 7
        sem[:, :b] = 7
        sem[:, -b:] = 7
    return sem


def render_image(spec, semantics=None):
    """Rendered uint8 image as float32 in [0,1]."""
    if semantics is None:
        semantics = render_semantics(spec)
    colors = np.asarray(spec.class_colors, dtype=np.float64) * spec.illumination
    colors = np.clip(np.rint(colors), 0, 255).astype(np.uint8)
    img = colors[semantics]
    return img.astype(np.float32) / np.float32(255.0)


def generate_sample(seed, index, size=32):
    spec = sample_scene_spec(seed, index, size)
    sem = render_semantics(spec)
    return PairedSample(render_image(spec, sem), sem)


def generate_dataset(n, seed, image_size=32):
    """n reproducible paired samples; per-sample derived seeds."""
    if n < 1:
        raise DataError(f"need n >= 1, got {n}")
    return [generate_sample(seed, i, image_size) for i in range(n)]


def colorize_semantics(sem):
    """Display rendering of a class map with the base palette (float [0,1])."""
    return BASE_COLORS.astype(np.float32)[np.asarray(sem)] / np.float32(255.0)


# PPM / PGM ------------------------------------------------------------------


def write_image_ppm(image):
    """Binary PPM (P6, maxval 255) bytes for an image in [0,1]."""
    image = np.asarray(image)
    if image.ndim != 3 or image.shape[2] != 3:
        raise DataError(f"expected (H, W, 3) image, got {image.shape}")
    if image.min() < 0.0 or image.max() > 1.0:
        raise DataError("image values must lie in [0, 1]")
    h, w, _ = image.shape
    payload = np.rint(image.astype(np.float64) * 255.0).astype(np.uint8)
    return b"P6\n%d %d\n255\n" % (w, h) + payload.tobytes()


def write_semantics_pgm(semantics):
    """Binary PGM (P5, maxval 255) bytes for an integer class map."""
    sem = np.asarray(semantics)
    if sem.ndim != 2:
        raise DataError(f"expected (H, W) map, got {sem.shape}")
    if sem.min() < 0 or sem.max() > 255:
        raise DataError("class ids must lie in [0, 255]")
    h, w = sem.shape
    return b"P5\n%d %d\n255\n" % (w, h) + sem.astype(np.uint8).tobytes()


def _parse_header(data, magic):
    if data[:2] != magic:
        raise FormatError(f"bad magic, expected {magic!r}", offset=0)
    pos = 2
    fields = []
    while len(fields) < 3:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise FormatError("truncated header", offset=pos)
        token = data[start:pos]
        if not token.isdigit():
            raise FormatError(f"non-numeric header field {token!r}", offset=start)
        fields.append(int(token))
    if pos >= len(data):
        raise FormatError("missing payload separator", offset=pos)
    pos += 1  # single whitespace byte after maxval
    w, h, maxval = fields
    if maxval != 255:
        raise FormatError(f"unsupported maxval {maxval}", offset=pos)
    return w, h, pos


def read_image_ppm(data):
    """Inverse of write_image_ppm; float32 in [0,1], exact k/255 values."""
    w, h, pos = _parse_header(data, b"P6")
    need = w * h * 3
    payload = data[pos:pos + need]
    if len(payload) != need:
        raise FormatError(f"payload holds {len(payload)} of {need} bytes",
                          offset=pos + len(payload))
    img = np.frombuffer(payload, dtype=np.uint8).reshape(h, w, 3)
    return img.astype(np.float32) / np.float32(255.0)


def read_semantics_pgm(data):
    """Inverse of write_semantics_pgm; int64 class map."""
    w, h, pos = _parse_header(data, b"P5")
    need = w * h
    payload = data[pos:pos + need]
    if len(payload) != need:
        raise FormatError(f"payload holds {len(payload)} of {need} bytes",
                          offset=pos + len(payload))
    return np.frombuffer(payload, dtype=np.uint8).reshape(h, w).astype(np.int64)


# dataset directories ----------------------------------------------------------


def save_dataset(samples, out_dir):
    """Write paired PPM/PGM files plus a tab-separated manifest."""
    from pathlib import Path

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    lines = []
    for i, sample in enumerate(samples):
        img_name = f"img_{i:05d}.ppm"
        sem_name = f"sem_{i:05d}.pgm"
        (out / img_name).write_bytes(write_image_ppm(sample.image))
        (out / sem_name).write_bytes(write_semantics_pgm(sample.semantics))
        lines.append(f"{img_name}\t{sem_name}\n")
    (out / "manifest.tsv").write_text("".join(lines), encoding="utf-8")
    return out / "manifest.tsv"


def load_dataset(in_dir):
    from pathlib import Path

    root = Path(in_dir)
    manifest = root / "manifest.tsv"
    if not manifest.exists():
        raise DataError(f"no manifest.tsv under {root}")
    samples = []
    for line in manifest.read_text(encoding="utf-8").splitlines():
        if not line:
            continue
        img_name, sem_name = line.split("\t")
        image = read_image_ppm((root / img_name).read_bytes())
        semantics = read_semantics_pgm((root / sem_name).read_bytes())
        samples.append(PairedSample(image, semantics))
    return samples
