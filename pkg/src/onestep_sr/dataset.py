"""Procedural annotated dataset and the degradation chain.

Each sample is a 64x64 scene composed of a flat background, one textured
band, and a handful of labeled shapes.  Shape rasterization doubles as
the mask annotation, so masks are exact by construction.  Low-quality
counterparts come from a simplified four-stage degradation: Gaussian
blur, 4x box downsampling, additive Gaussian noise, block quantization.

On disk a dataset is a ``manifest.jsonl`` plus one little-endian float32
array file per field (``hq/NNNN.bin``, ``lq/NNNN.bin``, ``texture/NNNN.bin``,
``masks/NNNN_k.bin``), each stored in NumPy's .npy container so the shape
header travels with the data.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage

from .errors import ConfigError, DataError, ShapeError, VocabError

NOUNS = ("circle", "square", "triangle", "stripe", "grid", "dot", "ring", "cross")
ADJECTIVES = ("small", "large", "bright", "dark", "faint")
NULL_TOKEN = "<null>"
VOCABULARY = (NULL_TOKEN,) + NOUNS + ADJECTIVES

_TOKEN_IDS = {word: i for i, word in enumerate(VOCABULARY)}

TEXTURE_FLAT = 0.0
TEXTURE_TEXTURED = 1.0

SEED_STRIDE = 1_000_003


def token_id(word: str) -> int:
    try:
        return _TOKEN_IDS[word]
    except KeyError:
        raise VocabError(f"unknown token {word!r}") from None


@dataclass(frozen=True)
class SceneConfig:
    size: int = 64
    min_shapes: int = 1
    max_shapes: int = 3
    max_adjectives: int = 2

    def __post_init__(self):
        if self.size % 16:
            raise ConfigError(f"scene size must be divisible by 16, got {self.size}")
        if not 0 <= self.min_shapes <= self.max_shapes <= len(NOUNS):
            raise ConfigError("invalid shape count range")


@dataclass(frozen=True)
class DegradationParams:
    blur_sigma: float = 1.0
    downscale: int = 4
    noise_sigma: float = 0.02
    quant_block: int = 2

    def __post_init__(self):
        if self.blur_sigma < 0 or self.noise_sigma < 0:
            raise ConfigError("blur_sigma and noise_sigma must be >= 0")
        if self.downscale < 1:
            raise ConfigError(f"downscale must be >= 1, got {self.downscale}")
        if self.quant_block < 1:
            raise ConfigError(f"quant_block must be >= 1, got {self.quant_block}")


@dataclass
class AnnotatedSample:
    """One training/eval record: HQ scene, LQ counterpart, annotations."""

    hq: np.ndarray
    lq: np.ndarray | None
    prompt: tuple[tuple[str, str], ...]
    nouns: tuple[str, ...]
    masks: tuple[np.ndarray, ...]
    texture_class: np.ndarray
    seed: int

    def mask_for(self, noun: str) -> np.ndarray:
        return self.masks[self.nouns.index(noun)]


def _rand_color(rng, lo=0.1, hi=0.9):
    return rng.uniform(lo, hi, size=3)


def _contrasting_color(rng, reference):
    for _ in range(32):
        c = _rand_color(rng)
        if np.abs(c - reference).sum() > 0.6:
            return c
    return 1.0 - reference


def _raster_shape(noun: str, size: int, rng: np.random.Generator) -> np.ndarray:
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    if noun == "circle":
        r = rng.uniform(6, 11)
        cx, cy = rng.uniform(r + 1, size - r - 1, size=2)
        return (xx - cx) ** 2 + (yy - cy) ** 2 <= r**2
    if noun == "dot":
        r = rng.uniform(2.0, 4.0)
        cx, cy = rng.uniform(r + 1, size - r - 1, size=2)
        return (xx - cx) ** 2 + (yy - cy) ** 2 <= r**2
    if noun == "ring":
        r = rng.uniform(7, 11)
        t = rng.uniform(2.0, 3.5)
        cx, cy = rng.uniform(r + 1, size - r - 1, size=2)
        d2 = (xx - cx) ** 2 + (yy - cy) ** 2
        return (d2 <= r**2) & (d2 >= (r - t) ** 2)
    if noun in ("square", "grid"):
        s = int(rng.integers(12, 21))
        x0 = int(rng.integers(1, size - s - 1))
        y0 = int(rng.integers(1, size - s - 1))
        mask = np.zeros((size, size), dtype=bool)
        mask[y0 : y0 + s, x0 : x0 + s] = True
        return mask
    if noun == "triangle":
        s = rng.uniform(12, 20)
        cx = rng.uniform(s / 2 + 1, size - s / 2 - 1)
        y0 = rng.uniform(1, size - s - 1)
        # upright isoceles: apex at (cx, y0), base at y0 + s
        inside = (yy >= y0) & (yy <= y0 + s)
        half_width = (yy - y0) / 2.0
        return inside & (np.abs(xx - cx) <= half_width)
    if noun == "stripe":
        theta = rng.uniform(0, np.pi)
        width = rng.uniform(4, 7)
        offset = rng.uniform(0.3, 0.7) * size
        proj = xx * np.cos(theta) + yy * np.sin(theta)
        return np.abs(proj - offset) <= width / 2.0
    if noun == "cross":
        s = int(rng.integers(12, 21))
        t = int(rng.integers(3, 6))
        cx = int(rng.integers(s // 2 + 1, size - s // 2 - 1))
        cy = int(rng.integers(s // 2 + 1, size - s // 2 - 1))
        mask = np.zeros((size, size), dtype=bool)
        mask[cy - t // 2 : cy + (t + 1) // 2, cx - s // 2 : cx + s // 2] = True
        mask[cy - s // 2 : cy + s // 2, cx - t // 2 : cx + (t + 1) // 2] = True
        return mask
    raise VocabError(f"no rasterizer for noun {noun!r}")


def synth_hq(rng: np.random.Generator, config: SceneConfig = SceneConfig()) -> AnnotatedSample:
    """Composite a scene and its annotations; ``lq`` is left unset."""
    size = config.size
    bg = _rand_color(rng, 0.15, 0.85)
    img = np.broadcast_to(bg, (size, size, 3)).copy()
    texture = np.zeros((size, size), dtype=np.float64)

    # textured band: axis-aligned strip carrying a sinusoidal pattern
    band_width = int(rng.integers(16, 29))
    band_start = int(rng.integers(0, size - band_width + 1))
    horizontal = bool(rng.integers(0, 2))
    band = np.zeros((size, size), dtype=bool)
    if horizontal:
        band[band_start : band_start + band_width, :] = True
    else:
        band[:, band_start : band_start + band_width] = True
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    freq = rng.uniform(0.25, 0.7)
    phase = rng.uniform(0, 2 * np.pi)
    angle = rng.uniform(0, np.pi)
    wave = np.sin(freq * (xx * np.cos(angle) + yy * np.sin(angle)) + phase)
    band_color = _contrasting_color(rng, bg)
    amp = rng.uniform(0.25, 0.4)
    band_img = np.clip(band_color[None, None, :] + amp * wave[..., None], 0.0, 1.0)
    img[band] = band_img[band]
    texture[band] = TEXTURE_TEXTURED

    n_shapes = int(rng.integers(config.min_shapes, config.max_shapes + 1))
    chosen = [NOUNS[i] for i in rng.choice(len(NOUNS), size=n_shapes, replace=False)]
    nouns, masks = [], []
    for noun in chosen:
        mask = _raster_shape(noun, size, rng)
        color = _contrasting_color(rng, bg)
        if noun == "grid":
            # two-tone 2px lattice, so the shape itself is textured
            alt = _contrasting_color(rng, color)
            cell = ((yy // 2).astype(int) + (xx // 2).astype(int)) % 2 == 0
            img[mask & cell] = color
            img[mask & ~cell] = alt
            texture[mask] = TEXTURE_TEXTURED
        else:
            img[mask] = color
        nouns.append(noun)
        masks.append(mask.astype(np.float32))

    n_adj = int(rng.integers(0, config.max_adjectives + 1))
    adjs = [ADJECTIVES[i] for i in rng.choice(len(ADJECTIVES), size=n_adj, replace=False)]
    prompt = tuple((a, "adj") for a in adjs) + tuple((n, "noun") for n in nouns)

    return AnnotatedSample(
        hq=np.clip(img, 0.0, 1.0).astype(np.float32),
        lq=None,
        prompt=prompt,
        nouns=tuple(nouns),
        masks=tuple(masks),
        texture_class=texture.astype(np.float32),
        seed=-1,
    )


def degrade(
    hq: np.ndarray, params: DegradationParams, rng: np.random.Generator
) -> np.ndarray:
    """Blur -> box downsample -> additive noise -> block quantization."""
    hq = np.asarray(hq, dtype=np.float64)
    if hq.ndim != 3 or hq.shape[2] != 3:
        raise ShapeError(f"expected an H x W x 3 image, got {hq.shape}")
    h, w, _ = hq.shape
    d = params.downscale
    if h % d or w % d:
        raise ConfigError(f"downscale {d} does not divide image size {h}x{w}")

    x = hq
    if params.blur_sigma > 0:
        x = ndimage.gaussian_filter(x, sigma=(params.blur_sigma, params.blur_sigma, 0.0),
                                    mode="nearest")
    x = x.reshape(h // d, d, w // d, d, 3).mean(axis=(1, 3))
    if params.noise_sigma > 0:
        x = np.clip(x + rng.normal(0.0, params.noise_sigma, size=x.shape), 0.0, 1.0)
    q = params.quant_block
    if q > 1:
        lh, lw, _ = x.shape
        if lh % q or lw % q:
            raise ConfigError(f"quant_block {q} does not divide LQ size {lh}x{lw}")
        blocks = x.reshape(lh // q, q, lw // q, q, 3).mean(axis=(1, 3))
        blocks = np.rint(blocks * 31.0) / 31.0
        x = np.repeat(np.repeat(blocks, q, axis=0), q, axis=1)
    return np.clip(x, 0.0, 1.0).astype(np.float32)


def make_sample(
    seed: int,
    scene_config: SceneConfig = SceneConfig(),
    deg_params: DegradationParams = DegradationParams(),
) -> AnnotatedSample:
    rng = np.random.default_rng(seed)
    sample = synth_hq(rng, scene_config)
    sample.lq = degrade(sample.hq, deg_params, rng)
    sample.seed = seed
    return sample


def generate_dataset(
    count: int,
    base_seed: int,
    scene_config: SceneConfig = SceneConfig(),
    deg_params: DegradationParams = DegradationParams(),
) -> list[AnnotatedSample]:
    return [
        make_sample((base_seed * SEED_STRIDE + i) % 2**63, scene_config, deg_params)
        for i in range(count)
    ]


def _save_array(path: Path, arr: np.ndarray) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        np.save(fh, np.ascontiguousarray(arr, dtype="<f4"))


def _load_array(root: Path, rel: str) -> np.ndarray:
    path = root / rel
    if not path.is_file():
        raise DataError(f"dataset file missing: {path}")
    try:
        return np.load(path, allow_pickle=False)
    except Exception as exc:
        raise DataError(f"unreadable dataset file {path}: {exc}") from exc


def write_dataset(samples: list[AnnotatedSample], directory) -> None:
    root = Path(directory)
    root.mkdir(parents=True, exist_ok=True)
    lines = []
    for i, s in enumerate(samples):
        stem = f"{i:04d}"
        rec = {
            "index": i,
            "seed": int(s.seed),
            "prompt": [[w, t] for w, t in s.prompt],
            "nouns": list(s.nouns),
            "hq": f"hq/{stem}.bin",
            "lq": f"lq/{stem}.bin",
            "texture": f"texture/{stem}.bin",
            "masks": [f"masks/{stem}_{k}.bin" for k in range(len(s.masks))],
        }
        _save_array(root / rec["hq"], s.hq)
        _save_array(root / rec["lq"], s.lq)
        _save_array(root / rec["texture"], s.texture_class)
        for rel, mask in zip(rec["masks"], s.masks):
            _save_array(root / rel, mask)
        lines.append(json.dumps(rec, sort_keys=True))
    with open(root / "manifest.jsonl", "w", encoding="utf-8") as fh:
        fh.write("".join(line + "\n" for line in lines))


def read_dataset(directory) -> list[AnnotatedSample]:
    root = Path(directory)
    manifest = root / "manifest.jsonl"
    if not manifest.is_file():
        raise DataError(f"no manifest.jsonl in {root}")
    samples = []
    with open(manifest, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataError(f"corrupt manifest at sample {lineno}: {exc}") from exc
            try:
                samples.append(
                    AnnotatedSample(
                        hq=_load_array(root, rec["hq"]),
                        lq=_load_array(root, rec["lq"]),
                        prompt=tuple((w, t) for w, t in rec["prompt"]),
                        nouns=tuple(rec["nouns"]),
                        masks=tuple(_load_array(root, rel) for rel in rec["masks"]),
                        texture_class=_load_array(root, rec["texture"]),
                        seed=int(rec["seed"]),
                    )
                )
            except KeyError as exc:
                raise DataError(f"manifest record {lineno} missing field {exc}") from exc
    return samples
