"""Frozen seeded ViT feature extractors and the feature import path."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from mvnad import mvnt
from mvnad.core.nn import ParameterSet, add_attention_params, add_ffn_params, feed_forward, init_matrix, multi_head_attention
from mvnad.core.rng import Rng, mix64
from mvnad.core.tensor import Parameter, Tensor, layer_norm


class FeatureError(ValueError):
    pass


# per-modality input standardization: RGB around mid-grey, normals around +z
INPUT_STATS = {
    "rgb": ((0.5, 0.5, 0.5), (0.25, 0.25, 0.25)),
    "nv": ((0.0, 0.0, 1.0), (0.1, 0.1, 0.1)),
}
MODALITY_KEYS = {"rgb": 1, "nv": 2}


@dataclass(frozen=True)
class EncoderConfig:
    patch_size: int = 8
    embed_dim: int = 32
    levels: int = 2
    heads: int = 2
    ffn_mult: int = 2
    seed: int = 0
    pos_scale: float = 0.1  # amplitude of the sinusoidal position code

    def __post_init__(self):
        if self.patch_size < 1 or self.embed_dim < 1:
            raise ValueError("patch_size and embed_dim must be positive")
        if self.embed_dim % self.heads:
            raise ValueError(f"embed_dim {self.embed_dim} not divisible by heads {self.heads}")
        if self.levels < 1:
            raise ValueError("levels must be >= 1")


@dataclass
class FeaturePyramid:
    levels: list[np.ndarray]  # each N x D

    def __post_init__(self):
        if not self.levels:
            raise FeatureError("feature pyramid needs at least one level")
        n, d = np.shape(self.levels[0])
        for i, lv in enumerate(self.levels):
            if np.ndim(lv) != 2 or np.shape(lv) != (n, d):
                raise FeatureError(f"level {i} has shape {np.shape(lv)}, expected {(n, d)}")
            if not np.all(np.isfinite(lv)):
                raise FeatureError(f"level {i} has non-finite entries")

    @property
    def final(self) -> np.ndarray:
        return self.levels[-1]

    @property
    def n_tokens(self) -> int:
        return self.levels[0].shape[0]

    @property
    def dim(self) -> int:
        return self.levels[0].shape[1]


def sinusoidal_positions(n: int, d: int) -> np.ndarray:
    pos = np.arange(n, dtype=np.float64)[:, None]
    i = np.arange(d)[None, :]
    rate = 1.0 / (10000.0 ** ((i - i % 2) / d))
    angle = pos * rate
    return np.where(i % 2 == 0, np.sin(angle), np.cos(angle))


class FrozenEncoder:
    """A random-weight ViT whose weights derive from (seed, modality) only."""

    def __init__(self, config: EncoderConfig, modality: str = "rgb"):
        if modality not in INPUT_STATS:
            raise ValueError(f"unknown modality {modality!r}")
        self.config = config
        self.modality = modality
        rng = Rng(mix64(config.seed, MODALITY_KEYS[modality]), 0xE4C)
        p, d = config.patch_size, config.embed_dim
        ps = ParameterSet()
        ps["embed.W"] = Parameter(init_matrix(rng, 3 * p * p, d))
        ps["embed.b"] = Parameter(np.zeros(d))
        for l in range(config.levels):
            ps[f"block{l}.ln_g"] = Parameter(np.ones(d))
            ps[f"block{l}.ln_b"] = Parameter(np.zeros(d))
            add_attention_params(ps, f"block{l}.attn", d, rng)
            add_ffn_params(ps, f"block{l}.ffn", d, config.ffn_mult, rng)
        for prm in ps.values():
            prm.requires_grad = False
            prm.grad = None
        self.params = ps

    def param_hash(self) -> str:
        h = hashlib.sha256()
        for name, prm in self.params.items():
            h.update(name.encode())
            h.update(np.ascontiguousarray(prm.data).tobytes())
        return h.hexdigest()

    def patchify(self, image: np.ndarray) -> np.ndarray:
        image = np.asarray(image, dtype=np.float64)
        if image.ndim != 3 or image.shape[0] != 3:
            raise FeatureError(f"expected a 3 x H x W image, got {image.shape}")
        _, h, w = image.shape
        p = self.config.patch_size
        if h % p or w % p:
            raise FeatureError(f"image {h}x{w} not divisible by patch size {p}")
        mean, std = (np.asarray(v)[:, None, None] for v in INPUT_STATS[self.modality])
        x = (image - mean) / std
        x = x.reshape(3, h // p, p, w // p, p).transpose(1, 3, 0, 2, 4)
        return x.reshape((h // p) * (w // p), 3 * p * p)

    def __call__(self, image: np.ndarray) -> FeaturePyramid:
        return encode(self, image)


def encode(enc: FrozenEncoder, image: np.ndarray) -> FeaturePyramid:
    """Patchify, embed, add positions, run the pre-norm blocks; record every level."""
    cfg = enc.config
    ps = enc.params
    tokens = enc.patchify(image)
    x = tokens @ ps["embed.W"].data + ps["embed.b"].data
    x = x + cfg.pos_scale * sinusoidal_positions(x.shape[0], cfg.embed_dim)
    levels = []
    xt = Tensor(x)
    for l in range(cfg.levels):
        h = layer_norm(xt, ps[f"block{l}.ln_g"], ps[f"block{l}.ln_b"])
        xt = xt + multi_head_attention(h, h, h, ps.scoped(f"block{l}.attn"), cfg.heads)
        xt = xt + feed_forward(xt, ps.scoped(f"block{l}.ffn"))
        levels.append(xt.data.copy())
    return FeaturePyramid(levels)


def image_chw(image_hwc: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(np.asarray(image_hwc, dtype=np.float64).transpose(2, 0, 1))


def export_features(pyr: FeaturePyramid, directory: str | Path) -> None:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    for l, lv in enumerate(pyr.levels):
        mvnt.save(d / f"level_{l}.mvnt", np.asarray(lv, dtype=np.float64))


def import_features(files) -> FeaturePyramid:
    """Build a pyramid from ``level_<l>.mvnt`` files (a directory or an explicit list)."""
    if isinstance(files, (str, Path)) and Path(files).is_dir():
        found = {}
        for f in Path(files).glob("level_*.mvnt"):
            try:
                found[int(f.stem.split("_", 1)[1])] = f
            except ValueError:
                raise FeatureError(f"bad feature file name {f.name}") from None
        if sorted(found) != list(range(len(found))) or not found:
            raise FeatureError(f"{files}: level files must be numbered 0..L-1, found {sorted(found)}")
        files = [found[i] for i in range(len(found))]
    levels = []
    for f in files:
        arr = mvnt.load(f)
        if arr.ndim != 2:
            raise FeatureError(f"{f}: expected an N x D tensor, got shape {arr.shape}")
        levels.append(arr.astype(np.float64))
    try:
        return FeaturePyramid(levels)
    except FeatureError as exc:
        raise FeatureError(f"inconsistent feature files: {exc}") from None


def n_tokens_for(config: EncoderConfig, h: int, w: int) -> int:
    return (h // config.patch_size) * (w // config.patch_size)


def grid_shape(config: EncoderConfig, h: int, w: int) -> tuple[int, int]:
    if h % config.patch_size or w % config.patch_size:
        raise FeatureError(f"image {h}x{w} not divisible by patch size {config.patch_size}")
    return h // config.patch_size, w // config.patch_size

