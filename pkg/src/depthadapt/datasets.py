"""Dataset ingestion, adaptation-subset sampling and the augmentation chain.

Every dataset root carries a small ``manifest.yaml``::

    name: nyu-train
    split: train
    image_glob: "rgb/*.png"
    depth_glob: "depth/*.png"     # omit for unpaired (target) data
    depth_scale_to_meters: 0.001  # raw value * scale = meters
    max_depth_m: 10.0             # optional clipping value

Images and depth maps are paired by file stem.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
import torch
import torchvision.transforms.functional as TF
import yaml
from PIL import Image

from .core import DepthMap, ImageSample, RngHandle
from .networks import ConfigurationError

MANIFEST_FILE = "manifest.yaml"
MANIFEST_KEYS = {"name", "split", "image_glob", "depth_glob", "depth_scale_to_meters", "max_depth_m"}

# starting points for the benchmark datasets; a manifest in the root overrides them
LAYOUT_PRESETS = {
    "toy": {"image_glob": "images/*.png", "depth_glob": "depth/*.png", "depth_scale_to_meters": 0.001},
    "nyu": {"image_glob": "rgb/*.png", "depth_glob": "depth/*.png", "depth_scale_to_meters": 0.001, "max_depth_m": 10.0},
    "diml": {"image_glob": "rgb/*.png", "depth_glob": "depth/*.png", "depth_scale_to_meters": 0.001, "max_depth_m": 10.0},
    "vkitti": {"image_glob": "rgb/*.png", "depth_glob": "depth/*.png", "depth_scale_to_meters": 0.01, "max_depth_m": 80.0},
    "kitti": {"image_glob": "rgb/*.png", "depth_glob": "depth/*.png", "depth_scale_to_meters": 1 / 256, "max_depth_m": 80.0},
}


class IngestionError(RuntimeError):
    pass


class SubsetSizeError(ValueError):
    pass


@dataclass
class DatasetManifest:
    image_glob: str
    depth_glob: str | None = None
    depth_scale_to_meters: float = 1.0
    max_depth_m: float | None = None
    name: str = ""
    split: str = "train"

    @classmethod
    def read(cls, root, layout: str | None = None) -> "DatasetManifest":
        root = Path(root)
        fields = dict(LAYOUT_PRESETS.get(layout or "", {}))
        path = root / MANIFEST_FILE
        if path.exists():
            loaded = yaml.safe_load(path.read_text()) or {}
            unknown = set(loaded) - MANIFEST_KEYS
            if unknown:
                raise IngestionError(f"{path}: unknown manifest keys {sorted(unknown)}")
            fields.update(loaded)
        elif layout not in LAYOUT_PRESETS:
            raise IngestionError(f"{root} has no {MANIFEST_FILE} and layout {layout!r} is not a known preset")
        if "image_glob" not in fields:
            raise IngestionError(f"{path}: manifest lacks image_glob")
        fields.setdefault("name", root.name)
        return cls(**fields)

    def write(self, root):
        data = {k: v for k, v in self.__dict__.items() if v is not None}
        (Path(root) / MANIFEST_FILE).write_text(yaml.safe_dump(data, sort_keys=True))


@dataclass
class PairedDataset:
    items: list[tuple[ImageSample, DepthMap]]
    name: str = ""
    split: str = "train"

    def __post_init__(self):
        if not self.items:
            raise IngestionError(f"paired dataset {self.name!r} is empty")
        for image, depth in self.items:
            if image.shape != depth.shape:
                raise IngestionError(f"{image.source_id}: image {image.shape} and depth {depth.shape} differ")

    def __len__(self):
        return len(self.items)

    def subset(self, indices) -> "PairedDataset":
        return PairedDataset([self.items[i] for i in indices], self.name, self.split)


@dataclass
class UnpairedDataset:
    items: list[ImageSample]
    name: str = ""
    split: str = "train"

    def __post_init__(self):
        if not self.items:
            raise IngestionError(f"unpaired dataset {self.name!r} is empty")

    def __len__(self):
        return len(self.items)

    def subset(self, indices) -> "UnpairedDataset":
        return UnpairedDataset([self.items[i] for i in indices], self.name, self.split)


@dataclass(frozen=True)
class SubsetPair:
    source_subset: tuple[int, ...]
    target_subset: tuple[int, ...]
    size: int
    seed: int

    def as_dict(self) -> dict:
        return {"size": self.size, "seed": self.seed,
                "source_subset": list(self.source_subset), "target_subset": list(self.target_subset)}


# --------------------------------------------------------------------------
# file IO


def read_image(path) -> np.ndarray:
    try:
        with Image.open(path) as im:
            return np.asarray(im.convert("RGB"), dtype=np.float32) / 255.0
    except (OSError, ValueError) as exc:
        raise IngestionError(f"unreadable image {path}: {exc}") from exc


def read_depth(path, scale_to_meters: float) -> np.ndarray:
    path = Path(path)
    try:
        if path.suffix == ".npy":
            raw = np.load(path).astype(np.float64)
        else:
            with Image.open(path) as im:
                raw = np.asarray(im, dtype=np.float64)
    except (OSError, ValueError) as exc:
        raise IngestionError(f"unreadable depth map {path}: {exc}") from exc
    if raw.ndim == 3:
        raw = raw[..., 0]
    return (raw * scale_to_meters).astype(np.float32)


def write_depth_png(path, depths_m: np.ndarray, scale_to_meters: float = 0.001):
    raw = np.round(np.asarray(depths_m, dtype=np.float64) / scale_to_meters)
    if raw.max(initial=0) > 65535:
        raise ValueError("depth exceeds the 16-bit range at this scale")
    Image.fromarray(raw.astype(np.uint16)).save(path)


def write_image_png(path, pixels: np.ndarray):
    Image.fromarray(np.round(np.clip(pixels, 0, 1) * 255).astype(np.uint8)).save(path)


def _glob(root: Path, pattern: str) -> dict[str, Path]:
    return {p.stem: p for p in sorted(root.glob(pattern))}


def load_paired(root, layout: str | None = None) -> PairedDataset:
    root = Path(root)
    if not root.is_dir():
        raise IngestionError(f"dataset root {root} does not exist")
    manifest = DatasetManifest.read(root, layout)
    if not manifest.depth_glob:
        raise IngestionError(f"{root}: manifest has no depth_glob; use load_unpaired")
    images = _glob(root, manifest.image_glob)
    depths = _glob(root, manifest.depth_glob)
    items = []
    for key, image_path in images.items():
        if key not in depths:
            raise IngestionError(f"frame {key!r} has an image but no depth file in {root}")
        pixels = read_image(image_path)
        d = read_depth(depths[key], manifest.depth_scale_to_meters)
        mask = np.isfinite(d) & (d > 0)
        items.append((ImageSample(pixels, f"{manifest.name}/{key}"), DepthMap(d, mask, manifest.max_depth_m)))
    return PairedDataset(items, manifest.name, manifest.split)


def load_unpaired(root, layout: str | None = None) -> UnpairedDataset:
    root = Path(root)
    if not root.is_dir():
        raise IngestionError(f"dataset root {root} does not exist")
    manifest = DatasetManifest.read(root, layout)
    images = _glob(root, manifest.image_glob)
    items = [ImageSample(read_image(p), f"{manifest.name}/{key}") for key, p in images.items()]
    return UnpairedDataset(items, manifest.name, manifest.split)


# --------------------------------------------------------------------------
# subsets


def sample_subsets(S, T, n: int, rng: RngHandle) -> SubsetPair:
    """Draw equal-size index subsets of S and T uniformly without replacement."""
    n = int(n)
    if n < 1:
        raise SubsetSizeError(f"subset size must be positive, got {n}")
    if n > len(S) or n > len(T):
        raise SubsetSizeError(f"subset size {n} exceeds dataset sizes (|S|={len(S)}, |T|={len(T)})")
    src = rng.child("source").generator.choice(len(S), size=n, replace=False)
    tgt = rng.child("target").generator.choice(len(T), size=n, replace=False)
    return SubsetPair(tuple(int(i) for i in src), tuple(int(i) for i in tgt), n, rng.seed)


# --------------------------------------------------------------------------
# augmentation


@dataclass(frozen=True)
class AugmentConfig:
    output_resolution: tuple[int, int] = (224, 224)
    jitter_strength: float = 0.4
    rotation_degrees_max: float = 5.0
    scale_range: tuple[float, float] = (1.0, 1.5)
    crop_size: tuple[int, int] | None = None  # None: crop back to the input size
    enabled: bool = True
    scale_adjusts_depth: bool = False

    def __post_init__(self):
        h, w = self.output_resolution
        if h <= 0 or w <= 0:
            raise ConfigurationError(f"output resolution must be positive, got {self.output_resolution}")
        lo, hi = self.scale_range
        if not (0 < lo <= hi <= 2):
            raise ConfigurationError(f"scale_range must lie within (0, 2], got {self.scale_range}")
        if self.jitter_strength < 0 or self.rotation_degrees_max < 0:
            raise ConfigurationError("jitter strength and rotation must be non-negative")

    def disabled(self) -> "AugmentConfig":
        return replace(self, enabled=False)


def _resize(t: torch.Tensor, size, nearest=False) -> torch.Tensor:
    if tuple(t.shape[-2:]) == tuple(size):
        return t
    mode = TF.InterpolationMode.NEAREST if nearest else TF.InterpolationMode.BILINEAR
    return TF.resize(t, list(size), interpolation=mode, antialias=not nearest)


def _jitter(img: np.ndarray, factors) -> np.ndarray:
    brightness, contrast, saturation = factors
    out = img * brightness
    gray = out @ np.array([0.299, 0.587, 0.114], dtype=np.float32)
    out = (out - gray.mean()) * contrast + gray.mean()
    gray = (out @ np.array([0.299, 0.587, 0.114], dtype=np.float32))[..., None]
    out = (out - gray) * saturation + gray
    return np.clip(out, 0.0, 1.0).astype(np.float32)


def augment(image: ImageSample, depth: DepthMap | None, cfg: AugmentConfig, rng: RngHandle):
    """Color jitter, rotation, scaling, center crop, then resize to ``cfg.output_resolution``.

    The geometric steps are applied identically to the depth map (nearest
    interpolation). Pixels exposed by the rotation become invalid.
    """
    out_res = tuple(cfg.output_resolution)
    img_t = torch.from_numpy(image.pixels.transpose(2, 0, 1).copy())
    if depth is not None:
        d_t = torch.from_numpy(depth.depths.transpose(2, 0, 1).copy())
        m_t = torch.from_numpy(depth.valid_mask[None].astype(np.float32))

    if cfg.enabled:
        s = cfg.jitter_strength
        factors = rng.uniform(max(0.0, 1 - s), 1 + s, size=3)
        angle = float(rng.uniform(-cfg.rotation_degrees_max, cfg.rotation_degrees_max))
        scale = float(rng.uniform(*cfg.scale_range))
        if s > 0:
            img_t = torch.from_numpy(_jitter(img_t.numpy().transpose(1, 2, 0), factors).transpose(2, 0, 1).copy())
        h0, w0 = img_t.shape[-2:]
        crop = tuple(cfg.crop_size) if cfg.crop_size is not None else (h0, w0)
        scaled = (int(round(h0 * scale)), int(round(w0 * scale)))
        if crop[0] > scaled[0] or crop[1] > scaled[1]:
            raise ConfigurationError(f"crop {crop} larger than the scaled image {scaled}")
        if angle != 0.0:
            img_t = TF.rotate(img_t, angle, interpolation=TF.InterpolationMode.BILINEAR, fill=0.0)
            if depth is not None:
                d_t = TF.rotate(d_t, angle, interpolation=TF.InterpolationMode.NEAREST, fill=0.0)
                m_t = TF.rotate(m_t, angle, interpolation=TF.InterpolationMode.NEAREST, fill=0.0)
        img_t = TF.center_crop(_resize(img_t, scaled), list(crop))
        if depth is not None:
            d_t = TF.center_crop(_resize(d_t, scaled, nearest=True), list(crop))
            m_t = TF.center_crop(_resize(m_t, scaled, nearest=True), list(crop))
            if cfg.scale_adjusts_depth:
                d_t = d_t / scale

    img_t = _resize(img_t, out_res).clamp(0.0, 1.0)
    out_image = ImageSample(img_t.numpy().transpose(1, 2, 0), image.source_id)
    if depth is None:
        return out_image, None
    d_t = _resize(d_t, out_res, nearest=True)
    m_t = _resize(m_t, out_res, nearest=True)
    mask = m_t[0].numpy() > 0.5
    depths = np.where(mask, d_t[0].numpy(), 0.0).astype(np.float32)[..., None]
    return out_image, DepthMap(depths, mask, depth.max_depth)
