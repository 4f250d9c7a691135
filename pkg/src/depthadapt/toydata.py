"""Procedural toy scenes with analytic depth, and a photometric domain shift.

A scene is a textured ground plane seen by a pinhole camera, closed by a back
wall, with a few fronto-parallel rectangles and ellipses standing on the
ground. Every object has one depth value, so the rendered depth at an object
pixel is exactly that value.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.ndimage import gaussian_filter

from .core import RngHandle, seeded_rng
from .datasets import DatasetManifest, write_depth_png, write_image_png

DEPTH_SCALE = 0.001  # depth PNGs store millimeters
MAX_DEPTH = 10.0
FOG_DISTANCE = 3.0
SCALE_RANGE = (0.85, 1.18)  # log-uniform
HORIZON_RANGE = (0.3, 0.45)  # fraction of the image height
OBJECT_COUNT = (1, 4)  # half-open
OBJECT_WIDTH = (0.3, 0.7)  # meters
OBJECT_HEIGHT = (0.4, 1.0)

# fixed target-domain transform: channel mixing, reduced contrast, lift, blur
SHIFT_MIX = np.array([[0.2, 0.7, 0.1], [0.1, 0.2, 0.7], [0.7, 0.1, 0.2]], dtype=np.float32)
SHIFT_CONTRAST = 0.4
SHIFT_LIFT = 0.25
SHIFT_GAMMA = 1.4
SHIFT_BLUR_SIGMA = 1.0


@dataclass
class SceneObject:
    kind: str  # "rect" or "ellipse"
    depth: float
    center_x: float
    bottom_y: float
    width_px: float
    height_px: float
    color: np.ndarray

    def mask(self, h, w) -> np.ndarray:
        ys, xs = np.mgrid[0:h, 0:w].astype(np.float32) + 0.5
        top = self.bottom_y - self.height_px
        if self.kind == "rect":
            return (np.abs(xs - self.center_x) <= self.width_px / 2) & (ys >= top) & (ys <= self.bottom_y)
        cy = self.bottom_y - self.height_px / 2
        return ((xs - self.center_x) / (self.width_px / 2)) ** 2 + ((ys - cy) / (self.height_px / 2)) ** 2 <= 1.0


@dataclass
class Scene:
    resolution: tuple[int, int]
    horizon: float
    focal: float
    wall_depth: float
    ground_colors: np.ndarray
    wall_color: np.ndarray
    objects: list[SceneObject] = field(default_factory=list)
    # metric size of the scene relative to its rendering; invisible in the image
    scale: float = 1.0


def random_scene(rng: RngHandle, resolution=(96, 96)) -> Scene:
    h, w = resolution
    horizon = h * rng.uniform(*HORIZON_RANGE)
    # ground depth is focal / (row - horizon): the bottom row sits ~1 m away
    focal = (h - horizon) * rng.uniform(0.9, 1.2)
    wall_depth = rng.uniform(3.5, 5.5)
    ground_colors = rng.uniform(0.15, 0.9, size=(2, 3)).astype(np.float32)
    wall_color = rng.uniform(0.2, 0.9, size=3).astype(np.float32)
    objects = []
    for _ in range(int(rng.integers(*OBJECT_COUNT))):
        depth = float(rng.uniform(1.0, wall_depth - 0.3))
        objects.append(
            SceneObject(
                kind="rect" if rng.random() < 0.5 else "ellipse",
                depth=depth,
                center_x=float(rng.uniform(0, w)),
                bottom_y=horizon + focal / depth,
                width_px=float(rng.uniform(*OBJECT_WIDTH) * focal / depth),
                height_px=float(rng.uniform(*OBJECT_HEIGHT) * focal / depth),
                color=rng.uniform(0.05, 1.0, size=3).astype(np.float32),
            )
        )
    objects.sort(key=lambda o: -o.depth)  # painter's order: far to near
    scale = float(np.exp(rng.uniform(*np.log(SCALE_RANGE))))
    return Scene((h, w), horizon, focal, wall_depth, ground_colors, wall_color, objects, scale)


def render_depth(scene: Scene) -> np.ndarray:
    h, w = scene.resolution
    rows = np.arange(h, dtype=np.float64) + 0.5
    below = rows - scene.horizon
    ground = np.where(below > 0, scene.focal / np.maximum(below, 1e-9), np.inf)
    depth = np.repeat(np.minimum(ground, scene.wall_depth)[:, None], w, axis=1)
    for obj in scene.objects:
        depth[obj.mask(h, w)] = obj.depth
    return depth.astype(np.float32)


def render_image(scene: Scene, depth: np.ndarray, rng: RngHandle | None = None) -> np.ndarray:
    h, w = scene.resolution
    ys, xs = np.mgrid[0:h, 0:w].astype(np.float64) + 0.5
    # ground checkerboard in world coordinates (0.5 m tiles)
    lateral = (xs - w / 2) * depth / scene.focal
    checker = (np.floor(lateral / 0.5) + np.floor(depth / 0.5)).astype(int) % 2
    img = scene.ground_colors[checker]
    wall = depth >= scene.wall_depth - 1e-6
    stripes = 0.85 + 0.15 * (np.floor(xs / 6) % 2)
    img[wall] = scene.wall_color * stripes[wall, None]
    for obj in scene.objects:
        m = obj.mask(h, w)
        shade = 0.75 + 0.25 * (ys[m] - (obj.bottom_y - obj.height_px)) / max(obj.height_px, 1.0)
        img[m] = obj.color * shade[:, None]
    fog = np.exp(-depth / FOG_DISTANCE)[..., None]
    img = img * fog + 0.75 * (1 - fog)
    if rng is not None:
        img = img + rng.generator.normal(0.0, 0.01, size=img.shape)
    return np.clip(img, 0.0, 1.0).astype(np.float32)


def photometric_shift(img: np.ndarray) -> np.ndarray:
    """The fixed color transform and blur that defines the toy target domain."""
    out = img @ SHIFT_MIX.T
    out = (out - 0.5) * SHIFT_CONTRAST + 0.5 + SHIFT_LIFT
    out = np.clip(out, 0.0, 1.0) ** SHIFT_GAMMA
    out = gaussian_filter(out, sigma=(SHIFT_BLUR_SIGMA, SHIFT_BLUR_SIGMA, 0))
    return np.clip(out, 0.0, 1.0).astype(np.float32)


def render(rng: RngHandle, resolution=(96, 96), shift: str = "none"):
    """Image and metric depth of one random scene.

    The image is rendered from the scene's canonical depth; the returned
    depth is multiplied by the scene scale, so absolute scale is not
    recoverable from the image alone.
    """
    scene = random_scene(rng, resolution)
    depth = render_depth(scene)
    img = render_image(scene, depth, rng)
    depth = np.minimum(depth * np.float32(scene.scale), MAX_DEPTH)
    if shift == "photometric":
        img = photometric_shift(img)
    elif shift != "none":
        raise ValueError(f"unknown shift {shift!r}")
    return img, depth, scene


def _write_split(root: Path, name: str, split: str, frames, with_depth: bool):
    (root / "images").mkdir(parents=True, exist_ok=True)
    if with_depth:
        (root / "depth").mkdir(parents=True, exist_ok=True)
    for i, (img, depth) in enumerate(frames):
        write_image_png(root / "images" / f"{i:05d}.png", img)
        if with_depth:
            write_depth_png(root / "depth" / f"{i:05d}.png", depth, DEPTH_SCALE)
    DatasetManifest(
        image_glob="images/*.png",
        depth_glob="depth/*.png" if with_depth else None,
        depth_scale_to_meters=DEPTH_SCALE,
        max_depth_m=MAX_DEPTH,
        name=name,
        split=split,
    ).write(root)


def make_toy_data(out_root, n_train: int = 100, n_test: int = 50, shift: str = "photometric",
                  resolution=(96, 96), seed: int = 0) -> dict[str, Path]:
    """Write source/{train,test} and target/{train,test} dataset trees.

    The target train split carries images only; target test keeps its depth
    for evaluation. Target scenes are drawn from streams disjoint from the
    source scenes.
    """
    out_root = Path(out_root)
    target_shift = "photometric" if shift == "photometric" else "none"
    if shift not in ("none", "photometric"):
        raise ValueError(f"unknown shift {shift!r}")
    layout = {
        "source_train": ("source/train", n_train, "none", True),
        "source_test": ("source/test", n_test, "none", True),
        "target_train": ("target/train", n_train, target_shift, False),
        "target_test": ("target/test", n_test, target_shift, True),
    }
    paths = {}
    for key, (rel, n, sh, with_depth) in layout.items():
        frames = []
        for i in range(n):
            img, depth, _ = render(seeded_rng(seed, f"toy/{key}/{i}"), resolution, sh)
            frames.append((img, depth))
        root = out_root / rel
        _write_split(root, f"toy-{key.replace('_', '-')}", rel.split("/")[1], frames, with_depth)
        paths[key] = root
    return paths
