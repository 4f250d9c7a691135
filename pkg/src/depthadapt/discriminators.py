"""Latent-space and image-conditioned patch depth discriminators."""

from __future__ import annotations

import torch
import torch.nn as nn

from .core import RngHandle
from .networks import ConfigurationError, ShapeError

LEAK = 0.2
DROPOUT_P = 0.6
INIT_STD = 0.02

# (kernel, stride, padding) per convolution
LATENT_KERNELS = {
    "indoor": [((3, 3), (2, 2), (1, 1))] * 3,
    # rectangular kernels for wide outdoor latents (e.g. 8x16 at 256x512)
    "outdoor": [((4, 7), (2, 2), (1, 3)), ((3, 5), (2, 2), (1, 2)), ((3, 5), (2, 2), (1, 2))],
}

DD_MIN_RESOLUTION = 70


def _conv_out(n, k, s, p):
    return (n + 2 * p - k) // s + 1


def _init_normal(module: nn.Module, std=INIT_STD):
    for m in module.modules():
        if isinstance(m, (nn.Conv2d, nn.Linear)):
            nn.init.normal_(m.weight, 0.0, std)
            if m.bias is not None:
                nn.init.zeros_(m.bias)


class LatentDiscriminator(nn.Module):
    """Three strided convolutions with leaky ReLU, dropout after the last two, and a linear head.

    Indoor: 3x3 kernels, stride 2, padding 1 (7x7 -> 4x4 -> 2x2 -> 1x1).
    Outdoor: kernels (4,7), (3,5), (3,5), stride 2, "same"-style padding
    (8x16 -> 4x8 -> 2x4 -> 1x2). The head sees the flattened final features.
    """

    def __init__(self, variant: str, latent_shape, dropout_p: float = DROPOUT_P, widths=None):
        super().__init__()
        if variant not in LATENT_KERNELS:
            raise ConfigurationError(f"unknown latent discriminator variant {variant!r}")
        c, h, w = (int(v) for v in latent_shape)
        kernels = LATENT_KERNELS[variant]
        (kh, kw), _, _ = kernels[0]
        if h < kh or w < kw:
            raise ConfigurationError(f"latent {h}x{w} is smaller than the first kernel {kh}x{kw}")
        self.variant = variant
        self.latent_shape = (c, h, w)
        self.dropout_p = dropout_p
        widths = widths or [max(c // 2, 8), max(c // 4, 8), max(c // 8, 8)]
        layers = []
        c_prev = c
        for i, ((k, s, p), c_out) in enumerate(zip(kernels, widths)):
            layers += [nn.Conv2d(c_prev, c_out, k, s, p), nn.LeakyReLU(LEAK)]
            if i >= 1:
                layers.append(nn.Dropout(dropout_p))
            h, w = _conv_out(h, k[0], s[0], p[0]), _conv_out(w, k[1], s[1], p[1])
            c_prev = c_out
        self.features = nn.Sequential(*layers)
        self.head = nn.Linear(c_prev * h * w, 1)

    def forward(self, z):
        if tuple(z.shape[1:]) != self.latent_shape:
            raise ShapeError(f"latent shape {tuple(z.shape[1:])} != {self.latent_shape}")
        return self.head(torch.flatten(self.features(z), 1)).squeeze(1)


class DepthDiscriminator(nn.Module):
    """PatchGAN over the channel concatenation of image and normalized depth.

    Four stride-2 4x4 convolutions followed by a 3x3 score convolution, so a
    224x224 input yields a 14x14 score map.
    """

    def __init__(self, input_resolution, max_depth: float = 10.0, base_channels: int = 64):
        super().__init__()
        h, w = (int(v) for v in input_resolution)
        if h < DD_MIN_RESOLUTION or w < DD_MIN_RESOLUTION:
            raise ConfigurationError(f"resolution {h}x{w} below the {DD_MIN_RESOLUTION}x{DD_MIN_RESOLUTION} patch floor")
        self.input_resolution = (h, w)
        self.max_depth = float(max_depth)
        layers = []
        c_prev = 4
        for i in range(4):
            c = base_channels * 2 ** min(i, 3)
            layers += [nn.Conv2d(c_prev, c, 4, 2, 1), nn.LeakyReLU(LEAK)]
            c_prev = c
        layers.append(nn.Conv2d(c_prev, 1, 3, 1, 1))
        self.net = nn.Sequential(*layers)

    def score_map_size(self):
        h, w = self.input_resolution
        for _ in range(4):
            h, w = _conv_out(h, 4, 2, 1), _conv_out(w, 4, 2, 1)
        return h, w

    def forward(self, x):
        if x.dim() != 4 or x.shape[1] != 4:
            raise ShapeError(f"depth discriminator expects N x 4 x H x W input, got {tuple(x.shape)}")
        return self.net(x)


def build_latent_discriminator(variant, latent_shape, rng: RngHandle, **kwargs) -> LatentDiscriminator:
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(rng.torch_seed())
        ld = LatentDiscriminator(variant, latent_shape, **kwargs)
        _init_normal(ld)
    return ld


def build_depth_discriminator(input_resolution, rng: RngHandle, **kwargs) -> DepthDiscriminator:
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(rng.torch_seed())
        dd = DepthDiscriminator(input_resolution, **kwargs)
        _init_normal(dd)
    return dd


def _set_mode(module: nn.Module, mode: str):
    if mode not in ("train", "eval"):
        raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
    module.train(mode == "train")


def score_latent(ld: LatentDiscriminator, latents, mode: str = "eval") -> torch.Tensor:
    """One scalar domain score per latent; dropout is active only in train mode."""
    _set_mode(ld, mode)
    if hasattr(latents, "latent"):
        latents = latents.latent
    return ld(latents)


def depth_input(dd: DepthDiscriminator, images: torch.Tensor, depths: torch.Tensor) -> torch.Tensor:
    if images.dim() != 4 or images.shape[1] != 3:
        raise ShapeError(f"expected N x 3 x H x W images, got {tuple(images.shape)}")
    if depths.dim() != 4 or depths.shape[1] != 1:
        raise ShapeError(f"expected N x 1 x H x W depths, got {tuple(depths.shape)}")
    if images.shape[2:] != depths.shape[2:] or images.shape[0] != depths.shape[0]:
        raise ShapeError(f"image {tuple(images.shape)} and depth {tuple(depths.shape)} do not match")
    return torch.cat([images, depths.clamp(0, dd.max_depth) / dd.max_depth], dim=1)


def score_depth(dd: DepthDiscriminator, images, depths, mode: str = "eval") -> torch.Tensor:
    """Patch score map (N x 1 x h x w) for (image, depth) pairs."""
    _set_mode(dd, mode)
    return dd(depth_input(dd, images, depths))
