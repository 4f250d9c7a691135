"""Encoder-decoder depth networks.

Two families are provided:

* ``lightweight``: a MobileNet encoder with a depthwise-separable decoder,
  nearest-neighbour upsampling and additive skip connections.
* ``complex``: a ResNet-50 encoder with an up-projection decoder.

Each has a ``-tiny`` variant with all channel counts divided by 8, used for
fast tests and gradient checks.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
import torch
import torch.nn as nn

from .core import (
    CheckpointError,
    RngHandle,
    arrays_to_state,
    images_to_tensor,
    load_checkpoint,
    manifest_diff,
    save_checkpoint,
    state_to_arrays,
)

ARCH_IDS = ("lightweight", "complex", "lightweight-tiny", "complex-tiny")

# MobileNet layer table: (out_channels, stride); layer0 is a full 3x3 conv.
MOBILENET_LAYERS = [
    (32, 2), (64, 1), (128, 2), (128, 1), (256, 2), (256, 1), (512, 2),
    (512, 1), (512, 1), (512, 1), (512, 1), (512, 1), (1024, 2), (1024, 1),
]
# encoder layers whose outputs feed the decoder (strides 4, 8, 16)
MOBILENET_SKIP_LAYERS = (3, 5, 11)
# the last four convolutional stages are adapted on the target domain
MOBILENET_ADAPTABLE_LAYERS = (10, 11, 12, 13)

RESNET50_STAGES = [(64, 3, 1), (128, 4, 2), (256, 6, 2), (512, 3, 2)]  # (width, blocks, stride)
COMPLEX_ADAPTABLE_PREFIX = "encoder.stage5."

# reference totals the builds are expected to land near
REFERENCE_PARAMS = {"lightweight": 3.93e6, "complex": 63.6e6}


class ConfigurationError(ValueError):
    pass


class ShapeError(ValueError):
    pass


@dataclass(frozen=True)
class ArchitectureSpec:
    id: str
    input_resolution: tuple[int, int]
    skip_connections: bool = True
    output_activation: str = "nonneg"

    def __post_init__(self):
        if self.id not in ARCH_IDS:
            raise ConfigurationError(f"unknown architecture id {self.id!r}; expected one of {ARCH_IDS}")
        h, w = self.input_resolution
        object.__setattr__(self, "input_resolution", (int(h), int(w)))
        if h <= 0 or w <= 0 or h % 32 or w % 32:
            raise ConfigurationError(f"resolution {h}x{w} is not a positive multiple of 32")
        if self.output_activation != "nonneg":
            raise ConfigurationError(f"unsupported output activation {self.output_activation!r}")

    @property
    def family(self) -> str:
        return self.id.split("-")[0]

    @property
    def width_divisor(self) -> int:
        return 8 if self.id.endswith("-tiny") else 1

    @property
    def latent_resolution(self) -> tuple[int, int]:
        h, w = self.input_resolution
        return h // 32, w // 32


class Encoding(NamedTuple):
    latent: torch.Tensor
    skips: tuple[torch.Tensor, ...] = ()


# --------------------------------------------------------------------------
# building blocks


def conv_bn_relu(c_in, c_out, kernel, stride=1, groups=1):
    return nn.Sequential(
        nn.Conv2d(c_in, c_out, kernel, stride, kernel // 2, groups=groups, bias=False),
        nn.BatchNorm2d(c_out),
        nn.ReLU(inplace=True),
    )


class DepthwiseSeparable(nn.Sequential):
    """Depthwise conv + pointwise conv, each followed by BN and ReLU."""

    def __init__(self, c_in, c_out, stride=1, kernel=3):
        super().__init__()
        self.depthwise = conv_bn_relu(c_in, c_in, kernel, stride, groups=c_in)
        self.pointwise = conv_bn_relu(c_in, c_out, 1)


class MobileNetEncoder(nn.Module):
    def __init__(self, divisor=1):
        super().__init__()
        c_prev = 3
        for i, (c, s) in enumerate(MOBILENET_LAYERS):
            c = c // divisor
            layer = conv_bn_relu(c_prev, c, 3, s) if i == 0 else DepthwiseSeparable(c_prev, c, s)
            self.add_module(f"layer{i}", layer)
            c_prev = c
        self.out_channels = c_prev
        self.skip_channels = tuple(MOBILENET_LAYERS[i][0] // divisor for i in reversed(MOBILENET_SKIP_LAYERS))

    def forward(self, x) -> Encoding:
        skips = []
        for i in range(len(MOBILENET_LAYERS)):
            x = getattr(self, f"layer{i}")(x)
            if i in MOBILENET_SKIP_LAYERS:
                skips.append(x)
        # deepest skip first, matching decoder order
        return Encoding(x, tuple(reversed(skips)))


class FastDecoder(nn.Module):
    """Five 5x5 depthwise-separable stages, each followed by 2x nearest upsampling."""

    def __init__(self, c_in, skip_channels=(), divisor=1):
        super().__init__()
        widths = [c // divisor for c in (512, 256, 128, 64, 32)]
        c_prev = c_in
        for i, c in enumerate(widths, start=1):
            self.add_module(f"decode{i}", DepthwiseSeparable(c_prev, c, kernel=5))
            c_prev = c
        for skip_c, dec_c in zip(skip_channels, widths):
            if skip_c != dec_c:
                raise ConfigurationError(f"skip with {skip_c} channels cannot merge into {dec_c}")
        self.n_skips = len(skip_channels)
        self.head = nn.Conv2d(c_prev, 1, 1)
        self.upsample = nn.Upsample(scale_factor=2, mode="nearest")
        self.activation = nn.Softplus()

    def forward(self, enc: Encoding):
        x = enc.latent
        if len(enc.skips) != self.n_skips:
            raise ShapeError(f"decoder expects {self.n_skips} skip tensors, got {len(enc.skips)}")
        for i in range(1, 6):
            x = self.upsample(getattr(self, f"decode{i}")(x))
            if i <= self.n_skips:
                x = x + enc.skips[i - 1]
        return self.activation(self.head(x))


class Bottleneck(nn.Module):
    expansion = 4

    def __init__(self, c_in, width, stride=1):
        super().__init__()
        c_out = width * self.expansion
        self.conv1 = nn.Conv2d(c_in, width, 1, bias=False)
        self.bn1 = nn.BatchNorm2d(width)
        self.conv2 = nn.Conv2d(width, width, 3, stride, 1, bias=False)
        self.bn2 = nn.BatchNorm2d(width)
        self.conv3 = nn.Conv2d(width, c_out, 1, bias=False)
        self.bn3 = nn.BatchNorm2d(c_out)
        self.relu = nn.ReLU(inplace=True)
        self.downsample = None
        if stride != 1 or c_in != c_out:
            self.downsample = nn.Sequential(nn.Conv2d(c_in, c_out, 1, stride, bias=False), nn.BatchNorm2d(c_out))

    def forward(self, x):
        identity = x if self.downsample is None else self.downsample(x)
        out = self.relu(self.bn1(self.conv1(x)))
        out = self.relu(self.bn2(self.conv2(out)))
        out = self.bn3(self.conv3(out))
        return self.relu(out + identity)


class ResNetEncoder(nn.Module):
    def __init__(self, divisor=1):
        super().__init__()
        c = 64 // divisor
        self.stem = nn.Sequential(
            nn.Conv2d(3, c, 7, 2, 3, bias=False),
            nn.BatchNorm2d(c),
            nn.ReLU(inplace=True),
            nn.MaxPool2d(3, 2, 1),
        )
        for idx, (width, blocks, stride) in enumerate(RESNET50_STAGES, start=2):
            width = width // divisor
            layers = []
            for b in range(blocks):
                layers.append(Bottleneck(c, width, stride if b == 0 else 1))
                c = width * Bottleneck.expansion
            self.add_module(f"stage{idx}", nn.Sequential(*layers))
        self.out_channels = c
        self.skip_channels = ()

    def forward(self, x) -> Encoding:
        x = self.stem(x)
        for idx in range(2, 6):
            x = getattr(self, f"stage{idx}")(x)
        return Encoding(x)


class Unpool(nn.Module):
    """2x unpooling that places each value in the top-left of a zero 2x2 cell."""

    def forward(self, x):
        n, c, h, w = x.shape
        out = x.new_zeros(n, c, h, 2, w, 2)
        out[:, :, :, 0, :, 0] = x
        return out.reshape(n, c, 2 * h, 2 * w)


class UpProjection(nn.Module):
    def __init__(self, c_in, c_out):
        super().__init__()
        self.unpool = Unpool()
        self.conv1 = nn.Conv2d(c_in, c_out, 5, 1, 2, bias=False)
        self.bn1 = nn.BatchNorm2d(c_out)
        self.conv2 = nn.Conv2d(c_out, c_out, 3, 1, 1, bias=False)
        self.bn2 = nn.BatchNorm2d(c_out)
        self.proj = nn.Conv2d(c_in, c_out, 5, 1, 2, bias=False)
        self.bn_proj = nn.BatchNorm2d(c_out)
        self.relu = nn.ReLU(inplace=True)

    def forward(self, x):
        x = self.unpool(x)
        branch = self.bn2(self.conv2(self.relu(self.bn1(self.conv1(x)))))
        return self.relu(branch + self.bn_proj(self.proj(x)))


class UpProjDecoder(nn.Module):
    def __init__(self, c_in, divisor=1):
        super().__init__()
        c = 1024 // divisor
        self.bridge = nn.Sequential(nn.Conv2d(c_in, c, 1, bias=False), nn.BatchNorm2d(c))
        for i in range(1, 6):
            self.add_module(f"up{i}", UpProjection(c, c // 2))
            c //= 2
        self.head = nn.Conv2d(c, 1, 3, 1, 1)
        self.activation = nn.Softplus()

    def forward(self, enc: Encoding):
        if enc.skips:
            raise ShapeError("up-projection decoder takes no skip tensors")
        x = self.bridge(enc.latent)
        for i in range(1, 6):
            x = getattr(self, f"up{i}")(x)
        return self.activation(self.head(x))


# --------------------------------------------------------------------------
# the network


class DepthNetwork(nn.Module):
    """Depth network ``decoder(encoder(x))`` with an explicit adaptable subset of the encoder."""

    def __init__(self, spec: ArchitectureSpec):
        super().__init__()
        self.spec = spec
        d = spec.width_divisor
        if spec.family == "lightweight":
            self.encoder = MobileNetEncoder(d)
            skips = self.encoder.skip_channels if spec.skip_connections else ()
            self.decoder = FastDecoder(self.encoder.out_channels, skips, d)
            prefixes = tuple(f"encoder.layer{i}." for i in MOBILENET_ADAPTABLE_LAYERS)
        else:
            self.encoder = ResNetEncoder(d)
            self.decoder = UpProjDecoder(self.encoder.out_channels, d)
            prefixes = (COMPLEX_ADAPTABLE_PREFIX,)
        self.adaptable_names = [n for n, _ in self.named_parameters() if n.startswith(prefixes)]

    def check_input(self, x: torch.Tensor) -> None:
        if x.dim() != 4 or x.shape[1] != 3:
            raise ShapeError(f"expected N x 3 x H x W images, got {tuple(x.shape)}")
        if x.shape[0] and tuple(x.shape[2:]) != self.spec.input_resolution:
            raise ShapeError(f"input resolution {tuple(x.shape[2:])} != {self.spec.input_resolution}")

    def encode(self, x: torch.Tensor) -> Encoding:
        self.check_input(x)
        enc = self.encoder(x)
        if not self.spec.skip_connections:
            enc = Encoding(enc.latent)
        return enc

    def decode(self, enc) -> torch.Tensor:
        if isinstance(enc, torch.Tensor):
            enc = Encoding(enc)
        expect = (self.encoder.out_channels, *self.spec.latent_resolution)
        if enc.latent.dim() != 4 or tuple(enc.latent.shape[1:]) != expect:
            raise ShapeError(f"latent shape {tuple(enc.latent.shape[1:])} != {expect}")
        return self.decoder(enc)

    def forward(self, x):
        return self.decode(self.encode(x))

    def parameter_groups(self) -> dict[str, list[str]]:
        adaptable = set(self.adaptable_names)
        groups = {"adaptable": [], "frozen_encoder": [], "decoder": []}
        for name, _ in self.named_parameters():
            if name in adaptable:
                groups["adaptable"].append(name)
            elif name.startswith("encoder."):
                groups["frozen_encoder"].append(name)
            else:
                groups["decoder"].append(name)
        return groups

    def n_parameters(self) -> int:
        return sum(p.numel() for p in self.parameters())

    def manifest(self) -> dict:
        return {
            "architecture": self.spec.id,
            "resolution": list(self.spec.input_resolution),
            "skip_connections": self.spec.skip_connections,
        }


class FrozenEncoder:
    """An immutable copy of an encoder taken at adaptation start."""

    def __init__(self, encoder: nn.Module, spec: ArchitectureSpec):
        self.spec = spec
        self.module = copy.deepcopy(encoder).eval()
        for p in self.module.parameters():
            p.requires_grad_(False)

    @torch.no_grad()
    def encode(self, x: torch.Tensor) -> Encoding:
        self.module.eval()
        return self.module(x)

    def state_arrays(self, prefix="") -> dict[str, np.ndarray]:
        return state_to_arrays(self.module, prefix)

    def save(self, path, **manifest):
        return save_checkpoint(path, {"architecture": self.spec.id, "kind": "frozen_encoder", **manifest}, self.state_arrays())

    @classmethod
    def load(cls, path) -> "FrozenEncoder":
        manifest, arrays = load_checkpoint(path)
        spec = ArchitectureSpec(manifest["architecture"], tuple(manifest.get("resolution", (224, 224))))
        frozen = cls(DepthNetwork(spec).encoder, spec)
        arrays_to_state(frozen.module, arrays)
        return frozen


# --------------------------------------------------------------------------
# functional surface


def build_depth_network(spec: ArchitectureSpec, rng: RngHandle) -> DepthNetwork:
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(rng.torch_seed())
        net = DepthNetwork(spec)
    return net


def _as_batch(images) -> torch.Tensor:
    if isinstance(images, torch.Tensor):
        return images
    return images_to_tensor(list(images))


def encode(net: DepthNetwork, images) -> Encoding:
    x = _as_batch(images)
    if x.shape[0] == 0:
        c = net.encoder.out_channels
        h, w = net.spec.latent_resolution
        return Encoding(x.new_zeros(0, c, h, w))
    return net.encode(x)


def decode(net: DepthNetwork, latents) -> torch.Tensor:
    lat = latents.latent if isinstance(latents, Encoding) else latents
    if lat.shape[0] == 0:
        return lat.new_zeros(0, 1, *net.spec.input_resolution)
    return net.decode(latents)


def forward_depth(net: DepthNetwork, images) -> torch.Tensor:
    return decode(net, encode(net, images))


def adaptable_parameters(net: DepthNetwork) -> dict[str, nn.Parameter]:
    params = dict(net.named_parameters())
    return {n: params[n] for n in net.adaptable_names}


def snapshot_frozen_encoder(net: DepthNetwork) -> FrozenEncoder:
    return FrozenEncoder(net.encoder, net.spec)


def save_network(net: DepthNetwork, path, **manifest):
    return save_checkpoint(path, {**net.manifest(), "kind": "depth_network", **manifest}, state_to_arrays(net))


def load_network(path, expect_spec: ArchitectureSpec | None = None) -> tuple[DepthNetwork, dict]:
    manifest, arrays = load_checkpoint(path)
    try:
        spec = ArchitectureSpec(manifest["architecture"], tuple(manifest["resolution"]), manifest.get("skip_connections", True))
    except (KeyError, ValueError) as exc:
        raise CheckpointError(f"checkpoint {path} has an invalid architecture manifest: {exc}") from exc
    if expect_spec is not None and spec != expect_spec:
        diff = manifest_diff(
            {"architecture": expect_spec.id, "resolution": list(expect_spec.input_resolution)},
            {"architecture": spec.id, "resolution": list(spec.input_resolution)},
        )
        raise CheckpointError(f"checkpoint architecture mismatch: {diff}")
    net = DepthNetwork(spec)
    # adaptation checkpoints keep the target network under "net/"
    prefix = "net/" if manifest.get("kind") == "adaptation_state" else ""
    try:
        arrays_to_state(net, arrays, prefix)
    except RuntimeError as exc:
        raise CheckpointError(f"checkpoint {path} does not fit {spec.id}: {exc}") from exc
    return net.eval(), manifest
