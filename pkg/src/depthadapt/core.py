"""Shared value types, seeded randomness and the checkpoint archive format."""

from __future__ import annotations

import hashlib
import io
import json
import os
import tempfile
import zipfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

import numpy as np
import torch

__version__ = "0.1.0"

DTYPE = np.float32
MANIFEST_NAME = "manifest.json"


class CheckpointError(RuntimeError):
    """Raised when a checkpoint is unreadable or does not match the caller's expectations."""


@dataclass(frozen=True, eq=False)
class ImageSample:
    pixels: np.ndarray  # H x W x 3, float32 in [0, 1]
    source_id: str = ""

    def __post_init__(self):
        px = np.asarray(self.pixels, dtype=DTYPE)
        if px.ndim != 3 or px.shape[2] != 3 or px.shape[0] == 0 or px.shape[1] == 0:
            raise ValueError(f"image must be HxWx3 with H, W > 0, got {px.shape}")
        if px.min() < 0.0 or px.max() > 1.0:
            raise ValueError(f"image intensities outside [0, 1] ({self.source_id})")
        px.setflags(write=False)
        object.__setattr__(self, "pixels", px)

    @property
    def shape(self) -> tuple[int, int]:
        return self.pixels.shape[0], self.pixels.shape[1]


@dataclass(frozen=True, eq=False)
class DepthMap:
    depths: np.ndarray  # H x W x 1, meters
    valid_mask: np.ndarray | None = None  # H x W bool
    max_depth: float | None = None

    def __post_init__(self):
        d = np.asarray(self.depths, dtype=DTYPE)
        if d.ndim == 2:
            d = d[..., None]
        if d.ndim != 3 or d.shape[2] != 1:
            raise ValueError(f"depth map must be HxWx1, got {d.shape}")
        if self.valid_mask is None:
            mask = np.isfinite(d[..., 0]) & (d[..., 0] > 0)
        else:
            mask = np.asarray(self.valid_mask, dtype=bool)
            if mask.shape != d.shape[:2]:
                raise ValueError(f"valid_mask {mask.shape} does not match depths {d.shape[:2]}")
        if np.any(d[..., 0][mask] < 0):
            raise ValueError("negative depth on a valid pixel")
        if self.max_depth is not None:
            d = clip_depth(d, self.max_depth)
        d.setflags(write=False)
        mask.setflags(write=False)
        object.__setattr__(self, "depths", d)
        object.__setattr__(self, "valid_mask", mask)

    @property
    def shape(self) -> tuple[int, int]:
        return self.depths.shape[0], self.depths.shape[1]


@dataclass(frozen=True, eq=False)
class LatentCode:
    values: np.ndarray  # C x h x w

    def __post_init__(self):
        v = np.asarray(self.values, dtype=DTYPE)
        if v.ndim != 3:
            raise ValueError(f"latent code must be C x h x w, got {v.shape}")
        if not np.all(np.isfinite(v)):
            raise ValueError("latent code contains non-finite values")
        object.__setattr__(self, "values", v)


def clip_depth(depths, max_depth: float | None):
    """Clip depths to ``max_depth``; works on numpy arrays and tensors alike."""
    if max_depth is None:
        return depths
    if isinstance(depths, torch.Tensor):
        return depths.clamp(max=max_depth)
    return np.minimum(depths, DTYPE(max_depth)).astype(DTYPE, copy=False)


def _stream_key(stream_id: str) -> list[int]:
    digest = hashlib.sha256(stream_id.encode("utf-8")).digest()
    return [int.from_bytes(digest[i : i + 4], "little") for i in range(0, 16, 4)]


@dataclass
class RngHandle:
    """A named, reproducible random stream.

    Two handles with the same ``(seed, stream_id)`` produce identical draws;
    the stream id is hashed into the seed sequence so distinct ids give
    independent streams.
    """

    seed: int
    stream_id: str
    generator: np.random.Generator = field(init=False, repr=False)

    def __post_init__(self):
        ss = np.random.SeedSequence(entropy=int(self.seed) & (2**64 - 1), spawn_key=_stream_key(self.stream_id))
        self.generator = np.random.Generator(np.random.PCG64(ss))

    def child(self, suffix: str) -> "RngHandle":
        return RngHandle(self.seed, f"{self.stream_id}/{suffix}")

    def random(self, size=None):
        return self.generator.random(size)

    def integers(self, low, high=None, size=None):
        return self.generator.integers(low, high, size=size)

    def uniform(self, low=0.0, high=1.0, size=None):
        return self.generator.uniform(low, high, size)

    def permutation(self, n: int) -> np.ndarray:
        return self.generator.permutation(n)

    def torch_seed(self) -> int:
        return int(self.generator.integers(0, 2**63 - 1))

    def torch_generator(self) -> torch.Generator:
        g = torch.Generator()
        g.manual_seed(self.torch_seed())
        return g


def seeded_rng(seed: int, stream_id: str) -> RngHandle:
    return RngHandle(int(seed), str(stream_id))


def deterministic_mode() -> bool:
    return os.environ.get("DEPTHADAPT_DETERMINISTIC", "") == "1"


def enable_determinism() -> None:
    torch.use_deterministic_algorithms(True)
    torch.backends.cudnn.benchmark = False


# --------------------------------------------------------------------------
# checkpoints


def save_checkpoint(path, manifest: Mapping, arrays: Mapping[str, np.ndarray]) -> Path:
    """Write ``manifest`` and a flat name -> array map into one zip archive.

    The write goes through a temporary file in the destination directory and
    is renamed into place, so readers never observe a partial checkpoint.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    manifest = dict(manifest)
    manifest.setdefault("version", __version__)
    manifest["arrays"] = sorted(arrays)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=".tmp-", suffix=".ckpt")
    os.close(fd)
    try:
        with zipfile.ZipFile(tmp, "w", compression=zipfile.ZIP_STORED) as zf:
            _write_entry(zf, MANIFEST_NAME, json.dumps(manifest, sort_keys=True, indent=1).encode("utf-8"))
            for name in sorted(arrays):
                buf = io.BytesIO()
                np.save(buf, np.asarray(arrays[name], order="C"), allow_pickle=False)
                _write_entry(zf, f"arrays/{name}.npy", buf.getvalue())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def _write_entry(zf: zipfile.ZipFile, name: str, data: bytes) -> None:
    # fixed timestamp keeps archives byte-identical across reruns
    info = zipfile.ZipInfo(name, date_time=(1980, 1, 1, 0, 0, 0))
    info.external_attr = 0o644 << 16
    zf.writestr(info, data)


def load_checkpoint(path) -> tuple[dict, dict[str, np.ndarray]]:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"checkpoint not found: {path}")
    try:
        with zipfile.ZipFile(path) as zf:
            manifest = json.loads(zf.read(MANIFEST_NAME).decode("utf-8"))
            arrays = {}
            for name in manifest.get("arrays", []):
                with zf.open(f"arrays/{name}.npy") as fh:
                    arrays[name] = np.load(io.BytesIO(fh.read()), allow_pickle=False)
    except (zipfile.BadZipFile, KeyError, json.JSONDecodeError, ValueError) as exc:
        raise CheckpointError(f"malformed checkpoint {path}: {exc}") from exc
    return manifest, arrays


def manifest_diff(expected: Mapping, found: Mapping, keys=None) -> dict[str, tuple]:
    """Return ``{key: (expected, found)}`` for every differing key."""
    keys = keys if keys is not None else sorted(set(expected) | set(found))
    return {k: (expected.get(k), found.get(k)) for k in keys if expected.get(k) != found.get(k)}


def state_to_arrays(module: torch.nn.Module, prefix: str = "") -> dict[str, np.ndarray]:
    return {prefix + k: v.detach().cpu().numpy().copy() for k, v in module.state_dict().items()}


def arrays_to_state(module: torch.nn.Module, arrays: Mapping[str, np.ndarray], prefix: str = "") -> None:
    state = {k[len(prefix):]: torch.from_numpy(np.array(v)) for k, v in arrays.items() if k.startswith(prefix)}
    module.load_state_dict(state, strict=True)


def hash_tensors(tensors: Mapping[str, torch.Tensor]) -> str:
    h = hashlib.sha256()
    for name in sorted(tensors):
        h.update(name.encode())
        h.update(tensors[name].detach().cpu().contiguous().numpy().tobytes())
    return h.hexdigest()


def images_to_tensor(images) -> torch.Tensor:
    """Stack ImageSamples (or HxWx3 arrays) into an N x 3 x H x W float tensor."""
    arrs = [im.pixels if isinstance(im, ImageSample) else np.asarray(im, dtype=DTYPE) for im in images]
    if not arrs:
        return torch.zeros(0, 3, 0, 0)
    return torch.from_numpy(np.stack(arrs).transpose(0, 3, 1, 2).copy())


def depths_to_tensor(depths) -> tuple[torch.Tensor, torch.Tensor]:
    """Stack DepthMaps into (N x 1 x H x W depths, N x 1 x H x W bool mask)."""
    d = np.stack([dm.depths for dm in depths]).transpose(0, 3, 1, 2)
    m = np.stack([dm.valid_mask for dm in depths])[:, None]
    return torch.from_numpy(d.copy()), torch.from_numpy(m.copy())


def tensor_to_depthmaps(t: torch.Tensor, max_depth: float | None = None) -> list[DepthMap]:
    arr = t.detach().cpu().numpy()
    return [DepthMap(a.transpose(1, 2, 0), np.ones(a.shape[1:], dtype=bool), max_depth) for a in arr]
