"""Stop an adaptation run halfway, resume it from disk, and compare.

Every epoch writes a checkpoint holding the networks, both discriminators,
the three optimizers and the loss log. Random streams are derived from
(seed, epoch), so the resumed run replays exactly what the uninterrupted
one would have done.

    DEPTHADAPT_DETERMINISTIC=1 python demos/interrupt_and_resume.py
"""

import tempfile
from pathlib import Path

import numpy as np

from depthadapt.core import DepthMap, ImageSample, enable_determinism, seeded_rng
from depthadapt.datasets import PairedDataset, UnpairedDataset
from depthadapt.engine import AdaptConfig, adapt, resume
from depthadapt.networks import ArchitectureSpec, build_depth_network

enable_determinism()
rng = np.random.default_rng(0)


def frame(i, prefix):
    return ImageSample(rng.random((96, 96, 3), dtype=np.float32), f"{prefix}{i}")


A = PairedDataset([(frame(i, "s"), DepthMap(rng.uniform(1, 9, (96, 96, 1)).astype(np.float32))) for i in range(8)])
B = UnpairedDataset([frame(i, "t") for i in range(8)])
cfg = AdaptConfig(epochs=4, batch_size_per_domain=4, dd_base_channels=8, seed=1)


def fresh():
    return build_depth_network(ArchitectureSpec("lightweight-tiny", (96, 96)), seeded_rng(1, "demo"))


tmp = Path(tempfile.mkdtemp())
whole, _ = adapt(fresh(), A, B, cfg, out_dir=tmp / "whole", progress=None)

adapt(fresh(), A, B, cfg, out_dir=tmp / "cut", stop_after_epoch=2, progress=None)
print("interrupted after epoch 2; resuming from", tmp / "cut" / "adapt_epoch002.ckpt")
state = resume(tmp / "cut" / "adapt_epoch002.ckpt", cfg)
resumed, _ = adapt(None, A, B, cfg, out_dir=tmp / "cut", state=state, progress=None)

same = whole.parameter_hashes() == resumed.parameter_hashes()
same_bytes = (tmp / "whole" / "adapted.ckpt").read_bytes() == (tmp / "cut" / "adapted.ckpt").read_bytes()
print(f"parameter hashes equal: {same}; final checkpoints byte-identical: {same_bytes}")
