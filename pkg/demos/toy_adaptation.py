"""Adapt a depth network from clean toy scenes to a color-shifted copy of them.

The source domain is rendered with analytic depth; the target domain is the
same kind of scene pushed through a fixed color transform and blur, and its
training split carries no depth at all. We pretrain on the source, measure
how badly the network does on the target, then run adversarial adaptation
on 100 unlabeled target images and measure again.

    python demos/toy_adaptation.py [workdir] [seed]

About two minutes on one CPU core.
"""

import sys
import tempfile
from pathlib import Path

from depthadapt.core import seeded_rng
from depthadapt.datasets import load_paired, load_unpaired, sample_subsets
from depthadapt.engine import PretrainConfig, default_adapt_config, pretrain, adapt
from depthadapt.metrics import EvalProtocol, evaluate
from depthadapt.networks import ArchitectureSpec, build_depth_network
from depthadapt.toydata import make_toy_data

workdir = Path(sys.argv[1]) if len(sys.argv) > 1 else Path(tempfile.mkdtemp(prefix="toy_adaptation_"))
seed = int(sys.argv[2]) if len(sys.argv) > 2 else 0

# Four dataset trees: labeled source train/test, unlabeled target train,
# and a labeled target test split that is only ever used for scoring.
paths = make_toy_data(workdir / "data", n_train=200, n_test=50, seed=seed)
S = load_paired(paths["source_train"])
T = load_unpaired(paths["target_train"])
target_test = load_paired(paths["target_test"])
print(f"{len(S)} source pairs, {len(T)} unlabeled target images, {len(target_test)} target test pairs")

# A mobile-style encoder/decoder at 1/8 width keeps this fast on a laptop.
net = build_depth_network(ArchitectureSpec("lightweight-tiny", (96, 96)), seeded_rng(seed, "init/depth_network"))
pretrain(net, S, PretrainConfig(epochs=30, batch_size=8, learning_rate=0.01, seed=seed), out_dir=workdir / "pretrain")

plain = EvalProtocol(max_depth=10.0)
scaled = EvalProtocol(max_depth=10.0, median_scaling=True)
before = evaluate(net, target_test, plain)
print(f"source-only on target: delta1 {before.delta1:.3f}  rmse {before.rmse:.3f}")

# Only the deepest encoder blocks move during adaptation; the decoder and a
# frozen copy of the source encoder stay fixed. Two discriminators push the
# target encoder: one on latents, one on (image, depth) pairs.
subsets = sample_subsets(S, T, 100, seeded_rng(seed, "subsets"))
# augmentation stays off here: color jitter would blur the very shift that separates the domains
cfg = default_adapt_config("lightweight", "indoor", 100, dd_base_channels=16, augment=None, seed=seed)
state, log = adapt(net, S.subset(subsets.source_subset), T.subset(subsets.target_subset), cfg, out_dir=workdir / "adapt")

after = evaluate(state.target_network, target_test, plain)
after_scaled = evaluate(state.target_network, target_test, scaled)
print(f"adapted on target:     delta1 {after.delta1:.3f}  rmse {after.rmse:.3f}")
print(f"adapted, median-scaled: delta1 {after_scaled.delta1:.3f}  rmse {after_scaled.rmse:.3f}")
print(f"artifacts in {workdir}")
