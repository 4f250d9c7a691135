"""What do the two architectures cost? MACs, latency and energy per epoch.

MACs come from a shape-only forward pass on the meta device, so even the
ResNet-50 model is counted without allocating its weights. Energy is the
trapezoid integral of a power log over each logged epoch window; here the
log is synthetic so the numbers can be checked by hand.

    python demos/resource_profile.py
"""

import tempfile
from pathlib import Path

import torch

from depthadapt.core import seeded_rng
from depthadapt.engine import append_epoch_time, read_epoch_times
from depthadapt.networks import ArchitectureSpec, DepthNetwork, build_depth_network
from depthadapt.resources import PowerLog, count_macs, energy_from_power_log, measure_inference

for arch in ("lightweight", "complex"):
    with torch.device("meta"):
        net = DepthNetwork(ArchitectureSpec(arch, (224, 224)))
    print(f"{arch:12s} {net.n_parameters() / 1e6:6.2f} M params  {count_macs(net, (224, 224)):6.2f} GMACs at 224x224")

# Latency needs real weights; the tiny variant keeps this quick.
tiny = build_depth_network(ArchitectureSpec("lightweight-tiny", (96, 96)), seeded_rng(0, "demo"))
print(f"lightweight-tiny median latency: {measure_inference(tiny, (96, 96), n_warmup=3, n_timed=20):.2f} ms")

# Two 30-minute epochs under a board drawing 12 W, then 8 W.
tmp = Path(tempfile.mkdtemp())
t0 = 1_700_000_000.0
append_epoch_time(tmp / "epochs.csv", 1, t0, t0 + 1800)
append_epoch_time(tmp / "epochs.csv", 2, t0 + 1800, t0 + 3600)
samples = [(t0 + 60 * i, 12.0 if i <= 30 else 8.0) for i in range(61)]
log = PowerLog.from_samples(samples)
for epoch, start, end in read_epoch_times(tmp / "epochs.csv"):
    peak, wh = energy_from_power_log(log, (start, end))
    print(f"epoch {epoch}: peak {peak:.1f} W, {wh:.3f} Wh")
