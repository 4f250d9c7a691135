"""Resource accounting: MAC counts, epoch timing, inference latency and energy from power logs."""

from __future__ import annotations

import copy
import statistics
import time
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
import torch
import torch.nn as nn

from .networks import Unpool

RESOURCE_COLUMNS = ["power_w", "energy_wh", "macs_g", "train_min_per_epoch", "infer_ms", "peak_mem_bytes"]

# leaf modules that perform no multiply-accumulates under our convention
# an empty Sequential is a leaf that passes its input through
ZERO_MAC_MODULES = (
    nn.BatchNorm1d, nn.BatchNorm2d, nn.ReLU, nn.ReLU6, nn.LeakyReLU, nn.Softplus,
    nn.Dropout, nn.Upsample, nn.MaxPool2d, nn.AvgPool2d, nn.AdaptiveAvgPool2d,
    nn.Identity, nn.Flatten, nn.Sequential, Unpool,
)


class AccountingError(RuntimeError):
    pass


class PowerLogError(ValueError):
    pass


@dataclass
class ResourceReport:
    macs_g: float
    infer_ms: float | None = None
    train_min_per_epoch: float | None = None
    peak_mem_bytes: int | None = None
    peak_power_w: float | None = None
    energy_wh_per_epoch: float | None = None

    def row(self) -> dict:
        return {
            "power_w": self.peak_power_w,
            "energy_wh": self.energy_wh_per_epoch,
            "macs_g": self.macs_g,
            "train_min_per_epoch": self.train_min_per_epoch,
            "infer_ms": self.infer_ms,
            "peak_mem_bytes": self.peak_mem_bytes,
        }

    def as_dict(self) -> dict:
        return asdict(self)


def layer_macs(module: nn.Module, inputs, output) -> int:
    if isinstance(module, nn.Conv2d):
        n, _, h_out, w_out = output.shape
        k_h, k_w = module.kernel_size
        return n * module.in_channels * module.out_channels * k_h * k_w * h_out * w_out // module.groups
    if isinstance(module, nn.Linear):
        batch = int(np.prod(output.shape[:-1]))
        return batch * module.in_features * module.out_features
    return 0


def mac_breakdown(module: nn.Module, *example_inputs, input_shape=None) -> dict[str, int]:
    """Per-layer MACs of one forward pass, keyed by module name.

    The forward runs on the ``meta`` device, so only shapes are propagated.
    Leaf modules that are neither convolutions, linear layers nor in the
    zero-MAC list raise ``AccountingError``.
    """
    if input_shape is not None:
        example_inputs = (torch.empty(*input_shape),)
    shadow = copy.deepcopy(module).to("meta")
    counts: dict[str, int] = {}
    handles = []
    for name, sub in shadow.named_modules():
        if any(True for _ in sub.children()):
            continue
        if not isinstance(sub, (nn.Conv2d, nn.Linear) + ZERO_MAC_MODULES):
            raise AccountingError(f"no MAC rule for layer {name!r} ({type(sub).__name__})")

        def hook(mod, inp, out, name=name):
            counts[name] = counts.get(name, 0) + layer_macs(mod, inp, out)

        handles.append(sub.register_forward_hook(hook))
    try:
        with torch.no_grad():
            shadow(*(_to_meta(x) for x in example_inputs))
    finally:
        for h in handles:
            h.remove()
    return counts


def _to_meta(x):
    if isinstance(x, torch.Tensor):
        return torch.empty(x.shape, dtype=x.dtype, device="meta")
    if isinstance(x, tuple):
        return type(x)(*(_to_meta(v) for v in x)) if hasattr(x, "_fields") else tuple(_to_meta(v) for v in x)
    return x


def count_macs(net: nn.Module, resolution=None, *example_inputs) -> float:
    """Giga-MACs of a single-frame forward pass.

    For a DepthNetwork only the resolution is needed; any other module takes
    explicit example inputs.
    """
    if resolution is not None:
        h, w = resolution
        example_inputs = (torch.empty(1, 3, h, w),)
    if not example_inputs:
        raise ValueError("count_macs needs a resolution or example inputs")
    return sum(mac_breakdown(net, *example_inputs).values()) / 1e9


# --------------------------------------------------------------------------
# timing


class EpochTimer:
    """Wall-clock epoch durations from the monotonic clock."""

    def __init__(self, clock=time.monotonic):
        self.clock = clock
        self.durations: list[float] = []
        self._start = None

    def start(self):
        self._start = self.clock()

    def stop(self) -> float:
        dt = max(0.0, self.clock() - self._start)
        self.durations.append(dt)
        self._start = None
        return dt

    def mean_minutes(self) -> float:
        return time_epoch(self.durations)


def time_epoch(durations_s) -> float:
    """Mean epoch duration in minutes from per-epoch seconds (or a (t0, t1) pair)."""
    if isinstance(durations_s, tuple) and len(durations_s) == 2:
        durations_s = [durations_s[1] - durations_s[0]]
    durations_s = [max(0.0, float(d)) for d in durations_s]
    if not durations_s:
        return 0.0
    return sum(durations_s) / len(durations_s) / 60.0


def measure_inference(net: nn.Module, resolution, n_warmup: int = 3, n_timed: int = 10, clock=time.perf_counter) -> float:
    """Median single-frame latency in milliseconds after ``n_warmup`` discarded passes."""
    if n_timed < 1:
        raise ValueError("n_timed must be at least 1")
    net.eval()
    x = torch.rand(1, 3, *resolution)
    times = []
    with torch.no_grad():
        for i in range(n_warmup + n_timed):
            t0 = clock()
            net(x)
            dt = clock() - t0
            if i >= n_warmup:
                times.append(dt * 1000.0)
    return statistics.median(times)


def peak_memory_bytes() -> int:
    """Peak resident set size of this process."""
    import resource

    rss = resource.getrusage(resource.RUSAGE_SELF).ru_maxrss
    return int(rss) * 1024  # kilobytes on Linux


# --------------------------------------------------------------------------
# power logs


@dataclass
class PowerLog:
    timestamps: np.ndarray
    watts: np.ndarray

    def __post_init__(self):
        self.timestamps = np.asarray(self.timestamps, dtype=np.float64)
        self.watts = np.asarray(self.watts, dtype=np.float64)
        if self.timestamps.shape != self.watts.shape or self.timestamps.ndim != 1:
            raise PowerLogError("timestamps and watts must be 1-D arrays of equal length")
        if np.any(np.diff(self.timestamps) <= 0):
            raise PowerLogError("power log timestamps must be strictly increasing")
        if np.any(self.watts < 0):
            raise PowerLogError("power log contains negative watts")

    @classmethod
    def from_samples(cls, samples) -> "PowerLog":
        samples = list(samples)
        if not samples:
            return cls(np.zeros(0), np.zeros(0))
        t, p = zip(*samples)
        return cls(np.array(t), np.array(p))

    @classmethod
    def read(cls, path) -> "PowerLog":
        rows = []
        for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split("\t") if "\t" in line else line.split()
            if len(parts) != 2:
                raise PowerLogError(f"{path}:{lineno}: expected 'seconds<TAB>watts'")
            rows.append((float(parts[0]), float(parts[1])))
        return cls.from_samples(rows)

    def write(self, path):
        lines = [f"{t!r}\t{p!r}" for t, p in zip(self.timestamps.tolist(), self.watts.tolist())]
        Path(path).write_text("\n".join(lines) + "\n")

    @property
    def span(self) -> tuple[float, float]:
        return float(self.timestamps[0]), float(self.timestamps[-1])


def energy_from_power_log(log: PowerLog, epoch_window) -> tuple[float, float]:
    """Peak watts and trapezoidal energy (Wh) over ``epoch_window = (t0, t1)``.

    The log is linearly interpolated at the window edges, so adjacent windows
    add up exactly to their union.
    """
    t0, t1 = (float(v) for v in epoch_window)
    if len(log.timestamps) < 2:
        raise PowerLogError("power log needs at least 2 samples")
    lo, hi = log.span
    if t0 < lo or t1 > hi or t1 <= t0:
        raise PowerLogError(f"window ({t0}, {t1}) outside power log span ({lo}, {hi})")
    inside = (log.timestamps > t0) & (log.timestamps < t1)
    t = np.concatenate([[t0], log.timestamps[inside], [t1]])
    p = np.interp(t, log.timestamps, log.watts)
    if np.count_nonzero((log.timestamps >= t0) & (log.timestamps <= t1)) < 2:
        raise PowerLogError("fewer than 2 power samples inside the window")
    energy_ws = float(np.sum((p[1:] + p[:-1]) * np.diff(t)) / 2.0)
    return float(p.max()), energy_ws / 3600.0
