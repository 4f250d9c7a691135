"""Supervised source pretraining and two-discriminator adversarial adaptation."""

from __future__ import annotations

import csv
import dataclasses
import json
import math
import sys
import time
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np
import torch

from . import discriminators as disc
from .core import (
    CheckpointError,
    arrays_to_state,
    depths_to_tensor,
    hash_tensors,
    images_to_tensor,
    load_checkpoint,
    manifest_diff,
    save_checkpoint,
    seeded_rng,
    state_to_arrays,
)
from .datasets import AugmentConfig, PairedDataset, UnpairedDataset, augment
from .losses import (
    DISCRIMINATOR_STEP,
    ENCODER_STEP,
    LAMBDA_REG,
    combined_adaptation_loss,
    consistency_loss,
    depth_adversarial_loss,
    latent_adversarial_loss,
    supervised_l1_loss,
)
from .networks import ArchitectureSpec, DepthNetwork, FrozenEncoder, adaptable_parameters, snapshot_frozen_encoder
from .resources import peak_memory_bytes

LOG_COLUMNS = ["iteration", "phase", "l_ld", "l_dd", "l_reg", "total"]
PRETRAIN_LOG_COLUMNS = ["epoch", "mean_l1"]
# config fields that may differ between an interrupted run and its resumption
RESUME_FREE_FIELDS = {"epochs"}
COLLAPSE_FACTOR = 10.0

# learning rates per (architecture family, setting); epochs per subset size n
DEFAULT_LEARNING_RATES = {
    ("lightweight", "indoor"): 2e-4,
    ("complex", "indoor"): 2e-5,
    ("lightweight", "outdoor"): 1e-4,
}
DEFAULT_EPOCHS = {
    ("lightweight", "indoor"): {100: 25, 500: 25, 1000: 15},
    ("complex", "indoor"): {100: 15, 500: 15, 1000: 10},
    ("lightweight", "outdoor"): {100: 10, 500: 10, 1000: 5},
}


class TrainingDivergedError(RuntimeError):
    def __init__(self, message, checkpoint=None):
        super().__init__(message)
        self.checkpoint = checkpoint


class ResumeMismatchError(ValueError):
    def __init__(self, diff):
        super().__init__(f"checkpoint does not match the current config: {diff}")
        self.diff = diff


@dataclass
class PretrainConfig:
    epochs: int = 20
    batch_size: int = 8
    learning_rate: float = 0.01
    momentum: float = 0.9
    weight_decay: float = 0.0
    augment: AugmentConfig | None = None
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 0 or self.batch_size < 1:
            raise ValueError("epochs must be >= 0 and batch_size >= 1")


@dataclass
class AdaptConfig:
    epochs: int = 25
    batch_size_per_domain: int = 16
    sub_batch: int | None = None
    lambda_reg: float = LAMBDA_REG
    lr_encoder: float = 2e-4
    lr_ld: float = 2e-4
    lr_dd: float = 2e-4
    optimizer_kind: str = "adam"
    beta1: float = 0.5
    beta2: float = 0.999
    momentum: float = 0.9
    ld_variant: str = "indoor"
    dd_base_channels: int = 64
    max_depth: float = 10.0
    augment: AugmentConfig | None = None
    seed: int = 0

    def __post_init__(self):
        if self.sub_batch is not None and (self.sub_batch < 1 or self.batch_size_per_domain % self.sub_batch):
            raise ValueError(f"sub_batch {self.sub_batch} must divide batch_size_per_domain {self.batch_size_per_domain}")
        if self.lambda_reg < 0:
            raise ValueError("lambda_reg must be non-negative")
        if self.optimizer_kind not in ("adam", "momentum"):
            raise ValueError(f"optimizer_kind must be 'adam' or 'momentum', got {self.optimizer_kind!r}")
        if self.epochs < 0 or self.batch_size_per_domain < 1:
            raise ValueError("epochs must be >= 0 and batch_size_per_domain >= 1")

    def as_dict(self) -> dict:
        return config_to_dict(self)


def config_to_dict(cfg) -> dict:
    out = dataclasses.asdict(cfg)
    for k, v in out.items():
        if isinstance(v, tuple):
            out[k] = list(v)
    if isinstance(out.get("augment"), dict):
        out["augment"] = {k: list(v) if isinstance(v, tuple) else v for k, v in out["augment"].items()}
    return out


def augment_from_dict(d) -> AugmentConfig | None:
    if d is None:
        return None
    d = dict(d)
    for k in ("output_resolution", "scale_range", "crop_size"):
        if d.get(k) is not None:
            d[k] = tuple(d[k])
    return AugmentConfig(**d)


def adapt_config_from_dict(d) -> AdaptConfig:
    d = dict(d)
    d["augment"] = augment_from_dict(d.get("augment"))
    return AdaptConfig(**d)


def default_adapt_config(family: str, setting: str, n: int, **overrides) -> AdaptConfig:
    """Learning rates, epochs and batch layout for a subset size ``n``."""
    lr = DEFAULT_LEARNING_RATES[(family, setting)]
    epochs_by_n = DEFAULT_EPOCHS[(family, setting)]
    epochs = epochs_by_n.get(n, epochs_by_n[min(epochs_by_n, key=lambda k: abs(k - n))])
    kw = dict(epochs=epochs, lr_encoder=lr, lr_ld=lr, lr_dd=lr)
    if setting == "indoor":
        kw.update(augment=AugmentConfig())  # output resolution follows the network
    if setting == "outdoor":
        kw.update(batch_size_per_domain=4, optimizer_kind="momentum", ld_variant="outdoor", max_depth=80.0)
    if family == "complex":
        kw.update(sub_batch=2)
    kw.update(overrides)
    return AdaptConfig(**kw)


# --------------------------------------------------------------------------
# logging helpers


@dataclass
class TrainingLog:
    columns: list[str]
    rows: list[list[float]] = field(default_factory=list)

    def append(self, row: dict):
        self.rows.append([float(row[c]) for c in self.columns])

    def to_array(self) -> np.ndarray:
        return np.asarray(self.rows, dtype=np.float64).reshape(len(self.rows), len(self.columns))

    @classmethod
    def from_array(cls, columns, arr) -> "TrainingLog":
        return cls(list(columns), [list(map(float, r)) for r in np.asarray(arr)])

    def write_csv(self, path):
        path = Path(path)
        tmp = path.with_suffix(path.suffix + ".tmp")
        with open(tmp, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(self.columns)
            for r in self.rows:
                w.writerow([int(v) if c in ("iteration", "phase", "epoch") else repr(v) for c, v in zip(self.columns, r)])
        tmp.replace(path)

    def all_finite(self) -> bool:
        return bool(np.all(np.isfinite(self.to_array()))) if self.rows else True


def append_epoch_time(path, epoch, start_unix, end_unix):
    """Append one wall-clock row to an epoch timing CSV (kept apart from deterministic logs)."""
    path = Path(path)
    new = not path.exists() or epoch == 1
    with open(path, "w" if new else "a", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        if new:
            w.writerow(["epoch", "start_unix", "end_unix", "seconds"])
        w.writerow([epoch, f"{start_unix:.3f}", f"{end_unix:.3f}", f"{end_unix - start_unix:.3f}"])


def read_epoch_times(path) -> list[tuple[int, float, float]]:
    with open(path, newline="") as fh:
        return [(int(r["epoch"]), float(r["start_unix"]), float(r["end_unix"])) for r in csv.DictReader(fh)]


def _progress_line(stream, epoch, epochs, means: dict, elapsed):
    if stream is None:
        return
    parts = " ".join(f"{k}={v:.4f}" for k, v in means.items())
    print(f"epoch {epoch}/{epochs} {parts} elapsed={elapsed:.1f}s peak_mem={peak_memory_bytes() / 2**20:.0f}MB", file=stream, flush=True)


# --------------------------------------------------------------------------
# batching


def _paired_batch(items, cfg_aug: AugmentConfig, rng):
    images, depths = [], []
    for image, depth in items:
        im, d = augment(image, depth, cfg_aug, rng)
        images.append(im)
        depths.append(d)
    d, m = depths_to_tensor(depths)
    return images_to_tensor(images), d, m


def _image_batch(items, cfg_aug: AugmentConfig, rng):
    return images_to_tensor([augment(im, None, cfg_aug, rng)[0] for im in items])


def _augment_cfg(cfg: AugmentConfig | None, resolution) -> AugmentConfig:
    if cfg is None:
        return AugmentConfig(output_resolution=tuple(resolution), enabled=False)
    return dataclasses.replace(cfg, output_resolution=tuple(resolution))


def split_batch(tensors, sub_batch: int | None):
    """Yield ``(weight, chunk)`` pairs whose weights sum to 1."""
    n = tensors[0].shape[0]
    size = n if not sub_batch else sub_batch
    for start in range(0, n, size):
        chunk = tuple(t[start : start + size] for t in tensors)
        yield chunk[0].shape[0] / n, chunk


def accumulate_gradients(loss_fn: Callable, batch, sub_batch: int | None = None) -> float:
    """Backpropagate a batch-mean loss over sub-batches.

    Each sub-batch loss is weighted by its share of the batch, so the
    accumulated gradient equals the full-batch gradient. Gradients add onto
    whatever ``.grad`` already holds; callers zero and step the optimizer.
    """
    total = 0.0
    for weight, chunk in split_batch(batch, sub_batch):
        loss = loss_fn(*chunk) * weight
        loss.backward()
        total += float(loss.detach())
    return total


# --------------------------------------------------------------------------
# pretraining


def _check_finite(value, what, on_fail):
    if not math.isfinite(value):
        ckpt = on_fail()
        raise TrainingDivergedError(f"{what} became non-finite ({value})", ckpt)


def pretrain(net: DepthNetwork, S: PairedDataset, cfg: PretrainConfig, out_dir=None, progress=sys.stdout):
    """Fit ``net`` to the source domain with momentum SGD on the masked L1 loss."""
    out_dir = Path(out_dir) if out_dir is not None else None
    log = TrainingLog(list(PRETRAIN_LOG_COLUMNS))
    aug = _augment_cfg(cfg.augment, net.spec.input_resolution)
    params = [p for p in net.parameters() if p.requires_grad]
    opt = torch.optim.SGD(params, lr=cfg.learning_rate, momentum=cfg.momentum, weight_decay=cfg.weight_decay)
    static = None
    if not aug.enabled:
        static = _paired_batch(S.items, aug, None)
    t_start = time.monotonic()
    for epoch in range(1, cfg.epochs + 1):
        epoch_start = time.time()
        net.train()
        order = seeded_rng(cfg.seed, f"pretrain/order/{epoch}").permutation(len(S))
        aug_rng = seeded_rng(cfg.seed, f"pretrain/augment/{epoch}")
        losses = []
        for start in range(0, len(order), cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            if static is not None:
                x, y, m = (t[torch.from_numpy(idx)] for t in static)
            else:
                x, y, m = _paired_batch([S.items[i] for i in idx], aug, aug_rng)
            if x.shape[0] < 2:
                continue  # batch norm needs more than one sample
            opt.zero_grad(set_to_none=True)
            loss = supervised_l1_loss(net(x), y, m)
            value = float(loss.detach())
            _check_finite(value, "pretraining loss", lambda: _save_pretrain(net, out_dir, epoch, cfg, "diverged"))
            loss.backward()
            opt.step()
            losses.append(value)
        mean = float(np.mean(losses)) if losses else float("nan")
        log.append({"epoch": epoch, "mean_l1": mean})
        _save_pretrain(net, out_dir, epoch, cfg)
        if out_dir is not None:
            log.write_csv(out_dir / "pretrain_log.csv")
            append_epoch_time(out_dir / "pretrain_epochs.csv", epoch, epoch_start, time.time())
        _progress_line(progress, epoch, cfg.epochs, {"l1": mean}, time.monotonic() - t_start)
    net.eval()
    return net, log


def _save_pretrain(net, out_dir, epoch, cfg, tag=None):
    if out_dir is None:
        return None
    name = f"pretrain_{tag}.ckpt" if tag else "pretrained.ckpt"
    manifest = {**net.manifest(), "kind": "depth_network", "seed": cfg.seed, "epoch": epoch}
    return save_checkpoint(out_dir / name, manifest, state_to_arrays(net))


def evaluate_l1(net: DepthNetwork, S: PairedDataset) -> float:
    x, y, m = _paired_batch(S.items, _augment_cfg(None, net.spec.input_resolution), None)
    net.eval()
    with torch.no_grad():
        return float(supervised_l1_loss(net(x), y, m))


# --------------------------------------------------------------------------
# adaptation


@dataclass
class AdaptationState:
    target_network: DepthNetwork
    frozen_source: FrozenEncoder
    ld: disc.LatentDiscriminator
    dd: disc.DepthDiscriminator
    config: AdaptConfig
    opt_encoder: torch.optim.Optimizer = None
    opt_ld: torch.optim.Optimizer = None
    opt_dd: torch.optim.Optimizer = None
    iteration: int = 0
    epoch: int = 0
    log: TrainingLog = field(default_factory=lambda: TrainingLog(list(LOG_COLUMNS)))
    reg_history: list[float] = field(default_factory=list)

    def __post_init__(self):
        if self.opt_encoder is None:
            self.opt_encoder = _optimizer(self.config, list(adaptable_parameters(self.target_network).values()), self.config.lr_encoder)
            self.opt_ld = _optimizer(self.config, list(self.ld.parameters()), self.config.lr_ld)
            self.opt_dd = _optimizer(self.config, list(self.dd.parameters()), self.config.lr_dd)

    def parameter_hashes(self) -> dict[str, str]:
        net = self.target_network
        groups = net.parameter_groups()
        named = dict(net.named_parameters())
        out = {g: hash_tensors({n: named[n] for n in names}) for g, names in groups.items()}
        out["buffers"] = hash_tensors(dict(net.named_buffers()))
        out["frozen_source"] = hash_tensors(self.frozen_source.module.state_dict())
        out["ld"] = hash_tensors(self.ld.state_dict())
        out["dd"] = hash_tensors(self.dd.state_dict())
        return out

    # -- serialization -----------------------------------------------------

    def manifest(self) -> dict:
        return {
            **self.target_network.manifest(),
            "kind": "adaptation_state",
            "seed": self.config.seed,
            "epoch": self.epoch,
            "iteration": self.iteration,
            "config": self.config.as_dict(),
            "latent_shape": list(self.ld.latent_shape),
            "optimizers": {k: _optimizer_groups(getattr(self, k)) for k in ("opt_encoder", "opt_ld", "opt_dd")},
            "reg_history": self.reg_history,
        }

    def arrays(self) -> dict[str, np.ndarray]:
        out = {}
        out.update(state_to_arrays(self.target_network, "net/"))
        out.update(self.frozen_source.state_arrays("frozen/"))
        out.update(state_to_arrays(self.ld, "ld/"))
        out.update(state_to_arrays(self.dd, "dd/"))
        for k in ("opt_encoder", "opt_ld", "opt_dd"):
            out.update(_optimizer_arrays(getattr(self, k), f"{k}/"))
        out["log"] = self.log.to_array()
        return out

    def save(self, path):
        return save_checkpoint(path, self.manifest(), self.arrays())


def _optimizer(cfg: AdaptConfig, params, lr):
    if cfg.optimizer_kind == "adam":
        return torch.optim.Adam(params, lr=lr, betas=(cfg.beta1, cfg.beta2))
    return torch.optim.SGD(params, lr=lr, momentum=cfg.momentum)


def _optimizer_groups(opt) -> list[dict]:
    return [{k: v for k, v in g.items() if k != "params"} for g in opt.state_dict()["param_groups"]]


def _optimizer_arrays(opt, prefix) -> dict[str, np.ndarray]:
    out = {}
    for idx, st in opt.state_dict()["state"].items():
        for key, val in st.items():
            out[f"{prefix}{idx}/{key}"] = torch.as_tensor(val).detach().cpu().numpy().copy()
    return out


def _load_optimizer(opt, arrays, prefix):
    sd = opt.state_dict()
    state = {}
    for name, arr in arrays.items():
        if not name.startswith(prefix):
            continue
        idx, key = name[len(prefix):].split("/")
        t = torch.from_numpy(np.array(arr))
        state.setdefault(int(idx), {})[key] = t
    sd["state"] = state
    opt.load_state_dict(sd)


def init_adaptation(pretrained: DepthNetwork, cfg: AdaptConfig) -> AdaptationState:
    """Set up target network, frozen source encoder and both discriminators."""
    net = pretrained.eval()
    adaptable = set(net.adaptable_names)
    for name, p in net.named_parameters():
        p.requires_grad_(name in adaptable)
    frozen = snapshot_frozen_encoder(net)
    c = net.encoder.out_channels
    h, w = net.spec.latent_resolution
    ld = disc.build_latent_discriminator(cfg.ld_variant, (c, h, w), seeded_rng(cfg.seed, "init/ld"))
    dd = disc.build_depth_discriminator(
        net.spec.input_resolution, seeded_rng(cfg.seed, "init/dd"), max_depth=cfg.max_depth, base_channels=cfg.dd_base_channels
    )
    return AdaptationState(net, frozen, ld, dd, cfg)


def _set_requires_grad(module, flag):
    for p in module.parameters():
        p.requires_grad_(flag)


def discriminator_step(state: AdaptationState, xs, ys, xt) -> dict:
    """Update LD and DD (gamma = 1) with generator outputs held constant."""
    net, cfg = state.target_network, state.config
    _set_requires_grad(state.ld, True)
    _set_requires_grad(state.dd, True)
    state.opt_ld.zero_grad(set_to_none=True)
    state.opt_dd.zero_grad(set_to_none=True)
    parts = {"l_ld": 0.0, "l_dd": 0.0}

    def loss_fn(xs, ys, xt):
        with torch.no_grad():
            zs = state.frozen_source.encode(xs).latent
            enc_t = net.encode(xt)
            pred_t = net.decode(enc_t)
        l_ld = latent_adversarial_loss(
            disc.score_latent(state.ld, zs, "train"), disc.score_latent(state.ld, enc_t.latent, "train"), DISCRIMINATOR_STEP
        )
        l_dd = depth_adversarial_loss(
            disc.score_depth(state.dd, xs, ys, "train"), disc.score_depth(state.dd, xt, pred_t, "train"), DISCRIMINATOR_STEP
        )
        parts["l_ld"] += float(l_ld.detach()) * xs.shape[0]
        parts["l_dd"] += float(l_dd.detach()) * xs.shape[0]
        return l_ld + l_dd

    accumulate_gradients(loss_fn, (xs, ys, xt), cfg.sub_batch)
    n = xs.shape[0]
    parts = {k: v / n for k, v in parts.items()}
    breakdown = combined_adaptation_loss(parts["l_ld"], parts["l_dd"], 0.0, cfg.lambda_reg, DISCRIMINATOR_STEP)
    _check_finite(float(breakdown.total), "discriminator loss", lambda: None)
    state.opt_ld.step()
    state.opt_dd.step()
    return breakdown.as_row()


def encoder_step(state: AdaptationState, xt) -> dict:
    """Update the adaptable target-encoder parameters (gamma = 0) against fixed discriminators."""
    net, cfg = state.target_network, state.config
    _set_requires_grad(state.ld, False)
    _set_requires_grad(state.dd, False)
    state.opt_encoder.zero_grad(set_to_none=True)
    parts = {"l_ld": 0.0, "l_dd": 0.0, "l_reg": 0.0}

    def loss_fn(xt):
        z_src = state.frozen_source.encode(xt).latent
        enc_t = net.encode(xt)
        pred_t = net.decode(enc_t)
        l_ld = latent_adversarial_loss(None, disc.score_latent(state.ld, enc_t.latent, "train"), ENCODER_STEP)
        l_dd = depth_adversarial_loss(None, disc.score_depth(state.dd, xt, pred_t, "train"), ENCODER_STEP)
        l_reg = consistency_loss(z_src, enc_t.latent, ENCODER_STEP)
        b = combined_adaptation_loss(l_ld, l_dd, l_reg, cfg.lambda_reg, ENCODER_STEP)
        for k in parts:
            parts[k] += float(getattr(b, k).detach()) * xt.shape[0]
        return b.total

    accumulate_gradients(loss_fn, (xt,), cfg.sub_batch)
    n = xt.shape[0]
    parts = {k: v / n for k, v in parts.items()}
    breakdown = combined_adaptation_loss(parts["l_ld"], parts["l_dd"], parts["l_reg"], cfg.lambda_reg, ENCODER_STEP)
    _check_finite(float(breakdown.total), "encoder loss", lambda: None)
    state.opt_encoder.step()
    _set_requires_grad(state.ld, True)
    _set_requires_grad(state.dd, True)
    return breakdown.as_row()


def adapt(
    pretrained: DepthNetwork | None,
    A: PairedDataset,
    B: UnpairedDataset,
    cfg: AdaptConfig,
    out_dir=None,
    state: AdaptationState | None = None,
    stop_after_epoch: int | None = None,
    on_phase: Callable | None = None,
    progress=sys.stdout,
):
    """Alternate discriminator and target-encoder updates over the subset pair (A, B).

    Pass ``state`` (e.g. from :func:`resume`) to continue an interrupted run;
    ``stop_after_epoch`` ends the run early, as if interrupted.
    ``on_phase(phase, state)`` is called after every optimizer step.
    """
    if len(A) != len(B):
        raise ValueError(f"adaptation subsets must have equal size, got |A|={len(A)} and |B|={len(B)}")
    if state is None:
        state = init_adaptation(pretrained, cfg)
    else:
        cfg = state.config
    out_dir = Path(out_dir) if out_dir is not None else None
    net = state.target_network
    aug = _augment_cfg(cfg.augment, net.spec.input_resolution)
    bs = cfg.batch_size_per_domain
    n_iter = len(A) // bs
    if n_iter == 0:
        raise ValueError(f"subset size {len(A)} is smaller than the batch size {bs}")
    static_a = static_b = None
    if not aug.enabled:
        static_a = _paired_batch(A.items, aug, None)
        static_b = _image_batch(B.items, aug, None)
    last = cfg.epochs if stop_after_epoch is None else min(cfg.epochs, stop_after_epoch)
    t_start = time.monotonic()
    for epoch in range(state.epoch + 1, last + 1):
        epoch_start = time.time()
        net.eval()
        torch.manual_seed(seeded_rng(cfg.seed, f"adapt/torch/{epoch}").torch_seed())
        order_rng = seeded_rng(cfg.seed, f"adapt/order/{epoch}")
        order_a = order_rng.child("A").permutation(len(A))
        order_b = order_rng.child("B").permutation(len(B))
        aug_rng = seeded_rng(cfg.seed, f"adapt/augment/{epoch}")
        rows = []
        for it in range(n_iter):
            ia, ib = order_a[it * bs : (it + 1) * bs], order_b[it * bs : (it + 1) * bs]
            if static_a is not None:
                xs, ys, _ = (t[torch.from_numpy(ia)] for t in static_a)
                xt = static_b[torch.from_numpy(ib)]
            else:
                xs, ys, _ = _paired_batch([A.items[i] for i in ia], aug, aug_rng)
                xt = _image_batch([B.items[i] for i in ib], aug, aug_rng)
            state.iteration += 1
            try:
                row = discriminator_step(state, xs, ys, xt)
                if on_phase is not None:
                    on_phase(DISCRIMINATOR_STEP, state)
                state.log.append({"iteration": state.iteration, **row})
                row = encoder_step(state, xt)
                if on_phase is not None:
                    on_phase(ENCODER_STEP, state)
                state.log.append({"iteration": state.iteration, **row})
            except TrainingDivergedError as exc:
                ckpt = state.save(out_dir / "adapt_diverged.ckpt") if out_dir is not None else None
                raise TrainingDivergedError(f"epoch {epoch}, iteration {state.iteration}: {exc}", ckpt) from exc
            rows.append(row)
        state.epoch = epoch
        mean_reg = float(np.mean([r["l_reg"] for r in rows]))
        state.reg_history.append(mean_reg)
        if len(state.reg_history) > 1 and state.reg_history[0] > 0 and mean_reg > COLLAPSE_FACTOR * state.reg_history[0]:
            warnings.warn(
                f"epoch {epoch}: consistency loss {mean_reg:.4g} exceeds {COLLAPSE_FACTOR:g}x its first-epoch value "
                f"({state.reg_history[0]:.4g}); the target encoder may be collapsing",
                RuntimeWarning,
                stacklevel=2,
            )
        if out_dir is not None:
            state.save(out_dir / f"adapt_epoch{epoch:03d}.ckpt")
            state.save(out_dir / "adapted.ckpt")
            state.log.write_csv(out_dir / "adapt_log.csv")
            append_epoch_time(out_dir / "adapt_epochs.csv", epoch, epoch_start, time.time())
        means = {k: float(np.mean([r[k] for r in rows])) for k in ("l_ld", "l_dd", "l_reg")}
        _progress_line(progress, epoch, cfg.epochs, means, time.monotonic() - t_start)
    return state, state.log


def resume(path, expected: AdaptConfig | None = None) -> AdaptationState:
    """Rebuild an AdaptationState from an epoch checkpoint.

    If ``expected`` is given, every config field except the epoch budget must
    match the checkpoint; otherwise ``ResumeMismatchError`` carries the diff.
    """
    manifest, arrays = load_checkpoint(path)
    if manifest.get("kind") != "adaptation_state":
        raise CheckpointError(f"{path} is not an adaptation checkpoint (kind={manifest.get('kind')!r})")
    saved = manifest["config"]
    if expected is not None:
        want = expected.as_dict()
        keys = sorted((set(want) | set(saved)) - RESUME_FREE_FIELDS)
        diff = manifest_diff(want, saved, keys)
        if diff:
            raise ResumeMismatchError(diff)
        saved = {**saved, "epochs": want["epochs"]}
    cfg = adapt_config_from_dict(saved)
    spec = ArchitectureSpec(manifest["architecture"], tuple(manifest["resolution"]), manifest.get("skip_connections", True))
    net = DepthNetwork(spec)
    arrays_to_state(net, arrays, "net/")
    state = init_adaptation(net, cfg)
    arrays_to_state(state.frozen_source.module, arrays, "frozen/")
    arrays_to_state(state.ld, arrays, "ld/")
    arrays_to_state(state.dd, arrays, "dd/")
    for k in ("opt_encoder", "opt_ld", "opt_dd"):
        _load_optimizer(getattr(state, k), arrays, f"{k}/")
    state.epoch = int(manifest["epoch"])
    state.iteration = int(manifest["iteration"])
    state.reg_history = list(manifest.get("reg_history", []))
    state.log = TrainingLog.from_array(LOG_COLUMNS, arrays["log"])
    return state


def config_json(cfg) -> str:
    return json.dumps(config_to_dict(cfg), sort_keys=True)
