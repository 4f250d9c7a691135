"""``depthadapt`` command line: pretrain, adapt, evaluate, profile, report, make-toy-data.

Exit codes: 0 success, 2 config error, 3 data error, 4 runtime/training error.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import sys
from pathlib import Path

import numpy as np
import torch

from .config import ConfigError, ExperimentConfig, load_config
from .core import CheckpointError, enable_determinism, deterministic_mode, load_checkpoint, save_checkpoint, seeded_rng
from .datasets import IngestionError, SubsetSizeError, load_paired, load_unpaired, sample_subsets
from .engine import TrainingDivergedError, adapt, pretrain, read_epoch_times
from .metrics import METRIC_COLUMNS, EvalProtocol, evaluate, report_csv
from .networks import ConfigurationError, build_depth_network, load_network
from .resources import (
    RESOURCE_COLUMNS,
    AccountingError,
    PowerLog,
    PowerLogError,
    ResourceReport,
    count_macs,
    energy_from_power_log,
    measure_inference,
    peak_memory_bytes,
    time_epoch,
)
from .toydata import make_toy_data

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_RUNTIME = 0, 2, 3, 4
TABLE_COLUMNS = METRIC_COLUMNS + RESOURCE_COLUMNS
# columns that depend on wall-clock time and are excluded from rerun comparisons
NONDETERMINISTIC_COLUMNS = ("train_min_per_epoch", "infer_ms", "peak_mem_bytes")


class DataError(RuntimeError):
    pass


def _fail(code, message):
    print(f"depthadapt: error: {message}", file=sys.stderr)
    return code


def _append_csv(path: Path, row: dict, columns):
    path.parent.mkdir(parents=True, exist_ok=True)
    new = not path.exists()
    with open(path, "a", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=columns, lineterminator="\n", extrasaction="ignore")
        if new:
            w.writeheader()
        w.writerow({k: _fmt(row.get(k)) for k in columns})


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, float):
        return f"{v:.6f}"
    return v


def _prepare(cfg: ExperimentConfig):
    cfg.output.mkdir(parents=True, exist_ok=True)
    cfg.dump(cfg.output / "effective_config.yaml")
    if deterministic_mode():
        enable_determinism()


# --------------------------------------------------------------------------
# commands


def cmd_pretrain(args) -> int:
    cfg = load_config(args.config)
    cfg.check_paths("source_train")
    _prepare(cfg)
    S = load_paired(cfg.path("source_train"), cfg.dataset["source_layout"])
    net = build_depth_network(cfg.model, seeded_rng(cfg.seed, "init/depth_network"))
    pretrain(net, S, cfg.pretrain, out_dir=cfg.output, progress=sys.stdout)
    print(cfg.output / "pretrained.ckpt")
    return EXIT_OK


def cmd_adapt(args) -> int:
    cfg = load_config(args.config)
    cfg.check_paths("source_train", "target_train")
    pretrained_path = Path(args.pretrained or cfg.output / "pretrained.ckpt")
    try:
        net, _ = load_network(pretrained_path, expect_spec=cfg.model)
    except FileNotFoundError as exc:
        raise DataError(str(exc)) from exc
    _prepare(cfg)
    S = load_paired(cfg.path("source_train"), cfg.dataset["source_layout"])
    T = load_unpaired(cfg.path("target_train"), cfg.dataset["target_layout"])
    subsets = sample_subsets(S, T, cfg.subset_size, seeded_rng(cfg.seed, "subsets"))
    (cfg.output / "subsets.json").write_text(json.dumps(subsets.as_dict(), indent=1) + "\n")
    adapt(net, S.subset(subsets.source_subset), T.subset(subsets.target_subset), cfg.adapt,
          out_dir=cfg.output, progress=sys.stdout)
    print(cfg.output / "adapted.ckpt")
    return EXIT_OK


class GroundTruthOracle:
    """Predictor that returns the stored ground truth for each known test image."""

    def __init__(self, test_set):
        self.lookup = {}
        for image, depth in test_set.items:
            self.lookup[self.key(image.pixels.transpose(2, 0, 1))] = depth.depths.transpose(2, 0, 1)

    @staticmethod
    def key(chw: np.ndarray) -> str:
        return hashlib.sha256(np.ascontiguousarray(chw, dtype=np.float32).tobytes()).hexdigest()

    def __call__(self, x: torch.Tensor) -> torch.Tensor:
        out = [self.lookup[self.key(im.numpy())] for im in x]
        return torch.from_numpy(np.stack(out))


def _load_predictor(path, cfg: ExperimentConfig, test_set):
    manifest, _ = load_checkpoint(path)
    if manifest.get("kind") == "oracle":
        return GroundTruthOracle(test_set), manifest
    return load_network(path, expect_spec=cfg.model)


def write_oracle_checkpoint(path, cfg: ExperimentConfig):
    """A stub checkpoint whose predictions are the ground truth; for pipeline checks."""
    manifest = {"kind": "oracle", "architecture": cfg.model.id, "resolution": list(cfg.model.input_resolution)}
    return save_checkpoint(path, manifest, {})


def cmd_evaluate(args) -> int:
    cfg = load_config(args.config)
    split = args.split
    cfg.check_paths(split)
    try:
        test_set = load_paired(cfg.path(split), cfg.dataset["target_layout" if split.startswith("target") else "source_layout"])
    except IngestionError as exc:
        raise DataError(str(exc)) from exc
    ckpt = Path(args.checkpoint)
    predictor, manifest = _load_predictor(ckpt, cfg, test_set)
    scaling = {"on": [True], "off": [False], "both": [False, True]}[args.median_scaling]
    label = args.label or manifest.get("kind", "")
    if label == "adaptation_state":
        label = f"adapt-n{cfg.subset_size}"
    elif label == "depth_network":
        label = "source"
    rows = []
    for flag in scaling:
        protocol = EvalProtocol(**{**cfg.eval.__dict__, "median_scaling": flag})
        report = evaluate(predictor, test_set, protocol)
        row = report.row(arch=cfg.model.id, resolution="x".join(map(str, cfg.model.input_resolution)), training_data=label)
        rows.append(row)
        _append_csv(cfg.output / "metrics.csv", row, METRIC_COLUMNS)
    sys.stdout.write(report_csv(rows, METRIC_COLUMNS))
    return EXIT_OK


def cmd_profile(args) -> int:
    cfg = load_config(args.config)
    net, manifest = load_network(Path(args.checkpoint), expect_spec=cfg.model)
    res = cfg.model.input_resolution
    macs = count_macs(net, res)
    infer = measure_inference(net, res, n_warmup=args.warmup, n_timed=args.timed)
    report = ResourceReport(macs_g=macs, infer_ms=infer, peak_mem_bytes=peak_memory_bytes())
    epoch_log = Path(args.epoch_log) if args.epoch_log else cfg.output / "adapt_epochs.csv"
    epochs = read_epoch_times(epoch_log) if epoch_log.exists() else []
    if epochs:
        report.train_min_per_epoch = time_epoch([t1 - t0 for _, t0, t1 in epochs])
    if args.power_log:
        if not epochs:
            raise DataError(f"power log given but no epoch timing log at {epoch_log}")
        log = PowerLog.read(args.power_log)
        peaks, energies = [], []
        for epoch, t0, t1 in epochs:
            try:
                peak, energy = energy_from_power_log(log, (t0, t1))
            except PowerLogError as exc:
                raise DataError(f"power log does not cover epoch {epoch}: {exc}") from exc
            peaks.append(peak)
            energies.append(energy)
        report.peak_power_w = max(peaks)
        report.energy_wh_per_epoch = float(np.mean(energies))
    row = report.row()
    _append_csv(cfg.output / "resources.csv", row, RESOURCE_COLUMNS)
    sys.stdout.write(report_csv([{k: row[k] if row[k] is not None else "" for k in RESOURCE_COLUMNS}], RESOURCE_COLUMNS))
    return EXIT_OK


def cmd_report(args) -> int:
    cfg = load_config(args.config)
    metrics_path = cfg.output / "metrics.csv"
    if not metrics_path.exists():
        raise DataError(f"no metrics at {metrics_path}; run `depthadapt evaluate` first")
    with open(metrics_path, newline="") as fh:
        metric_rows = list(csv.DictReader(fh))
    resource_row = {}
    resources_path = cfg.output / "resources.csv"
    if resources_path.exists():
        with open(resources_path, newline="") as fh:
            rows = list(csv.DictReader(fh))
        resource_row = rows[-1] if rows else {}
    if args.format == "table":
        table = [{**r, **{k: resource_row.get(k, "") for k in RESOURCE_COLUMNS}} for r in metric_rows]
        columns = TABLE_COLUMNS
    else:
        table, columns = metric_rows, METRIC_COLUMNS
    text = report_csv(table, columns)
    out = cfg.output / ("table.csv" if args.format == "table" else "report.csv")
    out.write_text(text)
    sys.stdout.write(text)
    return EXIT_OK


def cmd_make_toy_data(args) -> int:
    paths = make_toy_data(args.output, n_train=args.n_train, n_test=args.n_test, shift=args.shift,
                          resolution=tuple(args.resolution), seed=args.seed)
    for key, p in paths.items():
        print(f"{key}: {p}")
    return EXIT_OK


# --------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="depthadapt", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("pretrain", help="supervised training on the source domain")
    p.add_argument("--config", required=True)
    p.set_defaults(func=cmd_pretrain)

    p = sub.add_parser("adapt", help="adversarial adaptation to the target domain")
    p.add_argument("--config", required=True)
    p.add_argument("--pretrained", help="pretrained checkpoint (default: <output>/pretrained.ckpt)")
    p.set_defaults(func=cmd_adapt)

    p = sub.add_parser("evaluate", help="depth metrics on a test split")
    p.add_argument("--config", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--split", default="target_test", choices=["target_test", "source_test"])
    p.add_argument("--median-scaling", default="off", choices=["on", "off", "both"])
    p.add_argument("--label", help="training_data column value (default from checkpoint kind)")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("profile", help="MACs, inference time and optional energy")
    p.add_argument("--config", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--power-log", help="text file of 'unix_seconds<TAB>watts' lines")
    p.add_argument("--epoch-log", help="epoch timing CSV (default: <output>/adapt_epochs.csv)")
    p.add_argument("--warmup", type=int, default=3)
    p.add_argument("--timed", type=int, default=10)
    p.set_defaults(func=cmd_profile)

    p = sub.add_parser("report", help="combine metric and resource rows")
    p.add_argument("--config", required=True)
    p.add_argument("--format", default="table", choices=["table", "metrics"])
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("make-toy-data", help="render a toy source/target dataset pair")
    p.add_argument("--output", required=True)
    p.add_argument("--n-train", type=int, default=100)
    p.add_argument("--n-test", type=int, default=50)
    p.add_argument("--shift", default="photometric", choices=["none", "photometric"])
    p.add_argument("--resolution", type=int, nargs=2, default=[96, 96])
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--config", help="ignored; accepted for a uniform command line")
    p.set_defaults(func=cmd_make_toy_data)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, ConfigurationError) as exc:
        return _fail(EXIT_CONFIG, str(exc))
    except (DataError, IngestionError, SubsetSizeError, CheckpointError, FileNotFoundError, PowerLogError) as exc:
        return _fail(EXIT_DATA, str(exc))
    except (TrainingDivergedError, AccountingError) as exc:
        return _fail(EXIT_RUNTIME, str(exc))


if __name__ == "__main__":
    sys.exit(main())
