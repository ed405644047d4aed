"""Batch command-line front end.

Subcommands: ``train``, ``probe``, ``plot``, ``blobs``.  Users launch runs
and read the artifacts written into the output directory; there is no
interactive surface.

Exit codes: 0 success, 1 usage or configuration error, 2 I/O error,
3 numeric abort.  The ``SDCLUSTER_DATA`` environment variable supplies a
default ``--data`` directory.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys
from pathlib import Path

from . import checkpoint as ckpt_mod
from .clustering import PseudoLabelTable
from .config import build_train_config, load_config_file
from .data import (
    CIFAR_TEST_FILES,
    CIFAR_TRAIN_FILES,
    dataset_from_cifar_arrays,
    load_synthetic,
    make_synthetic_blobs,
    parse_cifar10_file,
    save_synthetic,
)
from .errors import (
    ConfigurationError,
    EmptyInputError,
    MalformedFileError,
    CorruptRecordError,
    NumericAbortError,
    NumericError,
    SDClusterError,
)
from .evaluation import ProbeConfig, clustering_diagnostics, linear_probe, probe_report_text
from .plotting import plot_loss_curves
from .trainer import train

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_IO = 2
EXIT_NUMERIC = 3

SYNTHETIC_TRAIN_FILE = "train.txt"
SYNTHETIC_TEST_FILE = "test.txt"


class _Parser(argparse.ArgumentParser):
    """argparse that exits 1 (not 2) on usage errors."""

    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def _data_dir(args) -> Path:
    if args.data:
        return Path(args.data)
    env = os.environ.get("SDCLUSTER_DATA")
    if env:
        return Path(env)
    raise ConfigurationError("no --data directory given and SDCLUSTER_DATA is unset")


def _load_cifar_split(data_dir: Path, names: tuple[str, ...], mean, std):
    import numpy as np

    images, labels = [], []
    for name in names:
        path = data_dir / name
        if not path.exists():
            raise FileNotFoundError(f"missing data file: {path}")
        imgs, labs = parse_cifar10_file(path.read_bytes())
        images.append(imgs)
        labels.append(labs)
    return dataset_from_cifar_arrays(np.concatenate(images), np.concatenate(labels), mean, std)


def _load_train_dataset(config, data_dir: Path, train_files: tuple[str, ...]):
    if config.dataset == "synthetic":
        path = data_dir / (train_files[0] if train_files else SYNTHETIC_TRAIN_FILE)
        if not path.exists():
            raise FileNotFoundError(f"missing data file: {path}")
        return load_synthetic(path)
    from .data import load_cifar10

    train, _ = load_cifar10(data_dir, train_files or CIFAR_TRAIN_FILES)
    return train


def cmd_train(args) -> int:
    file_values = load_config_file(args.config)
    overrides: dict = {}
    for item in args.set or []:
        if "=" not in item:
            raise ConfigurationError(f"--set expects key=value, got {item!r}")
        key, value = item.split("=", 1)
        overrides[key.strip()] = value.strip()
    if overrides:
        # re-parse typed via the config text machinery
        from .config import parse_config_text

        overrides = parse_config_text(
            "\n".join(f"{k} = {v}" for k, v in overrides.items()), source="<--set>"
        )
    if args.seed is not None:
        overrides["seed"] = args.seed
    config = build_train_config(file_values, overrides)
    if args.no_distill:
        config = config.without_distillation()

    data_dir = _data_dir(args)
    train_files = tuple(args.train_files.split(",")) if args.train_files else ()
    dataset = _load_train_dataset(config, data_dir, train_files)

    out_dir = Path(args.out)
    if (out_dir / "metrics.csv").exists():
        raise FileExistsError(f"{out_dir} already holds a run (metrics.csv); use a fresh directory")
    train(
        config,
        dataset,
        out_dir=out_dir,
        dump_assignments=args.dump_assignments,
        extra_metadata={"no_distill": bool(args.no_distill), "argv_seed": args.seed},
    )
    return EXIT_OK


def cmd_probe(args) -> int:
    ckpt_path = Path(args.checkpoint)
    if not ckpt_path.exists():
        raise FileNotFoundError(f"checkpoint not found: {ckpt_path}")
    state = ckpt_mod.load_checkpoint(ckpt_path)

    data_dir = _data_dir(args)
    if state.model_config.backbone == "tiny_mlp":
        train_name = args.train_files or SYNTHETIC_TRAIN_FILE
        test_name = args.test_files or SYNTHETIC_TEST_FILE
        train_ds = load_synthetic(data_dir / train_name)
        test_ds = load_synthetic(data_dir / test_name)
    else:
        train_names = tuple((args.train_files or ",".join(CIFAR_TRAIN_FILES)).split(","))
        test_names = tuple((args.test_files or ",".join(CIFAR_TEST_FILES)).split(","))
        # probe preprocessing must match training: stats come from the checkpoint
        train_ds = _load_cifar_split(data_dir, train_names, state.channel_mean, state.channel_std)
        test_ds = _load_cifar_split(data_dir, test_names, state.channel_mean, state.channel_std)

    probe_config = ProbeConfig(
        lr=args.lr, epochs=args.epochs, batch_size=args.batch_size, seed=args.seed,
        feature_source=args.feature_source,
    )
    result = linear_probe(state.model, train_ds, test_ds, probe_config)

    diagnostics = None
    if args.assignments:
        import numpy as np

        rows = Path(args.assignments).read_text().splitlines()[1:]
        labels = np.array([int(line.split("\t")[1]) for line in rows], dtype=np.int64)
        table = PseudoLabelTable.from_labels(-1, labels, state.model_config.num_prototypes)
        diagnostics = clustering_diagnostics(table, train_ds.labels)

    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "probe_report.tsv").write_text(probe_report_text(result, diagnostics))
    payload = dataclasses.asdict(result)
    if diagnostics:
        payload.update(diagnostics)
    (out_dir / "probe_result.json").write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
    print(probe_report_text(result, diagnostics), end="")
    return EXIT_OK


def cmd_plot(args) -> int:
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    plot_loss_curves(args.metrics, out, args.table)
    return EXIT_OK


def cmd_blobs(args) -> int:
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    train_ds = make_synthetic_blobs(args.n_per_class, args.classes, args.dim, args.separation, args.seed)
    save_synthetic(train_ds, out_dir / SYNTHETIC_TRAIN_FILE)
    if args.test_per_class > 0:
        test_ds = make_synthetic_blobs(
            args.test_per_class, args.classes, args.dim, args.separation, args.seed,
            noise_seed=args.seed + 1,
        )
        save_synthetic(test_ds, out_dir / SYNTHETIC_TEST_FILE)
    return EXIT_OK


def build_parser() -> _Parser:
    parser = _Parser(prog="sdcluster", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="run the clustering+distillation training loop")
    p_train.add_argument("--config", required=True, help="flat key=value config file")
    p_train.add_argument("--data", help="data directory (or set SDCLUSTER_DATA)")
    p_train.add_argument("--out", required=True, help="fresh run directory")
    p_train.add_argument("--seed", type=int, default=None, help="override the config seed")
    p_train.add_argument(
        "--no-distill", action="store_true",
        help="baseline mode: teacher CE only (alpha=0, lambda=0, student losses off)",
    )
    p_train.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config key")
    p_train.add_argument("--train-files", help="comma-separated data file names")
    p_train.add_argument("--dump-assignments", action="store_true",
                         help="write per-epoch pseudo-label tables")
    p_train.set_defaults(func=cmd_train)

    p_probe = sub.add_parser("probe", help="train a linear probe on a frozen checkpoint")
    p_probe.add_argument("--checkpoint", required=True)
    p_probe.add_argument("--data", help="data directory (or set SDCLUSTER_DATA)")
    p_probe.add_argument("--out", required=True, help="report directory")
    p_probe.add_argument("--feature-source", default="pooled_teacher",
                         choices=["pooled_teacher", "projected_teacher"])
    p_probe.add_argument("--lr", type=float, default=1e-3)
    p_probe.add_argument("--epochs", type=int, default=200)
    p_probe.add_argument("--batch-size", type=int, default=256)
    p_probe.add_argument("--seed", type=int, default=0)
    p_probe.add_argument("--train-files", help="comma-separated data file names")
    p_probe.add_argument("--test-files", help="comma-separated data file names")
    p_probe.add_argument("--assignments", help="pseudo-label dump to score against true labels")
    p_probe.set_defaults(func=cmd_probe)

    p_plot = sub.add_parser("plot", help="render loss curves from metrics files")
    p_plot.add_argument("--metrics", nargs="+", required=True)
    p_plot.add_argument("--out", required=True, help="output image path")
    p_plot.add_argument("--table", help="merged-series CSV path (default: <out>.csv)")
    p_plot.set_defaults(func=cmd_plot)

    p_blobs = sub.add_parser("blobs", help="generate a synthetic blobs dataset")
    p_blobs.add_argument("--out", required=True)
    p_blobs.add_argument("--n-per-class", type=int, default=200)
    p_blobs.add_argument("--test-per-class", type=int, default=100)
    p_blobs.add_argument("--classes", type=int, default=3)
    p_blobs.add_argument("--dim", type=int, default=16)
    p_blobs.add_argument("--separation", type=float, default=10.0)
    p_blobs.add_argument("--seed", type=int, default=0)
    p_blobs.set_defaults(func=cmd_blobs)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except NumericAbortError as exc:
        print(f"sdcluster: numeric abort: {exc}", file=sys.stderr)
        if exc.checkpoint_path:
            print(f"sdcluster: last good checkpoint: {exc.checkpoint_path}", file=sys.stderr)
        return EXIT_NUMERIC
    except NumericError as exc:
        print(f"sdcluster: numeric error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (OSError, MalformedFileError, CorruptRecordError, EmptyInputError) as exc:
        print(f"sdcluster: {exc}", file=sys.stderr)
        return EXIT_IO
    except (ConfigurationError, SDClusterError) as exc:
        print(f"sdcluster: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
