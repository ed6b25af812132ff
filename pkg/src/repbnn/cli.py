"""Command-line front end.

Machine output goes to stdout, diagnostics to stderr.  Exit codes: 0 on
success, 1 on a domain error, 2 on a usage error.
"""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from . import costmodel
from .builders import build_reactnet_a, build_resnet20
from .errors import RepBnnError, ShapeMismatch
from .graph import Graph
from .model_text import emit_model, parse_model
from .reptran import (
    BN_AFTER_REPEAT,
    BN_BEFORE_REPEAT,
    LAST_LAYER_POLICIES,
    RepTranConfig,
    reptran,
    verify_transform,
)
from .tensors import DenseTensor, dense_from_blob


def _read_graph(path: str) -> Graph:
    with open(path, "r", encoding="utf-8") as f:
        return parse_model(f.read())


def _write_text(text: str, out: str | None) -> None:
    if out in (None, "-"):
        sys.stdout.write(text)
    else:
        with open(out, "w", encoding="utf-8") as f:
            f.write(text)


def _load_probe(path: str, dims) -> DenseTensor:
    ext = os.path.splitext(path)[1].lower()
    if ext in (".png", ".jpg", ".jpeg", ".bmp"):
        from PIL import Image

        img = Image.open(path)
        arr = np.asarray(img, dtype=np.float32) / 255.0
        if arr.ndim == 2:
            arr = arr[:, :, None]
        arr = arr.transpose(2, 0, 1)[None]  # HWC -> NCHW
        if dims is not None and arr.shape[1] != dims[1]:
            arr = np.repeat(arr[:, :1], dims[1], axis=1)
        probe = DenseTensor.from_array(arr)
    else:
        with open(path, "rb") as f:
            probe = dense_from_blob(f.read())
    if dims is not None and probe.dims[1:] != tuple(dims[1:]):
        raise ShapeMismatch(
            f"probe dims {probe.dims} do not match model input {tuple(dims)}"
        )
    return probe


def _parse_dims(text: str):
    parts = tuple(int(p) for p in text.split(","))
    if len(parts) != 4:
        raise argparse.ArgumentTypeError("input dims must be N,C,H,W")
    return parts


def _build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="repbnn",
                                 description="channel-replication BNN toolkit")
    sub = ap.add_subparsers(dest="command", required=True)

    b = sub.add_parser("build", help="emit a reference network as model text")
    b.add_argument("--arch", required=True, choices=["resnet20", "reactnet-a"])
    b.add_argument("--binary", action="store_true",
                   help="binarized variant (resnet20 only; reactnet-a is always binary)")
    b.add_argument("--out", default="-")

    t = sub.add_parser("transform", help="apply the replication rewrite")
    t.add_argument("--in", dest="input", required=True)
    t.add_argument("--beta", type=int, default=2)
    t.add_argument("--last-layer", default="take-all", choices=list(LAST_LAYER_POLICIES))
    t.add_argument("--bn-position", default=BN_AFTER_REPEAT,
                   choices=[BN_AFTER_REPEAT, BN_BEFORE_REPEAT])
    t.add_argument("--out", default="-")

    a = sub.add_parser("analyze", help="print the analytic cost report")
    a.add_argument("--in", dest="input", required=True)
    a.add_argument("--input-dims", type=_parse_dims, default=None,
                   help="N,C,H,W (defaults to the model's metadata)")
    a.add_argument("--format", default="table", choices=["table", "tsv"])
    a.add_argument("--with-bn", action="store_true",
                   help="report OPs including batch norm on the summary line")

    v = sub.add_parser("verify", help="check transform invariants on a before/after pair")
    v.add_argument("--before", required=True)
    v.add_argument("--after", required=True)

    tr = sub.add_parser("train", help="desk-scale STE training")
    tr.add_argument("--in", dest="input", required=True)
    tr.add_argument("--dataset", default="blobs")
    tr.add_argument("--epochs", type=int, default=20)
    tr.add_argument("--batch-size", type=int, default=32)
    tr.add_argument("--lr", type=float, default=0.05)
    tr.add_argument("--weight-decay", type=float, default=0.0)
    tr.add_argument("--eval-split", type=float, default=0.2)
    tr.add_argument("--seed", type=int, default=0)
    tr.add_argument("--deterministic", action="store_true")
    tr.add_argument("--bn-init-noise", type=float, default=0.01)
    tr.add_argument("--out", default=None, help="checkpoint path")

    d = sub.add_parser("dump-features", help="write replicated-block activations")
    d.add_argument("--in", dest="input", required=True)
    d.add_argument("--weights", required=True)
    d.add_argument("--layer", required=True)
    d.add_argument("--image", required=True,
                   help="probe input: tensor blob, or png/jpg/bmp image")
    d.add_argument("--out", required=True, help="output directory")
    return ap


def run(argv) -> int:
    """Execute one command; returns the process exit code."""
    try:
        args = _build_parser().parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)

    try:
        if args.command == "build":
            if args.arch == "resnet20":
                g = build_resnet20(binary=args.binary)
            else:
                g = build_reactnet_a()
            _write_text(emit_model(g), args.out)

        elif args.command == "transform":
            g = _read_graph(args.input)
            cfg = RepTranConfig(beta=args.beta, last_layer=args.last_layer,
                                bn_position=args.bn_position)
            _write_text(emit_model(reptran(g, cfg)), args.out)

        elif args.command == "analyze":
            g = _read_graph(args.input)
            report = costmodel.count(g, args.input_dims)
            if args.format == "table":
                sys.stdout.write(costmodel.format_table(report))
            else:
                sys.stdout.write(costmodel.format_tsv(report))
            total = report.ops_with_bn if args.with_bn else report.ops_without_bn
            label = "with" if args.with_bn else "without"
            sys.stdout.write(f"total OPs ({label} BN): {costmodel.format_count(total)}\n")

        elif args.command == "verify":
            g0 = _read_graph(args.before)
            g1 = _read_graph(args.after)
            report = verify_transform(g0, g1)
            sys.stdout.write(str(report) + "\n")

        elif args.command == "train":
            from .trainer import TrainConfig, save_checkpoint, train

            g = _read_graph(args.input)
            cfg = TrainConfig(
                epochs=args.epochs, batch_size=args.batch_size,
                learning_rate=args.lr, weight_decay=args.weight_decay,
                seed=args.seed, dataset_path=args.dataset,
                eval_split=args.eval_split, deterministic=args.deterministic,
                bn_init_noise=args.bn_init_noise,
            )
            result = train(g, cfg)
            for epoch, (loss, acc) in enumerate(
                zip(result.loss_curve, result.eval_accuracy), start=1
            ):
                sys.stdout.write(f"{epoch}\t{loss:.6f}\t{acc:.4f}\n")
            if args.out:
                save_checkpoint(result.module.named_arrays(), args.out)
                print(f"checkpoint written to {args.out}", file=sys.stderr)

        elif args.command == "dump-features":
            from .trainer import dump_features, load_checkpoint

            g = _read_graph(args.input)
            weights = load_checkpoint(args.weights)
            probe = _load_probe(args.image, g.default_input_dims())
            paths = dump_features(g, weights, probe, args.layer, args.out)
            for p in paths:
                sys.stdout.write(p + "\n")

    except RepBnnError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except OSError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    return 0


def main() -> None:
    sys.exit(run(sys.argv[1:]))


if __name__ == "__main__":
    main()
