"""Command-line interface: gen-data, train, infer, eval, self-check.

Exit codes: 0 success, 1 usage/config error, 2 data error, 3 numerical
failure (NaN detected). RRNET_THREADS caps evaluation parallelism.
"""

from __future__ import annotations

import argparse
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import dataio
from .checks import run_self_check
from .dataio import CheckpointError, DataFormatError, Sample
from .metrics import evaluate_pairs, pr_curve_csv, report_to_json
from .network import NetworkConfig, init_network_params, parse_kv_text, predict
from .tensor import NumericalError, Tensor, no_grad
from .training import TrainSettings, train_model

__all__ = ["main"]

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERIC = 3


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _UsageError(message)


# training-side keys allowed in a config file, on top of NetworkConfig keys
_TRAIN_KEYS = {"iterations", "batch_size", "lr_initial", "lr_final", "seed", "augment"}
_NET_KEYS = {
    "stage_channels",
    "decoder_width",
    "input_size",
    "use_pma",
    "use_srr",
    "use_crr",
    "use_nonlocal",
    "pma_branch",
    "rr_residual",
    "rr_shared_projection",
    "pma_feature_activation",
    "pma_att_kernel",
    "upsample_mode",
}


def _build_parser() -> _Parser:
    parser = _Parser(prog="rrnet", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="write a synthetic shapes dataset")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--count", type=int, default=8)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--size", type=int, default=64)

    p = sub.add_parser("train", help="train a model")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--synthetic", type=int, metavar="N", help="train on N generated samples")
    src.add_argument("--manifest", help="image<TAB>mask manifest file")
    p.add_argument("--out", required=True, help="output checkpoint path")
    p.add_argument("--config", help="key=value config file")
    p.add_argument("--iters", type=int, default=None, help="training iterations (default 2000)")
    p.add_argument("--batch", type=int, default=None, help="batch size (default 8)")
    p.add_argument("--lr", type=float, default=None, help="initial learning rate (default 5e-5)")
    p.add_argument("--final-lr", type=float, default=None, help="final learning rate (default 5e-7)")
    p.add_argument("--seed", type=int, default=None, help="random seed (default 0)")
    p.add_argument(
        "--size",
        type=int,
        default=None,
        help="training resolution, divisible by 32 (default 64 unless the config file sets input_size)",
    )
    p.add_argument("--decoder-width", type=int, default=None)
    p.add_argument("--stage-channels", default=None, help="comma list of 5 stage widths")
    p.add_argument("--no-augment", action="store_true")
    p.add_argument("--no-pma", action="store_true")
    p.add_argument("--no-srr", action="store_true")
    p.add_argument("--no-crr", action="store_true")
    p.add_argument("--nonlocal", dest="nonlocal_", action="store_true", help="replace RR with non-local blocks")
    p.add_argument("--pma-branch", choices=("both", "left", "right"), default=None)

    p = sub.add_parser("infer", help="run a checkpoint on one image")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--input", required=True, help="PPM image")
    p.add_argument("--output", required=True, help="PGM saliency map")

    p = sub.add_parser("eval", help="score predictions against ground truth")
    p.add_argument("--pred", required=True, help="directory of predicted PGM maps")
    p.add_argument("--gt", required=True, help="directory of ground-truth PGM masks")
    p.add_argument("--report", required=True, help="output JSON report")
    p.add_argument("--prcurve", required=True, help="output 256-row P-R CSV")

    p = sub.add_parser("self-check", help="run gradient checks and invariant suites")
    p.add_argument("--trials", type=int, default=5)
    p.add_argument("--seed", type=int, default=0)

    return parser


def _cmd_gen_data(args) -> int:
    out = Path(args.out)
    (out / "images").mkdir(parents=True, exist_ok=True)
    (out / "masks").mkdir(parents=True, exist_ok=True)
    samples = dataio.synth_dataset(args.count, args.seed, args.size)
    pairs = []
    for s in samples:
        img_rel = f"images/{s.id}.ppm"
        msk_rel = f"masks/{s.id}.pgm"
        dataio.write_ppm(out / img_rel, s.image)
        dataio.write_pgm(out / msk_rel, s.mask)
        pairs.append((img_rel, msk_rel))
    dataio.write_manifest(out / "manifest.txt", pairs)
    print(f"wrote {len(samples)} samples under {out}")
    return EXIT_OK


def _network_config_from_args(args, file_kv: dict[str, str]) -> NetworkConfig:
    net_kv = {k: v for k, v in file_kv.items() if k in _NET_KEYS}
    cfg = NetworkConfig.from_mapping(net_kv)
    overrides = {}
    if args.size is not None:
        overrides["input_size"] = (args.size, args.size)
    elif "input_size" not in net_kv:
        overrides["input_size"] = (64, 64)  # toy training default
    if args.decoder_width is not None:
        overrides["decoder_width"] = args.decoder_width
    if args.stage_channels is not None:
        overrides["stage_channels"] = tuple(int(x) for x in args.stage_channels.split(","))
    if args.no_pma:
        overrides["use_pma"] = False
    if args.no_srr:
        overrides["use_srr"] = False
    if args.no_crr:
        overrides["use_crr"] = False
    if args.nonlocal_:
        overrides["use_nonlocal"] = True
        overrides["use_srr"] = False
        overrides["use_crr"] = False
    if args.pma_branch is not None:
        overrides["pma_branch"] = args.pma_branch
    if overrides:
        kv = parse_kv_text(cfg.to_text())
        cfg = NetworkConfig.from_mapping(kv | _to_kv(overrides))
    return cfg


def _to_kv(overrides: dict) -> dict[str, str]:
    kv = {}
    for k, v in overrides.items():
        if isinstance(v, bool):
            kv[k] = "true" if v else "false"
        elif isinstance(v, tuple):
            kv[k] = ",".join(str(x) for x in v)
        else:
            kv[k] = str(v)
    return kv


def _cmd_train(args) -> int:
    file_kv: dict[str, str] = {}
    if args.config:
        text = Path(args.config).read_text()
        file_kv = parse_kv_text(text)
        unknown = set(file_kv) - _NET_KEYS - _TRAIN_KEYS
        if unknown:
            raise _UsageError(f"unknown config keys: {sorted(unknown)}")
    cfg = _network_config_from_args(args, file_kv)

    def pick(flag, key, default, cast):
        if flag is not None:  # explicit flag wins over the config file
            return cast(flag)
        return cast(file_kv.get(key, default))

    augment = not args.no_augment
    if not args.no_augment and "augment" in file_kv:
        augment = file_kv["augment"].lower() in ("true", "1", "yes", "on")
    settings = TrainSettings(
        iterations=pick(args.iters, "iterations", 2000, int),
        batch_size=pick(args.batch, "batch_size", 8, int),
        lr_initial=pick(args.lr, "lr_initial", 5e-5, float),
        lr_final=pick(args.final_lr, "lr_final", 5e-7, float),
        seed=pick(args.seed, "seed", 0, int),
        augment=augment,
    )
    if args.synthetic is not None:
        samples = dataio.synth_dataset(args.synthetic, settings.seed, cfg.input_size[0])
    else:
        samples = dataio.load_manifest_samples(args.manifest)

    def log_fn(it, loss, lr):
        print(f"{it}\t{loss:.6f}\t{lr:.3e}")

    result = train_model(samples, cfg, settings, log_fn=log_fn)
    dataio.save_checkpoint(result.params, cfg, args.out)
    print(f"saved checkpoint to {args.out}")
    return EXIT_OK


def _params_from_checkpoint(path):
    entries, cfg = dataio.load_checkpoint(path)
    params = init_network_params(cfg, seed=0)
    named = dict(params.named_parameters())
    if set(named) != set(entries):
        missing = sorted(set(named) - set(entries))[:4]
        extra = sorted(set(entries) - set(named))[:4]
        raise CheckpointError(
            f"checkpoint entries do not match the configured architecture "
            f"(missing {missing}, unexpected {extra})"
        )
    for name, values in entries.items():
        if named[name].data.shape != values.shape:
            raise CheckpointError(
                f"entry '{name}' has shape {values.shape}, expected {named[name].data.shape}"
            )
        named[name].data = values.astype(np.float32)
    return params, cfg


def _cmd_infer(args) -> int:
    params, cfg = _params_from_checkpoint(args.checkpoint)
    image = dataio.read_ppm(args.input)
    orig_hw = image.shape[:2]
    resized = dataio.resize_bilinear(image, cfg.input_size)
    start = time.perf_counter()
    with no_grad():
        pred = predict(Tensor(resized), params, cfg)
    elapsed_ms = (time.perf_counter() - start) * 1000.0
    saliency = dataio.resize_bilinear(pred.map.data, orig_hw)
    dataio.write_pgm(args.output, saliency)
    print(f"wrote {args.output} ({elapsed_ms:.1f} ms/image)")
    return EXIT_OK


def _cmd_eval(args) -> int:
    pred_dir, gt_dir = Path(args.pred), Path(args.gt)
    preds = {p.stem: p for p in sorted(pred_dir.glob("*.pgm"))}
    gts = {p.stem: p for p in sorted(gt_dir.glob("*.pgm"))}
    unpaired = sorted(set(preds) ^ set(gts))
    if unpaired:
        print(f"error: unpaired files: {', '.join(unpaired)}", file=sys.stderr)
        return EXIT_DATA
    if not preds:
        print("error: no .pgm files to evaluate", file=sys.stderr)
        return EXIT_DATA
    threads = int(os.environ.get("RRNET_THREADS", "1"))
    pairs = [
        (dataio.read_pgm(preds[k]), dataio.read_mask(gts[k]), k) for k in sorted(preds)
    ]
    report = evaluate_pairs(pairs, threads=max(threads, 1))
    for sample_id in report.skipped_fpr:
        print(f"warning: '{sample_id}' has no foreground; excluded from F/PR", file=sys.stderr)
    Path(args.report).write_text(report_to_json(report))
    Path(args.prcurve).write_text(pr_curve_csv(report.pr))
    print(
        f"n={len(report.per_image)} MAE={report.mae:.4f} F={report.f_beta_max:.4f} "
        f"E={report.e_m:.4f} S={report.s_m:.4f}"
    )
    return EXIT_OK


def _cmd_self_check(args) -> int:
    results = run_self_check(trials=args.trials, seed=args.seed)
    failed = 0
    for r in results:
        status = "ok  " if r.ok else "FAIL"
        detail = f"  ({r.detail})" if r.detail else ""
        print(f"{status} {r.name}{detail}")
        failed += 0 if r.ok else 1
    print(f"{len(results) - failed}/{len(results)} checks passed")
    return EXIT_OK if failed == 0 else EXIT_NUMERIC


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command == "gen-data":
            return _cmd_gen_data(args)
        if args.command == "train":
            return _cmd_train(args)
        if args.command == "infer":
            return _cmd_infer(args)
        if args.command == "eval":
            return _cmd_eval(args)
        if args.command == "self-check":
            return _cmd_self_check(args)
        raise _UsageError(f"unknown command {args.command}")
    except _UsageError as e:
        print(f"usage error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (ValueError,) as e:
        if isinstance(e, (DataFormatError, CheckpointError)):
            print(f"data error: {e}", file=sys.stderr)
            return EXIT_DATA
        print(f"usage error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except FileNotFoundError as e:
        print(f"data error: {e}", file=sys.stderr)
        return EXIT_DATA
    except NumericalError as e:
        print(f"numerical failure: {e}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
