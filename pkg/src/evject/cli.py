"""``evject`` command line: generate, convert, train, encode, decode, evaluate, sweep.

Exit codes: 0 success, 1 usage or configuration, 2 data or corruption, 3 internal.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time

from evject import errors
from evject.baseline import lossless_decode, lossless_encode
from evject.config import check_keys, load_config, seed_override, take
from evject.conversion import events_to_single_pc, single_pc_to_events, voxelize_stream
from evject.datasets import generate_dataset, load_dataset
from evject.events import DatasetProfile, read_event_file, write_event_file
from evject.evaluation import evaluate_pair, rows_csv, rows_json, run_sweep
from evject.metrics import DEFAULT_TSF_METRIC
from evject.model import CodecArchitecture, ModelSet
from evject.pipeline import DEFAULT_TSF, decode_bitstream, encode_stream, parse_mode
from evject.task_proxy import ClassifierConfig, ProxyClassifier, train_classifier
from evject.training import FocalParams, TrainConfig, history_csv, train_sweep, training_blocks

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_INTERNAL = 0, 1, 2, 3

log = logging.getLogger("evject")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _fmt_of(path, explicit=None):
    if explicit:
        return explicit.upper()
    return "CSV" if str(path).lower().endswith(".csv") else "BIN"


def _read_stream(path, fmt=None):
    with open(path, "rb") as fh:
        return read_event_file(fh.read(), _fmt_of(path, fmt))


def _write(path, data):
    with open(path, "wb") as fh:
        fh.write(data)


def _classifier_paths(directory):
    return os.path.join(directory, "classifier.evwt"), os.path.join(directory, "classifier.json")


def _load_classifier(directory, required=False):
    w, m = _classifier_paths(directory)
    if os.path.exists(w) and os.path.exists(m):
        return ProxyClassifier.load(w, m)
    if required:
        raise errors.ConfigurationError(f"no proxy classifier in {directory}")
    return None


# --------------------------------------------------------------------------- commands


GENERATE_KEYS = {"output", "n_per_class", "seed", "n_val", "format", "profile"}


def cmd_generate(args):
    cfg = load_config(args.config) if args.config else {}
    check_keys(cfg, GENERATE_KEYS)
    out = args.output or take(cfg, "output", str, required=True)
    n = args.n_per_class or take(cfg, "n_per_class", int, 60)
    seed = seed_override(args.seed if args.seed is not None else take(cfg, "seed", int, 11))
    n_val = args.n_val if args.n_val is not None else take(cfg, "n_val", int, 0)
    try:
        profile = DatasetProfile(**cfg["profile"]) if "profile" in cfg else None
    except TypeError as exc:
        raise errors.ConfigurationError(f"invalid profile section: {exc}") from None
    streams = generate_dataset(out, n, seed, n_val, profile, args.format or take(cfg, "format", str, "BIN"))
    print(json.dumps({"sequences": len(streams), "output": out, "seed": seed}))
    return EXIT_OK


def cmd_convert(args):
    stream = _read_stream(args.input, args.in_format)
    if args.output.endswith(".plc1"):
        pc, stats = events_to_single_pc(stream, args.tsf)
        data = lossless_encode(pc)
        _write(args.output, data)
        print(json.dumps({"n_events": stats.n_input_events, "n_voxels": len(pc), "bpe": 8 * len(data) / max(len(stream), 1)}))
        return EXIT_OK
    if args.voxelize:
        stream = voxelize_stream(stream, args.tsf)
    _write(args.output, write_event_file(stream, _fmt_of(args.output, args.out_format)))
    print(json.dumps({"n_events": len(stream)}))
    return EXIT_OK


TRAIN_KEYS = {
    "dataset", "output", "tsf", "block_size", "min_occupancy", "max_occupancy", "lambdas", "omega",
    "focal_gamma", "focal_alpha_occ", "focal_alpha_pol", "patience", "max_epochs", "first_max_epochs",
    "batch_size", "seed",
    "learning_rate", "lr_factor", "lr_patience", "architecture", "classifier",
}


def train_config_from(cfg):
    check_keys(cfg, TRAIN_KEYS)
    kw = {}
    for key, kind in (("omega", float), ("patience", int), ("max_epochs", int), ("first_max_epochs", int),
                      ("batch_size", int),
                      ("learning_rate", float), ("lr_factor", float), ("lr_patience", int)):
        if key in cfg:
            kw[key] = take(cfg, key, kind)
    if "lambdas" in cfg:
        kw["lambdas"] = [float(v) for v in take(cfg, "lambdas", list)]
    kw["focal"] = FocalParams(
        take(cfg, "focal_gamma", float, 2.0), take(cfg, "focal_alpha_occ", float, 0.9),
        take(cfg, "focal_alpha_pol", float, 0.5),
    )
    kw["seed"] = seed_override(take(cfg, "seed", int, 0))
    return TrainConfig(**kw)


def cmd_train(args):
    cfg = load_config(args.config)
    tcfg = train_config_from(cfg)
    dataset = take(cfg, "dataset", str, required=True)
    output = args.output or take(cfg, "output", str, required=True)
    tsf = take(cfg, "tsf", int, DEFAULT_TSF)
    bs = take(cfg, "block_size", int, 16)
    lo, hi = take(cfg, "min_occupancy", int, 500), take(cfg, "max_occupancy", int, 20000)
    arch = CodecArchitecture(block_size=bs, **cfg.get("architecture", {}))
    train_streams = load_dataset(dataset, "train")
    val_streams = load_dataset(dataset, "val")
    train_b = training_blocks(train_streams, tsf, bs, lo, hi)
    val_b = training_blocks(val_streams, tsf, bs, lo, hi)
    if not train_b or not val_b:
        raise errors.ConfigurationError("no blocks pass the occupancy filter (check min/max_occupancy and splits)")
    t0 = time.time()
    results = train_sweep(train_b, val_b, tcfg, arch)
    ms = ModelSet([r.model for r in results], [r.lam for r in results], tcfg.seed)
    ms.save(output)
    with open(os.path.join(output, "training_log.csv"), "w") as fh:
        fh.write(history_csv(results))
    summary = {"models": len(results), "seconds": round(time.time() - t0, 1), "train_blocks": len(train_b),
               "val_blocks": len(val_b),
               "stopped_epochs": [r.stopped_epoch for r in results]}
    if "classifier" in cfg:
        ccfg = dict(cfg["classifier"])
        check_keys(ccfg, {"epochs", "batch_size", "learning_rate", "patience", "seed"}, "classifier")
        ccfg["seed"] = seed_override(ccfg.get("seed", 0))
        clf, hist = train_classifier(train_streams, val_streams, ClassifierConfig(**ccfg))
        clf.save(*_classifier_paths(output))
        summary["classifier_val_top1"] = max(h["val_top1"] for h in hist)
    print(json.dumps(summary))
    return EXIT_OK


def cmd_encode(args):
    mode = parse_mode(args.mode)
    models = ModelSet.load(args.models)
    model = models[args.model_id]
    clf = _load_classifier(args.models, required=mode.name == "CIB")
    stream = _read_stream(args.input, args.format)
    res = encode_stream(stream, model, mode, tsf=args.tsf, block_size=args.block_size, model_id=args.model_id,
                        classifier=clf)
    _write(args.output, res.data)
    print(json.dumps(res.stats()))
    return EXIT_OK


def cmd_decode(args):
    with open(args.input, "rb") as fh:
        data = fh.read()
    if data[:4] == b"PLC1":
        stream = single_pc_to_events(lossless_decode(data))
    else:
        if not args.models:
            raise UsageError("--models is required to decode a .dlje stream")
        stream = decode_bitstream(data, ModelSet.load(args.models))
    _write(args.output, write_event_file(stream, _fmt_of(args.output, args.format)))
    print(json.dumps({"n_events": len(stream)}))
    return EXIT_OK


def cmd_evaluate(args):
    ref = _read_stream(args.original)
    dec = _read_stream(args.decoded)
    bits = 0
    if args.bitstream:
        bits = 8 * os.path.getsize(args.bitstream)
    r = evaluate_pair(ref, dec, bits, args.tsf_metric)
    out = {"bpe": r.bpe if args.bitstream else None, "psnr_e2e": r.psnr_e2e, "psnr_d1": r.psnr_d1,
           "decoded_count": r.decoded_count, "n_events": r.n_events}
    print(json.dumps({k: (str(v) if isinstance(v, float) and abs(v) == float("inf") else v) for k, v in out.items()}))
    return EXIT_OK


def cmd_sweep(args):
    streams = load_dataset(args.dataset, args.split)
    if not streams:
        raise UsageError(f"dataset {args.dataset} has no sequences in split {args.split!r}")
    models = ModelSet.load(args.models)
    modes = [m.strip() for m in args.modes.split(",") if m.strip()]
    for m in modes:
        parse_mode(m)
    clf = _load_classifier(args.models, required=any(parse_mode(m).name == "CIB" for m in modes))
    rows, details = run_sweep(streams, models, modes, clf, args.tsf, args.block_size, args.tsf_metric, args.workers)
    with open(args.output + ".csv", "w") as fh:
        fh.write(rows_csv(rows))
    with open(args.output + ".json", "w") as fh:
        fh.write(rows_json(rows, details))
    print(json.dumps({"rows": len(rows), "csv": args.output + ".csv", "json": args.output + ".json"}))
    return EXIT_OK


# --------------------------------------------------------------------------- wiring


def build_parser():
    p = _Parser(prog="evject", description="Learned joint compression of event-camera data.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("generate", help="write a labeled synthetic dataset")
    g.add_argument("--config")
    g.add_argument("-o", "--output")
    g.add_argument("--n-per-class", type=int)
    g.add_argument("--n-val", type=int)
    g.add_argument("--seed", type=int)
    g.add_argument("--format", choices=["bin", "csv"])
    g.set_defaults(fn=cmd_generate)

    c = sub.add_parser("convert", help="convert event files, voxelize, or lossless-code (.plc1)")
    c.add_argument("input")
    c.add_argument("output")
    c.add_argument("--tsf", type=int, default=DEFAULT_TSF)
    c.add_argument("--voxelize", action="store_true")
    c.add_argument("--in-format", choices=["bin", "csv"])
    c.add_argument("--out-format", choices=["bin", "csv"])
    c.set_defaults(fn=cmd_convert)

    t = sub.add_parser("train", help="train one codec model per lambda")
    t.add_argument("config")
    t.add_argument("-o", "--output")
    t.set_defaults(fn=cmd_train)

    e = sub.add_parser("encode", help="encode an event file to .dlje")
    e.add_argument("input")
    e.add_argument("-o", "--output", required=True)
    e.add_argument("--models", required=True)
    e.add_argument("--model-id", type=int, default=0)
    e.add_argument("--mode", default="qub")
    e.add_argument("--tsf", type=int, default=DEFAULT_TSF)
    e.add_argument("--block-size", type=int)
    e.add_argument("--format", choices=["bin", "csv"])
    e.set_defaults(fn=cmd_encode)

    d = sub.add_parser("decode", help="decode .dlje (or .plc1) to an event file")
    d.add_argument("input")
    d.add_argument("-o", "--output", required=True)
    d.add_argument("--models")
    d.add_argument("--format", choices=["bin", "csv"])
    d.set_defaults(fn=cmd_decode)

    v = sub.add_parser("evaluate", help="PSNR and rate of a decoded stream against its original")
    v.add_argument("original")
    v.add_argument("decoded")
    v.add_argument("--bitstream")
    v.add_argument("--tsf-metric", type=int, default=DEFAULT_TSF_METRIC)
    v.set_defaults(fn=cmd_evaluate)

    s = sub.add_parser("sweep", help="rate/quality/accuracy report over a dataset")
    s.add_argument("--dataset", required=True)
    s.add_argument("--models", required=True)
    s.add_argument("--modes", default="qub")
    s.add_argument("--split", default=None)
    s.add_argument("-o", "--output", required=True, help="output prefix for .csv and .json")
    s.add_argument("--tsf", type=int, default=DEFAULT_TSF)
    s.add_argument("--block-size", type=int)
    s.add_argument("--tsf-metric", type=int, default=DEFAULT_TSF_METRIC)
    s.add_argument("--workers", type=int, default=1)
    s.set_defaults(fn=cmd_sweep)
    return p


def main(argv=None):
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        print(f"evject: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.fn(args)
    except (UsageError, errors.ConfigurationError) as exc:
        print(f"evject: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (errors.CorruptionError,) as exc:
        print(f"evject: corruption: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (errors.EvjectError, OSError) as exc:
        print(f"evject: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except Exception as exc:  # noqa: BLE001 - last-resort exit code
        print(f"evject: internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
