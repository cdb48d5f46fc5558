"""Rate/quality/accuracy sweeps over a set of sequences and a model set."""

from __future__ import annotations

import csv
import io
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass

import numpy as np

from evject.baseline import lossless_decode, lossless_encode
from evject.conversion import events_to_single_pc, single_pc_to_events, voxelize_stream
from evject.errors import ConfigurationError, UndefinedMetricError
from evject.metrics import DEFAULT_TSF_METRIC, metric_peak, psnr_d1, psnr_e2e, rate_bpe, scaled_points, top_k_accuracy
from evject.pipeline import DEFAULT_TSF, decode_bitstream, encode_stream, parse_mode


@dataclass
class SequenceResult:
    index: int
    label: int | None
    bpe: float
    psnr_e2e: float
    psnr_d1: float
    decoded_count: int
    voxel_count: int
    n_events: int


def _psnrs(ref, dec, tsf_metric):
    try:
        e2e = psnr_e2e(ref, dec, tsf_metric).psnr_db
        peak = metric_peak(ref.width, ref.height, max(ref.duration, dec.duration), tsf_metric)
        d1 = psnr_d1(scaled_points(ref, tsf_metric), scaled_points(dec, tsf_metric), peak)
    except UndefinedMetricError:
        e2e = d1 = -math.inf
    return e2e, d1


def evaluate_pair(ref, dec, total_bits, tsf_metric=DEFAULT_TSF_METRIC, index=0, voxels=0):
    e2e, d1 = _psnrs(ref, dec, tsf_metric)
    return SequenceResult(index, ref.label, rate_bpe(total_bits, len(ref)), e2e, d1, len(dec), voxels, len(ref))


def _finite_mean(values):
    v = [x for x in values if math.isfinite(x)]
    return float(np.mean(v)) if v else (math.inf if values and all(x == math.inf for x in values) else math.nan)


@dataclass
class SweepRow:
    codec: str
    model_id: int | None
    lam: float | None
    mode: str
    bpe: float
    psnr_e2e: float
    psnr_d1: float
    top1: float | None
    top5: float | None
    decoded_count: float
    n_sequences: int


ROW_FIELDS = tuple(SweepRow.__dataclass_fields__)


def _row(codec, model_id, lam, mode, results, scores=None, labels=None):
    top1 = top5 = None
    if scores is not None and len(scores):
        top1 = top_k_accuracy(scores, labels, 1)
        top5 = top_k_accuracy(scores, labels, 5)
    return SweepRow(
        codec, model_id, lam, mode,
        float(np.mean([r.bpe for r in results])),
        _finite_mean([r.psnr_e2e for r in results]),
        _finite_mean([r.psnr_d1 for r in results]),
        top1, top5,
        float(np.mean([r.decoded_count for r in results])),
        len(results),
    )


def _code_one(args):
    i, stream, model, model_id, mode, tsf, block_size, classifier, tsf_metric = args
    enc = encode_stream(stream, model, mode, tsf=tsf, block_size=block_size, model_id=model_id, classifier=classifier)
    dec = decode_bitstream(enc.data, model, label=stream.label)
    return evaluate_pair(stream, dec, enc.bits, tsf_metric, i, enc.n_voxels), dec


def _map(fn, jobs, workers):
    if workers <= 1:
        return [fn(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, jobs))


def code_sequences(streams, model, model_id, mode, tsf=DEFAULT_TSF, block_size=None, classifier=None,
                   tsf_metric=DEFAULT_TSF_METRIC, workers=1):
    """Encode, decode and score every stream; results keep input order."""
    jobs = [(i, s, model, model_id, mode, tsf, block_size, classifier, tsf_metric) for i, s in enumerate(streams)]
    out = _map(_code_one, jobs, workers)
    return [r for r, _ in out], [d for _, d in out]


def baseline_results(streams, tsf=DEFAULT_TSF, tsf_metric=DEFAULT_TSF_METRIC):
    """Lossless anchor: returns (results, decoded streams)."""
    results, decoded = [], []
    for i, s in enumerate(streams):
        pc, _ = events_to_single_pc(s, tsf)
        data = lossless_encode(pc)
        dec = single_pc_to_events(lossless_decode(data), label=s.label)
        results.append(evaluate_pair(s, dec, 8 * len(data), tsf_metric, i, len(pc)))
        decoded.append(dec)
    return results, decoded


def run_sweep(streams, model_set, modes=("qub",), classifier=None, tsf=DEFAULT_TSF, block_size=None,
              tsf_metric=DEFAULT_TSF_METRIC, workers=1):
    """One row per (lambda, mode) plus lossless-baseline and voxelized-reference rows."""
    if not streams:
        raise ConfigurationError("sweep needs at least one sequence")
    labels = np.asarray([s.label if s.label is not None else -1 for s in streams])
    labeled = classifier is not None and np.all(labels >= 0)

    def scores(decoded):
        return classifier.predict_proba(decoded) if labeled else None

    rows, details = [], {}
    for mode in modes:
        mname = parse_mode(mode).name
        for mid in range(len(model_set)):
            res, dec = code_sequences(streams, model_set[mid], mid, mode, tsf, block_size, classifier,
                                      tsf_metric, workers)
            rows.append(_row("dljec", mid, model_set.lambdas[mid], mname, res, scores(dec), labels))
            details[f"{mname}/{mid}"] = [asdict(r) for r in res]
    base, base_dec = baseline_results(streams, tsf, tsf_metric)
    rows.append(_row("lossless", None, None, "-", base, scores(base_dec), labels))
    details["lossless"] = [asdict(r) for r in base]
    vox = [voxelize_stream(s, tsf) for s in streams]
    vox_res = [
        SequenceResult(i, s.label, b.bpe, *_psnrs(s, v, tsf_metric), len(v), b.voxel_count, len(s))
        for i, (s, v, b) in enumerate(zip(streams, vox, base))
    ]
    rows.append(_row("voxelized", None, None, "-", vox_res, scores(vox), labels))
    details["voxelized"] = [asdict(r) for r in vox_res]
    return rows, details


def rows_csv(rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(ROW_FIELDS)
    for r in rows:
        w.writerow(["" if v is None else (repr(v) if isinstance(v, float) else v) for v in asdict(r).values()])
    return buf.getvalue()


def _json_safe(v):
    if isinstance(v, float) and not math.isfinite(v):
        return "inf" if v > 0 else ("-inf" if v < 0 else "nan")
    if isinstance(v, dict):
        return {k: _json_safe(x) for k, x in v.items()}
    if isinstance(v, list):
        return [_json_safe(x) for x in v]
    return v


def rows_json(rows, details=None):
    return json.dumps(_json_safe({"rows": [asdict(r) for r in rows], "sequences": details or {}}), indent=2)
