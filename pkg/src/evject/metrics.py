"""Quality and rate metrics for decoded event data.

PSNR E2E compares two event sets after scaling time by ``tsf_metric`` and
rounding onto the voxel grid. Every event looks up its nearest neighbor of
the same polarity in the other set; the larger of the two directional MSEs
sets the PSNR against a peak of ``3 * (Peak - 1)**2``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from evject.conversion import round_half_up, temporal_extent
from evject.errors import UndefinedMetricError, ValidationError
from evject.spatial import nearest_squared_distance

PSNR_INF = math.inf
DEFAULT_TSF_METRIC = 256


def next_power_of_two(n):
    n = int(n)
    return 1 if n <= 1 else 1 << (n - 1).bit_length()


def metric_peak(width, height, duration, tsf_metric=DEFAULT_TSF_METRIC):
    return next_power_of_two(max(width, height, temporal_extent(duration, tsf_metric)))


def _psnr(mse, peak):
    if mse == 0:
        return PSNR_INF
    return 10.0 * math.log10(3.0 * (peak - 1) ** 2 / mse)


@dataclass(frozen=True)
class E2eReport:
    mse_ab: float
    mse_ba: float
    e_pos_ab: int
    e_neg_ab: int
    e_pos_ba: int
    e_neg_ba: int
    n_a: int
    n_b: int
    peak: int
    psnr_db: float

    @property
    def lossless(self):
        return self.psnr_db == PSNR_INF


def scaled_points(stream, tsf_metric=DEFAULT_TSF_METRIC):
    """(N, 3) integer (x, y, z) coordinates with ``z = round(t * tsf_metric)``."""
    z = round_half_up(stream.t * tsf_metric)
    return np.stack([stream.x.astype(np.int64), stream.y.astype(np.int64), z], axis=1).reshape(-1, 3)


def _directed_errors(a, pa, b, pb):
    """Summed squared NN distances from A to B per polarity (empty side falls back to all of B)."""
    out = []
    for sign in (1, -1):
        q = a[pa == sign]
        if not len(q):
            out.append(0)
            continue
        cand = b[pb == sign]
        if not len(cand):
            cand = b
        out.append(int(nearest_squared_distance(q, cand).sum()))
    return out


def psnr_e2e(ref, dec, tsf_metric=DEFAULT_TSF_METRIC):
    """Polarity-aware symmetric PSNR between two event streams."""
    if (ref.width, ref.height) != (dec.width, dec.height):
        raise ValidationError("streams have different sensor dimensions")
    if not len(ref) or not len(dec):
        raise UndefinedMetricError("PSNR E2E is undefined for an empty stream")
    a, b = scaled_points(ref, tsf_metric), scaled_points(dec, tsf_metric)
    pa, pb = ref.p, dec.p
    e_pos_ab, e_neg_ab = _directed_errors(a, pa, b, pb)
    e_pos_ba, e_neg_ba = _directed_errors(b, pb, a, pa)
    mse_ab = (e_pos_ab + e_neg_ab) / len(a)
    mse_ba = (e_pos_ba + e_neg_ba) / len(b)
    peak = metric_peak(ref.width, ref.height, max(ref.duration, dec.duration), tsf_metric)
    return E2eReport(
        mse_ab, mse_ba, e_pos_ab, e_neg_ab, e_pos_ba, e_neg_ba, len(a), len(b), peak,
        _psnr(max(mse_ab, mse_ba), peak),
    )


def psnr_d1(ref_points, dec_points, peak):
    """Symmetric point-to-point geometry PSNR (polarity ignored)."""
    a = np.asarray(ref_points, dtype=np.int64).reshape(-1, 3)
    b = np.asarray(dec_points, dtype=np.int64).reshape(-1, 3)
    if not len(a) or not len(b):
        raise UndefinedMetricError("PSNR D1 is undefined for an empty point set")
    mse_ab = nearest_squared_distance(a, b).sum() / len(a)
    mse_ba = nearest_squared_distance(b, a).sum() / len(b)
    return _psnr(max(mse_ab, mse_ba), peak)


def rate_bpe(total_bits, n_original_events):
    """Bits per original (pre-deduplication) event."""
    if n_original_events <= 0:
        raise UndefinedMetricError("bits per event is undefined for zero events")
    return float(total_bits) / int(n_original_events)


def top_k_accuracy(scores, labels, k):
    """Fraction of rows whose label is among the ``k`` best scores (ties favor lower class index)."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if scores.ndim != 2 or len(scores) != len(labels):
        raise ValidationError("scores must be (N, C) with one label per row")
    if k < 1:
        raise ValidationError("k must be >= 1")
    if not len(labels):
        return 0.0
    true = scores[np.arange(len(labels)), labels][:, None]
    cls = np.arange(scores.shape[1])[None, :]
    ahead = (scores > true) | ((scores == true) & (cls < labels[:, None]))
    return float(np.mean(ahead.sum(axis=1) < k))
