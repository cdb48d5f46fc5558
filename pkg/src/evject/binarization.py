"""Turn decoded probability grids back into voxels with top-k selection.

The decoder fills the ``k`` most probable voxels of each block. The encoder
picks ``k`` per block: for reconstruction quality (QuB), to preserve the
input count (CoB, optionally with the POS/NEG split), or for the confidence of
a proxy classifier on the whole decoded sequence (CIB).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from evject.bitstream import BinarizationMode
from evject.conversion import round_half_up
from evject.errors import ConfigurationError, UndefinedMetricError, ValidationError
from evject.metrics import psnr_d1

BETA_GRID = tuple(round(0.2 + 0.1 * i, 1) for i in range(19))
GAMMA_GRID = (0.25, 0.5, 0.75, 1.0, 1.25)


@dataclass(frozen=True)
class BinarizationSpec:
    mode: BinarizationMode
    k: int
    n_pos: int | None = None
    n_neg: int | None = None
    beta: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "mode", BinarizationMode(self.mode))
        if self.k < 0:
            raise ValidationError("k must be non-negative")
        if self.mode is BinarizationMode.COB_SPLIT:
            if self.n_pos is None or self.n_neg is None or self.n_pos + self.n_neg != self.k:
                raise ValidationError("split mode needs n_pos + n_neg == k")


def top_k_select(occ_prob, k):
    """Local (x, y, z) coordinates of the ``k`` most probable voxels, in (z, y, x) order.

    Equal probabilities rank by (z, y, x), i.e. by flat C-order index.
    """
    occ_prob = np.asarray(occ_prob)
    if not 0 <= k <= occ_prob.size:
        raise ValidationError(f"k={k} outside [0, {occ_prob.size}]")
    flat = occ_prob.ravel()
    order = np.argsort(-flat, kind="stable")[:k]
    order.sort()
    z, y, x = np.unravel_index(order, occ_prob.shape)
    return np.stack([x, y, z], axis=1).astype(np.int64)


def binarize_polarity(pol_prob, coords):
    """+1 where pol_prob >= 0.5 at each (x, y, z) coordinate, else -1."""
    coords = np.asarray(coords, dtype=np.int64).reshape(-1, 3)
    p = np.asarray(pol_prob)[coords[:, 2], coords[:, 1], coords[:, 0]]
    return np.where(p >= 0.5, 1, -1).astype(np.int8)


def reconstruct_split(occ_prob, pol_prob, k, n_pos, n_neg):
    """Top-k voxels where exactly the ``n_pos`` highest pol_prob among them are POS."""
    if n_pos < 0 or n_neg < 0 or n_pos + n_neg != k:
        raise ValidationError("n_pos + n_neg must equal k")
    coords = top_k_select(occ_prob, k)
    p = np.asarray(pol_prob)[coords[:, 2], coords[:, 1], coords[:, 0]]
    # coords are already in (z, y, x) order, so a stable sort keeps that tie order
    rank = np.argsort(-p, kind="stable")
    pol = -np.ones(k, dtype=np.int8)
    pol[rank[:n_pos]] = 1
    return coords, pol


def reconstruct(prob_block, spec):
    """Decoded local coordinates and polarity of one block."""
    if spec.mode is BinarizationMode.COB_SPLIT:
        return reconstruct_split(prob_block.occ_prob, prob_block.pol_prob, spec.k, spec.n_pos, spec.n_neg)
    coords = top_k_select(prob_block.occ_prob, spec.k)
    return coords, binarize_polarity(prob_block.pol_prob, coords)


def _cap(k, prob_block):
    return int(min(max(k, 0), prob_block.occ_prob.size))


def qub_candidates(n_input, beta_grid, prob_block):
    return [(beta, _cap(int(round_half_up(n_input * beta)), prob_block)) for beta in beta_grid]


def choose_k_qub(prob_block, input_block, beta_grid=BETA_GRID, peak=None):
    """The ``k = round(N * beta)`` maximizing block PSNR D1; ties go to the smaller k."""
    ref, _ = input_block.local_points()
    n = len(ref)
    if n == 0:
        return BinarizationSpec(BinarizationMode.QUB, 0, beta=None)
    peak = peak or input_block.size
    best = None
    for beta, k in qub_candidates(n, beta_grid, prob_block):
        if k == 0:
            score = -np.inf
        else:
            try:
                score = psnr_d1(ref, top_k_select(prob_block.occ_prob, k), peak)
            except UndefinedMetricError:
                score = -np.inf
        if best is None or score > best[0] or (score == best[0] and k < best[1]):
            best = (score, k, beta)
    return BinarizationSpec(BinarizationMode.QUB, best[1], beta=best[2])


def choose_k_cob(input_block, split=False):
    n = input_block.n_occupied
    if split:
        return BinarizationSpec(BinarizationMode.COB_SPLIT, n, input_block.n_pos, input_block.n_neg)
    return BinarizationSpec(BinarizationMode.COB, n)


def choose_k_cib(prob_blocks, input_blocks, classifier, decode_fn, anchor_stream, gamma_grid=GAMMA_GRID):
    """One global scaling ``gamma`` of each block's input count, scored by the classifier.

    ``decode_fn(specs)`` turns per-block specs into a decoded event stream and
    ``anchor_stream`` is the voxelized input whose predicted label is the
    anchor. Returns ``(gamma, specs)``; ties go to the gamma nearest one, then
    the smaller gamma.
    """
    if classifier is None:
        raise ConfigurationError("classification-optimized binarization needs a classifier")
    anchor = int(np.argmax(classifier.predict_proba([anchor_stream])[0]))
    best = None
    for gamma in gamma_grid:
        specs = [
            BinarizationSpec(BinarizationMode.CIB, _cap(int(round_half_up(b.n_occupied * gamma)), pb))
            for pb, b in zip(prob_blocks, input_blocks)
        ]
        decoded = decode_fn(specs)
        score = float(classifier.predict_proba([decoded])[0][anchor]) if len(decoded) else -np.inf
        key = (score, -abs(gamma - 1.0), -gamma)
        if best is None or key > best[0]:
            best = (key, gamma, specs)
    return best[1], best[2]
