"""Stream-level encoding and decoding with a trained codec model.

Encoding: stream -> single polarized cloud -> blocks -> latents, entropy
coded with the hyperprior models -> per-block ``k`` chosen by the selected
binarization mode -> ``.dlje`` bytes. Decoding re-derives every probability
from the transmitted integers only, so the encoder-side reconstruction used
to pick ``k`` is exactly what the decoder produces.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from evject.binarization import (
    BETA_GRID,
    GAMMA_GRID,
    BinarizationSpec,
    choose_k_cib,
    choose_k_cob,
    choose_k_qub,
    reconstruct,
)
from evject.bitstream import BinarizationMode, BitstreamHeader, BlockRecord, read_bitstream, write_bitstream
from evject.blocking import partition
from evject.conversion import PolarizedPointCloud, events_to_single_pc, single_pc_to_events
from evject.errors import ConfigurationError, DecodeError, EncodingError, FormatError
from evject.model import ProbabilityBlock
from evject.rangecoder import ALPHABET_BOUND, gaussian_table, logistic_table, range_decode, range_encode

DEFAULT_TSF = 128


def parse_mode(mode):
    if isinstance(mode, BinarizationMode):
        return mode
    if isinstance(mode, int):
        return BinarizationMode(mode)
    names = {"qub": BinarizationMode.QUB, "cob": BinarizationMode.COB,
             "cob_split": BinarizationMode.COB_SPLIT, "cob+-": BinarizationMode.COB_SPLIT,
             "cib": BinarizationMode.CIB}
    try:
        return names[str(mode).lower()]
    except KeyError:
        raise ConfigurationError(f"unknown binarization mode {mode!r}") from None


def _hyper_table(model, z_shape):
    loc, scale = model.prior.parameters()
    per = int(np.prod(z_shape[1:]))
    return logistic_table(np.repeat(loc, per), np.repeat(scale, per))


def _crop(probs, origin, dims):
    """Restrict a block's grids to voxels inside the cloud dims."""
    lim = [max(0, min(probs.size, d - o)) for o, d in zip(origin, dims)]
    lx, ly, lz = lim
    return ProbabilityBlock(probs.occ_prob[:lz, :ly, :lx], probs.pol_prob[:lz, :ly, :lx], origin, probs.size)


def _check_alphabet(values, what):
    if values.size and np.abs(values).max() > ALPHABET_BOUND:
        raise EncodingError(f"{what} value {int(np.abs(values).max())} exceeds the coder alphabet")


@dataclass
class CodedBlock:
    origin: tuple
    hyper: bytes
    main: bytes
    probs: ProbabilityBlock


def code_block(model, block, dims):
    """Entropy-code one block; returns payloads and the decoder-side probabilities."""
    lat = model.encode_latents(block.as_array())
    _check_alphabet(lat.y_hat, "latent")
    _check_alphabet(lat.z_hat, "hyper-latent")
    sigma = model.sigma_for(lat.z_hat, lat.y_hat.shape[1:])
    hyper = range_encode(lat.z_hat.ravel(), _hyper_table(model, lat.z_hat.shape))
    main = range_encode(lat.y_hat.ravel(), gaussian_table(sigma.ravel()))
    probs = _crop(model.probabilities(lat.y_hat, block.size, block.origin), block.origin, dims)
    return CodedBlock(block.origin, hyper, main, probs)


def decode_block_probs(model, record, block_size, dims):
    arch = model.arch
    y_shape = arch.latent_shape(block_size)
    z_shape = arch.hyper_shape(block_size)
    z_hat = range_decode(record.hyper, _hyper_table(model, z_shape)).reshape(z_shape)
    sigma = model.sigma_for(z_hat, y_shape[1:])
    y_hat = range_decode(record.main, gaussian_table(sigma.ravel())).reshape(y_shape)
    return _crop(model.probabilities(y_hat, block_size, record.origin), record.origin, dims)


def _points(prob_blocks, specs, dims, tsf):
    coords, pols = [], []
    for pb, spec in zip(prob_blocks, specs):
        c, p = reconstruct(pb, spec)
        coords.append(c + np.asarray(pb.origin, dtype=np.int64))
        pols.append(p)
    if not coords:
        return PolarizedPointCloud(np.zeros((0, 3), np.int64), np.zeros(0, np.int8), dims, tsf)
    return PolarizedPointCloud(np.concatenate(coords), np.concatenate(pols), dims, tsf)


@dataclass
class EncodeResult:
    data: bytes
    header: BitstreamHeader
    specs: list
    n_voxels: int
    gamma: float | None = None

    @property
    def bits(self):
        return 8 * len(self.data)

    @property
    def bpe(self):
        return self.bits / max(self.header.n_input_events, 1)

    def stats(self):
        return {
            "bpe": self.bpe,
            "bits": self.bits,
            "n_events": self.header.n_input_events,
            "n_voxels": self.n_voxels,
            "n_blocks": self.header.n_blocks,
            "mode": self.header.mode.name,
            "k": [s.k for s in self.specs],
        }


def encode_stream(
    stream, model, mode="qub", *, tsf=DEFAULT_TSF, block_size=None, model_id=0,
    classifier=None, beta_grid=BETA_GRID, gamma_grid=GAMMA_GRID,
):
    """Encode ``stream`` with ``model``; returns an :class:`EncodeResult`."""
    mode = parse_mode(mode)
    block_size = block_size or model.arch.block_size
    if block_size != model.arch.block_size:
        raise ConfigurationError(f"block size {block_size} does not match the model's {model.arch.block_size}")
    pc, stats = events_to_single_pc(stream, tsf)
    blocks = partition(pc, block_size)
    coded = [code_block(model, b, pc.dims) for b in blocks]
    probs = [c.probs for c in coded]
    gamma = None
    if mode is BinarizationMode.QUB:
        specs = [choose_k_qub(pb, b, beta_grid) for pb, b in zip(probs, blocks)]
    elif mode is BinarizationMode.COB:
        specs = [choose_k_cob(b) for b in blocks]
    elif mode is BinarizationMode.COB_SPLIT:
        specs = [choose_k_cob(b, split=True) for b in blocks]
    else:
        anchor = single_pc_to_events(pc)

        def decode_fn(candidate):
            return single_pc_to_events(_points(probs, candidate, pc.dims, pc.tsf))

        gamma, specs = choose_k_cib(probs, blocks, classifier, decode_fn, anchor, gamma_grid)
    header = BitstreamHeader(tsf, pc.dims, block_size, model_id, mode, len(blocks), stats.n_input_events)
    records = [
        BlockRecord(c.origin, s.k, c.hyper, c.main, s.n_pos, s.n_neg) for c, s in zip(coded, specs)
    ]
    return EncodeResult(write_bitstream(header, records), header, specs, len(pc), gamma)


def decode_bitstream(data, models, label=None):
    """Decode ``.dlje`` bytes with a model set (or a single model for id 0)."""
    header, records = read_bitstream(data)
    model = models if not hasattr(models, "__getitem__") else _pick(models, header.model_id)
    dims, s = header.dims, header.block_size
    if s != model.arch.block_size:
        raise FormatError(f"block size {s} does not match the model's {model.arch.block_size}")
    seen = set()
    probs, specs = [], []
    for rec in records:
        if any(o % s or o >= d for o, d in zip(rec.origin, dims)) or rec.origin in seen:
            raise DecodeError(f"invalid block origin {rec.origin}")
        seen.add(rec.origin)
        pb = decode_block_probs(model, rec, s, dims)
        if rec.k > pb.occ_prob.size:
            raise DecodeError(f"k={rec.k} exceeds the block voxel count")
        try:
            spec = BinarizationSpec(header.mode, rec.k, rec.n_pos, rec.n_neg)
        except Exception as exc:
            raise DecodeError(str(exc)) from exc
        probs.append(pb)
        specs.append(spec)
    pc = _points(probs, specs, dims, header.tsf)
    return single_pc_to_events(pc, label=label)


def _pick(models, model_id):
    try:
        return models[model_id]
    except (IndexError, KeyError):
        raise ConfigurationError(f"model id {model_id} not available") from None
