"""Rate-distortion training of the block codec.

Distortion is a focal loss on both output channels: occupancy over every
voxel, polarity over the ground-truth-occupied and predicted-occupied voxels.
False-positive voxels borrow the polarity of their nearest ground-truth
voxel. The rate term is the estimated bits per ground-truth occupied voxel.
Models for increasing lambda are trained in sequence, each one warm-started
from the previous one.
"""

from __future__ import annotations

import csv
import io
import logging
from dataclasses import dataclass, field

import numpy as np

from evject.autograd import Tensor, ops
from evject.blocking import filter_training_blocks, partition, stack_blocks
from evject.conversion import events_to_single_pc
from evject.errors import ConfigurationError, ValidationError
from evject.model import CodecArchitecture, CodecModel, QuantMode
from evject.spatial import nearest_index

log = logging.getLogger(__name__)

DEFAULT_LAMBDAS = (0.00125, 0.0025, 0.005, 0.01, 0.02)


@dataclass(frozen=True)
class FocalParams:
    gamma: float = 2.0
    alpha_occ: float = 0.9
    alpha_pol: float = 0.5


@dataclass(frozen=True)
class RdLossBreakdown:
    d_geometry: float
    d_polarity: float
    d_total: float
    rate_bits: float
    lam: float
    omega: float
    n_points: int = 1

    @property
    def bits_per_point(self):
        return self.rate_bits / max(self.n_points, 1)

    @property
    def loss(self):
        return self.d_total + self.lam * self.bits_per_point


def focal_loss(prob, target, gamma=2.0, alpha_pos=0.5):
    """Focal loss in nats; ``prob`` is clamped to [1e-7, 1 - 1e-7]."""
    return ops.focal_loss_value(prob, target, gamma, alpha_pos)


def nearest_gt_polarity(block):
    """For every voxel, whether the nearest occupied voxel of ``block`` is POS.

    Ties go to the smallest (z, y, x); occupied voxels map to themselves.
    """
    s = block.size
    pts, pol = block.local_points()
    grid = np.zeros((s, s, s), dtype=bool)
    if not len(pts):
        return grid
    z, y, x = np.meshgrid(np.arange(s), np.arange(s), np.arange(s), indexing="ij")
    queries = np.stack([x.ravel(), y.ravel(), z.ravel()], axis=1)
    nn = nearest_index(queries, pts)
    return (pol[nn] > 0).reshape(s, s, s)


def polarity_targets(block, occ_prob, nn_polarity=None):
    """Polarity targets and the mask the polarity loss is averaged over."""
    occ_prob = np.asarray(occ_prob)
    if occ_prob.shape != block.occupancy.shape:
        raise ValidationError(f"occ_prob shape {occ_prob.shape} != block {block.occupancy.shape}")
    occ = block.occupancy
    if not occ.any():
        return np.zeros_like(occ), np.zeros_like(occ)
    if nn_polarity is None:
        nn_polarity = nearest_gt_polarity(block)
    mask = occ | (occ_prob >= 0.5)
    targets = np.where(occ, block.polarity, nn_polarity) & mask
    return targets, mask


def rd_loss(prob_block, block, rate_bits, lam, omega=0.5, focal=FocalParams()):
    """Loss breakdown for one decoded block (no gradient)."""
    occ_prob = np.asarray(prob_block.occ_prob, dtype=np.float64)
    pol_prob = np.asarray(prob_block.pol_prob, dtype=np.float64)
    targets, mask = polarity_targets(block, occ_prob)
    dg = float(focal_loss(occ_prob, block.occupancy, focal.gamma, focal.alpha_occ).mean())
    if mask.any():
        dp = float(focal_loss(pol_prob[mask], targets[mask], focal.gamma, focal.alpha_pol).mean())
    else:
        dp = 0.0
    dt = (1.0 - omega) * dg + omega * dp
    return RdLossBreakdown(dg, dp, dt, float(rate_bits), float(lam), float(omega), block.n_occupied)


class PreparedBlocks:
    """Training arrays for a list of blocks, including nearest-GT polarity grids."""

    def __init__(self, blocks, dtype=np.float32):
        if not blocks:
            raise ConfigurationError("empty block set")
        sizes = {b.size for b in blocks}
        if len(sizes) != 1:
            raise ConfigurationError(f"mixed block sizes {sorted(sizes)}")
        self.blocks = list(blocks)
        self.x = stack_blocks(blocks, dtype)
        self.occ = np.stack([b.occupancy for b in blocks])
        self.pol = np.stack([b.polarity for b in blocks])
        self.nn_pol = np.stack([nearest_gt_polarity(b) for b in blocks])
        self.n_points = np.maximum(self.occ.reshape(len(blocks), -1).sum(axis=1), 1)

    def __len__(self):
        return len(self.blocks)


def rd_loss_graph(probs, bits, occ, pol, nn_pol, n_points, lam, omega, focal):
    """Mean RD loss over a batch as a graph node, plus per-block parts."""
    n = probs.shape[0]
    occ_prob = ops.getitem(probs, (slice(None), 0))
    pol_prob = ops.getitem(probs, (slice(None), 1))
    axes = (1, 2, 3)
    dg = ops.mean(ops.focal_loss(occ_prob, occ, focal.gamma, focal.alpha_occ), axis=axes)
    mask = occ | (occ_prob.data >= 0.5)
    target = np.where(occ, pol, nn_pol)
    fp = ops.focal_loss(pol_prob, target, focal.gamma, focal.alpha_pol)
    count = np.maximum(mask.reshape(n, -1).sum(axis=1), 1).astype(probs.dtype)
    dp = ops.div(ops.sum(ops.mul(fp, mask.astype(probs.dtype)), axis=axes), count)
    dt = ops.add(ops.mul(dg, 1.0 - omega), ops.mul(dp, omega))
    bpp = ops.div(bits, n_points.astype(probs.dtype))
    per_block = ops.add(dt, ops.mul(bpp, lam))
    return ops.mean(per_block), {"d_geometry": dg.data, "d_polarity": dp.data, "bits_per_point": bpp.data}


@dataclass(frozen=True)
class TrainConfig:
    lambdas: tuple = DEFAULT_LAMBDAS
    omega: float = 0.5
    focal: FocalParams = FocalParams()
    patience: int = 25
    max_epochs: int = 200
    # cap for the randomly initialised first lambda; None means max_epochs
    first_max_epochs: int | None = None
    batch_size: int = 16
    seed: int = 0
    learning_rate: float = 1e-4
    lr_factor: float = 0.5
    lr_patience: int = 10
    min_lr: float = 1e-6

    def __post_init__(self):
        object.__setattr__(self, "lambdas", tuple(float(v) for v in self.lambdas))
        if isinstance(self.focal, dict):
            object.__setattr__(self, "focal", FocalParams(**self.focal))
        self.validate()

    def validate(self):
        lam = self.lambdas
        if not lam or any(v <= 0 for v in lam):
            raise ConfigurationError("lambdas must be a non-empty list of positive values")
        if any(b <= a for a, b in zip(lam, lam[1:])):
            raise ConfigurationError("lambdas must be strictly increasing")
        if not 0.0 <= self.omega <= 1.0:
            raise ConfigurationError("omega must lie in [0, 1]")
        if self.patience < 1 or self.max_epochs < 1 or self.batch_size < 1:
            raise ConfigurationError("patience, max_epochs and batch_size must be >= 1")
        if self.first_max_epochs is not None and self.first_max_epochs < 1:
            raise ConfigurationError("first_max_epochs must be >= 1")
        if self.learning_rate <= 0 or not 0 < self.lr_factor <= 1:
            raise ConfigurationError("invalid learning-rate schedule")


class Adam:
    def __init__(self, params, lr=1e-4, betas=(0.9, 0.999), eps=1e-8):
        self.params = params
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.t = 0
        self.m = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in params.items()}

    def step(self):
        self.t += 1
        c1 = 1 - self.b1**self.t
        c2 = 1 - self.b2**self.t
        for k, p in self.params.items():
            g = p.grad
            if g is None:
                continue
            self.m[k] = self.b1 * self.m[k] + (1 - self.b1) * g
            self.v[k] = self.b2 * self.v[k] + (1 - self.b2) * g * g
            step = self.lr * (self.m[k] / c1) / (np.sqrt(self.v[k] / c2) + self.eps)
            p.data = (p.data - step).astype(p.data.dtype)

    def zero_grad(self):
        for p in self.params.values():
            p.grad = None


class EarlyStopping:
    """Stops once ``patience`` consecutive epochs fail to improve on the best value."""

    def __init__(self, patience):
        if patience < 1:
            raise ConfigurationError("patience must be >= 1")
        self.patience = patience
        self.best = np.inf
        self.best_epoch = None

    def update(self, epoch, value):
        """Record ``value`` for ``epoch``; True when training should stop."""
        if value < self.best:
            self.best = value
            self.best_epoch = epoch
            return False
        return self.best_epoch is None or epoch - self.best_epoch >= self.patience


class PlateauSchedule:
    """Multiply the learning rate by ``factor`` after ``patience`` epochs without improvement."""

    def __init__(self, optimizer, factor=0.5, patience=10, min_lr=1e-6):
        self.opt = optimizer
        self.factor = factor
        self.patience = patience
        self.min_lr = min_lr
        self.best = np.inf
        self.stale = 0

    def update(self, value):
        if value < self.best:
            self.best = value
            self.stale = 0
            return
        self.stale += 1
        if self.stale >= self.patience:
            self.opt.lr = max(self.opt.lr * self.factor, self.min_lr)
            self.stale = 0


@dataclass
class EpochRecord:
    epoch: int
    lam: float
    train_loss: float
    val_loss: float
    d_geometry: float
    d_polarity: float
    bits_per_voxel: float
    lr: float


@dataclass
class TrainedModel:
    lam: float
    model: CodecModel
    history: list = field(default_factory=list)
    best_epoch: int = 0
    stopped_epoch: int = 0
    early_stopped: bool = False

    @property
    def initial_loss(self):
        return self.history[0].train_loss

    @property
    def final_loss(self):
        return self.history[-1].train_loss


def evaluate_loss(model, data, lam, config, batch_size=None):
    """Mean RD loss and breakdown on ``data`` with rounding quantization."""
    batch_size = batch_size or config.batch_size
    totals = np.zeros(4)
    for a in range(0, len(data), batch_size):
        sl = slice(a, a + batch_size)
        probs, bits, _ = model.forward(Tensor(data.x[sl]), QuantMode.INFER_ROUND)
        loss, parts = rd_loss_graph(
            probs, bits, data.occ[sl], data.pol[sl], data.nn_pol[sl], data.n_points[sl],
            lam, config.omega, config.focal,
        )
        m = probs.shape[0]
        totals += m * np.array(
            [float(loss.data), parts["d_geometry"].mean(), parts["d_polarity"].mean(), parts["bits_per_point"].mean()]
        )
    return totals / len(data)


def train_model(model, train, val, lam, config, rng, epoch_hook=None, max_epochs=None):
    """Train one model in place for a single lambda; returns its TrainedModel record."""
    max_epochs = config.max_epochs if max_epochs is None else max_epochs
    opt = Adam(model.params, config.learning_rate)
    sched = PlateauSchedule(opt, config.lr_factor, config.lr_patience, config.min_lr)
    stopper = EarlyStopping(config.patience)
    best_state = model.state_dict()
    rec = TrainedModel(lam, model)
    for epoch in range(max_epochs):
        order = rng.permutation(len(train))
        losses = []
        for a in range(0, len(order), config.batch_size):
            idx = np.sort(order[a : a + config.batch_size])
            opt.zero_grad()
            probs, bits, _ = model.forward(Tensor(train.x[idx]), QuantMode.TRAIN_NOISE, rng)
            loss, _ = rd_loss_graph(
                probs, bits, train.occ[idx], train.pol[idx], train.nn_pol[idx], train.n_points[idx],
                lam, config.omega, config.focal,
            )
            loss.backward()
            opt.step()
            losses.append(float(loss.data) * len(idx))
        train_loss = float(np.sum(losses) / len(train))
        val_loss, dg, dp, bpp = evaluate_loss(model, val, lam, config)
        er = EpochRecord(epoch, lam, train_loss, float(val_loss), float(dg), float(dp), float(bpp), opt.lr)
        rec.history.append(er)
        if epoch_hook:
            epoch_hook(er)
        improved = val_loss < stopper.best
        stop = stopper.update(epoch, val_loss)
        if improved:
            best_state = model.state_dict()
        sched.update(val_loss)
        log.debug("lambda=%g epoch=%d train=%.5f val=%.5f", lam, epoch, train_loss, val_loss)
        if stop:
            rec.early_stopped = True
            break
    rec.best_epoch = stopper.best_epoch
    rec.stopped_epoch = rec.history[-1].epoch
    model.load_state_dict(best_state)
    return rec


def train_sweep(train_blocks, val_blocks, config=None, arch=None, epoch_hook=None):
    """One model per lambda, smallest lambda first, each warm-started from the last."""
    config = config or TrainConfig()
    if not train_blocks or not val_blocks:
        raise ConfigurationError("training and validation sets must be non-empty")
    arch = arch or CodecArchitecture(block_size=train_blocks[0].size)
    if arch.block_size != train_blocks[0].size:
        raise ConfigurationError(f"architecture block size {arch.block_size} != data {train_blocks[0].size}")
    train = PreparedBlocks(train_blocks)
    val = PreparedBlocks(val_blocks)
    model = CodecModel(arch, seed=config.seed)
    rng = np.random.default_rng(config.seed)
    results = []
    for i, lam in enumerate(config.lambdas):
        cap = config.first_max_epochs if i == 0 and config.first_max_epochs else config.max_epochs
        rec = train_model(model, train, val, lam, config, rng, epoch_hook, cap)
        log.info("lambda=%g: best epoch %d, stopped at %d", lam, rec.best_epoch, rec.stopped_epoch)
        rec.model = model.copy()
        results.append(rec)
    return results


LOG_FIELDS = ("epoch", "lambda", "train_loss", "val_loss", "d_geometry", "d_polarity", "bits_per_voxel", "lr")


def history_csv(records):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(LOG_FIELDS)
    for tm in records:
        for e in tm.history:
            w.writerow([e.epoch, e.lam, e.train_loss, e.val_loss, e.d_geometry, e.d_polarity, e.bits_per_voxel, e.lr])
    return buf.getvalue()


def training_blocks(streams, tsf, block_size, min_occ=500, max_occ=20000):
    """Blocks of every stream's single cloud that pass the occupancy filter."""
    out = []
    for s in streams:
        pc, _ = events_to_single_pc(s, tsf)
        out.extend(filter_training_blocks(partition(pc, block_size), min_occ, max_occ))
    return out
