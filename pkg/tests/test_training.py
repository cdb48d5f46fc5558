import math

import numpy as np
import pytest

from oracles import brute_nearest
from evject.autograd import Tensor
from evject.blocking import VoxelBlock
from evject.errors import ConfigurationError
from evject.model import CodecArchitecture, ProbabilityBlock
from evject.training import (
    DEFAULT_LAMBDAS,
    EarlyStopping,
    FocalParams,
    PreparedBlocks,
    RdLossBreakdown,
    TrainConfig,
    focal_loss,
    history_csv,
    nearest_gt_polarity,
    polarity_targets,
    rd_loss,
    rd_loss_graph,
    train_sweep,
)

TINY = CodecArchitecture(block_size=16, hidden=(4, 4), latent_channels=4, hyper_channels=2, kernel=3)


def random_block(rng, size=16, n=60):
    flat = rng.choice(size**3, n, replace=False)
    occ = np.zeros(size**3, bool)
    occ[flat] = True
    pol = occ & (rng.random(size**3) < 0.5)
    return VoxelBlock((0, 0, 0), size, occ.reshape((size,) * 3), pol.reshape((size,) * 3))


def test_focal_values():
    assert focal_loss(1.0, 1, 2.0, 1.0) == pytest.approx(0.0, abs=1e-12)
    assert focal_loss(0.5, 1, 2.0, 1.0) == pytest.approx(0.25 * math.log(2), abs=1e-6)
    assert focal_loss(0.5, 1, 2.0, 1.0) == pytest.approx(0.17329, abs=1e-5)
    # a negative target is weighted by 1 - alpha_pos, so full weight needs alpha_pos = 0
    assert focal_loss(0.9, 0, 2.0, 0.0) == pytest.approx(-(0.9**2) * math.log(0.1), abs=1e-9)
    assert focal_loss(0.9, 0, 2.0, 0.0) == pytest.approx(1.86509, abs=1e-5)
    assert focal_loss(0.9, 0, 2.0, 1.0) == 0.0
    assert focal_loss(0.9, 0, 2.0, 0.9) == pytest.approx(0.1 * 0.81 * math.log(10), abs=1e-9)


def test_polarity_targets_without_false_positives():
    b = random_block(np.random.default_rng(0))
    targets, mask = polarity_targets(b, b.occupancy.astype(float))
    assert np.array_equal(mask, b.occupancy)
    assert np.array_equal(targets[mask], b.polarity[mask])


def test_false_positive_takes_nearest_gt():
    occ = np.zeros((16,) * 3, bool)
    occ[2, 0, 0] = True  # (x,y,z) = (0,0,2), NEG
    b = VoxelBlock((0, 0, 0), 16, occ, np.zeros_like(occ))
    prob = occ.astype(float)
    prob[0, 0, 0] = 0.9
    targets, mask = polarity_targets(b, prob)
    assert mask[0, 0, 0] and not targets[0, 0, 0]
    assert mask.sum() == 2


def test_empty_block_has_empty_mask():
    b = VoxelBlock((0, 0, 0), 16, np.zeros((16,) * 3, bool), np.zeros((16,) * 3, bool))
    targets, mask = polarity_targets(b, np.full((16,) * 3, 0.9))
    assert not mask.any()
    pb = ProbabilityBlock(np.full((16,) * 3, 0.9), np.full((16,) * 3, 0.5))
    assert rd_loss(pb, b, 0.0, 0.01).d_polarity == 0.0


@pytest.mark.parametrize("seed", range(5))
def test_nearest_gt_polarity_matches_brute_force(seed):
    rng = np.random.default_rng(seed)
    b = random_block(rng, n=int(rng.integers(1, 30)))
    pts, pol = b.local_points()
    grid = nearest_gt_polarity(b)
    for _ in range(200):
        q = tuple(int(v) for v in rng.integers(0, 16, 3))
        j = brute_nearest(q, pts)
        assert grid[q[2], q[1], q[0]] == (pol[j] > 0)


def test_rd_arithmetic():
    r = RdLossBreakdown(0.2, 0.4, 0.5 * 0.2 + 0.5 * 0.4, 100.0, 0.01, 0.5, 10)
    assert r.d_total == pytest.approx(0.3)
    assert r.loss == pytest.approx(0.4)


def test_rd_loss_weights():
    rng = np.random.default_rng(1)
    b = random_block(rng)
    pb = ProbabilityBlock(rng.uniform(0.01, 0.99, (16,) * 3), rng.uniform(0.01, 0.99, (16,) * 3))
    half = rd_loss(pb, b, 120.0, 0.01, 0.5)
    assert half.d_total == pytest.approx(0.5 * half.d_geometry + 0.5 * half.d_polarity)
    assert rd_loss(pb, b, 120.0, 0.01, 0.0).d_total == pytest.approx(half.d_geometry)
    assert rd_loss(pb, b, 120.0, 0.01, 1.0).d_total == pytest.approx(half.d_polarity)
    assert half.bits_per_point == pytest.approx(120.0 / 60)


def test_perfect_probabilities():
    b = random_block(np.random.default_rng(2))
    pb = ProbabilityBlock(b.occupancy.astype(float), b.polarity.astype(float))
    assert rd_loss(pb, b, 0.0, 0.01).d_total <= 1e-5


def test_graph_loss_matches_reference():
    rng = np.random.default_rng(3)
    blocks = [random_block(rng) for _ in range(3)]
    data = PreparedBlocks(blocks, np.float64)
    probs = rng.uniform(0.02, 0.98, (3, 2, 16, 16, 16))
    bits = np.array([50.0, 80.0, 10.0])
    loss, _ = rd_loss_graph(Tensor(probs, dtype=np.float64), Tensor(bits, dtype=np.float64), data.occ, data.pol,
                            data.nn_pol, data.n_points, 0.01, 0.5, FocalParams())
    ref = np.mean([rd_loss(ProbabilityBlock(p[0], p[1]), b, r, 0.01).loss for p, b, r in zip(probs, blocks, bits)])
    assert float(loss.data) == pytest.approx(ref, rel=1e-10)


def test_early_stopping_counter():
    es = EarlyStopping(25)
    stops = []
    for epoch in range(60):
        value = 1.0 / (epoch + 1) if epoch < 10 else 1.0
        if es.update(epoch, value):
            stops.append(epoch)
            break
    assert es.best_epoch == 9 and stops == [34]


@pytest.mark.parametrize(
    "kw",
    [{"lambdas": ()}, {"lambdas": (0.01, 0.005)}, {"lambdas": (0.01, 0.01)}, {"lambdas": (-1.0,)}, {"omega": 1.5},
     {"patience": 0}, {"batch_size": 0}, {"learning_rate": 0.0}, {"first_max_epochs": 0}],
)
def test_config_validation(kw):
    with pytest.raises(ConfigurationError):
        TrainConfig(**kw)


def test_defaults():
    c = TrainConfig()
    assert c.lambdas == DEFAULT_LAMBDAS == (0.00125, 0.0025, 0.005, 0.01, 0.02)
    assert c.omega == 0.5 and c.patience == 25


def test_empty_dataset():
    with pytest.raises(ConfigurationError):
        train_sweep([], [random_block(np.random.default_rng(0))])


def small_sweep(seed=0, first_max_epochs=None):
    rng = np.random.default_rng(7)
    blocks = [random_block(rng, n=int(rng.integers(30, 90))) for _ in range(12)]
    seen = []
    cfg = TrainConfig(lambdas=(0.005, 0.02), max_epochs=2, batch_size=4, seed=seed, learning_rate=1e-3,
                      first_max_epochs=first_max_epochs)
    res = train_sweep(blocks[:9], blocks[9:], cfg, TINY, epoch_hook=lambda e: seen.append(e.lam))
    return res, seen


def test_sweep_order_and_determinism():
    a, seen = small_sweep()
    assert seen == [0.005, 0.005, 0.02, 0.02]
    assert [r.lam for r in a] == [0.005, 0.02]
    b, _ = small_sweep()
    for ra, rb in zip(a, b):
        assert [e.train_loss for e in ra.history] == [e.train_loss for e in rb.history]
        for k, v in ra.model.state_dict().items():
            assert np.array_equal(v, rb.model.state_dict()[k])
    c, _ = small_sweep(seed=1)
    assert c[0].history[0].train_loss != a[0].history[0].train_loss
    text = history_csv(a)
    assert text.splitlines()[0].startswith("epoch,lambda,train_loss") and len(text.splitlines()) == 5


def test_first_lambda_epoch_cap():
    res, seen = small_sweep(first_max_epochs=3)
    assert seen == [0.005] * 3 + [0.02] * 2
    assert [len(r.history) for r in res] == [3, 2]
