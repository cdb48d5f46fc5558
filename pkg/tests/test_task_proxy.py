import numpy as np
import pytest

from evject.errors import ConfigurationError, ValidationError
from evject.events import EventStream, synthetic_dataset
from evject.task_proxy import (
    ClassifierArchitecture,
    ClassifierConfig,
    ProxyClassifier,
    est_representation,
    train_classifier,
)


def one(t, p=1, duration=1.0):
    return EventStream([3], [4], [t], [p], 32, 32, duration)


def test_est_boundary_and_midpoint():
    g = est_representation(one(0.0))
    assert g.shape == (18, 32, 32)
    assert g[0, 4, 3] == 1.0 and g.sum() == 1.0
    g = est_representation(one(0.5))
    assert g[4, 4, 3] == 1.0 and g.sum() == 1.0
    g = est_representation(one(1.0, -1))
    assert g[9 + 8, 4, 3] == 1.0


def test_est_interpolation_split():
    # u = 0.3 -> bin coordinate 2.4 -> 0.6 / 0.4 split
    g = est_representation(one(0.3))
    assert g[2, 4, 3] == pytest.approx(0.6) and g[3, 4, 3] == pytest.approx(0.4)


def test_est_mass_and_sign():
    rng = np.random.default_rng(0)
    s = EventStream(rng.integers(0, 64, 500), rng.integers(0, 48, 500), rng.uniform(0, 2, 500),
                    rng.choice([-1, 1], 500), 64, 48, 2.0)
    g = est_representation(s)
    assert g.sum() == pytest.approx(500, abs=1e-9)
    assert g.min() >= 0
    assert g[:9].sum() == pytest.approx(np.sum(s.p == 1))
    assert est_representation(EventStream.empty(8, 8, 1.0)).sum() == 0


def test_zero_weights_uniform_scores():
    clf = ProxyClassifier(seed=0)
    for p in clf.params.values():
        p.data = np.zeros_like(p.data)
    scores = clf.classify(np.zeros((18, 32, 32)))
    assert np.allclose(scores, 0.25)


def test_scores_normalized_and_deterministic():
    clf = ProxyClassifier(seed=1)
    ds = synthetic_dataset(2, seed=5)
    a, b = clf.predict_proba(ds), clf.predict_proba(ds)
    assert np.array_equal(a, b)
    assert np.all((a > 0) & (a < 1))
    assert np.allclose(a.sum(axis=1), 1, atol=1e-6)
    with pytest.raises(ValidationError):
        clf.classify(np.zeros((18, 16, 16)))


def test_save_load(tmp_path):
    clf = ProxyClassifier(seed=2)
    clf.save(tmp_path / "c.evwt", tmp_path / "c.json")
    back = ProxyClassifier.load(tmp_path / "c.evwt", tmp_path / "c.json")
    g = np.random.default_rng(0).random((18, 32, 32))
    # weights are stored as float32
    assert np.allclose(back.classify(g), clf.classify(g), atol=1e-6)


def test_degenerate_datasets():
    ds = synthetic_dataset(5, seed=1)
    with pytest.raises(ConfigurationError):
        train_classifier(ds, ds)
    one_class = [s for s in synthetic_dataset(20, seed=1) if s.label == 0]
    with pytest.raises(ConfigurationError):
        train_classifier(one_class, one_class)


def test_seeded_training_reproducible():
    ds = synthetic_dataset(20, seed=3)
    cfg = ClassifierConfig(epochs=2, seed=4)
    arch = ClassifierArchitecture(widths=(4, 4))
    a, ha = train_classifier(ds, ds[::10], cfg, arch)
    b, hb = train_classifier(ds, ds[::10], cfg, arch)
    assert ha == hb
    for k, v in a.state_dict().items():
        assert np.array_equal(v, b.state_dict()[k])
