"""Event spike tensor grids and a small CNN over them.

The classifier stands in for a downstream recognition task: it scores
decoded streams, and the classification-optimized binarization mode uses
its confidence at the encoder.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass

import numpy as np

from evject.autograd import Tensor, dump_weights, load_weights, ops
from evject.errors import ConfigurationError, ValidationError
from evject.training import Adam


def est_representation(stream, bins=9, out_h=32, out_w=32):
    """(2 * bins, out_h, out_w) grid: POS bins first, then NEG bins.

    Each event is mapped to its nearest output pixel and splits unit mass
    between the two temporal bins adjacent to ``t / duration * (bins - 1)``.
    """
    grid = np.zeros((2, bins, out_h, out_w), dtype=np.float64)
    if not len(stream):
        return grid.reshape(2 * bins, out_h, out_w)
    px = np.minimum(np.floor((stream.x + 0.5) * out_w / stream.width), out_w - 1).astype(np.int64)
    py = np.minimum(np.floor((stream.y + 0.5) * out_h / stream.height), out_h - 1).astype(np.int64)
    u = stream.t / stream.duration if stream.duration > 0 else np.zeros(len(stream))
    coord = np.clip(u, 0.0, 1.0) * (bins - 1)
    lo = np.minimum(np.floor(coord).astype(np.int64), bins - 1)
    hi = np.minimum(lo + 1, bins - 1)
    w_hi = coord - lo
    ch = (stream.p < 0).astype(np.int64)
    np.add.at(grid, (ch, lo, py, px), 1.0 - w_hi)
    np.add.at(grid, (ch, hi, py, px), w_hi)
    return grid.reshape(2 * bins, out_h, out_w)


@dataclass(frozen=True)
class ClassifierArchitecture:
    n_classes: int = 4
    bins: int = 9
    height: int = 32
    width: int = 32
    widths: tuple = (8, 16)
    leaky_slope: float = 0.01

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        return cls(**{k: (tuple(v) if isinstance(v, list) else v) for k, v in d.items()})


@dataclass(frozen=True)
class ClassifierConfig:
    epochs: int = 60
    batch_size: int = 16
    learning_rate: float = 1e-3
    patience: int = 15
    seed: int = 0


class ProxyClassifier:
    """conv3d over (polarity; bins, H, W) -> conv3d -> global mean pool -> affine."""

    def __init__(self, arch=None, params=None, seed=0):
        self.arch = arch or ClassifierArchitecture()
        self.params = params if params is not None else self._init(seed)

    def _init(self, seed):
        rng = np.random.default_rng(seed)
        a = self.arch
        c1, c2 = a.widths
        p = {}
        for name, cin, cout in (("c0", 2, c1), ("c1", c1, c2)):
            bound = np.sqrt(1.0 / (cin * 27))
            p[name + ".w"] = Tensor(rng.uniform(-bound, bound, (cout, cin, 3, 3, 3)), requires_grad=True)
            p[name + ".b"] = Tensor(np.zeros(cout), requires_grad=True)
        bound = np.sqrt(1.0 / c2)
        p["fc.w"] = Tensor(rng.uniform(-bound, bound, (a.n_classes, c2)), requires_grad=True)
        p["fc.b"] = Tensor(np.zeros(a.n_classes), requires_grad=True)
        return p

    def _grids(self, streams):
        a = self.arch
        return np.stack([est_representation(s, a.bins, a.height, a.width) for s in streams])

    def logits(self, grids):
        """Class logits for (N, 2 * bins, H, W) grids."""
        a = self.arch
        grids = np.asarray(grids, dtype=np.float64)
        if grids.ndim != 4 or grids.shape[1:] != (2 * a.bins, a.height, a.width):
            raise ValidationError(f"grid shape {grids.shape[1:]} does not match the classifier")
        n = len(grids)
        x = Tensor(grids.reshape(n, 2, a.bins, a.height, a.width))
        p = self.params
        h = ops.leaky_relu(ops.conv3d(x, p["c0.w"], p["c0.b"], stride=2, padding=1), a.leaky_slope)
        h = ops.leaky_relu(ops.conv3d(h, p["c1.w"], p["c1.b"], stride=2, padding=1), a.leaky_slope)
        pooled = ops.mean(h, axis=(2, 3, 4))
        return ops.affine(pooled, p["fc.w"], p["fc.b"])

    def classify(self, grid):
        """Softmax scores for one EST grid."""
        return ops.softmax(self.logits(np.asarray(grid)[None])).data[0]

    def predict_proba(self, streams):
        if not len(streams):
            return np.zeros((0, self.arch.n_classes))
        return ops.softmax(self.logits(self._grids(streams))).data

    def state_dict(self):
        return {k: v.data for k, v in self.params.items()}

    def load_state_dict(self, state):
        for k, p in self.params.items():
            if k not in state or np.shape(state[k]) != p.shape:
                raise ConfigurationError(f"classifier weight {k} missing or mis-shaped")
            p.data = np.asarray(state[k], dtype=np.float64).copy()

    def save(self, weights_path, meta_path):
        with open(weights_path, "wb") as fh:
            fh.write(dump_weights(self.state_dict()))
        with open(meta_path, "w") as fh:
            json.dump({"format": "evject-classifier", "architecture": self.arch.to_dict()}, fh, indent=2)

    @classmethod
    def load(cls, weights_path, meta_path):
        with open(meta_path) as fh:
            meta = json.load(fh)
        clf = cls(ClassifierArchitecture.from_dict(meta["architecture"]))
        with open(weights_path, "rb") as fh:
            clf.load_state_dict(load_weights(fh.read()))
        return clf


def _check_dataset(streams, arch):
    labels = [s.label for s in streams]
    if any(lb is None for lb in labels):
        raise ConfigurationError("every training stream needs a label")
    counts = np.bincount(labels, minlength=arch.n_classes)
    if len(counts) > arch.n_classes:
        raise ConfigurationError("labels exceed the number of classes")
    return np.asarray(labels), counts


def train_classifier(train_streams, val_streams, config=None, arch=None):
    """Cross-entropy training with Adam; returns ``(classifier, history)`` with best-validation weights."""
    config = config or ClassifierConfig()
    arch = arch or ClassifierArchitecture()
    y_train, counts = _check_dataset(train_streams, arch)
    if np.count_nonzero(counts) < 2 or counts[counts > 0].min() < 20:
        raise ConfigurationError("need at least 2 classes with >= 20 sequences each")
    y_val, _ = _check_dataset(val_streams, arch)
    if not len(val_streams):
        raise ConfigurationError("validation set is empty")
    clf = ProxyClassifier(arch, seed=config.seed)
    x_train = clf._grids(train_streams)
    x_val = clf._grids(val_streams)
    opt = Adam(clf.params, config.learning_rate)
    rng = np.random.default_rng(config.seed)
    best = (-1.0, np.inf)
    best_state = clf.state_dict()
    stale = 0
    history = []
    for epoch in range(config.epochs):
        order = rng.permutation(len(x_train))
        total = 0.0
        for a in range(0, len(order), config.batch_size):
            idx = order[a : a + config.batch_size]
            opt.zero_grad()
            loss = ops.cross_entropy(clf.logits(x_train[idx]), y_train[idx])
            loss.backward()
            opt.step()
            total += float(loss.data) * len(idx)
        logits = clf.logits(x_val)
        val_loss = float(ops.cross_entropy(logits, y_val).data)
        val_acc = float(np.mean(np.argmax(logits.data, axis=1) == y_val))
        history.append({"epoch": epoch, "train_loss": total / len(x_train), "val_loss": val_loss, "val_top1": val_acc})
        if (val_acc, -val_loss) > (best[0], -best[1]):
            best = (val_acc, val_loss)
            best_state = clf.state_dict()
            stale = 0
        else:
            stale += 1
            if stale >= config.patience:
                break
    clf.load_state_dict(best_state)
    return clf, history
