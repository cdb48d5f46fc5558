"""Two-channel autoencoder with a scale hyperprior.

The analysis transform maps a (2, s, s, s) block (occupancy, polarity) to
latents ``y`` of shape (C_y, s/8, s/8, s/8). A hyper-encoder summarizes
``|y|`` into hyper-latents ``z``; the hyper-decoder turns quantized ``z``
into per-latent Gaussian scales used both for the rate estimate and for
entropy coding. ``z`` itself is modeled by a learned per-channel logistic.
"""

from __future__ import annotations

import enum
import json
import os
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.special import ndtr

from evject.autograd import Tensor, dump_weights, load_weights, ops
from evject.autograd.ops import round_half_away
from evject.errors import ConfigurationError, ValidationError

SIGMA_MIN = 0.11
PROB_FLOOR = 2.0**-16
LN2 = np.log(2.0)


class QuantMode(enum.Enum):
    TRAIN_NOISE = "train_noise"
    INFER_ROUND = "infer_round"


@dataclass(frozen=True)
class CodecArchitecture:
    """Layer widths of the analysis/synthesis and hyper transforms.

    ``hidden`` lists the two intermediate widths of the encoder; the decoder
    mirrors them in reverse and ends with two output filters.
    """

    block_size: int = 16
    hidden: tuple = (32, 64)
    latent_channels: int = 32
    hyper_channels: int = 16
    kernel: int = 5
    hyper_kernel: int = 3
    leaky_slope: float = 0.01

    def __post_init__(self):
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        if len(self.hidden) != 2:
            raise ConfigurationError("hidden must list two widths (three stride-2 stages)")

    def latent_shape(self, size=None):
        size = size or self.block_size
        if size % 8:
            raise ValidationError(f"block size {size} is not a multiple of 8")
        d = size // 8
        return (self.latent_channels, d, d, d)

    def hyper_shape(self, size=None):
        d = self.latent_shape(size)[1]
        return (self.hyper_channels,) + (-(-d // 2),) * 3

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        return cls(**{k: (tuple(v) if isinstance(v, list) else v) for k, v in d.items()})


@dataclass
class LatentBundle:
    y_hat: np.ndarray
    z_hat: np.ndarray
    sigma: np.ndarray

    def __post_init__(self):
        if np.any(self.sigma < SIGMA_MIN * (1 - 1e-6)):
            raise ValidationError("sigma below SIGMA_MIN")


@dataclass
class ProbabilityBlock:
    """Decoded per-voxel probabilities, grids indexed [z, y, x]."""

    occ_prob: np.ndarray
    pol_prob: np.ndarray
    origin: tuple = (0, 0, 0)
    size: int = field(default=0)

    def __post_init__(self):
        if not self.size:
            self.size = self.occ_prob.shape[0]


def quantize(values, mode, rng=None):
    """Training noise U[-0.5, 0.5) or rounding half away from zero."""
    values = np.asarray(values)
    if QuantMode(mode) is QuantMode.TRAIN_NOISE:
        rng = rng if rng is not None else np.random.default_rng()
        return values + rng.uniform(-0.5, 0.5, size=values.shape)
    return round_half_away(values)


def gaussian_bin_probability(values, sigma):
    """P(v) = Phi((v + 0.5)/sigma) - Phi((v - 0.5)/sigma) for a zero-mean Gaussian."""
    a = np.abs(np.asarray(values, dtype=np.float64))
    s = np.asarray(sigma, dtype=np.float64)
    return ndtr((0.5 - a) / s) - ndtr((-0.5 - a) / s)


def _logistic_cdf(v):
    return 0.5 * (1.0 + np.tanh(0.5 * v))


class FactorizedPrior:
    """Per-channel logistic model of the hyper-latents."""

    def __init__(self, loc, scale_raw):
        self.loc = loc
        self.scale_raw = scale_raw

    def scale(self):
        return ops.add(ops.softplus(self.scale_raw), SIGMA_MIN)

    def likelihood(self, z):
        """Graph version: bin probabilities for a (N, C, ...) tensor."""
        view = (1, -1) + (1,) * (z.ndim - 2)
        loc = ops.reshape(self.loc, view)
        scale = ops.reshape(self.scale(), view)
        return ops.logistic_likelihood(z, loc, scale)

    def parameters(self):
        """Float64 (loc, scale) per channel."""
        loc = self.loc.data.astype(np.float64)
        return loc, np.logaddexp(0.0, self.scale_raw.data.astype(np.float64)) + SIGMA_MIN

    def bin_probability(self, values, channel_axis=0):
        """Numpy bin probabilities of integer ``values``; channel axis is ``channel_axis``."""
        values = np.asarray(values, dtype=np.float64)
        view = [1] * values.ndim
        view[channel_axis] = -1
        loc, scale = self.parameters()
        loc, scale = loc.reshape(view), scale.reshape(view)
        d = -np.abs(values - loc)
        return _logistic_cdf((d + 0.5) / scale) - _logistic_cdf((d - 0.5) / scale)


def rate_bits(y_hat, sigma, z_hat, prior, channel_axis=0):
    """Estimated bits for quantized latents and hyper-latents.

    Each per-symbol probability is floored at 2**-16.
    """
    py = np.maximum(gaussian_bin_probability(y_hat, sigma), PROB_FLOOR)
    pz = np.maximum(prior.bin_probability(z_hat, channel_axis), PROB_FLOOR)
    return float(-np.log2(py).sum() - np.log2(pz).sum())


class CodecModel:
    """Parameters plus the four transforms; all methods take batched (N, C, D, H, W) tensors."""

    def __init__(self, arch=None, params=None, seed=0, dtype=np.float32):
        self.arch = arch or CodecArchitecture()
        self.dtype = dtype
        self.params = params if params is not None else init_params(self.arch, seed, dtype)
        self.prior = FactorizedPrior(self.params["prior.loc"], self.params["prior.scale_raw"])

    # --- graph pieces
    def _conv(self, name, x, stride=2, pad=None, act=True):
        k = self.params[name + ".w"].shape[-1]
        pad = k // 2 if pad is None else pad
        h = ops.conv3d(x, self.params[name + ".w"], self.params[name + ".b"], stride=stride, padding=pad)
        return ops.leaky_relu(h, self.arch.leaky_slope) if act else h

    def _tconv(self, name, x, out_spatial, act=True):
        k = self.params[name + ".w"].shape[-1]
        h = ops.conv_transpose3d(
            x, self.params[name + ".w"], self.params[name + ".b"], stride=2, padding=k // 2, output_shape=out_spatial
        )
        return ops.leaky_relu(h, self.arch.leaky_slope) if act else h

    def analyze(self, x):
        size = x.shape[2]
        self.arch.latent_shape(size)
        if x.shape[1] != 2 or x.shape[2:] != (size, size, size):
            raise ValidationError(f"expected (N, 2, s, s, s) blocks, got {x.shape}")
        h = self._conv("enc0", x)
        h = self._conv("enc1", h)
        return self._conv("enc2", h, act=False)

    def hyper_analyze(self, y):
        return self._conv("henc", ops.abs(y), act=False)

    def hyper_synthesize(self, z_hat, latent_spatial):
        raw = self._tconv("hdec", z_hat, latent_spatial, act=False)
        return ops.add(ops.softplus(raw), SIGMA_MIN)

    def synthesize(self, y_hat, size):
        s = y_hat.shape[2]
        h = self._tconv("dec0", y_hat, (2 * s,) * 3)
        h = self._tconv("dec1", h, (4 * s,) * 3)
        logits = self._tconv("dec2", h, (size,) * 3, act=False)
        return ops.sigmoid(logits)

    def quantize(self, t, mode, rng=None):
        if QuantMode(mode) is QuantMode.TRAIN_NOISE:
            return ops.add_uniform_noise(t, rng)
        return ops.round_ste(t)

    def hyper_round_trip(self, y, mode, rng=None):
        """(z_hat, sigma) for latents ``y``."""
        z = self.hyper_analyze(y)
        z_hat = self.quantize(z, mode, rng)
        sigma = self.hyper_synthesize(z_hat, y.shape[2:])
        return z_hat, sigma

    def forward(self, x, mode, rng=None):
        """Probabilities and per-block estimated bits for a batch of blocks.

        Returns ``(probs, bits, parts)`` where ``probs`` is (N, 2, s, s, s),
        ``bits`` is (N,) and ``parts`` holds the intermediate tensors.
        """
        y = self.analyze(x)
        y_hat = self.quantize(y, mode, rng)
        z_hat, sigma = self.hyper_round_trip(y, mode, rng)
        py = ops.lower_bound(ops.gaussian_likelihood(y_hat, sigma), PROB_FLOOR)
        pz = ops.lower_bound(self.prior.likelihood(z_hat), PROB_FLOOR)
        n = x.shape[0]
        bits_y = ops.sum(ops.reshape(ops.log(py), (n, -1)), axis=1)
        bits_z = ops.sum(ops.reshape(ops.log(pz), (n, -1)), axis=1)
        bits = ops.mul(ops.add(bits_y, bits_z), -1.0 / LN2)
        probs = self.synthesize(y_hat, x.shape[2])
        return probs, bits, {"y": y, "y_hat": y_hat, "z_hat": z_hat, "sigma": sigma}

    # --- inference helpers on numpy arrays (single block, channel-first)
    def encode_latents(self, block_array):
        x = Tensor(block_array[None].astype(self.dtype))
        y = self.analyze(x)
        z_hat, sigma = self.hyper_round_trip(y, QuantMode.INFER_ROUND)
        y_hat = round_half_away(y.data[0]).astype(np.int64)
        return LatentBundle(y_hat, z_hat.data[0].astype(np.int64), sigma.data[0].astype(np.float64))

    def sigma_for(self, z_hat, latent_spatial):
        """Gaussian scales predicted from integer hyper-latents (decoder side)."""
        z = Tensor(np.asarray(z_hat)[None].astype(self.dtype))
        return self.hyper_synthesize(z, tuple(latent_spatial)).data[0].astype(np.float64)

    def probabilities(self, y_hat, size, origin=(0, 0, 0)):
        y = Tensor(np.asarray(y_hat)[None].astype(self.dtype))
        probs = self.synthesize(y, size).data[0]
        return ProbabilityBlock(probs[0].astype(np.float64), probs[1].astype(np.float64), tuple(origin), size)

    # --- persistence
    def state_dict(self):
        return {k: v.data for k, v in self.params.items()}

    def load_state_dict(self, state):
        missing = set(self.params) - set(state)
        if missing:
            raise ConfigurationError(f"weights missing tensors: {sorted(missing)}")
        for k, p in self.params.items():
            arr = np.asarray(state[k])
            if arr.shape != p.shape:
                raise ConfigurationError(f"weight {k} has shape {arr.shape}, expected {p.shape}")
            p.data = arr.astype(self.dtype).copy()

    def copy(self):
        clone = CodecModel(self.arch, dtype=self.dtype)
        clone.load_state_dict(self.state_dict())
        return clone

    def astype(self, dtype):
        clone = CodecModel(self.arch, dtype=dtype)
        clone.load_state_dict(self.state_dict())
        return clone

    def save(self, path):
        with open(path, "wb") as fh:
            fh.write(dump_weights(self.state_dict()))

    @classmethod
    def load(cls, path, arch):
        model = cls(arch)
        with open(path, "rb") as fh:
            model.load_state_dict(load_weights(fh.read()))
        return model


def _uniform(rng, shape, fan_in, dtype):
    bound = np.sqrt(1.0 / fan_in)
    return Tensor(rng.uniform(-bound, bound, size=shape).astype(dtype), requires_grad=True)


def init_params(arch, seed=0, dtype=np.float32):
    """Seeded initialization: U(+-sqrt(1/fan_in)) weights, zero biases."""
    rng = np.random.default_rng(seed)
    k, hk = arch.kernel, arch.hyper_kernel
    h1, h2 = arch.hidden
    cy, cz = arch.latent_channels, arch.hyper_channels
    p = {}

    def conv(name, cin, cout, ks):
        p[name + ".w"] = _uniform(rng, (cout, cin, ks, ks, ks), cin * ks**3, dtype)
        p[name + ".b"] = Tensor(np.zeros(cout, dtype), requires_grad=True)

    def tconv(name, cin, cout, ks):
        p[name + ".w"] = _uniform(rng, (cin, cout, ks, ks, ks), cin * ks**3, dtype)
        p[name + ".b"] = Tensor(np.zeros(cout, dtype), requires_grad=True)

    conv("enc0", 2, h1, k)
    conv("enc1", h1, h2, k)
    conv("enc2", h2, cy, k)
    tconv("dec0", cy, h2, k)
    tconv("dec1", h2, h1, k)
    tconv("dec2", h1, 2, k)
    conv("henc", cy, cz, hk)
    tconv("hdec", cz, cy, hk)
    p["prior.loc"] = Tensor(np.zeros(cz, dtype), requires_grad=True)
    # softplus(0.5413) + SIGMA_MIN ~= 1.11
    p["prior.scale_raw"] = Tensor(np.full(cz, 0.5413, dtype), requires_grad=True)
    for name, t in p.items():
        t.name = name
    return p


def write_manifest(path, entries):
    with open(path, "w") as fh:
        json.dump({"format": "evject-models", "version": 1, "models": entries}, fh, indent=2)


def read_manifest(path):
    with open(path) as fh:
        data = json.load(fh)
    if data.get("format") != "evject-models":
        raise ConfigurationError(f"{path} is not a model manifest")
    return data["models"]


class ModelSet:
    """Models indexed by the id stored in bitstream headers (one per lambda)."""

    def __init__(self, models, lambdas, seed=0):
        if len(models) != len(lambdas):
            raise ConfigurationError("one lambda per model required")
        if len(models) > 256:
            raise ConfigurationError("at most 256 models fit the header id")
        self.models = list(models)
        self.lambdas = [float(v) for v in lambdas]
        self.seed = seed

    def __len__(self):
        return len(self.models)

    def __getitem__(self, model_id):
        if not 0 <= model_id < len(self.models):
            raise ConfigurationError(f"model id {model_id} not in the model set")
        return self.models[model_id]

    def save(self, directory):
        os.makedirs(directory, exist_ok=True)
        entries = []
        for i, (m, lam) in enumerate(zip(self.models, self.lambdas)):
            name = f"model_{i}.evwt"
            m.save(os.path.join(directory, name))
            entries.append(
                {"id": i, "lambda": lam, "weights": name, "architecture": m.arch.to_dict(), "seed": self.seed}
            )
        write_manifest(os.path.join(directory, "manifest.json"), entries)

    @classmethod
    def load(cls, directory):
        path = os.path.join(directory, "manifest.json")
        if not os.path.exists(path):
            raise ConfigurationError(f"no model manifest in {directory}")
        entries = sorted(read_manifest(path), key=lambda e: e["id"])
        models, lambdas = [], []
        for e in entries:
            wpath = os.path.join(directory, e["weights"])
            if not os.path.exists(wpath):
                raise ConfigurationError(f"missing weight file {wpath}")
            models.append(CodecModel.load(wpath, CodecArchitecture.from_dict(e["architecture"])))
            lambdas.append(e["lambda"])
        return cls(models, lambdas, entries[0].get("seed", 0) if entries else 0)
