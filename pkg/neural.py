"""Small feedforward/VAE engine with hand-derived backpropagation, losses and SGD."""
import itertools
import logging
from enum import Enum
from typing import Callable, NamedTuple, Sequence

import numpy as np
from scipy.special import expit

from core import DataMatrix, DataType
from errors import DomainError, ShapeMismatch, StaleCache
from linalg import LaplacianPair, Orthogonalized

logger = logging.getLogger(__name__)

BCE_CLAMP = 1e-7

_net_ids = itertools.count()


class Activation(str, Enum):
    IDENTITY = "identity"
    RELU = "relu"
    SIGMOID = "sigmoid"
    TANH = "tanh"


def _activate(act: Activation, z: np.ndarray) -> np.ndarray:
    if act is Activation.RELU:
        return np.maximum(z, 0.0)
    if act is Activation.SIGMOID:
        return expit(z)
    if act is Activation.TANH:
        return np.tanh(z)
    return z


def _activation_backward(act: Activation, z: np.ndarray, out: np.ndarray, upstream: np.ndarray) -> np.ndarray:
    if act is Activation.RELU:
        return upstream * (z > 0)
    if act is Activation.SIGMOID:
        return upstream * out * (1.0 - out)
    if act is Activation.TANH:
        return upstream * (1.0 - out**2)
    return upstream


class Layer(NamedTuple):
    weight: np.ndarray  # in x out
    bias: np.ndarray
    activation: Activation


class ForwardCache(NamedTuple):
    net_id: int
    version: int
    inputs: list[np.ndarray]
    pre: list[np.ndarray]
    outputs: list[np.ndarray]
    tail: np.ndarray | None  # frozen map applied after the last layer, if any


class LossValue(NamedTuple):
    value: float
    grads: dict
    terms: dict[str, float] = {}


class DenseNet:
    """Stack of affine + activation layers with an optional frozen linear tail.

    `version` grows with every parameter update; caches from an older version are rejected.
    """

    def __init__(self, layers: list[Layer], frozen_last: np.ndarray | None = None) -> None:
        for prev, nxt in zip(layers, layers[1:]):
            if prev.weight.shape[1] != nxt.weight.shape[0]:
                raise ShapeMismatch(f"layer widths do not chain: {prev.weight.shape} -> {nxt.weight.shape}")
        self.layers = [Layer(l.weight, l.bias, Activation(l.activation)) for l in layers]
        self.frozen_last: np.ndarray | None = None
        if frozen_last is not None:
            self.freeze_tail(frozen_last)
        self.id = next(_net_ids)
        self.version = 0

    @classmethod
    def build(cls, sizes: Sequence[int], activations: Sequence[Activation], rng: np.random.Generator) -> "DenseNet":
        """Glorot-uniform weights, zero biases."""
        if len(activations) != len(sizes) - 1:
            raise ShapeMismatch(f"{len(sizes) - 1} layers need as many activations, got {len(activations)}")
        layers = []
        for fan_in, fan_out, act in zip(sizes, sizes[1:], activations):
            bound = np.sqrt(6.0 / (fan_in + fan_out))
            weight = rng.uniform(-bound, bound, size=(fan_in, fan_out))
            layers.append(Layer(weight, np.zeros(fan_out), Activation(act)))
        return cls(layers)

    @property
    def in_features(self) -> int:
        return self.layers[0].weight.shape[0]

    @property
    def out_features(self) -> int:
        if self.frozen_last is not None:
            return self.frozen_last.shape[1]
        return self.layers[-1].weight.shape[1]

    def parameters(self) -> list[np.ndarray]:
        """Trainable arrays in fixed order [W0, b0, W1, b1, ...]; the frozen tail is excluded."""
        return [p for layer in self.layers for p in (layer.weight, layer.bias)]

    def named_parameters(self) -> list[tuple[str, np.ndarray]]:
        named = []
        for idx, layer in enumerate(self.layers):
            named.append((f"layer{idx}.weight", layer.weight))
            named.append((f"layer{idx}.bias", layer.bias))
        if self.frozen_last is not None:
            named.append(("frozen_last", self.frozen_last))
        return named

    def freeze_tail(self, weight: np.ndarray) -> None:
        tail = np.array(weight, dtype=np.float64, copy=True)
        if tail.ndim != 2 or tail.shape[0] != self.layers[-1].weight.shape[1]:
            raise ShapeMismatch(f"tail of shape {tail.shape} does not fit output width {self.layers[-1].weight.shape[1]}")
        tail.setflags(write=False)
        self.frozen_last = tail

    def forward(self, x: np.ndarray, use_tail: bool = True) -> tuple[np.ndarray, ForwardCache]:
        h = np.asarray(x, dtype=np.float64)
        if h.ndim != 2 or h.shape[1] != self.in_features:
            raise ShapeMismatch(f"input of shape {h.shape} does not match width {self.in_features}")
        inputs, pre, outputs = [], [], []
        for layer in self.layers:
            inputs.append(h)
            z = h @ layer.weight + layer.bias
            h = _activate(layer.activation, z)
            pre.append(z)
            outputs.append(h)
        tail = self.frozen_last if use_tail else None
        if tail is not None:
            h = h @ tail
        return h, ForwardCache(self.id, self.version, inputs, pre, outputs, tail)

    def backward(self, upstream: np.ndarray, cache: ForwardCache) -> tuple[list[np.ndarray], np.ndarray]:
        """Parameter gradients (aligned with `parameters()`) and the input gradient."""
        if cache.net_id != self.id or cache.version != self.version:
            raise StaleCache(f"cache from net {cache.net_id} v{cache.version} used on net {self.id} v{self.version}")
        g = np.asarray(upstream, dtype=np.float64)
        if cache.tail is not None:
            g = g @ cache.tail.T
        grads: list[np.ndarray] = []
        for layer, h_in, z, out in zip(reversed(self.layers), reversed(cache.inputs), reversed(cache.pre), reversed(cache.outputs)):
            if g.shape != out.shape:
                raise ShapeMismatch(f"upstream gradient {g.shape} does not match layer output {out.shape}")
            dz = _activation_backward(layer.activation, z, out, g)
            grads.append(dz.sum(axis=0))
            grads.append(h_in.T @ dz)
            g = dz @ layer.weight.T
        grads.reverse()
        return grads, g

    def apply_gradients(self, grads: list[np.ndarray], lr: float, weight_decay: float = 0.0) -> None:
        sgd_step(self.parameters(), grads, lr, weight_decay)
        self.version += 1


class Vae:
    """Encoder producing (mu, logvar) and a decoder reconstructing the input.

    With `variational=False` the encoder emits mu only and the latent is deterministic.
    """

    def __init__(self, encoder: DenseNet, decoder: DenseNet, datatype: DataType, variational: bool = True) -> None:
        last = decoder.layers[-1].activation
        expected = Activation.SIGMOID if DataType(datatype) is DataType.BINARY else Activation.IDENTITY
        if last is not expected:
            raise ShapeMismatch(f"{datatype} decoders must end in {expected.value}, got {last.value}")
        width = encoder.out_features
        latent = width // 2 if variational else width
        if (variational and width % 2) or decoder.in_features != latent:
            raise ShapeMismatch(f"encoder width {width} does not fit decoder input {decoder.in_features}")
        self.encoder = encoder
        self.decoder = decoder
        self.datatype = DataType(datatype)
        self.variational = variational

    @classmethod
    def build(
        cls,
        in_features: int,
        latent: int,
        datatype: DataType,
        rng: np.random.Generator,
        hidden_layers: int = 1,
        variational: bool = True,
    ) -> "Vae":
        hidden = [2 * latent] * hidden_layers
        enc_out = 2 * latent if variational else latent
        encoder = DenseNet.build(
            [in_features, *hidden, enc_out],
            [Activation.RELU] * hidden_layers + [Activation.IDENTITY],
            rng,
        )
        final = Activation.SIGMOID if DataType(datatype) is DataType.BINARY else Activation.IDENTITY
        decoder = DenseNet.build(
            [latent, *hidden, in_features],
            [Activation.RELU] * hidden_layers + [final],
            rng,
        )
        return cls(encoder, decoder, datatype, variational)

    @property
    def latent(self) -> int:
        return self.decoder.in_features


class VaeOutputs(NamedTuple):
    mu: np.ndarray
    logvar: np.ndarray
    z: np.ndarray
    xi: np.ndarray
    reconstruction: np.ndarray
    encoder_cache: ForwardCache
    decoder_cache: ForwardCache


def vae_forward(v: Vae, y: np.ndarray, noise: np.random.Generator | int | None = None) -> VaeOutputs:
    """Encode, reparameterize z = mu + exp(logvar / 2) * xi, decode.

    `noise=None` is the deterministic mode (xi = 0, z = mu); a generator or seed samples xi.
    """
    enc, enc_cache = v.encoder.forward(y)
    latent = v.latent
    mu = enc[:, :latent]
    logvar = enc[:, latent:] if v.variational else np.zeros_like(mu)
    if noise is None or not v.variational:
        xi = np.zeros_like(mu)
        z = mu
    else:
        rng = noise if isinstance(noise, np.random.Generator) else np.random.default_rng(noise)
        xi = rng.standard_normal(mu.shape)
        z = mu + np.exp(logvar / 2.0) * xi
    recon, dec_cache = v.decoder.forward(z)
    return VaeOutputs(mu, logvar, z, xi, recon, enc_cache, dec_cache)


def encoder_backward(v: Vae, out: VaeOutputs, d_mu: np.ndarray, d_logvar: np.ndarray | None = None) -> tuple[list[np.ndarray], np.ndarray]:
    """Backpropagate gradients on (mu, logvar) through the encoder."""
    if v.variational:
        d_lv = np.zeros_like(out.logvar) if d_logvar is None else d_logvar
        upstream = np.hstack([d_mu, d_lv])
    else:
        upstream = d_mu
    return v.encoder.backward(upstream, out.encoder_cache)


def vae_backward(
    v: Vae,
    out: VaeOutputs,
    d_recon: np.ndarray,
    d_mu: np.ndarray | None = None,
    d_logvar: np.ndarray | None = None,
) -> tuple[list[np.ndarray], list[np.ndarray], np.ndarray]:
    """Encoder grads, decoder grads and input grad for upstream gradients on the outputs."""
    dec_grads, dz = v.decoder.backward(d_recon, out.decoder_cache)
    dmu = dz if d_mu is None else dz + d_mu
    dlv = None
    if v.variational:
        dlv = dz * out.xi * 0.5 * np.exp(out.logvar / 2.0)
        if d_logvar is not None:
            dlv = dlv + d_logvar
    enc_grads, dy = encoder_backward(v, out, dmu, dlv)
    return enc_grads, dec_grads, dy


def loss_vae(v: Vae, y: np.ndarray, outputs: VaeOutputs) -> LossValue:
    """Reconstruction (BCE mean for binary, MSE mean for real) plus the KL term.

    KL(q || N(0, I)) = -1/2 * mean(1 + logvar - mu^2 - exp(logvar)); dropped for
    non-variational autoencoders.
    """
    y = np.asarray(y, dtype=np.float64)
    recon = outputs.reconstruction
    if recon.shape != y.shape:
        raise ShapeMismatch(f"reconstruction {recon.shape} does not match input {y.shape}")
    count = y.size
    if v.datatype is DataType.BINARY:
        if not np.all(np.isfinite(recon)) or np.any(recon < 0) or np.any(recon > 1):
            raise DomainError("binary reconstruction left [0, 1]")
        p = np.clip(recon, BCE_CLAMP, 1.0 - BCE_CLAMP)
        rec = float(-np.mean(y * np.log(p) + (1.0 - y) * np.log1p(-p)))
        inside = (recon > BCE_CLAMP) & (recon < 1.0 - BCE_CLAMP)
        d_recon = (p - y) / (p * (1.0 - p) * count) * inside
    else:
        diff = recon - y
        rec = float(np.mean(diff**2))
        d_recon = 2.0 * diff / count

    kl = 0.0
    d_mu = d_logvar = None
    if v.variational:
        mu, lv = outputs.mu, outputs.logvar
        kl = float(-0.5 * np.mean(1.0 + lv - mu**2 - np.exp(lv)))
        d_mu = mu / mu.size
        d_logvar = 0.5 * (np.exp(lv) - 1.0) / lv.size
    enc_grads, dec_grads, _ = vae_backward(v, outputs, d_recon, d_mu, d_logvar)
    return LossValue(rec + kl, {"encoder": enc_grads, "decoder": dec_grads}, {"reconstruction": rec, "kl": kl})


def loss_matrix_recon(
    x: DataMatrix | np.ndarray,
    u_r: np.ndarray,
    u_c: np.ndarray,
    datatype: DataType | None = None,
) -> LossValue:
    """Loss of X against X'' = u_r u_c^T.

    Real: squared Frobenius error. Binary: mean BCE through a sigmoid on X''.
    """
    if isinstance(x, DataMatrix):
        values, kind = x.values, x.datatype if datatype is None else DataType(datatype)
    else:
        values, kind = np.asarray(x, dtype=np.float64), DataType(datatype or DataType.REAL)
    if u_r.ndim != 2 or u_c.ndim != 2 or u_r.shape[1] != u_c.shape[1]:
        raise ShapeMismatch(f"factor widths differ: {u_r.shape} vs {u_c.shape}")
    if values.shape != (u_r.shape[0], u_c.shape[0]):
        raise ShapeMismatch(f"X {values.shape} does not match factors {u_r.shape}, {u_c.shape}")
    product = u_r @ u_c.T
    if kind is DataType.BINARY:
        value = float(np.mean(np.logaddexp(0.0, product) - values * product))
        err = (expit(product) - values) / values.size
    else:
        diff = product - values
        value = float(np.sum(diff**2))
        err = 2.0 * diff
    return LossValue(value, {"u_r": err @ u_c, "u_c": err.T @ u_r})


def loss_trace(c: np.ndarray, l: LaplacianPair | np.ndarray, ortho: Orthogonalized) -> LossValue:
    """Tr(C^T L C) with gradients on C and, through the frozen map, on C_tilde."""
    lap = l.l if isinstance(l, LaplacianPair) else np.asarray(l, dtype=np.float64)
    if c.shape != ortho.c.shape or not np.array_equal(c, ortho.c):
        raise StaleCache("C was not produced by this orthogonalization step")
    if lap.shape != (c.shape[0], c.shape[0]):
        raise ShapeMismatch(f"Laplacian {lap.shape} does not match C {c.shape}")
    lc = lap @ c
    grad_c = lc + lap.T @ c
    return LossValue(float(np.sum(c * lc)), {"c": grad_c, "c_tilde": grad_c @ ortho.h_inv_t.T})


def sgd_step(params: Sequence[np.ndarray], grads: Sequence[np.ndarray], lr: float, weight_decay: float = 0.0) -> None:
    """In place p <- p - lr * (g + weight_decay * p), in parameter order."""
    if len(params) != len(grads):
        raise ShapeMismatch(f"{len(params)} parameters but {len(grads)} gradients")
    for p, g in zip(params, grads):
        if p.shape != np.shape(g):
            raise ShapeMismatch(f"gradient {np.shape(g)} does not match parameter {p.shape}")
        np.subtract(p, lr * (g + weight_decay * p), out=p)


def grad_norm(grads: Sequence[np.ndarray]) -> float:
    return float(np.sqrt(sum(float(np.sum(g * g)) for g in grads)))


def clip_gradients(grads: list[np.ndarray], max_norm: float) -> tuple[list[np.ndarray], float]:
    """Rescale grads to global norm `max_norm` when above it; 0 disables clipping."""
    norm = grad_norm(grads)
    if max_norm > 0 and norm > max_norm:
        scale = max_norm / norm
        return [g * scale for g in grads], norm
    return grads, norm


def grad_check(
    loss_fn: Callable[[], tuple[float, list[np.ndarray]]],
    params: Sequence[np.ndarray],
    h: float = 1e-5,
    seed: int = 0,
    max_coords: int = 200,
) -> float:
    """Max relative error between analytic and central-difference gradients.

    `loss_fn` evaluates the loss at the current parameter values and returns
    (value, grads aligned with params). At most `max_coords` coordinates are checked.
    """
    _, analytic = loss_fn()
    analytic = [np.array(g, dtype=np.float64, copy=True) for g in analytic]
    coords = [(pi, idx) for pi, p in enumerate(params) for idx in range(p.size)]
    if len(coords) > max_coords:
        rng = np.random.default_rng(seed)
        picked = rng.choice(len(coords), size=max_coords, replace=False)
        coords = [coords[i] for i in sorted(picked)]
    worst = 0.0
    for pi, idx in coords:
        flat = params[pi].reshape(-1)
        saved = flat[idx]
        flat[idx] = saved + h
        plus, _ = loss_fn()
        flat[idx] = saved - h
        minus, _ = loss_fn()
        flat[idx] = saved
        numeric = (plus - minus) / (2.0 * h)
        a = float(analytic[pi].reshape(-1)[idx])
        worst = max(worst, abs(a - numeric) / max(abs(a), abs(numeric), 1e-8))
    return worst
