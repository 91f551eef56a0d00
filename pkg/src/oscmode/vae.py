"""Multilayer-perceptron variational autoencoder written directly in numpy.

Architecture for ``m`` input features::

    encoder  m -> w1 -> w2 -> 8   (ReLU)   then two linear heads 8 -> 2 (mu, log sigma)
    decoder  2 -> 8 -> w2 -> w1   (ReLU)   then w1 -> m (sigmoid)
    orthogonal  m -> m (linear, orthogonally initialised, trainable)

with ``w1 = round(0.8 m)`` and ``w2 = round(0.27 m)`` (half-up, at least 8).
The loss is ``rec + KL`` with
``KL = -1/2 sum_j (1 + 2 log sigma_j - mu_j^2 - sigma_j^2)``, averaged over the
batch. ``loss`` reports ``rec`` as the per-feature mean squared error; training
defaults to the feature *sum* (``TrainConfig.rec_reduction="sum"``), the
Gaussian log-likelihood form. With the mean, the KL term outweighs the
reconstruction by a factor of ``m`` and the posterior collapses onto the
prior. Gradients come from hand-written backpropagation; updates use Adam.

Weight initialisation: dense weights ``U(-sqrt(6/fan_in), +sqrt(6/fan_in))``
drawn from :class:`~oscmode.rng.Rng`, biases zero; the orthogonal layer uses
the Q factor of a seeded standard-normal matrix (signs fixed by ``diag(R)``).
"""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from . import jsonio
from .dataset import FeatureMatrix, NormalizationSpec, fit_normalizer, normalize_values
from .errors import DataError, FormatError, NumericalError, ShapeError
from .rng import Rng, derive_seed

log = logging.getLogger(__name__)

RELU = "RELU"
SIGMOID = "SIGMOID"
LINEAR = "LINEAR"
ACTIVATIONS = (RELU, SIGMOID, LINEAR)
HIDDEN_FLOOR = 8
BOTTLENECK = 8
REDUCTIONS = ("mean", "sum")


def _activate(pre: np.ndarray, activation: str) -> np.ndarray:
    if activation == RELU:
        return np.maximum(pre, 0.0)
    if activation == SIGMOID:
        # split by sign to avoid overflow in exp
        out = np.empty_like(pre)
        pos = pre >= 0
        out[pos] = 1.0 / (1.0 + np.exp(-pre[pos]))
        e = np.exp(pre[~pos])
        out[~pos] = e / (1.0 + e)
        return out
    return pre


@dataclass
class DenseLayer:
    W: np.ndarray  # (out, in)
    b: np.ndarray  # (out,)
    activation: str = LINEAR

    def __post_init__(self):
        self.W = np.array(self.W, dtype=np.float64)
        self.b = np.array(self.b, dtype=np.float64).reshape(-1)
        if self.W.ndim != 2 or self.W.shape[0] != self.b.shape[0]:
            raise ShapeError(f"weight {self.W.shape} and bias {self.b.shape} disagree")
        if self.activation not in ACTIVATIONS:
            raise FormatError(f"unknown activation {self.activation!r}")

    @property
    def n_in(self) -> int:
        return self.W.shape[1]

    @property
    def n_out(self) -> int:
        return self.W.shape[0]

    def forward(self, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        pre = x @ self.W.T + self.b
        return pre, _activate(pre, self.activation)

    def copy(self) -> "DenseLayer":
        return DenseLayer(self.W.copy(), self.b.copy(), self.activation)


@dataclass
class TrainConfig:
    batch_size: int = 64
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    max_epochs: int = 2000
    patience: int = 100
    val_fraction: float = 0.2
    rec_reduction: str = "sum"
    seed: int = 0

    def __post_init__(self):
        if self.rec_reduction not in REDUCTIONS:
            raise DataError(f"rec_reduction must be one of {REDUCTIONS}")
        if not 0 < self.val_fraction < 1:
            raise DataError("val_fraction must lie strictly between 0 and 1")
        if self.patience < 1:
            raise DataError("patience must be >= 1")
        if self.batch_size < 1 or self.max_epochs < 1:
            raise DataError("batch_size and max_epochs must be positive")
        if not self.learning_rate > 0:
            raise DataError("learning_rate must be positive")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class VaeModel:
    encoder: list[DenseLayer]
    mu_head: DenseLayer
    logsigma_head: DenseLayer
    decoder: list[DenseLayer]
    orthogonal: DenseLayer
    normalizer: Optional[NormalizationSpec] = None
    variance_scaling: bool = False
    seed: int = 0
    training_config: Optional[dict] = None

    @property
    def input_dim(self) -> int:
        return self.encoder[0].n_in

    @property
    def latent_dim(self) -> int:
        return self.mu_head.n_out

    def named_layers(self) -> list[tuple[str, DenseLayer]]:
        out = [(f"encoder_{i}", layer) for i, layer in enumerate(self.encoder)]
        out += [("mu", self.mu_head), ("logsigma", self.logsigma_head)]
        out += [(f"decoder_{i}", layer) for i, layer in enumerate(self.decoder)]
        out.append(("orthogonal", self.orthogonal))
        return out

    def params(self) -> list[np.ndarray]:
        """Parameter arrays in canonical order (W, b per layer); shared with the model."""
        out = []
        for _, layer in self.named_layers():
            out += [layer.W, layer.b]
        return out

    def set_params(self, values: list[np.ndarray]) -> None:
        params = self.params()
        if len(values) != len(params):
            raise ShapeError("parameter count mismatch")
        for dst, src in zip(params, values):
            dst[...] = src

    def copy(self) -> "VaeModel":
        return VaeModel(
            [l.copy() for l in self.encoder], self.mu_head.copy(), self.logsigma_head.copy(),
            [l.copy() for l in self.decoder], self.orthogonal.copy(), self.normalizer,
            self.variance_scaling, self.seed, dict(self.training_config) if self.training_config else None,
        )

    def widths(self) -> list[int]:
        return [self.input_dim] + [l.n_out for l in self.encoder] + [self.latent_dim]


def hidden_widths(m: int) -> tuple[int, int]:
    """``round(0.8 m)`` and ``round(0.27 m)`` rounded half-up in exact integer arithmetic."""
    w1 = (8 * m + 5) // 10
    w2 = (27 * m + 50) // 100
    return max(w1, HIDDEN_FLOOR), max(w2, HIDDEN_FLOOR)


def _dense(rng: Rng, n_in: int, n_out: int, activation: str) -> DenseLayer:
    bound = math.sqrt(6.0 / n_in)
    return DenseLayer(rng.uniform(-bound, bound, (n_out, n_in)), np.zeros(n_out), activation)


def orthogonal_matrix(m: int, rng: Rng) -> np.ndarray:
    q, r = np.linalg.qr(rng.normal((m, m)))
    signs = np.sign(np.diag(r))
    signs[signs == 0] = 1.0
    return q * signs[None, :]


def build_model(m: int, latent_dim: int = 2, seed: int = 0, variance_scaling: bool = False) -> VaeModel:
    if m < 4:
        raise ShapeError("input dimension must be at least 4")
    rng = Rng(derive_seed(seed, "init"))
    w1, w2 = hidden_widths(m)
    enc_dims = [m, w1, w2, BOTTLENECK]
    encoder = [_dense(rng, a, b, RELU) for a, b in zip(enc_dims[:-1], enc_dims[1:])]
    mu_head = _dense(rng, BOTTLENECK, latent_dim, LINEAR)
    logsigma_head = _dense(rng, BOTTLENECK, latent_dim, LINEAR)
    dec_dims = [latent_dim, BOTTLENECK, w2, w1, m]
    decoder = [_dense(rng, a, b, RELU) for a, b in zip(dec_dims[:-1], dec_dims[1:])]
    decoder[-1].activation = SIGMOID
    ortho = DenseLayer(orthogonal_matrix(m, Rng(derive_seed(seed, "orthogonal"))), np.zeros(m), LINEAR)
    return VaeModel(encoder, mu_head, logsigma_head, decoder, ortho, None, variance_scaling, seed)


def _check_width(x: np.ndarray, width: int) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != width:
        raise ShapeError(f"expected vectors of length {width}, got {x.shape[-1]}")
    return x


def encode(model: VaeModel, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Mean and log standard deviation of q(z|x); accepts one vector or a batch of rows."""
    h = _check_width(x, model.input_dim)
    for layer in model.encoder:
        h = layer.forward(h)[1]
    return model.mu_head.forward(h)[1], model.logsigma_head.forward(h)[1]


def reparameterize(mu, logsigma, zeta, variance_scaling: bool = False) -> np.ndarray:
    """``z = mu + sigma * zeta`` (or ``sigma**2 * zeta`` with ``variance_scaling``)."""
    mu, logsigma, zeta = (np.asarray(a, dtype=np.float64) for a in (mu, logsigma, zeta))
    scale = np.exp(2.0 * logsigma) if variance_scaling else np.exp(logsigma)
    return mu + scale * zeta


def decode(model: VaeModel, z: np.ndarray) -> np.ndarray:
    h = _check_width(z, model.latent_dim)
    for layer in model.decoder:
        h = layer.forward(h)[1]
    return h


def orthogonal_out(model: VaeModel, x_prime: np.ndarray) -> np.ndarray:
    return model.orthogonal.forward(_check_width(x_prime, model.input_dim))[1]


def loss(x, x_out, mu, logsigma, reduction: str = "mean") -> tuple[float, float, float]:
    """Reconstruction error, KL to N(0, I), and their sum.

    ``reduction="mean"`` averages squared errors over features (per-feature
    MSE); ``"sum"`` adds them up, the factorised-Gaussian log-likelihood form
    used as the training objective. Batches (2-D inputs) are averaged over rows.
    """
    x, x_out, mu, logsigma = (np.atleast_2d(np.asarray(a, dtype=np.float64)) for a in (x, x_out, mu, logsigma))
    per_row = np.sum((x - x_out) ** 2, axis=1)
    if reduction == "mean":
        per_row = per_row / x.shape[1]
    rec = float(np.mean(per_row))
    kl_rows = -0.5 * np.sum(1.0 + 2.0 * logsigma - mu**2 - np.exp(2.0 * logsigma), axis=1)
    kl = float(np.mean(kl_rows))
    return rec, kl, rec + kl


def _forward(model: VaeModel, x: np.ndarray, zeta: np.ndarray) -> dict:
    cache = {"enc": [], "dec": []}
    h = x
    for layer in model.encoder:
        pre, h_next = layer.forward(h)
        cache["enc"].append((h, pre))
        h = h_next
    cache["h_enc"] = h
    mu = model.mu_head.forward(h)[1]
    logsigma = model.logsigma_head.forward(h)[1]
    z = reparameterize(mu, logsigma, zeta, model.variance_scaling)
    g = z
    for layer in model.decoder:
        pre, g_next = layer.forward(g)
        cache["dec"].append((g, pre))
        g = g_next
    x_prime = g
    x_out = model.orthogonal.forward(x_prime)[1]
    cache.update(mu=mu, logsigma=logsigma, z=z, x_prime=x_prime, x_out=x_out, zeta=zeta)
    return cache


def backward(model: VaeModel, x: np.ndarray, zeta: Optional[np.ndarray] = None, reduction: str = "mean"):
    """Exact gradients of the batch-mean loss for every parameter, in ``model.params()`` order.

    Returns ``(grads, (rec, kl, total))``. ``zeta`` defaults to zeros.
    """
    x = np.atleast_2d(_check_width(x, model.input_dim))
    batch = x.shape[0]
    if zeta is None:
        zeta = np.zeros((batch, model.latent_dim))
    zeta = np.atleast_2d(np.asarray(zeta, dtype=np.float64))
    c = _forward(model, x, zeta)
    mu, logsigma, x_out, x_prime = c["mu"], c["logsigma"], c["x_out"], c["x_prime"]
    losses = loss(x, x_out, mu, logsigma, reduction)
    grads: dict[int, tuple[np.ndarray, np.ndarray]] = {}

    def dense_back(layer: DenseLayer, inp: np.ndarray, pre: np.ndarray, out: np.ndarray, d_out: np.ndarray):
        if layer.activation == RELU:
            d_pre = d_out * (pre > 0)
        elif layer.activation == SIGMOID:
            d_pre = d_out * out * (1.0 - out)
        else:
            d_pre = d_out
        grads[id(layer)] = (d_pre.T @ inp, d_pre.sum(axis=0))
        return d_pre @ layer.W

    m = model.input_dim
    d_out = 2.0 * (x_out - x) / ((m if reduction == "mean" else 1) * batch)
    d = dense_back(model.orthogonal, x_prime, None, x_out, d_out)
    outs = [g for g, _ in c["dec"][1:]] + [x_prime]
    for layer, (inp, pre), out in reversed(list(zip(model.decoder, c["dec"], outs))):
        d = dense_back(layer, inp, pre, out, d)
    d_z = d
    if model.variance_scaling:
        var = np.exp(2.0 * logsigma)
        d_logsigma = d_z * zeta * 2.0 * var
    else:
        sigma = np.exp(logsigma)
        var = sigma**2
        d_logsigma = d_z * zeta * sigma
    d_mu = d_z + mu / batch
    d_logsigma = d_logsigma + (var - 1.0) / batch
    h = c["h_enc"]
    d_h = dense_back(model.mu_head, h, None, mu, d_mu)
    d_h = d_h + dense_back(model.logsigma_head, h, None, logsigma, d_logsigma)
    enc_outs = [g for g, _ in c["enc"][1:]] + [h]
    d = d_h
    for layer, (inp, pre), out in reversed(list(zip(model.encoder, c["enc"], enc_outs))):
        d = dense_back(layer, inp, pre, out, d)

    ordered = []
    for _, layer in model.named_layers():
        gw, gb = grads[id(layer)]
        ordered += [gw, gb]
    return ordered, losses


@dataclass
class AdamState:
    m: list[np.ndarray]
    v: list[np.ndarray]
    t: int = 0

    @classmethod
    def zeros_like(cls, params: list[np.ndarray]) -> "AdamState":
        return cls([np.zeros_like(p) for p in params], [np.zeros_like(p) for p in params], 0)


def adam_step(params: list[np.ndarray], grads: list[np.ndarray], state: AdamState, lr: float,
              beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> AdamState:
    """Bias-corrected Adam; updates ``params`` and ``state`` in place and returns the state."""
    if len(params) != len(grads):
        raise ShapeError("params and grads differ in length")
    state.t += 1
    c1 = 1.0 - beta1**state.t
    c2 = 1.0 - beta2**state.t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if p.shape != g.shape:
            raise ShapeError(f"gradient shape {g.shape} != parameter shape {p.shape}")
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        p -= lr * (m / c1) / (np.sqrt(v / c2) + eps)
    return state


@dataclass
class LossRecord:
    epoch: int
    train_loss: float
    val_loss: float
    rec: float
    kl: float
    val_mse: float = math.nan


def _evaluate(model: VaeModel, x: np.ndarray, chunk: int = 4096) -> tuple[float, float]:
    """Deterministic (zeta = 0) mean reconstruction and KL over rows."""
    rec_sum = kl_sum = 0.0
    for start in range(0, x.shape[0], chunk):
        xb = x[start:start + chunk]
        mu, logsigma = encode(model, xb)
        x_out = orthogonal_out(model, decode(model, mu))
        rec_sum += float(np.sum(np.mean((xb - x_out) ** 2, axis=1)))
        kl_sum += float(np.sum(-0.5 * np.sum(1.0 + 2.0 * logsigma - mu**2 - np.exp(2.0 * logsigma), axis=1)))
    return rec_sum / x.shape[0], kl_sum / x.shape[0]


def train(model: VaeModel, data: FeatureMatrix, config: TrainConfig = TrainConfig(),
          callback=None) -> tuple[VaeModel, list[LossRecord]]:
    """Minibatch Adam with early stopping on deterministic validation loss.

    A seeded shuffle holds out the last ``val_fraction`` of rows for validation;
    training rows are reshuffled every epoch. The returned model holds the
    parameters of the epoch with the lowest validation loss.
    """
    if data.n_samples == 0:
        raise DataError("empty training data")
    if data.n_channels != model.input_dim:
        raise ShapeError(f"model expects {model.input_dim} channels, data has {data.n_channels}")
    model = model.copy()
    if model.normalizer is None:
        model.normalizer = fit_normalizer(data)
    x = normalize_values(model.normalizer, data.values)
    rng = Rng(derive_seed(config.seed, "train"))
    order = rng.permutation(x.shape[0])
    n_val = min(max(1, int(round(config.val_fraction * x.shape[0]))), x.shape[0] - 1)
    x_train, x_val = x[order[:-n_val]], x[order[-n_val:]]

    params = model.params()
    state = AdamState.zeros_like(params)
    best_params = [p.copy() for p in params]
    best_val = math.inf
    stale = 0
    history: list[LossRecord] = []
    bs = config.batch_size
    for epoch in range(1, config.max_epochs + 1):
        perm = rng.permutation(x_train.shape[0])
        total = 0.0
        for start in range(0, perm.shape[0], bs):
            xb = x_train[perm[start:start + bs]]
            zeta = rng.normal((xb.shape[0], model.latent_dim))
            grads, (_, _, batch_loss) = backward(model, xb, zeta, config.rec_reduction)
            total += batch_loss * xb.shape[0]
            adam_step(params, grads, state, config.learning_rate, config.beta1, config.beta2, config.eps)
        mse, kl = _evaluate(model, x_val)
        rec = mse * model.input_dim if config.rec_reduction == "sum" else mse
        val = rec + kl
        if not (math.isfinite(val) and math.isfinite(total)):
            raise NumericalError(f"non-finite loss at epoch {epoch}")
        history.append(LossRecord(epoch, total / x_train.shape[0], val, rec, kl, mse))
        if callback is not None:
            callback(history[-1])
        if val < best_val:
            best_val = val
            best_params = [p.copy() for p in params]
            stale = 0
        else:
            stale += 1
            if stale >= config.patience:
                break
    model.set_params(best_params)
    model.training_config = config.to_dict()
    log.info("trained %d epochs, best val loss %.6g", len(history), best_val)
    return model, history


@dataclass
class LatentTrajectory:
    points: np.ndarray
    sample_rate: float

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64)
        if self.points.ndim != 2:
            raise ShapeError("latent points must be an (n, d) array")
        if not np.all(np.isfinite(self.points)):
            raise NumericalError("non-finite latent points")

    def __len__(self) -> int:
        return self.points.shape[0]


def _normalized(model: VaeModel, data: FeatureMatrix) -> np.ndarray:
    if data.n_channels != model.input_dim:
        raise ShapeError(f"model expects {model.input_dim} channels, data has {data.n_channels}")
    if model.normalizer is None:
        return np.asarray(data.values, dtype=np.float64)
    return normalize_values(model.normalizer, data.values)


def project(model: VaeModel, data: FeatureMatrix) -> LatentTrajectory:
    """Mean embedding of every row."""
    mu, _ = encode(model, _normalized(model, data))
    return LatentTrajectory(mu, data.sample_rate)


def reconstruct(model: VaeModel, x_normalized: np.ndarray) -> np.ndarray:
    mu, _ = encode(model, x_normalized)
    return orthogonal_out(model, decode(model, mu))


def reconstruction_mse(model: VaeModel, data: FeatureMatrix) -> float:
    x = _normalized(model, data)
    return float(np.mean(np.mean((x - reconstruct(model, x)) ** 2, axis=1)))


def to_dict(model: VaeModel) -> dict:
    return {
        "input_dim": model.input_dim,
        "latent_dim": model.latent_dim,
        "variance_scaling": model.variance_scaling,
        "layers": [
            {"name": name, "rows": l.n_out, "cols": l.n_in, "activation": l.activation,
             "weights": l.W.reshape(-1), "bias": l.b}
            for name, l in model.named_layers()
        ],
        "normalizer": model.normalizer.to_dict() if model.normalizer else None,
        "training_config": model.training_config,
        "seed": model.seed,
    }


def from_dict(d: dict) -> VaeModel:
    try:
        layers = {}
        for rec in d["layers"]:
            W = np.asarray(rec["weights"], dtype=np.float64).reshape(rec["rows"], rec["cols"])
            layers[rec["name"]] = DenseLayer(W, np.asarray(rec["bias"], dtype=np.float64), rec["activation"])
        encoder = [layers[f"encoder_{i}"] for i in range(3)]
        decoder = [layers[f"decoder_{i}"] for i in range(4)]
        norm = NormalizationSpec.from_dict(d["normalizer"]) if d.get("normalizer") else None
        model = VaeModel(encoder, layers["mu"], layers["logsigma"], decoder, layers["orthogonal"], norm,
                         bool(d.get("variance_scaling", False)), int(d.get("seed", 0)), d.get("training_config"))
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"bad model description: {exc}") from exc
    if model.input_dim != d["input_dim"] or model.latent_dim != d["latent_dim"]:
        raise FormatError("declared dimensions disagree with layer shapes")
    return model


def save_model(path, model: VaeModel) -> None:
    jsonio.write(path, to_dict(model))


def load_model(path) -> VaeModel:
    return from_dict(jsonio.read(path))
