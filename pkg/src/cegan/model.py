"""The CEGAN model.

Six MLPs around a shared latent space:

* ``encoder``        maps an observed tuple (x, t, y) plus Gaussian noise to
                     a latent code z-hat (used by both the prediction and the
                     reconstruction paths -- same parameter storage).
* ``inference_net``  infers a latent code z from (x, t) plus noise.
* ``predictor``      maps (z, x, t) plus noise to an outcome estimate y-hat.
* ``reconstructor``  maps z-hat back to data space as (x-bar, t-bar, y-bar)
                     via one trunk with per-kind output heads.
* ``discriminator``  scores tuples (z, x, t, y): probability that the tuple
                     came from the encoder side of the adversarial game.
* ``propensity_net`` a plain classifier for q(t=1 | x), trained separately.

Stochastic subnetwork outputs are realized by concatenating a standard
normal noise vector to the input. Binary heads (t-bar, binary columns of
x/y, discriminator, propensity) emit probabilities clamped to
[1e-7, 1 - 1e-7] so every logarithm in the losses stays finite.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .exceptions import SchemaError, ShapeError
from .mlp import (
    PROB_EPS,
    Gradients,
    MlpSpec,
    NetworkParams,
    Tape,
    clamp_prob,
    forward,
    sigmoid,
    xavier_init,
)
from .rng import RngStream

KIND_BINARY = "binary"
KIND_CONTINUOUS = "continuous"

PARAM_GROUPS = (
    "encoder",
    "inference_net",
    "predictor",
    "reconstructor",
    "discriminator",
    "propensity_net",
)


# ---------------------------------------------------------------------------
# schema


@dataclass(frozen=True)
class DataSchema:
    """Per-column kinds for features and outcomes; treatment is binary."""

    x_kinds: tuple[str, ...]
    y_kinds: tuple[str, ...]

    def __post_init__(self):
        for k in self.x_kinds + self.y_kinds:
            if k not in (KIND_BINARY, KIND_CONTINUOUS):
                raise SchemaError(f"unknown column kind {k!r}")
        if not self.x_kinds or not self.y_kinds:
            raise SchemaError("schema needs at least one feature and one outcome column")

    @property
    def x_dim(self) -> int:
        return len(self.x_kinds)

    @property
    def y_dim(self) -> int:
        return len(self.y_kinds)

    def x_binary_mask(self) -> np.ndarray:
        return np.array([k == KIND_BINARY for k in self.x_kinds])

    def y_binary_mask(self) -> np.ndarray:
        return np.array([k == KIND_BINARY for k in self.y_kinds])

    def reconstruction_kinds(self) -> np.ndarray:
        """Binary mask over the packed (x, t, y) reconstruction target."""
        return np.concatenate([self.x_binary_mask(), [True], self.y_binary_mask()])


def validate_batch(schema: DataSchema, x, t, y=None) -> None:
    """Reject arrays that violate the schema (shapes, kinds, finiteness)."""
    x = np.asarray(x)
    t = np.asarray(t)
    if x.ndim != 2 or x.shape[1] != schema.x_dim:
        raise SchemaError(f"x shape {x.shape} != (n, {schema.x_dim})")
    if t.shape != (x.shape[0],):
        raise SchemaError(f"t shape {t.shape} != ({x.shape[0]},)")
    if not np.all(np.isfinite(x)):
        raise SchemaError("non-finite entries in x")
    if not np.all((t == 0) | (t == 1)):
        raise SchemaError("treatment must be 0/1")
    mask = schema.x_binary_mask()
    if mask.any():
        vals = x[:, mask]
        if not np.all((vals == 0) | (vals == 1)):
            raise SchemaError("binary feature column with value outside {0,1}")
    if y is not None:
        y = np.asarray(y)
        if y.ndim != 2 or y.shape != (x.shape[0], schema.y_dim):
            raise SchemaError(f"y shape {y.shape} != ({x.shape[0]}, {schema.y_dim})")
        if not np.all(np.isfinite(y)):
            raise SchemaError("non-finite entries in y")
        ymask = schema.y_binary_mask()
        if ymask.any():
            vals = y[:, ymask]
            if not np.all((vals == 0) | (vals == 1)):
                raise SchemaError("binary outcome column with value outside {0,1}")


@dataclass(frozen=True)
class Tuple4:
    """A (z, x, t, y) tuple batch, the discriminator's input."""

    z: np.ndarray
    x: np.ndarray
    t: np.ndarray
    y: np.ndarray


# ---------------------------------------------------------------------------
# per-kind output heads


@dataclass
class HeadCache:
    binary_mask: np.ndarray
    sig: np.ndarray | None
    unclamped: np.ndarray | None


def apply_heads(raw: np.ndarray, binary_mask: np.ndarray) -> tuple[np.ndarray, HeadCache]:
    """Sigmoid+clamp the binary columns of a raw network output."""
    values = raw.copy()
    if binary_mask.any():
        sig = sigmoid(raw[:, binary_mask])
        values[:, binary_mask] = clamp_prob(sig)
        unclamped = (sig > PROB_EPS) & (sig < 1.0 - PROB_EPS)
        return values, HeadCache(binary_mask, sig, unclamped)
    return values, HeadCache(binary_mask, None, None)


def heads_backward(d_values: np.ndarray, cache: HeadCache) -> np.ndarray:
    """Chain an upstream gradient back through the per-kind heads."""
    d_raw = d_values.copy()
    if cache.binary_mask.any():
        chain = cache.sig * (1.0 - cache.sig) * cache.unclamped
        d_raw[:, cache.binary_mask] = d_values[:, cache.binary_mask] * chain
    return d_raw


# ---------------------------------------------------------------------------
# losses


def elementwise_loss(a, b, kind: str) -> float:
    """Spec loss for one vector pair: squared error or cross-entropy.

    Binary `b` must already be a probability in (0, 1) (post-clamp); `a` is
    the 0/1 target.
    """
    a = np.atleast_1d(np.asarray(a, dtype=np.float64))
    b = np.atleast_1d(np.asarray(b, dtype=np.float64))
    if a.shape != b.shape:
        raise ShapeError(f"loss operands {a.shape} vs {b.shape}")
    if kind == KIND_CONTINUOUS:
        return float(np.sum((a - b) ** 2))
    if kind == KIND_BINARY:
        if np.any(b <= 0.0) or np.any(b >= 1.0):
            raise ValueError("binary loss needs probabilities strictly inside (0, 1)")
        return float(-np.sum(a * np.log(b) + (1.0 - a) * np.log1p(-b)))
    raise ValueError(f"unknown kind {kind!r}")


def block_loss_rows(target: np.ndarray, values: np.ndarray, binary_mask: np.ndarray) -> np.ndarray:
    """Per-row mixed-kind loss summed over columns."""
    rows = np.zeros(values.shape[0])
    cont = ~binary_mask
    if cont.any():
        rows += ((target[:, cont] - values[:, cont]) ** 2).sum(axis=1)
    if binary_mask.any():
        a = target[:, binary_mask]
        b = values[:, binary_mask]
        rows += -(a * np.log(b) + (1.0 - a) * np.log1p(-b)).sum(axis=1)
    return rows


def block_loss_grad(target: np.ndarray, values: np.ndarray, binary_mask: np.ndarray) -> np.ndarray:
    """Gradient of the per-row mixed-kind loss w.r.t. `values`."""
    g = np.zeros_like(values)
    cont = ~binary_mask
    if cont.any():
        g[:, cont] = 2.0 * (values[:, cont] - target[:, cont])
    if binary_mask.any():
        a = target[:, binary_mask]
        b = values[:, binary_mask]
        g[:, binary_mask] = -a / b + (1.0 - a) / (1.0 - b)
    return g


def reconstruction_loss(w: tuple, w_bar: tuple, schema: DataSchema) -> float:
    """Mean over rows of l(x, x-bar) + l(t, t-bar) + l(y, y-bar)."""
    x, t, y = w
    xb, tb, yb = w_bar
    target = np.concatenate(
        [np.atleast_2d(x), np.asarray(t, dtype=np.float64).reshape(-1, 1), np.atleast_2d(y)],
        axis=1,
    )
    values = np.concatenate(
        [np.atleast_2d(xb), np.asarray(tb, dtype=np.float64).reshape(-1, 1), np.atleast_2d(yb)],
        axis=1,
    )
    rows = block_loss_rows(target, values, schema.reconstruction_kinds())
    return float(rows.mean())


def prediction_loss(y, y_hat, schema: DataSchema) -> float:
    """Mean over rows of the outcome loss l(y, y-hat)."""
    y = np.atleast_2d(np.asarray(y, dtype=np.float64))
    y_hat = np.atleast_2d(np.asarray(y_hat, dtype=np.float64))
    rows = block_loss_rows(y, y_hat, schema.y_binary_mask())
    return float(rows.mean())


# ---------------------------------------------------------------------------
# model


@dataclass
class CeganModel:
    schema: DataSchema
    latent_dim: int
    noise_dim_e: int
    noise_dim_i: int
    noise_dim_p: int
    alpha: float
    encoder_spec: MlpSpec
    encoder: NetworkParams
    inference_spec: MlpSpec
    inference_net: NetworkParams
    predictor_spec: MlpSpec
    predictor: NetworkParams
    reconstructor_spec: MlpSpec
    reconstructor: NetworkParams
    discriminator_spec: MlpSpec
    discriminator: NetworkParams
    propensity_spec: MlpSpec
    propensity_net: NetworkParams

    def params(self, group: str) -> NetworkParams:
        return getattr(self, group)

    def spec_of(self, group: str) -> MlpSpec:
        return getattr(self, _SPEC_ATTR[group])

    def copy(self) -> "CeganModel":
        kwargs = {g: self.params(g).copy() for g in PARAM_GROUPS}
        return CeganModel(
            schema=self.schema,
            latent_dim=self.latent_dim,
            noise_dim_e=self.noise_dim_e,
            noise_dim_i=self.noise_dim_i,
            noise_dim_p=self.noise_dim_p,
            alpha=self.alpha,
            encoder_spec=self.encoder_spec,
            inference_spec=self.inference_spec,
            predictor_spec=self.predictor_spec,
            reconstructor_spec=self.reconstructor_spec,
            discriminator_spec=self.discriminator_spec,
            propensity_spec=self.propensity_spec,
            **{g: kwargs[g] for g in PARAM_GROUPS},
        )


_SPEC_ATTR = {
    "encoder": "encoder_spec",
    "inference_net": "inference_spec",
    "predictor": "predictor_spec",
    "reconstructor": "reconstructor_spec",
    "discriminator": "discriminator_spec",
    "propensity_net": "propensity_spec",
}


def build_model(
    schema: DataSchema,
    rng: RngStream,
    latent_dim: int = 20,
    hidden_dims: tuple[int, ...] = (200, 200, 200),
    noise_dims: tuple[int, int, int] | None = None,
    dropout: float = 0.6,
    alpha: float = 1.0,
) -> CeganModel:
    """Construct and Xavier-initialize all six subnetworks.

    Noise dims default to the latent dim for each of the three stochastic
    subnetworks. Each network gets its own child stream for initialization.
    """
    ne, ni, np_ = noise_dims if noise_dims is not None else (latent_dim,) * 3
    dx, dy = schema.x_dim, schema.y_dim

    specs = {
        "encoder": MlpSpec(dx + 1 + dy + ne, hidden_dims, latent_dim, "identity", dropout),
        "inference_net": MlpSpec(dx + 1 + ni, hidden_dims, latent_dim, "identity", dropout),
        "predictor": MlpSpec(latent_dim + dx + 1 + np_, hidden_dims, dy, "identity", dropout),
        "reconstructor": MlpSpec(latent_dim, hidden_dims, dx + 1 + dy, "identity", dropout),
        "discriminator": MlpSpec(latent_dim + dx + 1 + dy, hidden_dims, 1, "identity", dropout),
        "propensity_net": MlpSpec(dx, hidden_dims, 1, "identity", dropout),
    }
    nets = {g: xavier_init(specs[g], rng.child(i)) for i, g in enumerate(PARAM_GROUPS)}

    return CeganModel(
        schema=schema,
        latent_dim=latent_dim,
        noise_dim_e=ne,
        noise_dim_i=ni,
        noise_dim_p=np_,
        alpha=alpha,
        encoder_spec=specs["encoder"],
        encoder=nets["encoder"],
        inference_spec=specs["inference_net"],
        inference_net=nets["inference_net"],
        predictor_spec=specs["predictor"],
        predictor=nets["predictor"],
        reconstructor_spec=specs["reconstructor"],
        reconstructor=nets["reconstructor"],
        discriminator_spec=specs["discriminator"],
        discriminator=nets["discriminator"],
        propensity_spec=specs["propensity_net"],
        propensity_net=nets["propensity_net"],
    )


def _tcol(t) -> np.ndarray:
    return np.asarray(t, dtype=np.float64).reshape(-1, 1)


# -- forward paths (tapes exposed for the trainer) --------------------------


def encoder_forward(
    model: CeganModel, x, t, y, eps: np.ndarray, rng: RngStream | None = None, training: bool = False
) -> tuple[np.ndarray, Tape]:
    inp = np.concatenate([x, _tcol(t), y, eps], axis=1)
    return forward(model.encoder, model.encoder_spec, inp, rng, training)


def inference_forward(
    model: CeganModel, x, t, eps: np.ndarray, rng: RngStream | None = None, training: bool = False
) -> tuple[np.ndarray, Tape]:
    inp = np.concatenate([x, _tcol(t), eps], axis=1)
    return forward(model.inference_net, model.inference_spec, inp, rng, training)


def predictor_forward(
    model: CeganModel, z, x, t, eps: np.ndarray, rng: RngStream | None = None, training: bool = False
) -> tuple[np.ndarray, Tape, HeadCache]:
    inp = np.concatenate([z, x, _tcol(t), eps], axis=1)
    raw, tape = forward(model.predictor, model.predictor_spec, inp, rng, training)
    y_hat, cache = apply_heads(raw, model.schema.y_binary_mask())
    return y_hat, tape, cache


def reconstructor_forward(
    model: CeganModel, z_hat, rng: RngStream | None = None, training: bool = False
) -> tuple[np.ndarray, Tape, HeadCache]:
    raw, tape = forward(model.reconstructor, model.reconstructor_spec, z_hat, rng, training)
    w_bar, cache = apply_heads(raw, model.schema.reconstruction_kinds())
    return w_bar, tape, cache


def discriminator_logits(
    model: CeganModel, z, x, t, y, rng: RngStream | None = None, training: bool = False
) -> tuple[np.ndarray, Tape]:
    inp = np.concatenate([z, x, _tcol(t), y], axis=1)
    return forward(model.discriminator, model.discriminator_spec, inp, rng, training)


def propensity_logits(
    model: CeganModel, x, rng: RngStream | None = None, training: bool = False
) -> tuple[np.ndarray, Tape]:
    return forward(model.propensity_net, model.propensity_spec, np.asarray(x, dtype=np.float64), rng, training)


def split_tuple_grad(model: CeganModel, d_input: np.ndarray):
    """Split a discriminator input gradient into (dz, dx, dt, dy) blocks."""
    dz = model.latent_dim
    dx = model.schema.x_dim
    return (
        d_input[:, :dz],
        d_input[:, dz : dz + dx],
        d_input[:, dz + dx : dz + dx + 1],
        d_input[:, dz + dx + 1 :],
    )


# -- public operations (inference mode: dropout off) ------------------------


def encode(model: CeganModel, x, t, y, rng: RngStream) -> np.ndarray:
    """Latent code z-hat for observed tuples, with fresh encoder noise."""
    validate_batch(model.schema, x, t, y)
    eps = rng.normal((np.asarray(x).shape[0], model.noise_dim_e))
    z_hat, _ = encoder_forward(model, x, t, y, eps)
    return z_hat


def infer_z(model: CeganModel, x, t, rng: RngStream) -> np.ndarray:
    """Latent code z from (x, t), with fresh inference noise."""
    validate_batch(model.schema, x, t)
    eps = rng.normal((np.asarray(x).shape[0], model.noise_dim_i))
    z, _ = inference_forward(model, x, t, eps)
    return z


def predict_y(model: CeganModel, z, x, t, rng: RngStream) -> np.ndarray:
    """Outcome estimate y-hat; binary outcome columns are probabilities."""
    z = np.asarray(z, dtype=np.float64)
    if z.ndim != 2 or z.shape[1] != model.latent_dim:
        raise ShapeError(f"z shape {z.shape} != (n, {model.latent_dim})")
    eps = rng.normal((z.shape[0], model.noise_dim_p))
    y_hat, _, _ = predictor_forward(model, z, x, t, eps)
    return y_hat


def reconstruct(model: CeganModel, z_hat) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Decode z-hat into (x-bar, t-bar, y-bar); t-bar is a probability."""
    z_hat = np.asarray(z_hat, dtype=np.float64)
    w_bar, _, _ = reconstructor_forward(model, z_hat)
    dx = model.schema.x_dim
    return w_bar[:, :dx], w_bar[:, dx], w_bar[:, dx + 1 :]


def discriminate(model: CeganModel, tup: Tuple4) -> np.ndarray:
    """Probability that each tuple came from the encoder distribution."""
    u, _ = discriminator_logits(model, tup.z, tup.x, tup.t, tup.y)
    return clamp_prob(sigmoid(u[:, 0]))


def propensity(model: CeganModel, x) -> np.ndarray:
    """q(t=1 | x), deterministic given parameters."""
    u, _ = propensity_logits(model, x)
    return clamp_prob(sigmoid(u[:, 0]))


def value_function(model: CeganModel, x, t, y, z_hat, y_hat, z) -> float:
    """Mean empirical value of the adversarial game on a batch.

    V = log D(z-hat, x, t, y) + log(1 - D(z, x, t, y-hat)), probabilities
    clamped, so V <= -2*log(1 - 1e-7) always.
    """
    p1 = discriminate(model, Tuple4(z_hat, np.asarray(x, float), np.asarray(t, float), np.asarray(y, float)))
    p2 = discriminate(model, Tuple4(z, np.asarray(x, float), np.asarray(t, float), y_hat))
    return float(np.mean(np.log(p1) + np.log1p(-p2)))
