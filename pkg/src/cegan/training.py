"""Alternating optimization of the CEGAN networks.

One training iteration runs, in order: a reconstruction step (encoder +
reconstruction decoder), discriminator step(s), generator step(s) (encoder,
inference subnetwork, prediction decoder), then a propensity-classifier
step. Each step draws its own minibatch uniformly with replacement and
updates exactly its declared parameter groups.

Every step is split into a pure gradient computation (``*_grads``), which
the finite-difference checker verifies directly, and the update that feeds
those gradients to Adam. ``fit`` loops the iteration with periodic
validation of the prediction loss and returns the parameter snapshot with
the best validation value.
"""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass, field

import numpy as np

from .adam import AdamConfig, adam_step
from .exceptions import DivergenceError
from .mlp import PROB_EPS, Gradients, backward, sigmoid
from .model import (
    CeganModel,
    DataSchema,
    block_loss_grad,
    block_loss_rows,
    build_model,
    discriminator_logits,
    encoder_forward,
    heads_backward,
    infer_z,
    inference_forward,
    predict_y,
    prediction_loss,
    predictor_forward,
    propensity_logits,
    reconstructor_forward,
    split_tuple_grad,
    validate_batch,
)
from .rng import RngStream

MODE_CEGAN = "cegan"
MODE_LP_ONLY = "lp-only"


@dataclass(frozen=True)
class TrainConfig:
    """Every hyperparameter of the training loop, with paper-style defaults."""

    batch_recon: int = 64
    batch_disc: int = 64
    batch_gen: int = 64
    adam: AdamConfig = AdamConfig()
    alpha: float = 1.0
    max_iterations: int = 10_000
    eval_every: int = 100
    patience: int = 20
    validation_metric: str = "l_p"
    seed: int = 0
    disc_steps_per_iter: int = 1
    gen_steps_per_iter: int = 1
    generator_loss_mode: str = "saturating"  # | "non-saturating"
    # architecture
    latent_dim: int = 20
    hidden_dims: tuple[int, ...] = (200, 200, 200)
    noise_dims: tuple[int, int, int] | None = None
    dropout: float = 0.6

    def __post_init__(self):
        if min(self.batch_recon, self.batch_disc, self.batch_gen) < 1:
            raise ValueError("minibatch sizes must be positive")
        if self.alpha < 0:
            raise ValueError("alpha must be >= 0")
        if self.max_iterations < 0:
            raise ValueError("max_iterations must be >= 0")
        if self.eval_every < 1 or self.patience < 1:
            raise ValueError("eval_every and patience must be >= 1")
        if min(self.disc_steps_per_iter, self.gen_steps_per_iter) < 1:
            raise ValueError("per-iteration step counts must be >= 1")
        if self.generator_loss_mode not in ("saturating", "non-saturating"):
            raise ValueError(f"unknown generator_loss_mode {self.generator_loss_mode!r}")
        if self.validation_metric != "l_p":
            raise ValueError("only the prediction loss is supported as validation metric")
        if self.latent_dim < 1:
            raise ValueError("latent_dim must be >= 1")


@dataclass
class TrainTrace:
    """Per-iteration loss records plus periodic validation values."""

    rng_stream_id: str = ""
    iterations: list[int] = field(default_factory=list)
    l_r: list[float] = field(default_factory=list)
    d_loss: list[float] = field(default_factory=list)
    g_loss: list[float] = field(default_factory=list)
    val_l_p: list[float | None] = field(default_factory=list)
    wall_clock: float = 0.0
    best_iteration: int = 0
    best_val_l_p: float = float("nan")

    def record(self, it: int, l_r: float, d: float, g: float, val: float | None) -> None:
        self.iterations.append(it)
        self.l_r.append(l_r)
        self.d_loss.append(d)
        self.g_loss.append(g)
        self.val_l_p.append(val)

    def evaluated(self) -> list[tuple[int, float]]:
        return [(i, v) for i, v in zip(self.iterations, self.val_l_p) if v is not None]

    def to_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["iter", "l_r", "d_loss", "g_loss", "val_l_p"])
            for i in range(len(self.iterations)):
                val = self.val_l_p[i]
                writer.writerow(
                    [
                        self.iterations[i],
                        repr(self.l_r[i]),
                        repr(self.d_loss[i]),
                        repr(self.g_loss[i]),
                        "" if val is None else repr(val),
                    ]
                )


def _check_finite(loss: float, what: str) -> float:
    if not np.isfinite(loss):
        raise DivergenceError(f"non-finite {what} loss")
    return float(loss)


def _logit_parts(u: np.ndarray):
    """sigmoid plus the mask where the clamped probability still moves."""
    s = sigmoid(u)
    unclamped = (s > PROB_EPS) & (s < 1.0 - PROB_EPS)
    return s, np.clip(s, PROB_EPS, 1.0 - PROB_EPS), unclamped


# ---------------------------------------------------------------------------
# per-step losses and gradients


def reconstruction_grads(
    model: CeganModel, batch, rng: RngStream, config: TrainConfig
) -> tuple[float, dict[str, Gradients]]:
    """Batch-mean reconstruction loss and its encoder/decoder gradients."""
    x, t, y = batch
    n = x.shape[0]
    eps = rng.normal((n, model.noise_dim_e))
    z_hat, tape_e = encoder_forward(model, x, t, y, eps, rng, training=True)
    w_bar, tape_r, cache = reconstructor_forward(model, z_hat, rng, training=True)

    target = np.concatenate([x, t.reshape(-1, 1), y], axis=1)
    mask = model.schema.reconstruction_kinds()
    loss = _check_finite(block_loss_rows(target, w_bar, mask).mean(), "reconstruction")

    d_raw = heads_backward(block_loss_grad(target, w_bar, mask) / n, cache)
    grads_r, d_zhat = backward(tape_r, d_raw)
    grads_e, _ = backward(tape_e, d_zhat)
    return loss, {"encoder": grads_e, "reconstructor": grads_r}


def discriminator_grads(
    model: CeganModel, batch, rng: RngStream, config: TrainConfig
) -> tuple[float, dict[str, Gradients]]:
    """Batch-mean discriminator loss (-V) and its gradient."""
    x, t, y = batch
    n = x.shape[0]
    z_hat, _ = encoder_forward(model, x, t, y, rng.normal((n, model.noise_dim_e)), rng, training=True)
    z, _ = inference_forward(model, x, t, rng.normal((n, model.noise_dim_i)), rng, training=True)
    y_hat, _, _ = predictor_forward(model, z, x, t, rng.normal((n, model.noise_dim_p)), rng, training=True)

    u1, tape1 = discriminator_logits(model, z_hat, x, t, y, rng, training=True)
    u2, tape2 = discriminator_logits(model, z, x, t, y_hat, rng, training=True)
    s1, p1, unc1 = _logit_parts(u1)
    s2, p2, unc2 = _logit_parts(u2)
    loss = _check_finite(-(np.log(p1) + np.log1p(-p2)).mean(), "discriminator")

    grads, _ = backward(tape1, -(1.0 - s1) / n * unc1)
    grads2, _ = backward(tape2, s2 / n * unc2)
    grads += grads2
    return loss, {"discriminator": grads}


def generator_grads(
    model: CeganModel, batch, rng: RngStream, config: TrainConfig
) -> tuple[float, dict[str, Gradients]]:
    """Composite generator loss V + alpha * L_P and its gradients.

    With ``generator_loss_mode="non-saturating"`` the log(1 - D) term is
    replaced by -log D; the returned loss is the minimized quantity.
    """
    x, t, y = batch
    n = x.shape[0]
    alpha = config.alpha

    z_hat, tape_e = encoder_forward(model, x, t, y, rng.normal((n, model.noise_dim_e)), rng, training=True)
    z, tape_i = inference_forward(model, x, t, rng.normal((n, model.noise_dim_i)), rng, training=True)
    y_hat, tape_p, cache = predictor_forward(
        model, z, x, t, rng.normal((n, model.noise_dim_p)), rng, training=True
    )

    u1, tape_d1 = discriminator_logits(model, z_hat, x, t, y, rng, training=True)
    u2, tape_d2 = discriminator_logits(model, z, x, t, y_hat, rng, training=True)
    s1, p1, unc1 = _logit_parts(u1)
    s2, p2, unc2 = _logit_parts(u2)

    ymask = model.schema.y_binary_mask()
    lp_rows = block_loss_rows(y, y_hat, ymask)
    if config.generator_loss_mode == "saturating":
        adv_rows = np.log(p1) + np.log1p(-p2)
        du2 = -s2 / n * unc2
    else:
        adv_rows = np.log(p1) - np.log(p2)
        du2 = -(1.0 - s2) / n * unc2
    du1 = (1.0 - s1) / n * unc1
    loss = _check_finite(adv_rows.mean() + alpha * lp_rows.mean(), "generator")

    # adversarial signal reaches the generator through D's input blocks
    _, din1 = backward(tape_d1, du1)
    _, din2 = backward(tape_d2, du2)
    d_zhat, _, _, _ = split_tuple_grad(model, din1)
    d_z_adv, _, _, d_yhat_adv = split_tuple_grad(model, din2)

    d_yhat = d_yhat_adv + alpha / n * block_loss_grad(y, y_hat, ymask)
    grads_p, din_p = backward(tape_p, heads_backward(d_yhat, cache))
    grads_i, _ = backward(tape_i, d_z_adv + din_p[:, : model.latent_dim])
    grads_e, _ = backward(tape_e, d_zhat)
    return loss, {"encoder": grads_e, "inference_net": grads_i, "predictor": grads_p}


def lp_grads(
    model: CeganModel, batch, rng: RngStream, config: TrainConfig
) -> tuple[float, dict[str, Gradients]]:
    """Prediction loss alone, for the CEGAN(L_P) ablation (alpha unused)."""
    x, t, y = batch
    n = x.shape[0]
    z, tape_i = inference_forward(model, x, t, rng.normal((n, model.noise_dim_i)), rng, training=True)
    y_hat, tape_p, cache = predictor_forward(
        model, z, x, t, rng.normal((n, model.noise_dim_p)), rng, training=True
    )
    ymask = model.schema.y_binary_mask()
    loss = _check_finite(block_loss_rows(y, y_hat, ymask).mean(), "prediction")

    d_raw = heads_backward(block_loss_grad(y, y_hat, ymask) / n, cache)
    grads_p, din_p = backward(tape_p, d_raw)
    grads_i, _ = backward(tape_i, din_p[:, : model.latent_dim])
    return loss, {"inference_net": grads_i, "predictor": grads_p}


def propensity_grads(
    model: CeganModel, batch, rng: RngStream, config: TrainConfig
) -> tuple[float, dict[str, Gradients]]:
    """Mean treatment cross-entropy and its classifier gradient."""
    x, t, _ = batch
    n = x.shape[0]
    u, tape = propensity_logits(model, x, rng, training=True)
    s, p, unc = _logit_parts(u[:, 0])
    loss = _check_finite(-(t * np.log(p) + (1.0 - t) * np.log1p(-p)).mean(), "propensity")
    grads, _ = backward(tape, ((s - t) / n * unc).reshape(-1, 1))
    return loss, {"propensity_net": grads}


def _apply(model: CeganModel, grads: dict[str, Gradients], adam: AdamConfig) -> None:
    for group, g in grads.items():
        adam_step(model.params(group), g, adam)


def train_reconstruction_step(model, batch, rng, config) -> float:
    """Update encoder + reconstruction decoder; returns pre-update L_R."""
    loss, grads = reconstruction_grads(model, batch, rng, config)
    _apply(model, grads, config.adam)
    return loss


def train_discriminator_step(model, batch, rng, config) -> float:
    """Update the discriminator; returns pre-update -V."""
    loss, grads = discriminator_grads(model, batch, rng, config)
    _apply(model, grads, config.adam)
    return loss


def train_generator_step(model, batch, rng, config) -> float:
    """Update encoder, inference net and predictor; returns the composite loss."""
    loss, grads = generator_grads(model, batch, rng, config)
    _apply(model, grads, config.adam)
    return loss


def train_lp_step(model, batch, rng, config) -> float:
    """Update inference net and predictor on the prediction loss alone."""
    loss, grads = lp_grads(model, batch, rng, config)
    _apply(model, grads, config.adam)
    return loss


def train_propensity_step(model, batch, rng, config) -> float:
    """Update the propensity classifier; returns pre-update cross-entropy."""
    loss, grads = propensity_grads(model, batch, rng, config)
    _apply(model, grads, config.adam)
    return loss


def _sample(dataset, k: int, rng: RngStream):
    idx = rng.integers(0, len(dataset), k)
    return dataset.x[idx], dataset.t[idx], dataset.y[idx]


def validation_prediction_loss(model: CeganModel, dataset, rng: RngStream) -> float:
    """Prediction loss on a held-out split, dropout off, fixed noise."""
    z = infer_z(model, dataset.x, dataset.t, rng)
    y_hat = predict_y(model, z, dataset.x, dataset.t, rng)
    return prediction_loss(dataset.y, y_hat, model.schema)


def fit(
    train_data,
    valid_data,
    config: TrainConfig,
    schema: DataSchema | None = None,
    mode: str = MODE_CEGAN,
) -> tuple[CeganModel, TrainTrace]:
    """Run the full training loop and return the best-validation model.

    Stops at ``max_iterations`` or once validation L_P has not improved for
    ``patience`` consecutive evaluations (one evaluation per ``eval_every``
    iterations). (datasets, config, seed) fully determine the result; with
    ``mode="lp-only"`` the reconstruction and adversarial steps are skipped
    and only the inference/predictor/propensity networks train.
    """
    if mode not in (MODE_CEGAN, MODE_LP_ONLY):
        raise ValueError(f"unknown training mode {mode!r}")
    schema = schema or train_data.schema
    validate_batch(schema, train_data.x, train_data.t, train_data.y)
    validate_batch(schema, valid_data.x, valid_data.t, valid_data.y)

    root = RngStream(config.seed)
    model = build_model(
        schema,
        root.child(0),
        latent_dim=config.latent_dim,
        hidden_dims=config.hidden_dims,
        noise_dims=config.noise_dims,
        dropout=config.dropout,
        alpha=config.alpha,
    )
    step_rng = root.child(1)
    val_rng = root.child(2)

    trace = TrainTrace(rng_stream_id=root.stream_id)
    started = time.perf_counter()
    best_val = np.inf
    best_model = model.copy()
    best_iter = 0
    stale_evals = 0

    try:
        for it in range(1, config.max_iterations + 1):
            if mode == MODE_CEGAN:
                l_r = train_reconstruction_step(
                    model, _sample(train_data, config.batch_recon, step_rng), step_rng, config
                )
                d_loss = float(np.mean([
                    train_discriminator_step(
                        model, _sample(train_data, config.batch_disc, step_rng), step_rng, config
                    )
                    for _ in range(config.disc_steps_per_iter)
                ]))
                g_loss = float(np.mean([
                    train_generator_step(
                        model, _sample(train_data, config.batch_gen, step_rng), step_rng, config
                    )
                    for _ in range(config.gen_steps_per_iter)
                ]))
            else:
                l_r = 0.0
                d_loss = 0.0
                g_loss = train_lp_step(
                    model, _sample(train_data, config.batch_gen, step_rng), step_rng, config
                )
            train_propensity_step(
                model, _sample(train_data, config.batch_gen, step_rng), step_rng, config
            )

            val = None
            if it % config.eval_every == 0 or it == config.max_iterations:
                val = validation_prediction_loss(model, valid_data, val_rng.fork())
                if val < best_val:
                    best_val = val
                    best_model = model.copy()
                    best_iter = it
                    stale_evals = 0
                else:
                    stale_evals += 1
            trace.record(it, l_r, d_loss, g_loss, val)
            if stale_evals >= config.patience:
                break
    except DivergenceError as err:
        trace.wall_clock = time.perf_counter() - started
        err.trace = trace  # type: ignore[attr-defined]
        raise

    trace.wall_clock = time.perf_counter() - started
    trace.best_iteration = best_iter
    trace.best_val_l_p = float(best_val)
    if config.max_iterations == 0:
        return model, trace
    return best_model, trace
