import numpy as np

from cegan.model import DataSchema, build_model
from cegan.rng import RngStream

CONT = "continuous"
BIN = "binary"


def tiny_model(y_kinds=(CONT,), x_kinds=(CONT, CONT), seed=0, hidden=(8, 8), latent=3, dropout=0.0):
    schema = DataSchema(tuple(x_kinds), tuple(y_kinds))
    return build_model(
        schema, RngStream(seed),
        latent_dim=latent, hidden_dims=hidden, noise_dims=(latent,) * 3, dropout=dropout,
    )


def schema_batch(model, n=16, seed=100):
    rng = RngStream(seed)
    x = rng.normal((n, model.schema.x_dim))
    xmask = model.schema.x_binary_mask()
    if xmask.any():
        x[:, xmask] = rng.bernoulli(0.5, (n, int(xmask.sum())))
    t = rng.bernoulli(0.5, n)
    y = rng.normal((n, model.schema.y_dim))
    ymask = model.schema.y_binary_mask()
    if ymask.any():
        y[:, ymask] = rng.bernoulli(0.5, (n, int(ymask.sum())))
    return x, t, y


def snapshot(model):
    return {
        group: (
            [w.copy() for w in model.params(group).weights],
            [b.copy() for b in model.params(group).biases],
        )
        for group in ("encoder", "inference_net", "predictor", "reconstructor", "discriminator", "propensity_net")
    }


def unchanged(model, snap, group) -> bool:
    ws, bs = snap[group]
    params = model.params(group)
    return all(np.array_equal(a, b) for a, b in zip(params.weights, ws)) and all(
        np.array_equal(a, b) for a, b in zip(params.biases, bs)
    )
