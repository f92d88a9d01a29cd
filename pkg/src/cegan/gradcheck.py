"""Central finite-difference verification of every training gradient.

Runs each loss (reconstruction, discriminator, generator composite,
propensity cross-entropy) on a tiny model and compares the analytic
gradients from the training code path against central differences at every
parameter coordinate, reusing identical noise/dropout draws for every
evaluation. Used by the test suite and the ``gradcheck`` CLI command.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import KIND_BINARY, KIND_CONTINUOUS, DataSchema, build_model
from .rng import RngStream, derive_seed
from .training import (
    TrainConfig,
    discriminator_grads,
    generator_grads,
    lp_grads,
    propensity_grads,
    reconstruction_grads,
)

TOLERANCE = 1e-4
LOSSES = {
    "reconstruction": reconstruction_grads,
    "discriminator": discriminator_grads,
    "generator": generator_grads,
    "prediction": lp_grads,
    "propensity": propensity_grads,
}


@dataclass
class GradCheckResult:
    loss: str
    group: str
    dropout: float
    outcome_kind: str
    max_rel_error: float
    n_coords: int

    @property
    def passed(self) -> bool:
        return self.max_rel_error < TOLERANCE


def _tiny_batch(schema: DataSchema, n: int, rng: RngStream):
    x = rng.normal((n, schema.x_dim))
    xmask = schema.x_binary_mask()
    if xmask.any():
        x[:, xmask] = rng.bernoulli(0.5, (n, int(xmask.sum())))
    t = rng.bernoulli(0.5, n)
    if schema.y_kinds[0] == KIND_BINARY:
        y = rng.bernoulli(0.5, (n, schema.y_dim))
    else:
        y = rng.normal((n, schema.y_dim))
    return x, t, y


def _jitter_biases(model, rng: RngStream, scale: float = 0.1) -> None:
    """Move parameters to a generic point.

    At the zero-bias init, a row whose previous layer is entirely dead puts
    the next pre-activation at exactly 0.0 -- a ReLU kink where one-sided
    finite differences and the subgradient legitimately disagree. Random
    biases remove that degeneracy without touching the code under test.
    """
    from .model import PARAM_GROUPS

    for group in PARAM_GROUPS:
        for b in model.params(group).biases:
            b += scale * rng.normal(b.shape)


def _rel_error(a: float, fd: float) -> float:
    return abs(a - fd) / max(abs(a), abs(fd), 1e-4)


def check_loss(
    model,
    loss_name: str,
    batch,
    config: TrainConfig,
    noise_seed: int,
    h: float = 1e-5,
    corrupt_group: str | None = None,
) -> list[GradCheckResult]:
    """Compare analytic vs central-difference gradients for one loss.

    The loss is re-evaluated from a fresh stream at `noise_seed` for every
    probe, so all Gaussian noise and dropout masks are identical across
    evaluations; the map from parameters to loss is then deterministic and
    differentiable away from ReLU kinks.
    """
    loss_fn = LOSSES[loss_name]

    def evaluate() -> tuple[float, dict]:
        return loss_fn(model, batch, RngStream(noise_seed), config)

    _, analytic = evaluate()
    results = []
    for group, grads in analytic.items():
        tensors = list(zip(model.params(group).weights, grads.weights)) + list(
            zip(model.params(group).biases, grads.biases)
        )
        worst = 0.0
        count = 0
        for theta, grad in tensors:
            flat_theta = theta.reshape(-1)
            flat_grad = grad.reshape(-1)
            for idx in range(flat_theta.size):
                orig = flat_theta[idx]
                flat_theta[idx] = orig + h
                up, _ = evaluate()
                flat_theta[idx] = orig - h
                down, _ = evaluate()
                flat_theta[idx] = orig
                fd = (up - down) / (2.0 * h)
                a = flat_grad[idx] + (1e-2 if corrupt_group == group else 0.0)
                worst = max(worst, _rel_error(a, fd))
                count += 1
        results.append(
            GradCheckResult(
                loss=loss_name,
                group=group,
                dropout=config.dropout,
                outcome_kind=model.schema.y_kinds[0],
                max_rel_error=worst,
                n_coords=count,
            )
        )
    return results


def run_gradcheck(
    seed: int = 7,
    batch_size: int = 8,
    corrupt_group: str | None = None,
) -> tuple[bool, list[GradCheckResult]]:
    """The full finite-difference suite on tiny mixed-kind models.

    Covers both outcome kinds and dropout off/on for all five losses.
    Returns (all passed, per-(loss, group) results).
    """
    results: list[GradCheckResult] = []
    schemas = [
        DataSchema((KIND_CONTINUOUS, KIND_BINARY), (KIND_CONTINUOUS,)),
        DataSchema((KIND_CONTINUOUS, KIND_BINARY), (KIND_BINARY,)),
    ]
    for schema_idx, schema in enumerate(schemas):
        for drop_idx, dropout in enumerate((0.0, 0.5)):
            config = TrainConfig(
                latent_dim=2,
                hidden_dims=(4, 4),
                noise_dims=(2, 2, 2),
                dropout=dropout,
                alpha=1.0,
                seed=seed,
            )
            root = RngStream(seed, (schema_idx, drop_idx))
            model = build_model(
                schema,
                root.child(0),
                latent_dim=config.latent_dim,
                hidden_dims=config.hidden_dims,
                noise_dims=config.noise_dims,
                dropout=dropout,
            )
            _jitter_biases(model, root.child(3))
            batch = _tiny_batch(schema, batch_size, root.child(1))
            noise_seed = derive_seed(seed, schema_idx, drop_idx, 99)
            for loss_name in LOSSES:
                results.extend(
                    check_loss(model, loss_name, batch, config, noise_seed, corrupt_group=corrupt_group)
                )
    return all(r.passed for r in results), results


def summarize(results: list[GradCheckResult]) -> str:
    by_group: dict[tuple[str, str], float] = {}
    for r in results:
        key = (r.loss, r.group)
        by_group[key] = max(by_group.get(key, 0.0), r.max_rel_error)
    lines = []
    for (loss, group), err in sorted(by_group.items()):
        status = "ok" if err < TOLERANCE else "FAIL"
        lines.append(f"{status:4s} {loss:15s} {group:15s} max rel err {err:.3e}")
    return "\n".join(lines)
