import numpy as np
import pytest
from conftest import BIN, CONT, schema_batch, snapshot, tiny_model, unchanged

from cegan.adam import AdamConfig
from cegan.datagen import ToyGenConfig, generate_toy, split
from cegan.exceptions import DivergenceError
from cegan.model import DataSchema, build_model, propensity
from cegan.rng import RngStream
from cegan.training import (
    MODE_LP_ONLY,
    TrainConfig,
    TrainTrace,
    fit,
    generator_grads,
    train_discriminator_step,
    train_generator_step,
    train_lp_step,
    train_propensity_step,
    train_reconstruction_step,
    validation_prediction_loss,
)


def tiny_config(**kwargs):
    defaults = dict(latent_dim=3, hidden_dims=(8, 8), noise_dims=(3, 3, 3), dropout=0.0)
    defaults.update(kwargs)
    return TrainConfig(**defaults)


STEPS = {
    "reconstruction": (train_reconstruction_step, {"encoder", "reconstructor"}),
    "discriminator": (train_discriminator_step, {"discriminator"}),
    "generator": (train_generator_step, {"encoder", "inference_net", "predictor"}),
    "lp": (train_lp_step, {"inference_net", "predictor"}),
    "propensity": (train_propensity_step, {"propensity_net"}),
}


@pytest.mark.parametrize("step_name", list(STEPS))
def test_each_step_mutates_exactly_its_parameter_groups(step_name):
    step, expected_groups = STEPS[step_name]
    model = tiny_model(seed=1)
    batch = schema_batch(model, n=16)
    snap = snapshot(model)
    step(model, batch, RngStream(2), tiny_config(adam=AdamConfig(learning_rate=1e-3)))
    for group in snap:
        if group in expected_groups:
            assert not unchanged(model, snap, group), f"{group} should have changed"
        else:
            assert unchanged(model, snap, group), f"{group} must be bit-identical"


@pytest.mark.parametrize("step_name", list(STEPS))
def test_zero_learning_rate_reports_loss_but_changes_nothing(step_name):
    step, _ = STEPS[step_name]
    model = tiny_model(seed=3)
    batch = schema_batch(model, n=8)
    snap = snapshot(model)
    loss = step(model, batch, RngStream(4), tiny_config(adam=AdamConfig(learning_rate=0.0)))
    assert np.isfinite(loss)
    for group in snap:
        assert unchanged(model, snap, group)


def test_reconstruction_overfits_fixed_batch():
    # 200 steps on one fixed 64-sample batch with fixed encoder noise: the
    # loss must be non-increasing, allowing <= 5% transient increases
    model = tiny_model(seed=5, hidden=(16, 16), latent=3)
    batch = schema_batch(model, n=64, seed=6)
    config = tiny_config(hidden_dims=(16, 16), adam=AdamConfig(learning_rate=1e-3))
    losses = [train_reconstruction_step(model, batch, RngStream(7), config) for _ in range(200)]
    increases = sum(1 for a, b in zip(losses, losses[1:]) if b > a)
    assert increases <= 10  # 5% of 200
    assert losses[-1] < losses[0]


def test_first_discriminator_loss_near_symmetric_value():
    # untrained model keeps D near 1/2, so -V is close to 2*log 2
    model = tiny_model(seed=8, hidden=(16, 16))
    batch = schema_batch(model, n=64, seed=9)
    loss = train_discriminator_step(model, batch, RngStream(10), tiny_config(hidden_dims=(16, 16)))
    assert abs(loss - 1.386) < 0.3


def test_generator_loss_linear_in_alpha():
    losses = {}
    for alpha in (0.0, 1.0, 2.0):
        model = tiny_model(seed=11)
        batch = schema_batch(model, n=16, seed=12)
        config = tiny_config(alpha=alpha, adam=AdamConfig(learning_rate=0.0))
        losses[alpha] = train_generator_step(model, batch, RngStream(13), config)
    lp_term = losses[1.0] - losses[0.0]
    assert lp_term > 0
    assert losses[2.0] - losses[0.0] == pytest.approx(2.0 * lp_term, rel=1e-9)


def test_generator_gradient_direction_dominated_by_lp_for_huge_alpha():
    model = tiny_model(seed=14)
    batch = schema_batch(model, n=16, seed=15)

    def flat(grads):
        parts = []
        for group in sorted(grads):
            for a in grads[group].weights + grads[group].biases:
                parts.append(a.ravel())
        return np.concatenate(parts)

    def grads_at(alpha):
        _, g = generator_grads(model, batch, RngStream(16), tiny_config(alpha=alpha))
        return flat(g)

    g0 = grads_at(0.0)
    g1 = grads_at(1.0)
    lp_direction = g1 - g0  # exact L_P gradient by linearity
    g_big = grads_at(1e6)
    cos = np.dot(g_big, lp_direction) / (np.linalg.norm(g_big) * np.linalg.norm(lp_direction))
    assert cos > 1.0 - 1e-6


def test_nonsaturating_mode_changes_generator_loss():
    model = tiny_model(seed=17)
    batch = schema_batch(model, n=16, seed=18)
    sat = train_generator_step(
        model.copy(), batch, RngStream(19), tiny_config(generator_loss_mode="saturating")
    )
    nonsat = train_generator_step(
        model.copy(), batch, RngStream(19), tiny_config(generator_loss_mode="non-saturating")
    )
    assert sat != nonsat


def test_propensity_converges_to_coin_entropy_when_uninformative():
    # sample large enough that a small net cannot memorize the labels
    model = tiny_model(seed=20, hidden=(8,))
    rng = RngStream(21)
    n = 4096
    x = rng.normal((n, 2))
    t = rng.bernoulli(0.5, n)
    y = rng.normal((n, 1))
    config = tiny_config(hidden_dims=(8,), adam=AdamConfig(learning_rate=1e-2))
    losses = [train_propensity_step(model, (x, t, y), rng, config) for _ in range(2000)]
    assert abs(np.mean(losses[-100:]) - 0.693) < 0.05


def test_propensity_learns_separable_rule():
    model = tiny_model(seed=22, hidden=(16,))
    rng = RngStream(23)
    x = rng.normal((256, 2))
    t = (x[:, 0] > 0).astype(float)
    y = rng.normal((256, 1))
    config = tiny_config(hidden_dims=(16,), adam=AdamConfig(learning_rate=1e-2))
    loss = 1.0
    for _ in range(2000):
        loss = train_propensity_step(model, (x, t, y), rng, config)
    assert loss < 0.1


def test_divergence_aborts_with_trace():
    data = generate_toy(ToyGenConfig(n=64, zeta=0.0, seed=24))
    train_set, valid_set, _ = split(data, seed=24)
    config = tiny_config(latent_dim=2, hidden_dims=(4,), noise_dims=(2, 2, 2), max_iterations=10, eval_every=5)
    # poison the data so the first reconstruction loss is non-finite
    train_set.x[0, 0] = np.finfo(np.float64).max
    with pytest.raises(DivergenceError) as excinfo:
        fit(train_set, valid_set, config)
    assert isinstance(excinfo.value.trace, TrainTrace)


# -- fit ----------------------------------------------------------------------


@pytest.fixture(scope="module")
def toy_splits():
    data = generate_toy(ToyGenConfig(n=400, zeta=0.0, seed=30))
    return split(data, seed=30)


def test_fit_zero_iterations_returns_initialized_model(toy_splits):
    train_set, valid_set, _ = toy_splits
    config = tiny_config(max_iterations=0, seed=31, latent_dim=3, hidden_dims=(8, 8), noise_dims=(3, 3, 3))
    model, trace = fit(train_set, valid_set, config)
    assert trace.iterations == []
    reference = build_model(
        train_set.schema, RngStream(31).child(0),
        latent_dim=3, hidden_dims=(8, 8), noise_dims=(3, 3, 3), dropout=config.dropout, alpha=config.alpha,
    )
    for group in ("encoder", "predictor"):
        for a, b in zip(model.params(group).weights, reference.params(group).weights):
            assert np.array_equal(a, b)


def test_fit_is_deterministic(toy_splits):
    train_set, valid_set, _ = toy_splits
    config = tiny_config(max_iterations=30, eval_every=10, seed=32, hidden_dims=(8, 8))
    model_a, trace_a = fit(train_set, valid_set, config)
    model_b, trace_b = fit(train_set, valid_set, config)
    assert trace_a.l_r == trace_b.l_r
    assert trace_a.d_loss == trace_b.d_loss
    assert trace_a.g_loss == trace_b.g_loss
    assert trace_a.val_l_p == trace_b.val_l_p
    for a, b in zip(model_a.encoder.weights, model_b.encoder.weights):
        assert np.array_equal(a, b)


def test_fit_improves_validation_lp(toy_splits):
    train_set, valid_set, _ = toy_splits
    config = tiny_config(
        max_iterations=300, eval_every=50, seed=33,
        latent_dim=3, hidden_dims=(16, 16), noise_dims=(3, 3, 3),
        adam=AdamConfig(learning_rate=1e-3),
    )
    init_model, _ = fit(train_set, valid_set, tiny_config(
        max_iterations=0, seed=33, latent_dim=3, hidden_dims=(16, 16), noise_dims=(3, 3, 3)))
    trained, trace = fit(train_set, valid_set, config)
    rng = RngStream(999)
    init_val = validation_prediction_loss(init_model, valid_set, rng.fork())
    final_val = validation_prediction_loss(trained, valid_set, rng.fork())
    assert final_val < init_val


def test_fit_returns_best_validation_checkpoint(toy_splits):
    train_set, valid_set, _ = toy_splits
    config = tiny_config(max_iterations=120, eval_every=20, seed=34, hidden_dims=(8, 8),
                         adam=AdamConfig(learning_rate=1e-3))
    model, trace = fit(train_set, valid_set, config)
    evaluated = trace.evaluated()
    assert evaluated, "expected periodic evaluations"
    best_recorded = min(v for _, v in evaluated)
    val_rng = RngStream(config.seed).child(2)
    assert validation_prediction_loss(model, valid_set, val_rng.fork()) == pytest.approx(best_recorded, abs=0)
    assert trace.best_val_l_p == best_recorded


def test_early_stopping_halts_before_budget(toy_splits):
    train_set, valid_set, _ = toy_splits
    config = tiny_config(
        max_iterations=5000, eval_every=5, patience=3, seed=35, hidden_dims=(4,),
        adam=AdamConfig(learning_rate=0.0),  # no learning: validation never improves
    )
    _, trace = fit(train_set, valid_set, config)
    # first eval sets best; next `patience` evals fail to improve, then stop
    assert trace.iterations[-1] == 5 * (1 + config.patience)


def test_lp_only_mode_ignores_alpha_and_freezes_adversarial_groups(toy_splits):
    train_set, valid_set, _ = toy_splits
    base = dict(max_iterations=25, eval_every=25, seed=36, latent_dim=3,
                hidden_dims=(8, 8), noise_dims=(3, 3, 3), dropout=0.0)
    model_a, trace_a = fit(train_set, valid_set, TrainConfig(alpha=1.0, **base), mode=MODE_LP_ONLY)
    model_b, trace_b = fit(train_set, valid_set, TrainConfig(alpha=123.0, **base), mode=MODE_LP_ONLY)
    assert trace_a.g_loss == trace_b.g_loss
    for a, b in zip(model_a.predictor.weights, model_b.predictor.weights):
        assert np.array_equal(a, b)
    # adversarial/reconstruction groups never trained in lp-only mode
    reference = build_model(
        train_set.schema, RngStream(36).child(0),
        latent_dim=3, hidden_dims=(8, 8), noise_dims=(3, 3, 3), dropout=0.0, alpha=1.0,
    )
    for group in ("discriminator", "reconstructor"):
        for a, b in zip(model_a.params(group).weights, reference.params(group).weights):
            assert np.array_equal(a, b)


def test_trace_csv_format(tmp_path, toy_splits):
    train_set, valid_set, _ = toy_splits
    config = tiny_config(max_iterations=10, eval_every=5, seed=37, hidden_dims=(4,))
    _, trace = fit(train_set, valid_set, config)
    path = tmp_path / "trace.csv"
    trace.to_csv(path)
    lines = path.read_text().splitlines()
    assert lines[0] == "iter,l_r,d_loss,g_loss,val_l_p"
    assert len(lines) == 11
    row5 = lines[5].split(",")
    assert row5[0] == "5" and row5[4] != ""  # evaluated iteration carries val_l_p
    row1 = lines[1].split(",")
    assert row1[4] == ""  # non-evaluated iteration leaves it empty


def test_all_traced_losses_finite(toy_splits):
    train_set, valid_set, _ = toy_splits
    config = tiny_config(max_iterations=40, eval_every=10, seed=38, hidden_dims=(8, 8), dropout=0.6)
    _, trace = fit(train_set, valid_set, config)
    for series in (trace.l_r, trace.d_loss, trace.g_loss):
        assert np.all(np.isfinite(series))
