import numpy as np
import pytest
from conftest import BIN, tiny_model

from cegan.adam import AdamConfig
from cegan.datagen import ToyGenConfig, generate_toy, split
from cegan.inference import (
    IteConfig,
    estimate_ite,
    estimate_outcome,
    export_ite_csv,
    intermediate_diagnostics,
)
from cegan.mlp import MlpSpec, NetworkParams
from cegan.rng import RngStream
from cegan.training import TrainConfig, fit


def _with_linear_predictor(model, t_weight: float, bias: float = 0.0):
    """Replace the predictor with a bare linear map reading only the t input."""
    in_dim = model.latent_dim + model.schema.x_dim + 1 + model.noise_dim_p
    w = np.zeros((in_dim, model.schema.y_dim))
    w[model.latent_dim + model.schema.x_dim, 0] = t_weight
    model.predictor_spec = MlpSpec(in_dim, (), model.schema.y_dim)
    model.predictor = NetworkParams([w], [np.full(model.schema.y_dim, bias)])
    return model


def test_constant_predictor_yields_constant_estimate():
    model = _with_linear_predictor(tiny_model(seed=1), t_weight=0.0, bias=2.5)
    x = RngStream(2).normal((7, 2))
    for m in (1, 17):
        est = estimate_outcome(model, x, 0, IteConfig(mc_samples=m), RngStream(3))
        assert np.all(est == 2.5)


def test_single_sample_estimate_is_repeatable():
    model = tiny_model(seed=4)
    x = RngStream(5).normal((3, 2))
    cfg = IteConfig(mc_samples=1)
    a = estimate_outcome(model, x, 1, cfg, RngStream(6))
    b = estimate_outcome(model, x, 1, cfg, RngStream(6))
    assert np.array_equal(a, b)


def test_mc_estimates_converge_within_three_standard_errors():
    model = tiny_model(seed=40, hidden=(8, 8), latent=3)
    x = RngStream(41).normal((20, 2))
    est_big = estimate_outcome(model, x, 1, IteConfig(mc_samples=10_000), RngStream(42))
    reps = np.stack(
        [estimate_outcome(model, x, 1, IteConfig(mc_samples=100), RngStream(1000 + k)) for k in range(20)]
    )
    se = reps.std(axis=0, ddof=1)
    est_small = estimate_outcome(model, x, 1, IteConfig(mc_samples=100), RngStream(43))
    assert np.all(np.abs(est_big - est_small) <= 3.0 * se)


def test_estimate_outcome_rejects_bad_do_value():
    model = tiny_model(seed=7)
    with pytest.raises(ValueError):
        estimate_outcome(model, np.zeros((1, 2)), 2, IteConfig(), RngStream(8))


def test_ite_is_one_when_predictor_returns_treatment():
    model = _with_linear_predictor(tiny_model(seed=9), t_weight=1.0)
    x = RngStream(10).normal((11, 2))
    est = estimate_ite(model, x, IteConfig(mc_samples=5), RngStream(11))
    assert np.allclose(est.ite, 1.0)
    assert np.allclose(est.y1_hat, 1.0) and np.allclose(est.y0_hat, 0.0)


def test_ite_is_zero_when_predictor_ignores_treatment():
    model = tiny_model(seed=12)
    # zero only the t column of the predictor's first layer
    model.predictor.weights[0][model.latent_dim + model.schema.x_dim, :] = 0.0
    x = RngStream(13).normal((9, 2))
    est = estimate_ite(model, x, IteConfig(mc_samples=3, paired=True), RngStream(14))
    assert np.all(est.ite == 0.0)


def test_ite_pure_function_of_seed():
    model = tiny_model(seed=15)
    x = RngStream(16).normal((6, 2))
    cfg = IteConfig(mc_samples=25)
    a = estimate_ite(model, x, cfg, RngStream(17))
    b = estimate_ite(model, x, cfg, RngStream(17))
    assert np.array_equal(a.ite, b.ite)


def test_paired_sampling_cuts_ite_variance():
    model = tiny_model(seed=40, hidden=(8, 8), latent=3)
    x = RngStream(44).normal((200, 2))
    paired_runs, indep_runs = [], []
    for k in range(30):
        p = estimate_ite(model, x, IteConfig(mc_samples=10, paired=True), RngStream(2000 + k))
        i = estimate_ite(model, x, IteConfig(mc_samples=10, paired=False), RngStream(2000 + k))
        paired_runs.append(p.ite[:, 0])
        indep_runs.append(i.ite[:, 0])
    paired_var = np.stack(paired_runs).var(axis=0).mean()
    indep_var = np.stack(indep_runs).var(axis=0).mean()
    assert paired_var <= indep_var


def test_z_modes_agree_in_expectation():
    model = tiny_model(seed=40, hidden=(8, 8), latent=3)
    x = RngStream(41).normal((20, 2))
    a = estimate_outcome(model, x, 1, IteConfig(mc_samples=10_000, z_mode="sample-t"), RngStream(45))
    b = estimate_outcome(model, x, 1, IteConfig(mc_samples=10_000, z_mode="weighted-sum"), RngStream(46))
    assert np.abs(a - b).mean() < 0.02


def test_binary_outcome_estimates_in_unit_interval():
    model = tiny_model(seed=18, y_kinds=(BIN,))
    x = RngStream(19).normal((15, 2))
    est = estimate_ite(model, x, IteConfig(mc_samples=20), RngStream(20))
    assert np.all((est.y1_hat >= 0.0) & (est.y1_hat <= 1.0))
    assert np.all((est.y0_hat >= 0.0) & (est.y0_hat <= 1.0))
    assert np.all((est.ite >= -1.0) & (est.ite <= 1.0))


def test_trained_toy_model_recovers_ate_sign():
    data = generate_toy(ToyGenConfig(n=600, zeta=0.0, seed=50))
    train_set, valid_set, test_set = split(data, seed=50)
    config = TrainConfig(
        latent_dim=5, hidden_dims=(32, 32), noise_dims=(5, 5, 5), dropout=0.2,
        max_iterations=400, eval_every=100, seed=51, adam=AdamConfig(learning_rate=1e-3),
    )
    model, _ = fit(train_set, valid_set, config)
    est = estimate_ite(model, test_set.x, IteConfig(mc_samples=100), RngStream(52))
    true_ate = float((test_set.y1 - test_set.y0).mean())
    assert np.sign(est.ite.mean()) == np.sign(true_ate)


# -- intermediate diagnostics ---------------------------------------------------


def test_diagnostics_fair_propensity_cross_entropy():
    model = tiny_model(seed=21)
    for group in ("propensity_net",):
        for w in model.params(group).weights:
            w[:] = 0.0
    x = RngStream(22).normal((10, 2))
    t = RngStream(23).bernoulli(0.5, 10)
    ce, _ = intermediate_diagnostics(model, x, t, IteConfig(mc_samples=3), RngStream(24))
    assert ce == pytest.approx(0.6931471805599453, rel=1e-9)


def test_diagnostics_zero_gap_when_treatment_degenerate():
    model = tiny_model(seed=25)
    model.propensity_net.biases[-1][:] = 50.0  # q(t=1|x) ~ 1
    x = RngStream(26).normal((8, 2))
    t = np.ones(8)
    ce, gap = intermediate_diagnostics(model, x, t, IteConfig(mc_samples=10), RngStream(27))
    assert gap == 0.0
    assert ce >= 0.0


def test_diagnostics_nonnegative():
    model = tiny_model(seed=28)
    x = RngStream(29).normal((12, 2))
    t = RngStream(30).bernoulli(0.5, 12)
    ce, gap = intermediate_diagnostics(model, x, t, IteConfig(mc_samples=5), RngStream(31))
    assert ce >= 0.0 and gap >= 0.0


def test_ite_csv_export(tmp_path):
    model = tiny_model(seed=32)
    x = RngStream(33).normal((4, 2))
    est = estimate_ite(model, x, IteConfig(mc_samples=2), RngStream(34))
    path = tmp_path / "ite.csv"
    export_ite_csv(est, path)
    lines = path.read_text().splitlines()
    assert lines[0] == "subject-id,y1_hat,y0_hat,ite_hat"
    assert len(lines) == 5
    first = lines[1].split(",")
    assert first[0] == "0"
    assert float(first[1]) - float(first[2]) == pytest.approx(float(first[3]), rel=1e-12)
