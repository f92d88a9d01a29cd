"""Adversarial estimation of individual treatment effects under latent
confounding with noisy proxies: model, training loop, Monte-Carlo ITE
inference, ground-truth-bearing generators, baselines and the evaluation
harness."""

from .adam import AdamConfig, adam_step
from .checkpoint import load_model, save_model
from .datagen import (
    Dataset,
    ToyGenConfig,
    TwinsLikeConfig,
    export_csv,
    generate_toy,
    generate_twins_like,
    ingest_csv,
    minmax_normalize,
    read_schema_sidecar,
    split,
    write_schema_sidecar,
)
from .evaluation import (
    EvalReport,
    ate_error,
    fit_cegan,
    fit_cegan_lp,
    fit_knn,
    fit_lr1,
    fit_lr2,
    pehe,
    run_experiment,
)
from .exceptions import CeganError, ConfigError, DivergenceError, SchemaError, ShapeError
from .inference import (
    ItEstimate,
    IteConfig,
    estimate_ite,
    estimate_outcome,
    export_ite_csv,
    intermediate_diagnostics,
)
from .mlp import Gradients, MlpSpec, NetworkParams, backward, forward, sigmoid, xavier_init
from .model import (
    CeganModel,
    DataSchema,
    Tuple4,
    build_model,
    discriminate,
    elementwise_loss,
    encode,
    infer_z,
    predict_y,
    prediction_loss,
    propensity,
    reconstruct,
    reconstruction_loss,
    value_function,
)
from .rng import RngStream, derive_seed
from .training import (
    TrainConfig,
    TrainTrace,
    fit,
    train_discriminator_step,
    train_generator_step,
    train_propensity_step,
    train_reconstruction_step,
)

__version__ = "0.1.0"
