"""Ground-truth-bearing data generators, dataset IO and splitting.

Two generator families:

* a toy synthetic with a two-cluster Gaussian latent confounder, Gaussian
  proxy noise of configurable strength, and deterministic sigmoid potential
  outcomes, and
* a twins-like semi-synthetic with a skewed "gestation" latent, treatment
  assigned through that latent (scalar scheme) or through noisy one-hot
  replicas plus observed features (one-hot scheme), and Bernoulli potential
  outcomes calibrated so marginal event rates land near 21.6% / 15.3% for
  the control/treated arms.

Every generator is a pure function of (config, seed) and records the true
potential outcomes and latent values alongside the observed (x, t, y).
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, replace

import numpy as np

from .exceptions import SchemaError, ShapeError
from .mlp import sigmoid
from .model import KIND_BINARY, KIND_CONTINUOUS, DataSchema, validate_batch
from .rng import RngStream

SCHEME_SCALAR = "gestat-scalar"
SCHEME_ONEHOT = "gestat10-onehot"

# Latent "gestation" law: mostly Beta(1, 14) with a thin uniform component so
# the whole [0, 1] range is populated. Calibrated so the default outcome model
# yields control/treated event rates near 21.6% / 15.3%.
_LATENT_BETA_B = 14.0
_LATENT_UNIFORM_WEIGHT = 0.05
_ONEHOT_CATEGORIES = 10


@dataclass
class Dataset:
    """Observations plus optional ground-truth potential outcomes.

    When y0/y1 are present, the factual outcome always equals the selected
    potential outcome; this is enforced at construction.
    """

    schema: DataSchema
    x: np.ndarray
    t: np.ndarray
    y: np.ndarray
    y0: np.ndarray | None = None
    y1: np.ndarray | None = None
    z_true: np.ndarray | None = None

    def __post_init__(self):
        self.x = np.ascontiguousarray(self.x, dtype=np.float64)
        self.t = np.ascontiguousarray(self.t, dtype=np.float64)
        self.y = np.ascontiguousarray(np.atleast_2d(self.y), dtype=np.float64)
        if self.y.shape[0] != self.x.shape[0]:
            self.y = self.y.T
        for name in ("y0", "y1", "z_true"):
            v = getattr(self, name)
            if v is not None:
                setattr(self, name, np.ascontiguousarray(np.atleast_2d(v), dtype=np.float64))
        self.validate()

    def validate(self) -> None:
        validate_batch(self.schema, self.x, self.t, self.y)
        if (self.y0 is None) != (self.y1 is None):
            raise SchemaError("y0 and y1 must be provided together")
        if self.y0 is not None:
            if self.y0.shape != self.y.shape or self.y1.shape != self.y.shape:
                raise SchemaError("potential outcome shapes differ from y")
            if not (np.all(np.isfinite(self.y0)) and np.all(np.isfinite(self.y1))):
                raise SchemaError("non-finite potential outcomes")
            factual = np.where(self.t.reshape(-1, 1) == 1.0, self.y1, self.y0)
            if not np.array_equal(factual, self.y):
                raise SchemaError("factual outcome disagrees with selected potential outcome")
        if self.z_true is not None and self.z_true.shape[0] != len(self):
            raise SchemaError("z_true row count mismatch")

    def __len__(self) -> int:
        return self.x.shape[0]

    def subset(self, idx: np.ndarray) -> "Dataset":
        pick = lambda v: None if v is None else v[idx]
        return Dataset(self.schema, self.x[idx], self.t[idx], self.y[idx],
                       pick(self.y0), pick(self.y1), pick(self.z_true))

    @property
    def has_ground_truth(self) -> bool:
        return self.y0 is not None


@dataclass(frozen=True)
class ToyGenConfig:
    """Two-cluster latent confounder with Gaussian proxy noise of std zeta."""

    n: int = 5000
    latent_dim: int = 5  # = feature dim; proxies are one-to-one noisy copies
    zeta: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.n < 1 or self.latent_dim < 1:
            raise ValueError("n and latent_dim must be >= 1")
        if self.zeta < 0:
            raise ValueError(f"zeta must be >= 0, got {self.zeta}")


@dataclass(frozen=True)
class TwinsLikeConfig:
    """Semi-synthetic twins-like generator with a latent gestation variable."""

    n: int = 5000
    x_dim: int = 49  # base proxy features, excluding replicas / gestation column
    scheme: str = SCHEME_SCALAR
    flip_prob: float = 0.1
    replicas: int = 3
    latent_confounding: bool = True
    proxy_noise: float = 1.0
    outcome_slope: float = -4.0
    outcome_bias_control: float = -1.0
    outcome_bias_treated: float = -1.35
    treat_weight_mean: float = 10.0
    treat_weight_std: float = 0.1
    onehot_feature_weight_std: float = 0.1
    onehot_latent_weight_mean: float = 9.0
    onehot_latent_weight_std: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if self.scheme not in (SCHEME_SCALAR, SCHEME_ONEHOT):
            raise ValueError(f"unknown scheme {self.scheme!r}")
        if not (0.0 <= self.flip_prob <= 1.0):
            raise ValueError("flip_prob must be in [0, 1]")
        if self.replicas < 1:
            raise ValueError("replicas must be >= 1")
        if self.n < 2 or self.x_dim < 1:
            raise ValueError("n must be >= 2 and x_dim >= 1")


def generate_toy(config: ToyGenConfig) -> Dataset:
    """z in one of two Gaussian clusters; x = z + noise; sigmoid outcomes.

    Potential outcomes are deterministic given z: y(t) = sigmoid(sum(z) +
    (2t - 1)), so the subject-level effect is known exactly. The noise matrix
    is drawn even when zeta == 0, keeping all other draws identical across a
    zeta sweep at a fixed seed.
    """
    rng = RngStream(config.seed)
    n, d = config.n, config.latent_dim
    mu = rng.bernoulli(0.5, (n, 1))
    z = 3.0 * (mu - 1.0) + rng.normal((n, d))
    x = z + config.zeta * rng.normal((n, d))
    p_t = sigmoid(0.25 * z[:, -1])
    t = rng.bernoulli(p_t, n)
    s = z.sum(axis=1)
    y0 = sigmoid(s - 1.0).reshape(-1, 1)
    y1 = sigmoid(s + 1.0).reshape(-1, 1)
    y = np.where(t.reshape(-1, 1) == 1.0, y1, y0)
    schema = DataSchema((KIND_CONTINUOUS,) * d, (KIND_CONTINUOUS,))
    return Dataset(schema, x, t, y, y0, y1, z_true=z)


def _draw_gestation(rng: RngStream, n: int) -> np.ndarray:
    """Skewed-low latent in [0, 1): Beta(1, b) via inverse CDF + uniform mix."""
    v = rng.uniform(n)
    beta_draw = 1.0 - (1.0 - v) ** (1.0 / _LATENT_BETA_B)
    unif_draw = rng.uniform(n)
    use_unif = rng.bernoulli(_LATENT_UNIFORM_WEIGHT, n)
    return np.where(use_unif == 1.0, unif_draw, beta_draw)


def _base_proxies(rng: RngStream, z_norm: np.ndarray, x_dim: int, noise_std: float):
    """Noisy continuous/binary views of the normalized latent."""
    n = z_norm.shape[0]
    n_cont = (x_dim + 1) // 2
    lam = rng.uniform((x_dim,), 0.5, 1.5)
    sign = 2.0 * rng.bernoulli(0.5, (x_dim,)) - 1.0
    signal = (z_norm - z_norm.mean()) / z_norm.std()
    cols = signal.reshape(-1, 1) * (sign * lam).reshape(1, -1)
    cont = cols[:, :n_cont] + noise_std * rng.normal((n, n_cont))
    binary = rng.bernoulli(sigmoid(1.5 * cols[:, n_cont:]), (n, x_dim - n_cont))
    kinds = (KIND_CONTINUOUS,) * n_cont + (KIND_BINARY,) * (x_dim - n_cont)
    return np.concatenate([cont, binary], axis=1), kinds


def generate_twins_like(config: TwinsLikeConfig) -> Dataset:
    """Twins-like semi-synthetic data under either proxy scheme.

    Scalar scheme: treatment depends only on the min-max-normalized latent,
    t ~ Bern(sigmoid(w * z)), w ~ N(10, 0.1^2). One-hot scheme: the latent is
    a 10-way category; three bit-flipped one-hot replicas join the observed
    features and treatment follows sigmoid(w_o . x + w_h (c/10 - 0.1)).
    Under latent confounding the gestation-derived column itself stays out
    of x. Binary potential outcomes are drawn from the calibrated sigmoid
    outcome model for both arms.
    """
    rng = RngStream(config.seed)
    n = config.n
    u = _draw_gestation(rng, n)

    if config.scheme == SCHEME_ONEHOT:
        category = np.minimum(np.floor(_ONEHOT_CATEGORIES * u), _ONEHOT_CATEGORIES - 1)
        z_norm = minmax_normalize(category)
        latent = category
    else:
        z_norm = minmax_normalize(u)
        latent = z_norm

    x, kinds = _base_proxies(rng, z_norm, config.x_dim, config.proxy_noise)

    if config.scheme == SCHEME_ONEHOT:
        onehot = np.equal(category.reshape(-1, 1), np.arange(_ONEHOT_CATEGORIES)).astype(np.float64)
        for _ in range(config.replicas):
            flips = rng.bernoulli(config.flip_prob, (n, _ONEHOT_CATEGORIES))
            x = np.concatenate([x, np.abs(onehot - flips)], axis=1)
            kinds = kinds + (KIND_BINARY,) * _ONEHOT_CATEGORIES

    if not config.latent_confounding:
        x = np.concatenate([x, z_norm.reshape(-1, 1)], axis=1)
        kinds = kinds + (KIND_CONTINUOUS,)

    if config.scheme == SCHEME_ONEHOT:
        w_o = config.onehot_feature_weight_std * rng.normal((x.shape[1],))
        w_h = config.onehot_latent_weight_mean + config.onehot_latent_weight_std * float(rng.normal(()))
        p_t = sigmoid(x @ w_o + w_h * (category / _ONEHOT_CATEGORIES - 0.1))
    else:
        w = config.treat_weight_mean + config.treat_weight_std * float(rng.normal(()))
        p_t = sigmoid(w * z_norm)
    t = rng.bernoulli(p_t, n)

    a, b0, b1 = config.outcome_slope, config.outcome_bias_control, config.outcome_bias_treated
    y0 = rng.bernoulli(sigmoid(a * z_norm + b0), n).reshape(-1, 1)
    y1 = rng.bernoulli(sigmoid(a * z_norm + b1), n).reshape(-1, 1)
    y = np.where(t.reshape(-1, 1) == 1.0, y1, y0)

    schema = DataSchema(kinds, (KIND_BINARY,))
    return Dataset(schema, x, t, y, y0, y1, z_true=latent.reshape(-1, 1))


def minmax_normalize(column: np.ndarray) -> np.ndarray:
    """(v - min) / (max - min); rejects constant columns."""
    column = np.asarray(column, dtype=np.float64)
    lo, hi = column.min(), column.max()
    if not hi > lo:
        raise ValueError("cannot min-max normalize a constant column")
    return (column - lo) / (hi - lo)


def split(dataset: Dataset, fractions=(0.64, 0.16, 0.20), seed: int = 0):
    """Seed-deterministic disjoint (train, valid, test) partition."""
    if abs(sum(fractions) - 1.0) > 1e-9 or len(fractions) != 3:
        raise ValueError(f"fractions must be three values summing to 1, got {fractions}")
    n = len(dataset)
    n_train = int(round(fractions[0] * n))
    n_valid = int(round(fractions[1] * n))
    n_test = n - n_train - n_valid
    if min(n_train, n_valid, n_test) < 1:
        raise ValueError(f"split of {n} rows with fractions {fractions} leaves an empty part")
    perm = RngStream(seed).permutation(n)
    return (
        dataset.subset(perm[:n_train]),
        dataset.subset(perm[n_train : n_train + n_valid]),
        dataset.subset(perm[n_train + n_valid :]),
    )


# ---------------------------------------------------------------------------
# CSV + schema-sidecar IO
#
# Header layout: x0,...,x{d-1},t,y[,y0,y1[,z0,...]]  (single outcome column;
# 64-bit decimal text via repr, UTF-8, LF endings)


def dataset_columns(dataset: Dataset) -> list[str]:
    names = [f"x{i}" for i in range(dataset.schema.x_dim)] + ["t", "y"]
    if dataset.y0 is not None:
        names += ["y0", "y1"]
    if dataset.z_true is not None:
        names += [f"z{i}" for i in range(dataset.z_true.shape[1])]
    return names


def export_csv(dataset: Dataset, path) -> None:
    if dataset.schema.y_dim != 1:
        raise ShapeError("CSV export supports a single outcome column")
    blocks = [dataset.x, dataset.t.reshape(-1, 1), dataset.y]
    if dataset.y0 is not None:
        blocks += [dataset.y0, dataset.y1]
    if dataset.z_true is not None:
        blocks.append(dataset.z_true)
    table = np.concatenate(blocks, axis=1)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(dataset_columns(dataset))
        for row in table:
            writer.writerow([repr(float(v)) for v in row])


def write_schema_sidecar(schema: DataSchema, path) -> None:
    import json

    with open(path, "w", encoding="utf-8") as fh:
        json.dump({"x_kinds": list(schema.x_kinds), "y_kinds": list(schema.y_kinds)}, fh, indent=2)
        fh.write("\n")


def read_schema_sidecar(path) -> DataSchema:
    import json

    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    extra = set(doc) - {"x_kinds", "y_kinds"}
    if extra:
        raise SchemaError(f"unknown schema sidecar keys: {sorted(extra)}")
    return DataSchema(tuple(doc["x_kinds"]), tuple(doc.get("y_kinds", ["continuous"])))


def ingest_csv(path, schema: DataSchema) -> Dataset:
    """Read and validate a dataset CSV against its declared schema.

    Malformed cells are reported with their row number and column name;
    binary columns must contain only 0/1; optional y0/y1 and z blocks are
    accepted per the header.
    """
    if schema.y_dim != 1:
        raise ShapeError("CSV ingestion supports a single outcome column")
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise SchemaError(f"{path}: empty file") from None
        rows = list(reader)

    dx = schema.x_dim
    expected = [f"x{i}" for i in range(dx)] + ["t", "y"]
    if header[: len(expected)] != expected:
        raise SchemaError(f"{path}: header {header[:len(expected)]} != {expected}")
    rest = header[len(expected):]
    has_potentials = rest[:2] == ["y0", "y1"]
    if has_potentials:
        rest = rest[2:]
    n_z = len(rest)
    if rest != [f"z{i}" for i in range(n_z)]:
        raise SchemaError(f"{path}: unexpected trailing columns {rest}")

    table = np.empty((len(rows), len(header)))
    for i, row in enumerate(rows):
        if len(row) != len(header):
            raise SchemaError(f"{path}: row {i + 2} has {len(row)} cells, expected {len(header)}")
        for j, cell in enumerate(row):
            try:
                v = float(cell)
            except ValueError:
                raise SchemaError(
                    f"{path}: row {i + 2}, column {header[j]!r}: not a number: {cell!r}"
                ) from None
            if not np.isfinite(v):
                raise SchemaError(f"{path}: row {i + 2}, column {header[j]!r}: non-finite value")
            table[i, j] = v

    x = table[:, :dx]
    for j, kind in enumerate(schema.x_kinds):
        if kind == KIND_BINARY and not np.all((x[:, j] == 0) | (x[:, j] == 1)):
            raise SchemaError(f"{path}: binary column 'x{j}' contains values outside {{0,1}}")
    t = table[:, dx]
    if not np.all((t == 0) | (t == 1)):
        raise SchemaError(f"{path}: column 't' contains values outside {{0,1}}")
    y = table[:, dx + 1 : dx + 2]
    if schema.y_kinds[0] == KIND_BINARY and not np.all((y == 0) | (y == 1)):
        raise SchemaError(f"{path}: binary column 'y' contains values outside {{0,1}}")

    col = dx + 2
    y0 = y1 = None
    if has_potentials:
        y0 = table[:, col : col + 1]
        y1 = table[:, col + 1 : col + 2]
        col += 2
    z_true = table[:, col:] if n_z else None
    return Dataset(schema, x, t, y, y0, y1, z_true)


def with_seed(config, seed: int):
    """A copy of a generator config with its seed replaced."""
    return replace(config, seed=seed)
