"""Treatment-effect metrics, baseline estimators and the experiment loop.

Baselines follow the comparison set the adversarial model is evaluated
against: a single regression with treatment as a feature (lr1), per-arm
regressions (lr2), k-nearest-neighbour matching (knn), and the ablation
trained on the prediction loss alone (cegan-lp). Regressions are logistic
for binary outcomes and least squares for continuous ones, fitted by
deterministic solvers with a tiny ridge so no experiment ever aborts on a
singular system.

``run_experiment`` regenerates data per realization from child seeds, fits
every requested method, and aggregates in-sample (training split) and
out-of-sample (test split) root-PEHE and ATE error.
"""

from __future__ import annotations

import hashlib
import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .datagen import (
    Dataset,
    ToyGenConfig,
    TwinsLikeConfig,
    generate_toy,
    generate_twins_like,
    ingest_csv,
    read_schema_sidecar,
    split,
)
from .exceptions import ConfigError
from .inference import IteConfig, estimate_ite
from .mlp import sigmoid
from .model import KIND_BINARY, CeganModel, DataSchema
from .rng import RngStream, derive_seed
from .training import MODE_CEGAN, MODE_LP_ONLY, TrainConfig, fit

METHODS = ("cegan", "cegan-lp", "lr1", "lr2", "knn")
SPLITS = ("in-sample", "out-sample")
METRICS = ("sqrt_pehe", "ate_error")


# ---------------------------------------------------------------------------
# metrics


def pehe(y1, y0, y1_hat, y0_hat) -> float:
    """Mean squared error between true and estimated subject-level effects."""
    y1, y0, y1_hat, y0_hat = (np.asarray(v, dtype=np.float64).ravel() for v in (y1, y0, y1_hat, y0_hat))
    if not (y1.shape == y0.shape == y1_hat.shape == y0_hat.shape) or y1.size == 0:
        raise ValueError("pehe needs four equal-length non-empty vectors")
    return float(np.mean(((y1 - y0) - (y1_hat - y0_hat)) ** 2))


def ate_error(y1, y0, y1_hat, y0_hat) -> float:
    """Absolute difference between true and estimated average effects."""
    y1, y0, y1_hat, y0_hat = (np.asarray(v, dtype=np.float64).ravel() for v in (y1, y0, y1_hat, y0_hat))
    if not (y1.shape == y0.shape == y1_hat.shape == y0_hat.shape) or y1.size == 0:
        raise ValueError("ate_error needs four equal-length non-empty vectors")
    return float(abs(np.mean(y1 - y0) - np.mean(y1_hat - y0_hat)))


# ---------------------------------------------------------------------------
# deterministic regression solvers

_RIDGE = 1e-6


def _solve_least_squares(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    gram = a.T @ a
    rhs = a.T @ b
    try:
        beta = np.linalg.solve(gram, rhs)
        if np.all(np.isfinite(beta)):
            return beta
    except np.linalg.LinAlgError:
        pass
    return np.linalg.solve(gram + _RIDGE * np.eye(gram.shape[0]), rhs)


def _solve_logistic(a: np.ndarray, y: np.ndarray, tol: float = 1e-8, max_iter: int = 100) -> np.ndarray:
    """Newton iterations with an always-on tiny ridge for invertibility."""
    beta = np.zeros(a.shape[1])
    for _ in range(max_iter):
        p = sigmoid(a @ beta)
        w = p * (1.0 - p)
        hess = a.T @ (a * w[:, None]) + _RIDGE * np.eye(a.shape[1])
        grad = a.T @ (y - p) - _RIDGE * beta
        step = np.linalg.solve(hess, grad)
        beta = beta + step
        if np.max(np.abs(step)) < tol:
            break
    return beta


def _design(x: np.ndarray, t: np.ndarray | float) -> np.ndarray:
    n = x.shape[0]
    tcol = np.full((n, 1), t, dtype=np.float64) if np.isscalar(t) else np.asarray(t, float).reshape(-1, 1)
    return np.concatenate([x, tcol, np.ones((n, 1))], axis=1)


# ---------------------------------------------------------------------------
# estimators


@dataclass
class RegressionEstimator:
    """One linear/logistic model on [x, t]; counterfactuals by toggling t."""

    beta: np.ndarray
    binary: bool

    def predict_potential(self, x) -> tuple[np.ndarray, np.ndarray]:
        x = np.asarray(x, dtype=np.float64)
        out = []
        for t_val in (0.0, 1.0):
            u = _design(x, t_val) @ self.beta
            out.append(sigmoid(u) if self.binary else u)
        return out[0], out[1]


@dataclass
class TwoModelEstimator:
    """Separate per-arm models; effect is their prediction difference."""

    beta0: np.ndarray
    beta1: np.ndarray
    binary: bool

    def predict_potential(self, x) -> tuple[np.ndarray, np.ndarray]:
        x = np.asarray(x, dtype=np.float64)
        a = np.concatenate([x, np.ones((x.shape[0], 1))], axis=1)
        u0, u1 = a @ self.beta0, a @ self.beta1
        if self.binary:
            return sigmoid(u0), sigmoid(u1)
        return u0, u1


@dataclass
class KnnEstimator:
    """Per-arm k-nearest-neighbour matching on Euclidean feature distance.

    Distance ties break toward the lower training index (stable argsort), so
    predictions are fully deterministic.
    """

    k: int
    x_by_arm: dict[int, np.ndarray]
    y_by_arm: dict[int, np.ndarray]

    def _arm_mean(self, x: np.ndarray, arm: int) -> np.ndarray:
        ref = self.x_by_arm[arm]
        d2 = ((x[:, None, :] - ref[None, :, :]) ** 2).sum(axis=2)
        order = np.argsort(d2, axis=1, kind="stable")[:, : self.k]
        return self.y_by_arm[arm][order].mean(axis=1)

    def predict_potential(self, x) -> tuple[np.ndarray, np.ndarray]:
        x = np.asarray(x, dtype=np.float64)
        return self._arm_mean(x, 0), self._arm_mean(x, 1)


@dataclass
class CeganEstimator:
    """A trained model plus a frozen inference configuration."""

    model: CeganModel
    ite_config: IteConfig

    def predict_potential(self, x) -> tuple[np.ndarray, np.ndarray]:
        est = estimate_ite(self.model, x, self.ite_config, RngStream(self.ite_config.seed))
        return est.y0_hat[:, 0], est.y1_hat[:, 0]


def _outcome_vector(data: Dataset) -> np.ndarray:
    if data.schema.y_dim != 1:
        raise ConfigError("baseline estimators support a single outcome column")
    return data.y[:, 0]


def fit_lr1(train: Dataset, schema: DataSchema | None = None) -> RegressionEstimator:
    """Regression with treatment appended as a feature."""
    schema = schema or train.schema
    if len(train) == 0:
        raise ValueError("empty training set")
    y = _outcome_vector(train)
    a = _design(train.x, train.t)
    binary = schema.y_kinds[0] == KIND_BINARY
    beta = _solve_logistic(a, y) if binary else _solve_least_squares(a, y)
    return RegressionEstimator(beta, binary)


def fit_lr2(train: Dataset, schema: DataSchema | None = None) -> TwoModelEstimator:
    """Independently fitted per-arm regressions."""
    schema = schema or train.schema
    y = _outcome_vector(train)
    binary = schema.y_kinds[0] == KIND_BINARY
    betas = {}
    for arm in (0, 1):
        sel = train.t == arm
        if not sel.any():
            raise ValueError(f"treatment arm {arm} is empty")
        a = np.concatenate([train.x[sel], np.ones((int(sel.sum()), 1))], axis=1)
        betas[arm] = _solve_logistic(a, y[sel]) if binary else _solve_least_squares(a, y[sel])
    return TwoModelEstimator(betas[0], betas[1], binary)


def fit_knn(train: Dataset, k: int = 5) -> KnnEstimator:
    """Matching estimator over the k nearest same-arm training subjects."""
    if k < 1:
        raise ValueError("k must be >= 1")
    y = _outcome_vector(train)
    x_by_arm, y_by_arm = {}, {}
    for arm in (0, 1):
        sel = train.t == arm
        if sel.sum() < k:
            raise ValueError(f"treatment arm {arm} has {int(sel.sum())} subjects, need >= k={k}")
        x_by_arm[arm] = train.x[sel]
        y_by_arm[arm] = y[sel]
    return KnnEstimator(k, x_by_arm, y_by_arm)


def fit_cegan(train: Dataset, valid: Dataset, config: TrainConfig, ite_config: IteConfig | None = None) -> CeganEstimator:
    model, _ = fit(train, valid, config, mode=MODE_CEGAN)
    return CeganEstimator(model, ite_config or IteConfig())


def fit_cegan_lp(train: Dataset, valid: Dataset, config: TrainConfig, ite_config: IteConfig | None = None) -> CeganEstimator:
    """The prediction-loss-only ablation; inference path identical to cegan."""
    model, _ = fit(train, valid, config, mode=MODE_LP_ONLY)
    return CeganEstimator(model, ite_config or IteConfig())


# ---------------------------------------------------------------------------
# experiment loop


@dataclass
class EvalReport:
    """Per-method metric summaries plus the per-realization records."""

    methods: list[str]
    realizations: int
    records: dict = field(default_factory=dict)   # method -> split -> metric -> [values]
    failures: dict = field(default_factory=dict)  # method -> {realization: message}
    summary: dict = field(default_factory=dict)   # method -> split -> metric -> {mean, std}
    config_fingerprint: str = ""

    def finalize(self) -> None:
        self.summary = {}
        for method in self.methods:
            self.summary[method] = {}
            for split_name in SPLITS:
                self.summary[method][split_name] = {}
                for metric in METRICS:
                    vals = self.records[method][split_name][metric]
                    mean = float(np.mean(vals)) if vals else float("nan")
                    std = float(np.std(vals)) if vals else float("nan")
                    self.summary[method][split_name][metric] = {"mean": mean, "std": std}

    @property
    def warning_counts(self) -> dict[str, int]:
        return {m: len(self.failures.get(m, {})) for m in self.methods}

    def to_json_dict(self) -> dict:
        return {
            "methods": list(self.methods),
            "realizations": self.realizations,
            "config_fingerprint": self.config_fingerprint,
            "records": self.records,
            "failures": {m: {str(r): msg for r, msg in f.items()} for m, f in self.failures.items()},
            "warning_counts": self.warning_counts,
            "summary": self.summary,
        }

    def to_json(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_json_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")

    def to_csv(self, path) -> None:
        import csv

        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["method", "split", "metric", "mean", "std", "realizations"])
            for method in self.methods:
                for split_name in SPLITS:
                    for metric in METRICS:
                        cell = self.summary[method][split_name][metric]
                        n_ok = len(self.records[method][split_name][metric])
                        writer.writerow([method, split_name, metric, repr(cell["mean"]), repr(cell["std"]), n_ok])


def config_fingerprint(payload: dict) -> str:
    canon = json.dumps(payload, sort_keys=True, default=str)
    return hashlib.sha256(canon.encode("utf-8")).hexdigest()


@dataclass(frozen=True)
class FixedDataSource:
    """A user-supplied CSV used as-is; realizations only vary splits/seeds."""

    path: str
    schema: str
    seed: int = 0  # unused, keeps per-realization seed replacement uniform


def _generate(gen_config) -> Dataset:
    if isinstance(gen_config, ToyGenConfig):
        return generate_toy(gen_config)
    if isinstance(gen_config, TwinsLikeConfig):
        return generate_twins_like(gen_config)
    if isinstance(gen_config, FixedDataSource):
        return ingest_csv(gen_config.path, read_schema_sidecar(gen_config.schema))
    raise ConfigError(f"unsupported generator config {type(gen_config).__name__}")


def _fit_method(method, train, valid, train_config, ite_config, knn_k):
    if method == "cegan":
        return fit_cegan(train, valid, train_config, ite_config)
    if method == "cegan-lp":
        return fit_cegan_lp(train, valid, train_config, ite_config)
    if method == "lr1":
        return fit_lr1(train)
    if method == "lr2":
        return fit_lr2(train)
    if method == "knn":
        return fit_knn(train, knn_k)
    raise ConfigError(f"unknown method {method!r}")


def _run_realization(args) -> dict:
    gen_config, methods, seed, r, train_config, ite_config, knn_k = args
    data = _generate(replace(gen_config, seed=derive_seed(seed, r, 0)))
    if not data.has_ground_truth:
        raise ConfigError("experiment needs ground-truth potential outcomes")
    train, valid, test = split(data, seed=derive_seed(seed, r, 1))

    out: dict = {"realization": r, "results": {}, "errors": {}}
    for mi, method in enumerate(methods):
        try:
            tc = replace(train_config, seed=derive_seed(seed, r, 2, mi))
            ic = replace(ite_config, seed=derive_seed(seed, r, 3, mi))
            est = _fit_method(method, train, valid, tc, ic, knn_k)
            per_split = {}
            for split_name, part in (("in-sample", train), ("out-sample", test)):
                y0_hat, y1_hat = est.predict_potential(part.x)
                y1, y0 = part.y1[:, 0], part.y0[:, 0]
                per_split[split_name] = {
                    "sqrt_pehe": float(np.sqrt(pehe(y1, y0, y1_hat, y0_hat))),
                    "ate_error": ate_error(y1, y0, y1_hat, y0_hat),
                }
            out["results"][method] = per_split
        except Exception as err:  # noqa: BLE001 - a failing method must not kill the sweep
            out["errors"][method] = f"{type(err).__name__}: {err}"
    return out


def run_experiment(
    gen_config,
    methods,
    realizations: int,
    seed: int,
    train_config: TrainConfig | None = None,
    ite_config: IteConfig | None = None,
    knn_k: int = 5,
    jobs: int = 1,
) -> EvalReport:
    """Fit and score every method over R independent realizations.

    Each realization redraws the dataset, the splits and all method seeds
    from child streams of the master seed, so reports are byte-identical for
    a fixed seed regardless of the number of worker processes.
    """
    methods = list(methods)
    for m in methods:
        if m not in METHODS:
            raise ConfigError(f"unknown method {m!r}; choose from {METHODS}")
    if realizations < 1:
        raise ConfigError("realizations must be >= 1")
    train_config = train_config or TrainConfig()
    ite_config = ite_config or IteConfig()

    tasks = [(gen_config, methods, seed, r, train_config, ite_config, knn_k) for r in range(realizations)]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            raw = list(pool.map(_run_realization, tasks))
    else:
        raw = [_run_realization(t) for t in tasks]
    raw.sort(key=lambda rec: rec["realization"])

    report = EvalReport(methods=methods, realizations=realizations)
    report.records = {m: {s: {metric: [] for metric in METRICS} for s in SPLITS} for m in methods}
    report.failures = {}
    for rec in raw:
        for method in methods:
            if method in rec["errors"]:
                report.failures.setdefault(method, {})[rec["realization"]] = rec["errors"][method]
                continue
            for split_name in SPLITS:
                for metric in METRICS:
                    report.records[method][split_name][metric].append(rec["results"][method][split_name][metric])
    report.config_fingerprint = config_fingerprint(
        {
            "generator": {"type": type(gen_config).__name__, **asdict(gen_config)},
            "methods": methods,
            "realizations": realizations,
            "seed": seed,
            "train": asdict(train_config),
            "inference": asdict(ite_config),
            "knn_k": knn_k,
        }
    )
    report.finalize()
    return report
