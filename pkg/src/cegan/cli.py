"""Command-line entry point.

Subcommands: ``generate``, ``train``, ``ite``, ``experiment``,
``gradcheck``. All work is driven by one declarative config document
(YAML or JSON); unknown keys anywhere in the document are rejected before
any work starts. Outputs are byte-identical for identical config+seed.

Exit codes: 0 success, 1 validation error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from dataclasses import dataclass
from pathlib import Path

import yaml

from .adam import AdamConfig
from .checkpoint import load_model, save_model
from .datagen import (
    Dataset,
    ToyGenConfig,
    TwinsLikeConfig,
    export_csv,
    generate_toy,
    generate_twins_like,
    ingest_csv,
    read_schema_sidecar,
    split,
    write_schema_sidecar,
)
from .evaluation import METHODS, FixedDataSource, run_experiment
from .exceptions import CeganError, ConfigError, SchemaError
from .gradcheck import TOLERANCE, run_gradcheck, summarize
from .inference import IteConfig, estimate_ite, export_ite_csv
from .rng import RngStream
from .training import MODE_CEGAN, TrainConfig, fit

_TOP_KEYS = {"seed", "output_dir", "generator", "split", "train", "inference", "eval"}
_SWEEPABLE = {"toy": "zeta", "twins-like": "flip_prob"}


def _check_keys(doc: dict, allowed: set[str], where: str) -> None:
    unknown = set(doc) - allowed
    if unknown:
        raise ConfigError(f"unknown key(s) in {where}: {sorted(unknown)}")


def _load_doc(path: str) -> dict:
    try:
        with open(path, encoding="utf-8") as fh:
            doc = yaml.safe_load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except yaml.YAMLError as err:
        raise ConfigError(f"cannot parse {path}: {err}") from None
    if not isinstance(doc, dict):
        raise ConfigError(f"{path}: config document must be a mapping")
    _check_keys(doc, _TOP_KEYS, "config")
    return doc


@dataclass
class GeneratorSection:
    kind: str                      # "toy" | "twins-like" | "csv"
    base: object                   # ToyGenConfig | TwinsLikeConfig | FixedDataSource
    sweep_field: str | None = None
    sweep_values: tuple | None = None

    def points(self):
        """(label, config) pairs; a single (None, base) without a sweep."""
        if self.sweep_field is None:
            return [(None, self.base)]
        return [
            (v, dataclasses.replace(self.base, **{self.sweep_field: v}))
            for v in self.sweep_values
        ]


def _dataclass_from(section: dict, cls, where: str, **overrides):
    allowed = {f.name for f in dataclasses.fields(cls)}
    _check_keys(section, allowed, where)
    merged = {**section, **overrides}
    for f in dataclasses.fields(cls):
        if f.name in merged and isinstance(merged[f.name], list) and f.name in ("hidden_dims", "noise_dims"):
            merged[f.name] = tuple(merged[f.name])
    try:
        return cls(**merged)
    except (TypeError, ValueError) as err:
        raise ConfigError(f"{where}: {err}") from None


def parse_generator(section: dict, default_seed: int) -> GeneratorSection:
    if not isinstance(section, dict) or "type" not in section:
        raise ConfigError("generator section must be a mapping with a 'type' key")
    kind = section["type"]
    body = {k: v for k, v in section.items() if k != "type"}

    if kind == "csv":
        _check_keys(body, {"path", "schema"}, "generator(csv)")
        if "path" not in body or "schema" not in body:
            raise ConfigError("csv generator needs 'path' and 'schema'")
        for key in ("path", "schema"):
            if not Path(body[key]).exists():
                raise ConfigError(f"generator.{key} does not exist: {body[key]}")
        return GeneratorSection("csv", FixedDataSource(body["path"], body["schema"]))

    if kind not in ("toy", "twins-like"):
        raise ConfigError(f"unknown generator type {kind!r}")
    cls = ToyGenConfig if kind == "toy" else TwinsLikeConfig
    sweep_field = _SWEEPABLE[kind]
    sweep_values = None
    if isinstance(body.get(sweep_field), list):
        sweep_values = tuple(body.pop(sweep_field))
        if not sweep_values:
            raise ConfigError(f"generator sweep over {sweep_field!r} must be non-empty")
    body.setdefault("seed", default_seed)
    base = _dataclass_from(body, cls, f"generator({kind})")
    return GeneratorSection(kind, base, sweep_field if sweep_values else None, sweep_values)


def parse_train(section: dict, default_seed: int) -> TrainConfig:
    section = dict(section or {})
    adam_doc = section.pop("adam", {})
    adam = _dataclass_from(adam_doc, AdamConfig, "train.adam")
    section.setdefault("seed", default_seed)
    return _dataclass_from(section, TrainConfig, "train", adam=adam)


def parse_inference(section: dict, default_seed: int) -> tuple[IteConfig, str | None]:
    section = dict(section or {})
    checkpoint = section.pop("checkpoint", None)
    section.setdefault("seed", default_seed)
    return _dataclass_from(section, IteConfig, "inference"), checkpoint


def parse_eval(section: dict) -> tuple[list[str], int, int]:
    section = dict(section or {})
    _check_keys(section, {"methods", "realizations", "knn_k"}, "eval")
    methods = section.get("methods", list(METHODS))
    realizations = int(section.get("realizations", 1))
    knn_k = int(section.get("knn_k", 5))
    return methods, realizations, knn_k


@dataclass
class ExperimentConfig:
    """A parsed, fully validated experiment document."""

    seed: int
    output_dir: str | None
    generator: GeneratorSection | None
    split_fractions: tuple[float, float, float]
    train: TrainConfig
    inference: IteConfig
    checkpoint: str | None
    methods: list[str]
    realizations: int
    knn_k: int
    raw_doc: dict


def load_config(path: str, seed_override: int | None = None) -> ExperimentConfig:
    doc = _load_doc(path)
    seed = int(doc.get("seed", 0)) if seed_override is None else int(seed_override)

    split_doc = dict(doc.get("split") or {})
    _check_keys(split_doc, {"fractions"}, "split")
    fractions = tuple(split_doc.get("fractions", (0.64, 0.16, 0.20)))
    if len(fractions) != 3:
        raise ConfigError("split.fractions must have three entries")

    generator = parse_generator(doc["generator"], seed) if "generator" in doc else None
    train_cfg = parse_train(doc.get("train", {}), seed)
    ite_cfg, checkpoint = parse_inference(doc.get("inference", {}), seed)
    methods, realizations, knn_k = parse_eval(doc.get("eval", {}))
    return ExperimentConfig(
        seed=seed,
        output_dir=doc.get("output_dir"),
        generator=generator,
        split_fractions=fractions,  # type: ignore[arg-type]
        train=train_cfg,
        inference=ite_cfg,
        checkpoint=checkpoint,
        methods=methods,
        realizations=realizations,
        knn_k=knn_k,
        raw_doc=doc,
    )


def _materialize(gen: GeneratorSection) -> Dataset:
    if gen.kind == "toy":
        return generate_toy(gen.base)
    if gen.kind == "twins-like":
        return generate_twins_like(gen.base)
    source: FixedDataSource = gen.base
    return ingest_csv(source.path, read_schema_sidecar(source.schema))


def _require_generator(cfg: ExperimentConfig) -> GeneratorSection:
    if cfg.generator is None:
        raise ConfigError("this command needs a 'generator' section")
    return cfg.generator


def _out_dir(cfg: ExperimentConfig, override: str | None) -> Path:
    out = override or cfg.output_dir or "."
    path = Path(out)
    path.mkdir(parents=True, exist_ok=True)
    return path


# ---------------------------------------------------------------------------
# commands


def cmd_generate(cfg: ExperimentConfig, out: str | None) -> int:
    gen = _require_generator(cfg)
    if gen.sweep_field is not None:
        raise ConfigError("generate does not accept a sweep; give a single value")
    data = _materialize(gen)
    out_dir = _out_dir(cfg, out)
    export_csv(data, out_dir / "data.csv")
    write_schema_sidecar(data.schema, out_dir / "schema.json")
    print(f"wrote {out_dir / 'data.csv'} ({len(data)} rows) and schema sidecar")
    return 0


def cmd_train(cfg: ExperimentConfig, out: str | None) -> int:
    gen = _require_generator(cfg)
    if gen.sweep_field is not None:
        raise ConfigError("train does not accept a sweep; give a single value")
    data = _materialize(gen)
    train_set, valid_set, _ = split(data, cfg.split_fractions, seed=cfg.seed)
    model, trace = fit(train_set, valid_set, cfg.train, mode=MODE_CEGAN)
    out_dir = _out_dir(cfg, out)
    fingerprint = {"config_sha256": _doc_sha(cfg.raw_doc, cfg.seed)}
    save_model(model, out_dir / "model.ckpt", fingerprint)
    trace.to_csv(out_dir / "trace.csv")
    print(
        f"trained {len(trace.iterations)} iterations; "
        f"best val L_P {trace.best_val_l_p:.6g} at iter {trace.best_iteration}; "
        f"wrote {out_dir / 'model.ckpt'} and trace.csv"
    )
    return 0


def cmd_ite(cfg: ExperimentConfig, out: str | None) -> int:
    gen = _require_generator(cfg)
    if cfg.checkpoint is None:
        raise ConfigError("ite needs inference.checkpoint pointing at a trained model")
    if not Path(cfg.checkpoint).exists():
        raise ConfigError(f"inference.checkpoint does not exist: {cfg.checkpoint}")
    data = _materialize(gen)
    model, _ = load_model(cfg.checkpoint, expect_schema=data.schema)
    estimate = estimate_ite(model, data.x, cfg.inference, RngStream(cfg.inference.seed))
    out_dir = _out_dir(cfg, out)
    export_ite_csv(estimate, out_dir / "ite.csv")
    print(f"wrote {out_dir / 'ite.csv'} ({len(data)} subjects)")
    return 0


def _doc_sha(doc: dict, seed: int) -> str:
    import hashlib

    payload = json.dumps({"doc": doc, "seed": seed}, sort_keys=True, default=str)
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()


def _sweep_figure(points, methods, path) -> None:
    """Static SVG: mean out-of-sample root-PEHE vs the sweep value."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    plt.rcParams["svg.hashsalt"] = "cegan"
    fig, ax = plt.subplots(figsize=(6, 4))
    xs = [value for value, _ in points]
    for method in methods:
        ys = [rep.summary[method]["out-sample"]["sqrt_pehe"]["mean"] for _, rep in points]
        ax.plot(xs, ys, marker="o", label=method)
    ax.set_xlabel("proxy noise")
    ax.set_ylabel("out-of-sample sqrt PEHE")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)


def cmd_experiment(cfg: ExperimentConfig, out: str | None, jobs: int) -> int:
    gen = _require_generator(cfg)
    out_dir = _out_dir(cfg, out)
    points = []
    for value, gen_config in gen.points():
        report = run_experiment(
            gen_config,
            cfg.methods,
            cfg.realizations,
            seed=cfg.seed,
            train_config=cfg.train,
            ite_config=cfg.inference,
            knn_k=cfg.knn_k,
            jobs=jobs,
        )
        points.append((value, report))
        for method, count in report.warning_counts.items():
            if count:
                print(f"warning: {method} failed in {count}/{cfg.realizations} realizations", file=sys.stderr)

    if gen.sweep_field is None:
        report = points[0][1]
        report.to_json(out_dir / "report.json")
        report.to_csv(out_dir / "report.csv")
    else:
        doc = {
            "sweep_field": gen.sweep_field,
            "points": [{"value": v, **rep.to_json_dict()} for v, rep in points],
        }
        with open(out_dir / "report.json", "w", encoding="utf-8") as fh:
            json.dump(doc, fh, indent=2, sort_keys=True)
            fh.write("\n")
        import csv as _csv

        with open(out_dir / "report.csv", "w", newline="", encoding="utf-8") as fh:
            writer = _csv.writer(fh, lineterminator="\n")
            writer.writerow([gen.sweep_field, "method", "split", "metric", "mean", "std", "realizations"])
            for value, rep in points:
                for method in rep.methods:
                    for split_name in ("in-sample", "out-sample"):
                        for metric in ("sqrt_pehe", "ate_error"):
                            cell = rep.summary[method][split_name][metric]
                            n_ok = len(rep.records[method][split_name][metric])
                            writer.writerow(
                                [value, method, split_name, metric, repr(cell["mean"]), repr(cell["std"]), n_ok]
                            )
        _sweep_figure(points, cfg.methods, out_dir / "sweep.svg")
    print(f"wrote {out_dir / 'report.json'} and report.csv")
    return 0


def cmd_gradcheck(seed: int) -> int:
    ok, results = run_gradcheck(seed=seed)
    print(summarize(results))
    if not ok:
        failing = sorted({f"{r.loss}/{r.group}" for r in results if not r.passed})
        print(f"FAILED (tolerance {TOLERANCE:g}): {', '.join(failing)}", file=sys.stderr)
        return 2
    print(f"all gradient checks under tolerance {TOLERANCE:g}")
    return 0


# ---------------------------------------------------------------------------


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="cegan", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, help_text, needs_config=True):
        p = sub.add_parser(name, help=help_text)
        if needs_config:
            p.add_argument("--config", required=True, help="experiment config document (YAML/JSON)")
        p.add_argument("--seed", type=int, default=None, help="override the config seed")
        p.add_argument("--out", default=None, help="output directory")
        return p

    add("generate", "write a dataset CSV and its schema sidecar")
    add("train", "train a model and write checkpoint + trace")
    add("ite", "batch ITE export from a trained checkpoint")
    p_exp = add("experiment", "multi-realization evaluation (optionally a noise sweep)")
    p_exp.add_argument("--jobs", type=int, default=1, help="concurrent realizations")
    p_grad = sub.add_parser("gradcheck", help="finite-difference gradient verification")
    p_grad.add_argument("--seed", type=int, default=7)

    args = parser.parse_args(argv)
    try:
        if args.command == "gradcheck":
            return cmd_gradcheck(args.seed)
        cfg = load_config(args.config, args.seed)
        if args.command == "generate":
            return cmd_generate(cfg, args.out)
        if args.command == "train":
            return cmd_train(cfg, args.out)
        if args.command == "ite":
            return cmd_ite(cfg, args.out)
        if args.command == "experiment":
            return cmd_experiment(cfg, args.out, args.jobs)
        raise ConfigError(f"unknown command {args.command!r}")
    except (ConfigError, SchemaError, FileNotFoundError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 1
    except CeganError as err:
        print(f"runtime failure: {err}", file=sys.stderr)
        return 2
    except OSError as err:
        print(f"runtime failure: {err}", file=sys.stderr)
        return 2


def entrypoint() -> None:  # console-script shim
    sys.exit(main())


if __name__ == "__main__":
    sys.exit(main())
