"""Self-describing model checkpoints.

Layout: a magic line, an 8-byte little-endian header length, a JSON header
(schema, subnetwork specs, noise dims, Adam step counters, training-config
fingerprint, array manifest), then the raw little-endian float64 tensor
bytes in manifest order. No timestamps, so identical models serialize to
identical bytes.
"""

from __future__ import annotations

import json
import struct

import numpy as np

from .exceptions import SchemaError
from .mlp import MlpSpec, NetworkParams
from .model import PARAM_GROUPS, CeganModel, DataSchema

_MAGIC = b"CEGANCKPT1\n"
_TENSOR_FIELDS = ("weights", "biases", "adam_m_w", "adam_v_w", "adam_m_b", "adam_v_b")


def _spec_doc(spec: MlpSpec) -> dict:
    return {
        "input_dim": spec.input_dim,
        "hidden_dims": list(spec.hidden_dims),
        "output_dim": spec.output_dim,
        "output_activation": spec.output_activation,
        "dropout": spec.dropout,
    }


def save_model(model: CeganModel, path, fingerprint: dict | None = None) -> None:
    manifest = []
    blobs = []
    for group in PARAM_GROUPS:
        params = model.params(group)
        for fieldname in _TENSOR_FIELDS:
            for i, arr in enumerate(getattr(params, fieldname)):
                manifest.append({"name": f"{group}/{fieldname}/{i}", "shape": list(arr.shape)})
                blobs.append(np.ascontiguousarray(arr, dtype="<f8").tobytes())

    header = {
        "schema": {"x_kinds": list(model.schema.x_kinds), "y_kinds": list(model.schema.y_kinds)},
        "latent_dim": model.latent_dim,
        "noise_dims": [model.noise_dim_e, model.noise_dim_i, model.noise_dim_p],
        "alpha": model.alpha,
        "specs": {g: _spec_doc(model.spec_of(g)) for g in PARAM_GROUPS},
        "adam_t": {g: model.params(g).adam_t for g in PARAM_GROUPS},
        "fingerprint": fingerprint or {},
        "arrays": manifest,
    }
    header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")

    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<Q", len(header_bytes)))
        fh.write(header_bytes)
        for blob in blobs:
            fh.write(blob)


def load_model(path, expect_schema: DataSchema | None = None) -> tuple[CeganModel, dict]:
    """Load a checkpoint; reject it if its schema disagrees with the data."""
    with open(path, "rb") as fh:
        magic = fh.read(len(_MAGIC))
        if magic != _MAGIC:
            raise SchemaError(f"{path}: not a model checkpoint")
        (header_len,) = struct.unpack("<Q", fh.read(8))
        header = json.loads(fh.read(header_len).decode("utf-8"))
        schema = DataSchema(tuple(header["schema"]["x_kinds"]), tuple(header["schema"]["y_kinds"]))
        if expect_schema is not None and schema != expect_schema:
            raise SchemaError(
                "checkpoint schema disagrees with the dataset: "
                f"{schema} vs {expect_schema}"
            )

        tensors = {}
        for entry in header["arrays"]:
            shape = tuple(entry["shape"])
            count = int(np.prod(shape)) if shape else 1
            buf = fh.read(count * 8)
            if len(buf) != count * 8:
                raise SchemaError(f"{path}: truncated tensor {entry['name']}")
            tensors[entry["name"]] = np.frombuffer(buf, dtype="<f8").astype(np.float64).reshape(shape)

    def rebuild(group: str) -> NetworkParams:
        spec = header["specs"][group]
        n_layers = len(spec["hidden_dims"]) + 1
        fields = {}
        for fieldname in _TENSOR_FIELDS:
            fields[fieldname] = [tensors[f"{group}/{fieldname}/{i}"] for i in range(n_layers)]
        return NetworkParams(
            fields["weights"], fields["biases"],
            fields["adam_m_w"], fields["adam_v_w"],
            fields["adam_m_b"], fields["adam_v_b"],
            adam_t=header["adam_t"][group],
        )

    def spec_of(group: str) -> MlpSpec:
        doc = header["specs"][group]
        return MlpSpec(
            doc["input_dim"], tuple(doc["hidden_dims"]), doc["output_dim"],
            doc["output_activation"], doc["dropout"],
        )

    ne, ni, np_ = header["noise_dims"]
    model = CeganModel(
        schema=schema,
        latent_dim=header["latent_dim"],
        noise_dim_e=ne,
        noise_dim_i=ni,
        noise_dim_p=np_,
        alpha=header["alpha"],
        encoder_spec=spec_of("encoder"),
        encoder=rebuild("encoder"),
        inference_spec=spec_of("inference_net"),
        inference_net=rebuild("inference_net"),
        predictor_spec=spec_of("predictor"),
        predictor=rebuild("predictor"),
        reconstructor_spec=spec_of("reconstructor"),
        reconstructor=rebuild("reconstructor"),
        discriminator_spec=spec_of("discriminator"),
        discriminator=rebuild("discriminator"),
        propensity_spec=spec_of("propensity_net"),
        propensity_net=rebuild("propensity_net"),
    )
    return model, header["fingerprint"]
