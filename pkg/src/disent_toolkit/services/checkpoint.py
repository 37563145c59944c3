"""Binary checkpoint files.

Layout: an 8-byte little-endian header length, a JSON header with sorted keys,
then raw little-endian float64 blobs in manifest order. The header carries the
step, the resolved config, the model spec, optimizer hyperparameters and any
extra training state (rng, epoch position, plateau state). Saving a loaded
checkpoint reproduces the file byte for byte.
"""

from __future__ import annotations

import json
import logging
import os
import struct
from collections.abc import Mapping
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from disent_toolkit.autodiff import Tensor
from disent_toolkit.errors import ConfigError, ShapeError
from disent_toolkit.models.schemas import ModelSpec
from disent_toolkit.nn.network import Network, build_model
from disent_toolkit.nn.optim import AdamState

logger = logging.getLogger(__name__)

FORMAT = "disent-toolkit-checkpoint"
VERSION = 1
_LENGTH = struct.Struct("<Q")
_FLOAT = np.dtype("<f8")


@dataclass
class Checkpoint:
    """In-memory checkpoint: named float64 arrays plus JSON-serializable metadata."""

    step: int
    model_spec: ModelSpec
    config: dict[str, Any] = field(default_factory=dict)
    arrays: dict[str, np.ndarray] = field(default_factory=dict)
    optimizers: dict[str, dict[str, float]] = field(default_factory=dict)
    extra: dict[str, Any] = field(default_factory=dict)

    def add_params(self, prefix: str, params: Mapping[str, Tensor]) -> None:
        for name, param in params.items():
            self.arrays[f"{prefix}/{name}"] = param.data

    def add_optimizer(self, name: str, state: AdamState) -> None:
        self.optimizers[name] = {**state.hyperparameters(), "t": state.t}
        for param_name in state.m:
            self.arrays[f"adam.{name}.m/{param_name}"] = state.m[param_name]
            self.arrays[f"adam.{name}.v/{param_name}"] = state.v[param_name]

    def restore_params(self, prefix: str, params: Mapping[str, Tensor]) -> None:
        """Copy stored arrays into ``params``.

        Raises:
            ShapeError: If a parameter is missing or stored with another shape.
        """
        for name, param in params.items():
            key = f"{prefix}/{name}"
            if key not in self.arrays:
                raise ShapeError(f"checkpoint has no array for {key}")
            stored = self.arrays[key]
            if stored.shape != param.shape:
                raise ShapeError(f"checkpoint array {key} has shape {stored.shape}, expected {param.shape}")
            param.data = stored.astype(np.float64, copy=True)
            param.grad = None

    def restore_optimizer(self, name: str, state: AdamState) -> None:
        meta = self.optimizers.get(name)
        if meta is None:
            raise ConfigError(f"checkpoint has no optimizer state {name!r}")
        state.lr = float(meta["lr"])
        state.beta1 = float(meta["beta1"])
        state.beta2 = float(meta["beta2"])
        state.eps = float(meta["eps"])
        state.t = int(meta["t"])
        for param_name in state.m:
            for moment, target in (("m", state.m), ("v", state.v)):
                key = f"adam.{name}.{moment}/{param_name}"
                if key not in self.arrays:
                    raise ShapeError(f"checkpoint has no array for {key}")
                target[param_name] = self.arrays[key].astype(np.float64, copy=True)


def _header(checkpoint: Checkpoint) -> tuple[bytes, list[np.ndarray]]:
    manifest = []
    blobs = []
    offset = 0
    for name, array in checkpoint.arrays.items():
        blob = np.ascontiguousarray(array, dtype=_FLOAT)
        manifest.append({"name": name, "shape": list(blob.shape), "offset": offset, "nbytes": blob.nbytes})
        offset += blob.nbytes
        blobs.append(blob)
    header = {
        "format": FORMAT,
        "version": VERSION,
        "step": checkpoint.step,
        "model_spec": checkpoint.model_spec.model_dump(mode="json"),
        "config": checkpoint.config,
        "optimizers": checkpoint.optimizers,
        "extra": checkpoint.extra,
        "manifest": manifest,
    }
    encoded = json.dumps(header, sort_keys=True, separators=(",", ":"), allow_nan=False).encode("utf-8")
    return encoded, blobs


def save_checkpoint(path: Path, checkpoint: Checkpoint) -> Path:
    """Write ``checkpoint`` atomically (temp file then rename)."""
    header, blobs = _header(checkpoint)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    with tmp.open("wb") as handle:
        handle.write(_LENGTH.pack(len(header)))
        handle.write(header)
        for blob in blobs:
            handle.write(blob.tobytes())
    os.replace(tmp, path)
    logger.info("Saved checkpoint %s (step %d, %d arrays)", path, checkpoint.step, len(blobs))
    return path


def load_checkpoint(path: Path) -> Checkpoint:
    """Read a checkpoint written by :func:`save_checkpoint`.

    Raises:
        ConfigError: If the file is missing, truncated or not a checkpoint.
    """
    if not path.is_file():
        raise ConfigError(f"checkpoint not found: {path}")
    raw = path.read_bytes()
    if len(raw) < _LENGTH.size:
        raise ConfigError(f"{path} is truncated")
    (length,) = _LENGTH.unpack_from(raw)
    try:
        header = json.loads(raw[_LENGTH.size : _LENGTH.size + length])
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ConfigError(f"{path} has an unreadable header: {exc}") from exc
    if header.get("format") != FORMAT:
        raise ConfigError(f"{path} is not a {FORMAT} file")
    if header.get("version") != VERSION:
        raise ConfigError(f"{path} has unsupported version {header.get('version')}")

    base = _LENGTH.size + length
    arrays: dict[str, np.ndarray] = {}
    for entry in header["manifest"]:
        start = base + entry["offset"]
        chunk = raw[start : start + entry["nbytes"]]
        if len(chunk) != entry["nbytes"]:
            raise ConfigError(f"{path} is truncated inside array {entry['name']}")
        arrays[entry["name"]] = np.frombuffer(chunk, dtype=_FLOAT).reshape(entry["shape"]).copy()

    return Checkpoint(
        step=header["step"],
        model_spec=ModelSpec.model_validate(header["model_spec"]),
        config=header["config"],
        arrays=arrays,
        optimizers=header["optimizers"],
        extra=header["extra"],
    )


def network_from_checkpoint(checkpoint: Checkpoint) -> Network:
    """Rebuild the encoder/decoder stored in ``checkpoint``."""
    network = build_model(checkpoint.model_spec, seed=0)
    checkpoint.restore_params("model", network.parameters())
    return network
