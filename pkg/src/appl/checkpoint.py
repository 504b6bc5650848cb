"""Versioned JSON checkpoints for encoder and PCN parameters."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from ._jsonio import dumps
from .exceptions import CheckpointError
from .models import EncoderParams, PcnParams

FORMAT_VERSION = 1


def checkpoint_dict(encoder: EncoderParams, pcn: PcnParams, config_hash: str) -> dict:
    return {
        "format_version": FORMAT_VERSION,
        "config_hash": config_hash,
        "encoder": [
            {"rows": w.shape[0], "cols": w.shape[1], "weight": w.ravel(), "bias": b}
            for w, b in zip(encoder.weights, encoder.biases)
        ],
        "pcn": {
            "k_in": pcn.k_in,
            "d": pcn.dim,
            "weight": pcn.weight.ravel(),
            "bias": pcn.bias,
        },
    }


def save_checkpoint(path, encoder: EncoderParams, pcn: PcnParams, config_hash: str) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(dumps(checkpoint_dict(encoder, pcn, config_hash)) + "\n")
    return path


def _array(values, length, what):
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim != 1 or arr.size != length:
        raise CheckpointError(f"{what}: expected {length} values, found {arr.size}")
    return arr


def parse_checkpoint(text: str):
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise CheckpointError(f"checkpoint parse error: {exc}") from None
    if not isinstance(raw, dict):
        raise CheckpointError("checkpoint parse error: top level is not an object")
    version = raw.get("format_version")
    if version != FORMAT_VERSION:
        raise CheckpointError(
            f"checkpoint format_version {version!r} is not supported (expected {FORMAT_VERSION})")
    try:
        weights, biases = [], []
        for i, layer in enumerate(raw["encoder"]):
            rows, cols = int(layer["rows"]), int(layer["cols"])
            weights.append(_array(layer["weight"], rows * cols,
                                  f"encoder layer {i} weight").reshape(rows, cols))
            biases.append(_array(layer["bias"], cols, f"encoder layer {i} bias"))
        for i in range(1, len(weights)):
            if weights[i].shape[0] != weights[i - 1].shape[1]:
                raise CheckpointError(f"encoder layer {i} does not chain with layer {i - 1}")
        p = raw["pcn"]
        k_in, d = int(p["k_in"]), int(p["d"])
        pcn_w = _array(p["weight"], k_in * d * d, "PCN weight").reshape(k_in * d, d)
        pcn_b = None if p["bias"] is None else _array(p["bias"], d, "PCN bias")
        config_hash = str(raw["config_hash"])
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, CheckpointError):
            raise
        raise CheckpointError(f"checkpoint parse error: {exc!r}") from None
    if not weights:
        raise CheckpointError("checkpoint has no encoder layers")
    encoder = EncoderParams(weights, biases)
    if encoder.output_dim != d:
        raise CheckpointError(f"PCN dimension {d} does not match encoder output {encoder.output_dim}")
    return encoder, PcnParams(pcn_w, pcn_b, k_in), config_hash


def load_checkpoint(path):
    """Return ``(encoder, pcn, config_hash)`` from a checkpoint file."""
    return parse_checkpoint(Path(path).read_text())


def check_compatible(encoder: EncoderParams, pcn: PcnParams, *, input_dim: int,
                     k_shot: int, clustering: bool, n_clusters: int) -> None:
    """Raise if a checkpoint cannot serve episodes with the given shape."""
    if encoder.input_dim != input_dim:
        raise CheckpointError(
            f"encoder expects input_dim {encoder.input_dim}, run uses {input_dim}")
    if k_shot == pcn.k_in:
        return
    if not clustering:
        raise CheckpointError(
            f"PCN accepts k_in={pcn.k_in} concatenated embeddings but episodes have "
            f"K={k_shot} shots; enable clustering or use a matching checkpoint")
    if k_shot < n_clusters:
        raise CheckpointError(f"cannot cluster K={k_shot} shots into {n_clusters} centroids")
    if n_clusters != pcn.k_in:
        raise CheckpointError(
            f"PCN accepts k_in={pcn.k_in} but clustering produces {n_clusters} centroids")
