"""Binary containers for models and feature matrices, plus JSON export.

Both formats are little-endian with a fixed header and a float64 payload, so
a given model or feature matrix always serializes to the same bytes.

Model container ("HGLM", version 1)::

    magic     4 bytes  b"HGLM"
    version   u32
    K, D, L_t, L_w     u32 each
    n_angles  u32      output layout: leading angle coordinates
    has_shift u32      1 if the observed output ends with a 2-d box shift
    then per component k = 0..K-1, contiguous float64, row-major:
        c_k (L), Gamma_k (L*L), pi_k (1), A_k (D*L), b_k (D),
        diag(Sigma_k) (D)

Feature container ("HGFX", version 1)::

    magic 4 bytes b"HGFX", version u32, N u32, D u32, then N*D float64.
"""
from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .errors import ContractError, DataError, HgllimError
from .model import InverseModel, LatentSpec, OutputLayout

__all__ = ["save_model", "load_model", "save_features", "load_features",
           "model_to_json_dict", "save_model_json", "MODEL_MAGIC",
           "FEATURE_MAGIC", "CONTAINER_VERSION"]

MODEL_MAGIC = b"HGLM"
FEATURE_MAGIC = b"HGFX"
CONTAINER_VERSION = 1

_MODEL_HEADER = struct.Struct("<4sIIIIIII")
_FEATURE_HEADER = struct.Struct("<4sIII")
_F8 = np.dtype("<f8")


def _default_layout(model: InverseModel) -> OutputLayout:
    return OutputLayout(n_angles=model.latent.observed_dim, has_shift=False)


def _check_layout(model: InverseModel, layout: OutputLayout) -> OutputLayout:
    if layout.observed_dim != model.latent.observed_dim:
        raise ContractError(
            f"layout covers {layout.observed_dim} observed coordinates but "
            f"the model has {model.latent.observed_dim}")
    return layout


def save_model(path, model: InverseModel,
               layout: OutputLayout | None = None) -> None:
    """Write a model (and its output layout) to an HGLM file."""
    layout = _check_layout(model, layout or _default_layout(model))
    k = model.n_components
    d = model.feature_dim
    lt = model.latent.observed_dim
    lw = model.latent.latent_dim
    parts = [_MODEL_HEADER.pack(MODEL_MAGIC, CONTAINER_VERSION, k, d, lt, lw,
                                layout.n_angles, int(layout.has_shift))]
    for i in range(k):
        for arr in (model.means[i], model.covariances[i],
                    np.asarray([model.priors[i]]), model.maps[i],
                    model.offsets[i], model.noise_vars[i]):
            parts.append(np.ascontiguousarray(arr, dtype=_F8).tobytes())
    Path(path).write_bytes(b"".join(parts))


def load_model(path) -> tuple[InverseModel, OutputLayout]:
    """Read an HGLM file back into a validated model and its layout."""
    data = Path(path).read_bytes()
    if len(data) < _MODEL_HEADER.size:
        raise DataError(f"{path}: file shorter than the {_MODEL_HEADER.size}"
                        f"-byte header")
    magic, version, k, d, lt, lw, n_angles, has_shift = \
        _MODEL_HEADER.unpack_from(data, 0)
    if magic != MODEL_MAGIC:
        raise DataError(f"{path}: bad magic {magic!r} at offset 0, expected "
                        f"{MODEL_MAGIC!r}")
    if version != CONTAINER_VERSION:
        raise DataError(f"{path}: unsupported container version {version}")
    low = lt + lw
    per_component = low + low * low + 1 + d * low + d + d
    expected = _MODEL_HEADER.size + k * per_component * 8
    if len(data) != expected:
        raise DataError(f"{path}: payload is {len(data)} bytes, expected "
                        f"{expected} for K={k}, D={d}, L={low}")
    values = np.frombuffer(data, dtype=_F8, offset=_MODEL_HEADER.size)
    if not np.all(np.isfinite(values)):
        bad = int(np.flatnonzero(~np.isfinite(values))[0])
        raise DataError(f"{path}: non-finite value at float offset {bad}")
    priors = np.empty(k)
    means = np.empty((k, low))
    covariances = np.empty((k, low, low))
    maps = np.empty((k, d, low))
    offsets = np.empty((k, d))
    noise_vars = np.empty((k, d))
    pos = 0

    def take(count):
        nonlocal pos
        out = values[pos:pos + count]
        pos += count
        return out

    for i in range(k):
        means[i] = take(low)
        covariances[i] = take(low * low).reshape(low, low)
        priors[i] = take(1)[0]
        maps[i] = take(d * low).reshape(d, low)
        offsets[i] = take(d)
        noise_vars[i] = take(d)
    try:
        model = InverseModel(priors=priors, means=means,
                             covariances=covariances, maps=maps,
                             offsets=offsets, noise_vars=noise_vars,
                             latent=LatentSpec(lt, lw))
        layout = OutputLayout(n_angles=n_angles, has_shift=bool(has_shift))
        _check_layout(model, layout)
    except HgllimError as exc:
        raise DataError(f"{path}: invalid model payload: {exc}") from exc
    return model, layout


def save_features(path, features: np.ndarray) -> None:
    """Write a feature matrix (one row per sample) to an HGFX file."""
    arr = np.ascontiguousarray(features, dtype=_F8)
    if arr.ndim != 2:
        raise ContractError("feature matrix must be 2-dimensional")
    if not np.all(np.isfinite(arr)):
        raise ContractError("feature matrix contains non-finite values")
    header = _FEATURE_HEADER.pack(FEATURE_MAGIC, CONTAINER_VERSION,
                                  arr.shape[0], arr.shape[1])
    Path(path).write_bytes(header + arr.tobytes())


def load_features(path) -> np.ndarray:
    """Read an HGFX file back into an (N, D) float64 array."""
    data = Path(path).read_bytes()
    if len(data) < _FEATURE_HEADER.size:
        raise DataError(f"{path}: file shorter than the "
                        f"{_FEATURE_HEADER.size}-byte header")
    magic, version, n, d = _FEATURE_HEADER.unpack_from(data, 0)
    if magic != FEATURE_MAGIC:
        raise DataError(f"{path}: bad magic {magic!r} at offset 0, expected "
                        f"{FEATURE_MAGIC!r}")
    if version != CONTAINER_VERSION:
        raise DataError(f"{path}: unsupported container version {version}")
    expected = _FEATURE_HEADER.size + n * d * 8
    if len(data) != expected:
        raise DataError(f"{path}: payload is {len(data)} bytes, expected "
                        f"{expected} for N={n}, D={d}")
    values = np.frombuffer(data, dtype=_F8, offset=_FEATURE_HEADER.size)
    if not np.all(np.isfinite(values)):
        bad = int(np.flatnonzero(~np.isfinite(values))[0])
        raise DataError(f"{path}: non-finite value at float offset {bad}")
    return values.reshape(n, d).copy()


def model_to_json_dict(model: InverseModel,
                       layout: OutputLayout | None = None) -> dict:
    """Debug-friendly plain-dict mirror of a model."""
    layout = _check_layout(model, layout or _default_layout(model))
    return {
        "format": "hgllim-model",
        "version": CONTAINER_VERSION,
        "n_components": model.n_components,
        "feature_dim": model.feature_dim,
        "observed_dim": model.latent.observed_dim,
        "latent_dim": model.latent.latent_dim,
        "layout": {"n_angles": layout.n_angles,
                   "has_shift": layout.has_shift},
        "components": [
            {
                "prior": float(model.priors[i]),
                "mean": model.means[i].tolist(),
                "covariance": model.covariances[i].tolist(),
                "map": model.maps[i].tolist(),
                "offset": model.offsets[i].tolist(),
                "noise_diag": model.noise_vars[i].tolist(),
            }
            for i in range(model.n_components)
        ],
    }


def save_model_json(path, model: InverseModel,
                    layout: OutputLayout | None = None) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(model_to_json_dict(model, layout), fh, indent=2)
        fh.write("\n")
