"""Experiment manifests and CSV report writing.

Every artifact-producing run records what produced it: the command line, a
hash of the input payloads, the model structure, harness settings, seed,
tool version and wall-clock time. Reports embed the manifest as comment
lines so a result file is self-describing.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import DataError

__all__ = ["ExperimentManifest", "hash_arrays", "hash_files",
           "write_report_csv", "read_report_manifest"]

_COMMENT = "#"
_MANIFEST_KEY = "# manifest "


def hash_arrays(*arrays) -> str:
    """SHA-256 over the raw bytes of the given arrays, order-sensitive."""
    digest = hashlib.sha256()
    for arr in arrays:
        arr = np.ascontiguousarray(arr)
        digest.update(str(arr.dtype).encode())
        digest.update(str(arr.shape).encode())
        digest.update(arr.tobytes())
    return digest.hexdigest()


def hash_files(*paths) -> str:
    """SHA-256 over the contents of the given files, in argument order."""
    digest = hashlib.sha256()
    for path in paths:
        with open(path, "rb") as fh:
            while True:
                chunk = fh.read(1 << 20)
                if not chunk:
                    break
                digest.update(chunk)
    return digest.hexdigest()


@dataclass(frozen=True)
class ExperimentManifest:
    """What produced an artifact; everything needed to rerun it."""

    command: str
    dataset_hash: str
    tool_version: str
    seconds: float = 0.0
    n_components: int | None = None
    observed_dim: int | None = None
    latent_dim: int | None = None
    variant: str | None = None
    sigma_frac: float | None = None
    epsilon: float | None = None
    seed: int | None = None
    extra: dict = field(default_factory=dict)

    def to_json(self) -> str:
        payload = asdict(self)
        return json.dumps(payload, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "ExperimentManifest":
        try:
            payload = json.loads(text)
        except json.JSONDecodeError as exc:
            raise DataError(f"manifest is not valid JSON: {exc}") from exc
        known = {f for f in cls.__dataclass_fields__}
        kwargs = {k: v for k, v in payload.items() if k in known}
        missing = {"command", "dataset_hash", "tool_version"} - set(kwargs)
        if missing:
            raise DataError(f"manifest is missing fields: {sorted(missing)}")
        return cls(**kwargs)


def _format_cell(value) -> str:
    if isinstance(value, float) or isinstance(value, np.floating):
        return repr(float(value))
    return str(value)


def write_report_csv(path, columns, rows,
                     manifest: ExperimentManifest | None = None) -> None:
    """Plain UTF-8/LF CSV with the manifest embedded as comment lines.

    Floats are written with full round-trip precision and a dot decimal
    separator regardless of locale.
    """
    lines = []
    if manifest is not None:
        lines.append(_MANIFEST_KEY + manifest.to_json())
    lines.append(",".join(columns))
    for row in rows:
        if len(row) != len(columns):
            raise DataError(f"report row has {len(row)} cells, header has "
                            f"{len(columns)}")
        lines.append(",".join(_format_cell(v) for v in row))
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def read_report_manifest(path) -> ExperimentManifest | None:
    """Manifest embedded in a report, or None if the report has none."""
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            if line.startswith(_MANIFEST_KEY):
                return ExperimentManifest.from_json(line[len(_MANIFEST_KEY):])
            if not line.startswith(_COMMENT):
                break
    return None
