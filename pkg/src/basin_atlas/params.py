"""Flat parameter vectors, weight-space arithmetic, and checkpoint files.

Every model in a sweep is identified with a point in R^n: an ordered float64
vector plus a shape manifest naming the tensors it decomposes into. All
geometry (interpolation, convex combination, distances) happens here.
"""

from __future__ import annotations

import json
import struct
import zlib
from dataclasses import dataclass, field

import numpy as np

CHECKPOINT_MAGIC = b"PVC1"
CHECKPOINT_VERSION = 1


class CheckpointFormatError(ValueError):
    """Raised when a checkpoint file is malformed or corrupted."""


@dataclass(frozen=True)
class ShapeManifest:
    """Canonical ordering of named tensor shapes backing a ParamVector."""

    entries: tuple[tuple[str, tuple[int, ...]], ...]

    def __post_init__(self):
        names = [name for name, _ in self.entries]
        if len(set(names)) != len(names):
            raise ValueError("manifest tensor names must be unique")
        for name, shape in self.entries:
            if not shape or any(d < 1 for d in shape):
                raise ValueError(f"tensor {name!r} has non-positive shape {shape}")
        if self.total_len <= 0:
            raise ValueError("manifest must describe at least one value")

    @classmethod
    def from_pairs(cls, pairs) -> "ShapeManifest":
        return cls(tuple((str(n), tuple(int(d) for d in s)) for n, s in pairs))

    @property
    def total_len(self) -> int:
        return sum(int(np.prod(shape)) for _, shape in self.entries)

    def offsets(self) -> dict[str, tuple[int, int]]:
        """Map tensor name -> (start, end) slice into the flat vector."""
        out = {}
        pos = 0
        for name, shape in self.entries:
            size = int(np.prod(shape))
            out[name] = (pos, pos + size)
            pos += size
        return out

    def shape_of(self, name: str) -> tuple[int, ...]:
        for n, s in self.entries:
            if n == name:
                return s
        raise KeyError(name)


@dataclass(frozen=True)
class ParamVector:
    """A model's full parameter set, flattened in manifest order."""

    manifest: ShapeManifest
    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim != 1:
            values = values.ravel()
        if len(values) != self.manifest.total_len:
            raise ValueError(
                f"value length {len(values)} does not match manifest "
                f"total {self.manifest.total_len}"
            )
        if not np.all(np.isfinite(values)):
            raise ValueError("parameter values must be finite")
        values = values.copy()
        values.flags.writeable = False
        object.__setattr__(self, "values", values)

    def tensor(self, name: str) -> np.ndarray:
        """View of one named tensor, reshaped per the manifest."""
        start, end = self.manifest.offsets()[name]
        return self.values[start:end].reshape(self.manifest.shape_of(name))

    def with_values(self, values: np.ndarray) -> "ParamVector":
        return ParamVector(self.manifest, values)


def free_vector(values) -> ParamVector:
    """Wrap a bare array as a ParamVector with a single-tensor manifest."""
    values = np.asarray(values, dtype=np.float64).ravel()
    manifest = ShapeManifest.from_pairs([("theta", (len(values),))])
    return ParamVector(manifest, values)


def _check_same_manifest(a: ParamVector, b: ParamVector):
    if a.manifest != b.manifest:
        raise ValueError("parameter vectors have mismatched manifests")


def interpolate(a: ParamVector, b: ParamVector, alpha: float) -> ParamVector:
    """Point alpha*a + (1-alpha)*b on the segment from b (alpha=0) to a (alpha=1)."""
    _check_same_manifest(a, b)
    if not (0.0 <= alpha <= 1.0):
        raise ValueError(f"alpha must lie in [0, 1], got {alpha}")
    if alpha == 1.0:
        return a.with_values(a.values)
    if alpha == 0.0:
        return b.with_values(b.values)
    return a.with_values(alpha * a.values + (1.0 - alpha) * b.values)


def weighted_pair(a: ParamVector, b: ParamVector, w_a: float, w_b: float) -> ParamVector:
    """w_a*a + w_b*b with both weights supplied explicitly.

    Interpolation grids pass mirrored weights (i/(n-1), (n-1-i)/(n-1)) so that
    reversing the endpoints reverses the sampled points bit-for-bit, which a
    computed 1-alpha complement does not guarantee in floating point.
    """
    _check_same_manifest(a, b)
    return a.with_values(w_a * a.values + w_b * b.values)


def convex_combine(points: list[ParamVector], weights) -> ParamVector:
    """Convex combination of parameter points; weights must sum to 1."""
    if not points:
        raise ValueError("need at least one point")
    weights = np.asarray(weights, dtype=np.float64)
    if len(weights) != len(points):
        raise ValueError("one weight per point required")
    if np.any(weights < 0):
        raise ValueError("weights must be nonnegative")
    if abs(float(weights.sum()) - 1.0) > 1e-9:
        raise ValueError(f"weights must sum to 1, got {weights.sum()!r}")
    first = points[0]
    for p in points[1:]:
        _check_same_manifest(first, p)
    acc = weights[0] * first.values
    for w, p in zip(weights[1:], points[1:]):
        acc = acc + w * p.values
    return first.with_values(acc)


def euclidean_distance(a: ParamVector, b: ParamVector) -> float:
    _check_same_manifest(a, b)
    return float(np.linalg.norm(a.values - b.values))


@dataclass(frozen=True)
class Checkpoint:
    """ParamVector plus run provenance, the unit of sweep persistence."""

    params: ParamVector
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        meta = dict(self.meta)
        if not str(meta.get("run_id", "")):
            raise ValueError("checkpoint meta requires a nonempty run_id")
        if int(meta.get("step", 0)) < 0:
            raise ValueError("checkpoint step must be >= 0")
        object.__setattr__(self, "meta", meta)


def _canonical_json(obj) -> bytes:
    return json.dumps(obj, sort_keys=True, separators=(",", ":")).encode("utf-8")


def checkpoint_bytes(ckpt: Checkpoint) -> bytes:
    """Serialize to the PVC1 format; identical checkpoints yield identical bytes."""
    header = _canonical_json(
        {
            "tensors": [
                {"name": name, "shape": list(shape)}
                for name, shape in ckpt.params.manifest.entries
            ],
            "meta": ckpt.meta,
        }
    )
    payload = ckpt.params.values.astype("<f8").tobytes()
    crc = zlib.crc32(payload) & 0xFFFFFFFF
    return b"".join(
        [
            CHECKPOINT_MAGIC,
            struct.pack("<I", CHECKPOINT_VERSION),
            struct.pack("<I", len(header)),
            header,
            payload,
            struct.pack("<I", crc),
        ]
    )


def save_checkpoint(ckpt: Checkpoint, path):
    with open(path, "wb") as fh:
        fh.write(checkpoint_bytes(ckpt))


def load_checkpoint(path) -> Checkpoint:
    with open(path, "rb") as fh:
        blob = fh.read()
    return checkpoint_from_bytes(blob)


def checkpoint_from_bytes(blob: bytes) -> Checkpoint:
    if len(blob) < 12 or blob[:4] != CHECKPOINT_MAGIC:
        raise CheckpointFormatError("bad magic bytes")
    (version,) = struct.unpack_from("<I", blob, 4)
    if version != CHECKPOINT_VERSION:
        raise CheckpointFormatError(f"unsupported checkpoint version {version}")
    (header_len,) = struct.unpack_from("<I", blob, 8)
    header_end = 12 + header_len
    if len(blob) < header_end + 4:
        raise CheckpointFormatError("truncated header")
    try:
        header = json.loads(blob[12:header_end].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointFormatError(f"unreadable header: {exc}") from exc
    manifest = ShapeManifest.from_pairs(
        (t["name"], tuple(t["shape"])) for t in header["tensors"]
    )
    payload_end = header_end + 8 * manifest.total_len
    if len(blob) < payload_end + 4:
        raise CheckpointFormatError("truncated payload")
    payload = blob[header_end:payload_end]
    (crc_stored,) = struct.unpack_from("<I", blob, payload_end)
    if zlib.crc32(payload) & 0xFFFFFFFF != crc_stored:
        raise CheckpointFormatError("payload checksum mismatch")
    values = np.frombuffer(payload, dtype="<f8").astype(np.float64)
    return Checkpoint(ParamVector(manifest, values), header["meta"])
