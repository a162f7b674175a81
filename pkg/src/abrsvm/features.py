"""Pretrained-CNN feature extraction behind a pluggable inference backend.

Backends:
  * interchange - loads exported network files and runs them: TorchScript
    via ``torch.jit`` and ``.onnx`` via onnxruntime (both imported lazily;
    a missing runtime raises an informative error at load time).
  * mock        - deterministic test double: the feature vector is a
    content hash of the tensor bytes expanded through numpy's Philox
    counter-mode generator.

Feature matrices are cached in a binary format (magic ``ABRF1``) that
roundtrips bit-exactly and is integrity-checked on read.
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .preprocess import InputTensor

BACKEND_NAMES = ("interchange", "mock")


class ModelManifestError(ValueError):
    """Raised for invalid model manifest files or contract violations."""


class CacheError(ValueError):
    """Raised for unreadable, corrupted or mismatched feature caches."""


@dataclass(frozen=True)
class ModelManifest:
    model_name: str
    weights_path: Path
    weights_checksum: str  # sha256 hex of the weights file
    input_size: int
    channel_means: tuple[float, float, float]
    channel_stds: tuple[float, float, float]
    feature_output_name: str
    feature_dim: int
    layout: str = "chw"

    def __post_init__(self):
        if self.feature_dim <= 0:
            raise ModelManifestError(f"feature_dim must be > 0, got {self.feature_dim}")
        if self.input_size <= 0:
            raise ModelManifestError(f"input_size must be > 0, got {self.input_size}")
        if len(self.channel_means) != 3 or len(self.channel_stds) != 3:
            raise ModelManifestError("channel_means/channel_stds must have 3 entries")
        if "," in self.model_name or "\n" in self.model_name:
            raise ModelManifestError("model_name must not contain ',' or newlines")


def _parse_triple(raw: str, key: str) -> tuple[float, float, float]:
    parts = [p.strip() for p in raw.split(",")]
    if len(parts) != 3:
        raise ModelManifestError(f"{key} must be three comma-separated reals, got {raw!r}")
    return tuple(float(p) for p in parts)  # type: ignore[return-value]


def load_model_manifest(path: str | Path) -> ModelManifest:
    """Parse a ``key = value`` model manifest file."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"model manifest not found: {path}")
    kv: dict[str, str] = {}
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ModelManifestError(f"{path}: line {lineno}: expected key = value")
        key, _, value = line.partition("=")
        kv[key.strip()] = value.strip()
    required = (
        "model_name",
        "weights_path",
        "weights_checksum",
        "input_size",
        "channel_means",
        "channel_stds",
        "feature_output_name",
        "feature_dim",
    )
    missing = [k for k in required if k not in kv]
    if missing:
        raise ModelManifestError(f"{path}: missing keys: {', '.join(missing)}")
    weights = Path(kv["weights_path"])
    if not weights.is_absolute():
        weights = path.parent / weights
    try:
        return ModelManifest(
            model_name=kv["model_name"],
            weights_path=weights,
            weights_checksum=kv["weights_checksum"].lower(),
            input_size=int(kv["input_size"]),
            channel_means=_parse_triple(kv["channel_means"], "channel_means"),
            channel_stds=_parse_triple(kv["channel_stds"], "channel_stds"),
            feature_output_name=kv["feature_output_name"],
            feature_dim=int(kv["feature_dim"]),
            layout=kv.get("layout", "chw"),
        )
    except ValueError as exc:
        raise ModelManifestError(f"{path}: {exc}") from exc


def save_model_manifest(manifest: ModelManifest, path: str | Path) -> None:
    path = Path(path)
    lines = [
        f"model_name = {manifest.model_name}",
        f"weights_path = {manifest.weights_path.name}",
        f"weights_checksum = {manifest.weights_checksum}",
        f"input_size = {manifest.input_size}",
        f"channel_means = {', '.join(repr(v) for v in manifest.channel_means)}",
        f"channel_stds = {', '.join(repr(v) for v in manifest.channel_stds)}",
        f"feature_output_name = {manifest.feature_output_name}",
        f"feature_dim = {manifest.feature_dim}",
        f"layout = {manifest.layout}",
    ]
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def sha256_file(path: str | Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


# ---------------------------------------------------------------------------
# Backends
# ---------------------------------------------------------------------------


def mock_infer(tensor: InputTensor | np.ndarray, dim: int) -> np.ndarray:
    """Deterministic pseudo-features from a content hash of the tensor.

    The SHA-256 of the raw tensor bytes keys a Philox (counter-mode)
    generator; the same tensor always expands to the same vector.
    """
    if dim <= 0:
        raise ValueError(f"dim must be > 0, got {dim}")
    values = tensor.values if isinstance(tensor, InputTensor) else np.asarray(tensor)
    digest = hashlib.sha256(np.ascontiguousarray(values).tobytes()).digest()
    key = np.frombuffer(digest[:16], dtype=np.uint64)
    gen = np.random.Generator(np.random.Philox(key=key))
    return gen.standard_normal(dim)


class MockBackend:
    """Hash-based stand-in used by CI and the mock pipeline mode."""

    def __init__(self, manifest: ModelManifest):
        self.manifest = manifest

    def infer(self, tensor: InputTensor) -> np.ndarray:
        return mock_infer(tensor, self.manifest.feature_dim)


class TorchscriptBackend:
    """Runs an exported TorchScript graph (lazy torch import)."""

    def __init__(self, manifest: ModelManifest):
        try:
            import torch
        except ImportError as exc:  # pragma: no cover
            raise ModelManifestError(
                "TorchScript weights need the 'torch' package (pip install abrsvm[interchange])"
            ) from exc
        self._torch = torch
        self.manifest = manifest
        self._module = torch.jit.load(str(manifest.weights_path), map_location="cpu")
        self._module.eval()

    def infer(self, tensor: InputTensor) -> np.ndarray:
        torch = self._torch
        values = tensor.values
        if tensor.layout == "hwc":
            values = np.ascontiguousarray(values.transpose(2, 0, 1))
        with torch.no_grad():
            out = self._module(torch.from_numpy(values[None, ...]))
        return out.numpy().reshape(-1).astype(np.float64)


class OnnxBackend:
    """Runs an ONNX graph through onnxruntime (lazy import)."""

    def __init__(self, manifest: ModelManifest):
        try:
            import onnxruntime
        except ImportError as exc:
            raise ModelManifestError(
                "ONNX weights need the 'onnxruntime' package, which is not installed"
            ) from exc
        self.manifest = manifest
        self._session = onnxruntime.InferenceSession(
            str(manifest.weights_path), providers=["CPUExecutionProvider"]
        )
        self._input_name = self._session.get_inputs()[0].name

    def infer(self, tensor: InputTensor) -> np.ndarray:
        values = tensor.values
        if tensor.layout == "hwc":
            values = np.ascontiguousarray(values.transpose(2, 0, 1))
        out = self._session.run(
            [self.manifest.feature_output_name], {self._input_name: values[None, ...]}
        )
        return np.asarray(out[0]).reshape(-1).astype(np.float64)


def _zero_tensor(manifest: ModelManifest) -> InputTensor:
    size = manifest.input_size
    shape = (3, size, size) if manifest.layout == "chw" else (size, size, 3)
    return InputTensor(values=np.zeros(shape, dtype=np.float32), layout=manifest.layout)


def load_model(manifest: ModelManifest, backend: str = "interchange"):
    """Validate the weights file and return a ready inference handle.

    Checks: file exists, sha256 matches the manifest, and a probe
    inference on a zero tensor yields ``feature_dim`` values.
    """
    if backend not in BACKEND_NAMES:
        raise ValueError(f"unknown backend {backend!r}, expected one of {BACKEND_NAMES}")
    if not manifest.weights_path.exists():
        raise FileNotFoundError(f"weights file not found: {manifest.weights_path}")
    actual = sha256_file(manifest.weights_path)
    if actual != manifest.weights_checksum:
        raise ModelManifestError(
            f"{manifest.weights_path}: checksum mismatch "
            f"(manifest {manifest.weights_checksum[:12]}..., file {actual[:12]}...)"
        )
    if backend == "mock":
        handle = MockBackend(manifest)
    elif manifest.weights_path.suffix == ".onnx":
        handle = OnnxBackend(manifest)
    else:
        handle = TorchscriptBackend(manifest)
    probe = handle.infer(_zero_tensor(manifest))
    if probe.shape != (manifest.feature_dim,):
        raise ModelManifestError(
            f"{manifest.model_name}: probe inference returned {probe.shape[0]} values, "
            f"manifest claims feature_dim {manifest.feature_dim}"
        )
    return handle


@dataclass(frozen=True)
class FeatureVector:
    sample_id: str
    model_name: str
    values: np.ndarray


def extract_features(handle, inputs) -> list[FeatureVector]:
    """Run inference over (sample_id, InputTensor) pairs, order-preserving."""
    manifest: ModelManifest = handle.manifest
    out: list[FeatureVector] = []
    for sample_id, tensor in inputs:
        if tensor.height != manifest.input_size or tensor.width != manifest.input_size:
            raise ValueError(
                f"sample {sample_id!r}: tensor is {tensor.height}x{tensor.width}, "
                f"model expects {manifest.input_size}x{manifest.input_size}"
            )
        try:
            values = np.asarray(handle.infer(tensor), dtype=np.float64)
        except Exception as exc:
            raise RuntimeError(f"inference failed for sample {sample_id!r}: {exc}") from exc
        if values.shape != (manifest.feature_dim,):
            raise ValueError(
                f"sample {sample_id!r}: got {values.shape} values, expected {manifest.feature_dim}"
            )
        if not np.all(np.isfinite(values)):
            raise ValueError(f"sample {sample_id!r}: non-finite feature values")
        out.append(FeatureVector(sample_id=sample_id, model_name=manifest.model_name, values=values))
    return out


# ---------------------------------------------------------------------------
# Feature cache:
#   magic "ABRF1", header line "model_name,feature_dim,count\n", then per
#   record a u32-length-prefixed UTF-8 sample_id followed by feature_dim
#   float64 little-endian values, then an 8-byte BLAKE2b checksum of all
#   preceding bytes. Writes are atomic (temp file + rename).
# ---------------------------------------------------------------------------

_CACHE_MAGIC = b"ABRF1"


def _cache_checksum(data: bytes) -> bytes:
    return hashlib.blake2b(data, digest_size=8).digest()


def write_cache(vectors: list[FeatureVector], path: str | Path) -> str:
    path = Path(path)
    if not path.parent.exists():
        raise FileNotFoundError(f"cache directory does not exist: {path.parent}")
    if not vectors:
        raise CacheError("refusing to write an empty feature cache")
    model_name = vectors[0].model_name
    dim = len(vectors[0].values)
    parts = [_CACHE_MAGIC, f"{model_name},{dim},{len(vectors)}\n".encode("utf-8")]
    for vec in vectors:
        if vec.model_name != model_name:
            raise CacheError(f"mixed model names in cache: {model_name!r} vs {vec.model_name!r}")
        if len(vec.values) != dim:
            raise CacheError(f"sample {vec.sample_id!r}: inconsistent feature length")
        sid = vec.sample_id.encode("utf-8")
        parts.append(struct.pack("<I", len(sid)))
        parts.append(sid)
        parts.append(np.ascontiguousarray(vec.values, dtype="<f8").tobytes())
    blob = b"".join(parts)
    digest = _cache_checksum(blob)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(blob + digest)
    tmp.replace(path)
    return digest.hex()


def read_cache(path: str | Path, manifest: ModelManifest | None = None) -> list[FeatureVector]:
    """Read a feature cache; optionally verify it matches a manifest."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"feature cache not found: {path}")
    blob = path.read_bytes()
    if len(blob) < len(_CACHE_MAGIC) + 8 or not blob.startswith(_CACHE_MAGIC):
        raise CacheError(f"{path}: not a feature cache (bad magic)")
    payload, digest = blob[:-8], blob[-8:]
    if _cache_checksum(payload) != digest:
        raise CacheError(f"{path}: checksum mismatch (corrupted file)")
    rest = payload[len(_CACHE_MAGIC) :]
    try:
        nl = rest.index(b"\n")
        model_name, dim_s, count_s = rest[:nl].decode("utf-8").split(",")
        dim, count = int(dim_s), int(count_s)
    except (ValueError, UnicodeDecodeError) as exc:
        raise CacheError(f"{path}: malformed header") from exc
    if manifest is not None:
        if model_name != manifest.model_name:
            raise CacheError(
                f"{path}: cache is for model {model_name!r}, manifest wants {manifest.model_name!r}"
            )
        if dim != manifest.feature_dim:
            raise CacheError(
                f"{path}: cache feature_dim {dim} != manifest feature_dim {manifest.feature_dim}"
            )
    body = rest[nl + 1 :]
    vectors: list[FeatureVector] = []
    off = 0
    for _ in range(count):
        if off + 4 > len(body):
            raise CacheError(f"{path}: truncated record")
        (sid_len,) = struct.unpack_from("<I", body, off)
        off += 4
        if off + sid_len + 8 * dim > len(body):
            raise CacheError(f"{path}: truncated record")
        sid = body[off : off + sid_len].decode("utf-8")
        off += sid_len
        values = np.frombuffer(body, dtype="<f8", count=dim, offset=off).copy()
        off += 8 * dim
        vectors.append(FeatureVector(sample_id=sid, model_name=model_name, values=values))
    if off != len(body):
        raise CacheError(f"{path}: {len(body) - off} trailing bytes after last record")
    return vectors
