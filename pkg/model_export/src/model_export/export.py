"""Export a pretrained CNN as a feature extractor plus its model manifest.

The exported graph is the network truncated at the pooled penultimate
activation, traced to TorchScript (or converted to ONNX when that
toolchain is installed). Every manifest field is read from the exported
artifact: feature_dim comes from probing the reloaded graph, the checksum
from hashing the emitted file. A parity probe compares source-framework
features against the exported graph on random inputs before anything is
written as final.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .archs import (
    IMAGENET_MEANS,
    IMAGENET_STDS,
    ArchInfo,
    WeightsUnavailableError,
    lookup,
)

PARITY_REL_TOL = 1e-4
PARITY_PROBES = 5


class ExportVerificationError(RuntimeError):
    """Raised when the exported graph fails the probe or parity checks."""


@dataclass(frozen=True)
class ExportSpec:
    architecture_name: str
    output_dir: Path
    format: str = "torchscript"  # "torchscript" | "onnx"
    opset: int = 17  # version pin for the onnx path
    pretrained: bool = True
    seed: int = 0

    def __post_init__(self):
        lookup(self.architecture_name)
        if self.format not in ("torchscript", "onnx"):
            raise ValueError(f"unknown export format {self.format!r}")


@dataclass(frozen=True)
class ExportResult:
    weights_path: Path
    manifest_path: Path
    feature_dim: int
    checksum: str


def _build_source_model(info: ArchInfo, pretrained: bool):
    import torch

    if info.builder is None:
        raise WeightsUnavailableError(
            f"{info.name} is recognized but cannot be built here: {info.note}"
        )
    try:
        model = info.builder(pretrained)
    except Exception as exc:
        if pretrained:
            raise WeightsUnavailableError(
                f"pretrained weights for {info.name} could not be obtained "
                f"({exc}); use random initialization if this is a dry run"
            ) from exc
        raise
    model.eval()
    for p in model.parameters():
        p.requires_grad_(False)
    return model


def _trace(model, size: int):
    import torch

    example = torch.zeros(1, 3, size, size)
    with torch.no_grad():
        return torch.jit.trace(model, example)


def _export_onnx(model, size: int, path: Path, opset: int) -> None:
    import torch

    example = torch.zeros(1, 3, size, size)
    torch.onnx.export(
        model,
        (example,),
        str(path),
        opset_version=opset,
        input_names=["input"],
        output_names=["pooled_features"],
        dynamo=False,
    )


def _load_exported(path: Path):
    """Reload the exported artifact as a callable tensor -> 1-D numpy."""
    import torch

    if path.suffix == ".onnx":
        try:
            import onnxruntime
        except ImportError as exc:
            raise ExportVerificationError(
                "verifying an .onnx export needs onnxruntime, which is not installed"
            ) from exc
        session = onnxruntime.InferenceSession(str(path), providers=["CPUExecutionProvider"])
        input_name = session.get_inputs()[0].name

        def run(x):
            return np.asarray(
                session.run(None, {input_name: x.numpy()})[0], dtype=np.float64
            ).reshape(-1)

        return run
    module = torch.jit.load(str(path), map_location="cpu")
    module.eval()

    def run(x):
        with torch.no_grad():
            return module(x).numpy().reshape(-1).astype(np.float64)

    return run


def parity_probe(source_model, exported_run, size: int, seed: int) -> float:
    """Max relative mismatch between source and exported features."""
    import torch

    gen = torch.Generator().manual_seed(seed)
    worst = 0.0
    for _ in range(PARITY_PROBES):
        x = torch.randn(1, 3, size, size, generator=gen)
        with torch.no_grad():
            want = source_model(x).numpy().reshape(-1).astype(np.float64)
        got = exported_run(x)
        if got.shape != want.shape:
            raise ExportVerificationError(
                f"exported graph emits {got.shape[0]} values, source emits {want.shape[0]}"
            )
        scale = np.maximum(np.abs(want), 1e-6)
        worst = max(worst, float(np.max(np.abs(got - want) / scale)))
    if worst > PARITY_REL_TOL:
        raise ExportVerificationError(
            f"parity probe failed: max relative mismatch {worst:.3g} > {PARITY_REL_TOL}"
        )
    return worst


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _write_manifest(path: Path, name: str, weights: Path, checksum: str, size: int, dim: int):
    lines = [
        f"model_name = {name}",
        f"weights_path = {weights.name}",
        f"weights_checksum = {checksum}",
        f"input_size = {size}",
        f"channel_means = {', '.join(repr(v) for v in IMAGENET_MEANS)}",
        f"channel_stds = {', '.join(repr(v) for v in IMAGENET_STDS)}",
        "feature_output_name = pooled_features",
        f"feature_dim = {dim}",
        "layout = chw",
    ]
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def export_model(spec: ExportSpec) -> ExportResult:
    import torch

    info = lookup(spec.architecture_name)
    spec.output_dir.mkdir(parents=True, exist_ok=True)
    torch.manual_seed(spec.seed)  # pins random-init exports
    model = _build_source_model(info, spec.pretrained)

    if spec.format == "onnx":
        weights_path = spec.output_dir / f"{info.name}.onnx"
        _export_onnx(model, info.input_size, weights_path, spec.opset)
    else:
        weights_path = spec.output_dir / f"{info.name}.pt"
        torch.jit.save(_trace(model, info.input_size), str(weights_path))

    exported_run = _load_exported(weights_path)
    probe = exported_run(torch.zeros(1, 3, info.input_size, info.input_size))
    if probe.ndim != 1 or probe.shape[0] < 1 or not np.all(np.isfinite(probe)):
        raise ExportVerificationError(f"zero-tensor probe returned shape {probe.shape}")
    feature_dim = int(probe.shape[0])
    parity_probe(model, exported_run, info.input_size, spec.seed)

    checksum = _sha256(weights_path)
    manifest_path = spec.output_dir / f"{info.name}.manifest"
    _write_manifest(manifest_path, info.name, weights_path, checksum, info.input_size, feature_dim)
    return ExportResult(
        weights_path=weights_path,
        manifest_path=manifest_path,
        feature_dim=feature_dim,
        checksum=checksum,
    )
