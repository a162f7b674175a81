"""Command-line interface of the export tool."""

from __future__ import annotations

import sys
from pathlib import Path

import click

from .archs import ARCHS, UnsupportedArchitectureError, WeightsUnavailableError
from .export import ExportSpec, ExportVerificationError, export_model


@click.group()
def main():
    """Convert pretrained CNN checkpoints into feature-extractor exports."""


@main.command()
@click.option("--arch", required=True, help="Architecture name (see list-archs)")
@click.option("--out", required=True, type=click.Path(path_type=Path), help="Output directory")
@click.option(
    "--format",
    "fmt",
    type=click.Choice(["torchscript", "onnx"]),
    default="torchscript",
    show_default=True,
    help="Interchange format (onnx needs the onnx/onnxruntime packages)",
)
@click.option("--opset", type=int, default=17, show_default=True, help="ONNX opset pin")
@click.option(
    "--random-init",
    is_flag=True,
    default=False,
    help="Export randomly initialized weights (for offline dry runs and tests)",
)
@click.option("--seed", type=int, default=0, show_default=True, help="Seed for random init/probes")
def export(arch: str, out: Path, fmt: str, opset: int, random_init: bool, seed: int):
    """Export one architecture as NAME.pt/NAME.onnx plus NAME.manifest."""
    try:
        spec = ExportSpec(
            architecture_name=arch,
            output_dir=out,
            format=fmt,
            opset=opset,
            pretrained=not random_init,
            seed=seed,
        )
        result = export_model(spec)
    except UnsupportedArchitectureError as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(2)
    except (WeightsUnavailableError, ExportVerificationError) as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(1)
    click.echo(
        f"exported {arch}: {result.weights_path.name} "
        f"(feature_dim {result.feature_dim}, sha256 {result.checksum[:12]}...) "
        f"+ {result.manifest_path.name}"
    )


@main.command("list-archs")
def list_archs():
    """Print the supported architecture names."""
    for name, info in ARCHS.items():
        status = info.note or "torchvision"
        click.echo(f"{name:<20} input {info.input_size}  [{status}]")


if __name__ == "__main__":
    main()
