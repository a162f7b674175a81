"""Image preparation: decode, crop, resize, normalize to model input tensors.

Resampling is bilinear with half-pixel centers (see ``_kernels``), pinned
so identical inputs give bit-identical tensors on every run. Cropping
copies pixels exactly; colour is preserved because wave colour encodes
the ear side.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import TYPE_CHECKING

import numpy as np
from PIL import Image, UnidentifiedImageError

from ._kernels import bilinear_resize

if TYPE_CHECKING:
    from .features import ModelManifest


@dataclass(frozen=True)
class CropRect:
    x: int
    y: int
    width: int
    height: int

    def __post_init__(self):
        if self.x < 0 or self.y < 0:
            raise ValueError(f"crop offsets must be >= 0, got ({self.x}, {self.y})")
        if self.width <= 0 or self.height <= 0:
            raise ValueError(
                f"crop size must be positive, got {self.width}x{self.height}"
            )


@dataclass(frozen=True)
class InputTensor:
    """Model-ready image: float32 values in the manifest's normalized range."""

    values: np.ndarray
    layout: str  # "chw" or "hwc"

    @property
    def height(self) -> int:
        return self.values.shape[1] if self.layout == "chw" else self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[2] if self.layout == "chw" else self.values.shape[1]

    @property
    def channels(self) -> int:
        return self.values.shape[0] if self.layout == "chw" else self.values.shape[2]


def load_image(path: str | Path) -> np.ndarray:
    """Decode an image file to a HxWx3 uint8 array (alpha dropped)."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"image not found: {path}")
    try:
        with Image.open(path) as im:
            im = im.convert("RGB")
            return np.asarray(im, dtype=np.uint8)
    except UnidentifiedImageError as exc:
        raise ValueError(f"cannot decode image {path}: {exc}") from exc


def crop(image: np.ndarray, rect: CropRect) -> np.ndarray:
    """Cut rect out of the image; pixels are copied exactly, no resampling."""
    if image.ndim not in (2, 3):
        raise ValueError(f"expected HxW or HxWxC image, got shape {image.shape}")
    h, w = image.shape[:2]
    if rect.x + rect.width > w or rect.y + rect.height > h:
        raise ValueError(
            f"crop rect {rect} exceeds image bounds {w}x{h} (width x height)"
        )
    return image[rect.y : rect.y + rect.height, rect.x : rect.x + rect.width].copy()


def _as_three_channel(image: np.ndarray) -> np.ndarray:
    if image.ndim == 2:
        image = image[:, :, None]
    if image.ndim != 3:
        raise ValueError(f"expected HxW or HxWxC image, got shape {image.shape}")
    if image.shape[2] == 1:
        image = np.repeat(image, 3, axis=2)
    if image.shape[2] != 3:
        raise ValueError(f"expected 1 or 3 channels, got {image.shape[2]}")
    return image


def prepare_input(image: np.ndarray, manifest: "ModelManifest") -> InputTensor:
    """Resize to the manifest input size and apply channel normalization.

    value' = (value/255 - mean_c) / std_c, computed after the bilinear
    resize; grayscale inputs are promoted by replication. The resize is a
    direct anisotropic stretch to the square target (no letterboxing).
    """
    if manifest.channel_means is None or manifest.channel_stds is None:
        raise ValueError(f"manifest {manifest.model_name!r} missing normalization constants")
    image = _as_three_channel(image)
    size = manifest.input_size
    resized = bilinear_resize(image, size, size)  # float64 HxWx3
    means = np.asarray(manifest.channel_means, dtype=np.float64)
    stds = np.asarray(manifest.channel_stds, dtype=np.float64)
    if np.any(stds <= 0):
        raise ValueError(f"manifest {manifest.model_name!r} has non-positive channel std")
    normalized = (resized / 255.0 - means) / stds
    values = normalized.astype(np.float32)
    layout = getattr(manifest, "layout", "chw") or "chw"
    if layout == "chw":
        values = np.ascontiguousarray(values.transpose(2, 0, 1))
    elif layout != "hwc":
        raise ValueError(f"unknown tensor layout {layout!r} (expected chw or hwc)")
    if not np.all(np.isfinite(values)):
        raise ValueError("non-finite values after normalization")
    return InputTensor(values=values, layout=layout)
