from pathlib import Path

import numpy as np
import pytest

from abrsvm.features import ModelManifest, save_model_manifest, sha256_file
from abrsvm.svm import SvmParams, kkt_violations, train_smo


def train_audited(X, y, params: SvmParams):
    """Train and assert the KKT conditions hold within 10x tolerance."""
    model = train_smo(X, y, params)
    worst = float(kkt_violations(model, X, y, params).max())
    assert worst <= 10 * params.tolerance, f"KKT violation {worst:.3g} after training"
    return model


def make_blobs(n_neg: int, n_pos: int, dim: int, separation: float, seed: int):
    """Two gaussian clouds separated along a fixed unit direction."""
    rng = np.random.default_rng(seed)
    u = rng.normal(size=dim)
    u /= np.linalg.norm(u)
    y = np.hstack([-np.ones(n_neg), np.ones(n_pos)])
    X = y[:, None] * separation * u + rng.normal(size=(len(y), dim))
    return X, y


def make_separable_blobs(n_neg: int, n_pos: int, dim: int, margin: float, seed: int):
    """Gaussian clouds whose projections are clamped to +/- margin: truly
    linearly separable with a gap of 2 * margin along the class direction."""
    X, y = make_blobs(n_neg, n_pos, dim, margin, seed)
    rng = np.random.default_rng(seed + 1)
    u = rng.normal(size=dim)  # any fixed direction works; reuse a fresh one
    u /= np.linalg.norm(u)
    proj = X @ u
    shortfall = np.maximum(margin - y * proj, 0.0)
    X = X + (y * shortfall)[:, None] * u
    assert (X @ u * y).min() >= margin - 1e-9
    return X, y


def write_manifest_csv(path: Path, rows) -> Path:
    lines = ["sample_id,image_path,label,ear,patient_id"]
    lines += [",".join(str(c) for c in row) for row in rows]
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


def paper_shaped_rows(n_normal: int = 116, n_abnormal: int = 71, image_dir: str = "img"):
    rows = []
    for i in range(n_normal + n_abnormal):
        label = "normal" if i < n_normal else "abnormal"
        ear = "left" if i % 2 else "right"
        rows.append((f"s{i:03d}", f"{image_dir}/s{i:03d}.png", label, ear, f"p{i // 2:03d}"))
    return rows


@pytest.fixture
def mock_model_manifest(tmp_path):
    """A mock-backend model manifest with a real (dummy) weights file."""

    def build(name="mocknet", feature_dim=16, input_size=32, directory=None):
        directory = Path(directory) if directory else tmp_path
        weights = directory / f"{name}.bin"
        weights.write_bytes(f"weights of {name}".encode())
        manifest = ModelManifest(
            model_name=name,
            weights_path=weights,
            weights_checksum=sha256_file(weights),
            input_size=input_size,
            channel_means=(0.485, 0.456, 0.406),
            channel_stds=(0.229, 0.224, 0.225),
            feature_output_name="features",
            feature_dim=feature_dim,
        )
        save_model_manifest(manifest, directory / f"{name}.manifest")
        return manifest, directory / f"{name}.manifest"

    return build
