"""Soft-margin binary SVM: kernels, standardization, SMO training, decisions.

Labels are +1/-1 with +1 the positive (abnormal) class. Training solves
the dual

    max  sum(alpha) - 1/2 sum_ij alpha_i alpha_j y_i y_j K(x_i, x_j)
    s.t. 0 <= alpha_i <= C_i,  sum_i alpha_i y_i = 0

by sequential minimal optimization (see ``_kernels.smo_solve``). The bias
is averaged over free support vectors; if none are free it is the
midpoint of the feasible interval. Non-convergence is reported on the
returned model, never silently.
"""

from __future__ import annotations

import logging
import struct
from dataclasses import dataclass, field, replace
from hashlib import blake2b
from pathlib import Path

import numpy as np

from ._kernels import kernel_cross, kernel_matrix, smo_solve

log = logging.getLogger(__name__)

LINEAR = "linear"
RBF = "rbf"

_KIND_CODE = {LINEAR: 0, RBF: 1}
_SV_PRUNE = 1e-9
_FREE_EPS = 1e-8


class ModelFileError(ValueError):
    """Raised for malformed or corrupted model files."""


@dataclass(frozen=True)
class KernelSpec:
    kind: str = RBF
    gamma: float | None = None  # None -> "scale" heuristic, resolved at fit

    def __post_init__(self):
        if self.kind not in _KIND_CODE:
            raise ValueError(f"unknown kernel kind {self.kind!r} (expected linear/rbf)")
        if self.kind == RBF and self.gamma is not None and self.gamma <= 0:
            raise ValueError(f"rbf gamma must be > 0, got {self.gamma}")


@dataclass(frozen=True)
class SvmParams:
    C: float = 1.0
    kernel: KernelSpec = field(default_factory=KernelSpec)
    tolerance: float = 1e-3
    max_passes: int = 0  # dataset-sized sweeps of pair updates; 0 -> 10 * n_samples
    class_weighting: str = "off"  # "off" | "balanced"
    standardize: bool = True

    def __post_init__(self):
        if self.C <= 0:
            raise ValueError(f"C must be > 0, got {self.C}")
        if self.tolerance <= 0:
            raise ValueError(f"tolerance must be > 0, got {self.tolerance}")
        if self.max_passes < 0:
            raise ValueError(f"max_passes must be >= 1 (or 0 for default), got {self.max_passes}")
        if self.class_weighting not in ("off", "balanced"):
            raise ValueError(f"class_weighting must be off or balanced, got {self.class_weighting!r}")


@dataclass(frozen=True)
class Standardizer:
    means: np.ndarray
    stds: np.ndarray

    def apply(self, x: np.ndarray) -> np.ndarray:
        return (np.asarray(x, dtype=np.float64) - self.means) / self.stds


@dataclass(frozen=True)
class TrainedSvm:
    support_vectors: np.ndarray  # standardized rows, shape (m, d)
    dual_coeffs: np.ndarray  # alpha_i * y_i, shape (m,)
    bias: float
    kernel: KernelSpec  # gamma resolved to a number
    standardizer: Standardizer
    converged: bool = True
    n_iter: int = 0
    alphas: np.ndarray | None = None  # full training alphas, diagnostic only

    @property
    def n_features(self) -> int:
        return self.support_vectors.shape[1]


def kernel_eval(u: np.ndarray, v: np.ndarray, spec: KernelSpec) -> float:
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if u.shape != v.shape:
        raise ValueError(f"kernel_eval length mismatch: {u.shape} vs {v.shape}")
    if spec.kind == LINEAR:
        return float(u @ v)
    if spec.gamma is None:
        raise ValueError("rbf kernel_eval needs a numeric gamma")
    diff = u - v
    return float(np.exp(-spec.gamma * (diff @ diff)))


def fit_standardizer(X: np.ndarray) -> Standardizer:
    """Column means and sample stds (ddof=1), stds floored at 1e-12."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] < 2:
        raise ValueError(f"need at least 2 training rows, got shape {X.shape}")
    means = X.mean(axis=0)
    stds = X.std(axis=0, ddof=1)
    stds = np.maximum(stds, 1e-12)
    return Standardizer(means=means, stds=stds)


def identity_standardizer(n_features: int) -> Standardizer:
    return Standardizer(means=np.zeros(n_features), stds=np.ones(n_features))


def _resolve_gamma(spec: KernelSpec, Z: np.ndarray) -> KernelSpec:
    if spec.kind != RBF or spec.gamma is not None:
        return spec
    mean_var = float(Z.var(axis=0, ddof=0).mean())
    if mean_var <= 0:
        mean_var = 1.0
    return replace(spec, gamma=1.0 / (Z.shape[1] * mean_var))


def per_sample_c(params: SvmParams, y: np.ndarray) -> np.ndarray:
    """Box bound per sample; balanced mode scales by n / (2 * n_class)."""
    n = len(y)
    C = np.full(n, params.C, dtype=np.float64)
    if params.class_weighting == "balanced":
        for cls in (-1, 1):
            n_cls = int((y == cls).sum())
            C[y == cls] = params.C * n / (2.0 * n_cls)
    return C


def train_smo(X: np.ndarray, y: np.ndarray, params: SvmParams) -> TrainedSvm:
    """Train a soft-margin SVM; ``y`` entries must be -1 or +1."""
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if X.ndim != 2:
        raise ValueError(f"X must be 2-D, got shape {X.shape}")
    if len(X) != len(y):
        raise ValueError(f"X has {len(X)} rows but y has {len(y)} labels")
    if not np.all(np.isin(y, (-1.0, 1.0))):
        raise ValueError("labels must be -1 or +1")
    if len(np.unique(y)) < 2:
        raise ValueError("training needs both classes present")

    if params.standardize:
        standardizer = fit_standardizer(X)
    else:
        standardizer = identity_standardizer(X.shape[1])
    Z = standardizer.apply(X)
    spec = _resolve_gamma(params.kernel, Z)

    n = len(y)
    C_arr = per_sample_c(params, y)
    K = kernel_matrix(Z, _KIND_CODE[spec.kind], spec.gamma or 0.0)
    passes = params.max_passes if params.max_passes > 0 else 10 * n
    alpha, _, n_iter, converged = smo_solve(K, y, C_arr, params.tolerance, passes * n)
    if not converged:
        log.warning(
            "SMO did not reach tolerance %.3g within %d passes (n=%d); returning best iterate",
            params.tolerance,
            passes,
            n,
        )

    g = K @ (alpha * y)
    bias = _final_bias(alpha, y, g, C_arr)

    keep = alpha > _SV_PRUNE
    return TrainedSvm(
        support_vectors=np.ascontiguousarray(Z[keep]),
        dual_coeffs=alpha[keep] * y[keep],
        bias=bias,
        kernel=spec,
        standardizer=standardizer,
        converged=converged,
        n_iter=n_iter,
        alphas=alpha,
    )


def _final_bias(alpha: np.ndarray, y: np.ndarray, g: np.ndarray, C_arr: np.ndarray) -> float:
    """b averaged over free SVs; midpoint of the feasible interval otherwise."""
    targets = y - g  # b that puts each point exactly on its margin
    free = (alpha > _FREE_EPS) & (alpha < C_arr - _FREE_EPS)
    if np.any(free):
        total = 0.0
        for t in targets[free]:  # sequential sum: identical on both kernel paths
            total += float(t)
        return total / int(free.sum())
    # lower bounds come from {alpha=0, y=+1} and {alpha=C, y=-1}
    lo_mask = ((alpha <= _FREE_EPS) & (y > 0)) | ((alpha >= C_arr - _FREE_EPS) & (y < 0))
    hi_mask = ((alpha <= _FREE_EPS) & (y < 0)) | ((alpha >= C_arr - _FREE_EPS) & (y > 0))
    lo = float(targets[lo_mask].max()) if np.any(lo_mask) else -np.inf
    hi = float(targets[hi_mask].min()) if np.any(hi_mask) else np.inf
    if not np.isfinite(lo):
        return hi if np.isfinite(hi) else 0.0
    if not np.isfinite(hi):
        return lo
    return 0.5 * (lo + hi)


def decision_function(model: TrainedSvm, x: np.ndarray) -> float | np.ndarray:
    """f(x) = sum_i dual_coeffs_i K(sv_i, standardize(x)) + b."""
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    X = x[None, :] if single else x
    if X.shape[1] != model.n_features:
        raise ValueError(
            f"expected {model.n_features} features, got {X.shape[1]}"
        )
    Z = model.standardizer.apply(X)
    Kx = kernel_cross(
        model.support_vectors, Z, _KIND_CODE[model.kernel.kind], model.kernel.gamma or 0.0
    )
    f = model.dual_coeffs @ Kx + model.bias
    return float(f[0]) if single else f


def predict(model: TrainedSvm, x: np.ndarray) -> int | np.ndarray:
    """+1 (abnormal) where f(x) > 0, else -1; exact zero goes negative."""
    f = decision_function(model, x)
    if np.isscalar(f):
        return 1 if f > 0 else -1
    return np.where(f > 0, 1, -1)


def dual_objective(model_alpha: np.ndarray, y: np.ndarray, K: np.ndarray) -> float:
    a = np.asarray(model_alpha, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    ay = a * y
    return float(a.sum() - 0.5 * (ay @ K @ ay))


def kkt_violations(
    model: TrainedSvm, X: np.ndarray, y: np.ndarray, params: SvmParams
) -> np.ndarray:
    """Per-training-point KKT violation magnitudes for an audit.

    alpha = 0      needs y*f >= 1 (violation: shortfall)
    0 < alpha < C  needs y*f == 1 (violation: |y*f - 1|)
    alpha = C      needs y*f <= 1 (violation: excess)
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    f = decision_function(model, X)
    r = y * f - 1.0

    if model.alphas is None:
        raise ValueError("model carries no training alphas (loaded from file?)")
    alpha = model.alphas
    if len(alpha) != len(X):
        raise ValueError(f"model trained on {len(alpha)} rows, audit given {len(X)}")

    C_arr = per_sample_c(params, y)
    v = np.abs(r)
    v = np.where(alpha >= C_arr - _FREE_EPS, np.maximum(r, 0.0), v)
    v = np.where(alpha <= _SV_PRUNE, np.maximum(-r, 0.0), v)
    return v


# ---------------------------------------------------------------------------
# Versioned binary model file:
#   magic "ABRS1", header line "kind,n_features,n_support,converged\n",
#   then little-endian float64 blocks: gamma, bias, means, stds,
#   support_vectors (row-major), dual_coeffs, and a trailing 8-byte
#   BLAKE2b checksum of all preceding bytes.
# ---------------------------------------------------------------------------

_MODEL_MAGIC = b"ABRS1"


def _checksum(data: bytes) -> bytes:
    return blake2b(data, digest_size=8).digest()


def save_svm(model: TrainedSvm, path: str | Path) -> str:
    path = Path(path)
    d = model.n_features
    m = len(model.dual_coeffs)
    parts = [
        _MODEL_MAGIC,
        f"{model.kernel.kind},{d},{m},{int(model.converged)}\n".encode("utf-8"),
        struct.pack("<d", model.kernel.gamma if model.kernel.gamma is not None else np.nan),
        struct.pack("<d", model.bias),
        np.ascontiguousarray(model.standardizer.means, dtype="<f8").tobytes(),
        np.ascontiguousarray(model.standardizer.stds, dtype="<f8").tobytes(),
        np.ascontiguousarray(model.support_vectors, dtype="<f8").tobytes(),
        np.ascontiguousarray(model.dual_coeffs, dtype="<f8").tobytes(),
    ]
    blob = b"".join(parts)
    digest = _checksum(blob)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(blob + digest)
    tmp.replace(path)
    return digest.hex()


def load_svm(path: str | Path) -> TrainedSvm:
    path = Path(path)
    blob = path.read_bytes()
    if len(blob) < len(_MODEL_MAGIC) + 8 or not blob.startswith(_MODEL_MAGIC):
        raise ModelFileError(f"{path}: not a model file (bad magic)")
    payload, digest = blob[:-8], blob[-8:]
    if _checksum(payload) != digest:
        raise ModelFileError(f"{path}: checksum mismatch (corrupted file)")
    rest = payload[len(_MODEL_MAGIC) :]
    try:
        nl = rest.index(b"\n")
        kind, d, m, converged = rest[:nl].decode("utf-8").split(",")
        d, m = int(d), int(m)
    except (ValueError, UnicodeDecodeError) as exc:
        raise ModelFileError(f"{path}: malformed header") from exc
    body = rest[nl + 1 :]
    expected = 8 * (2 + 2 * d + m * d + m)
    if len(body) != expected:
        raise ModelFileError(f"{path}: truncated body ({len(body)} != {expected} bytes)")
    gamma = struct.unpack("<d", body[0:8])[0]
    bias = struct.unpack("<d", body[8:16])[0]
    off = 16
    means = np.frombuffer(body, dtype="<f8", count=d, offset=off).copy()
    off += 8 * d
    stds = np.frombuffer(body, dtype="<f8", count=d, offset=off).copy()
    off += 8 * d
    svs = np.frombuffer(body, dtype="<f8", count=m * d, offset=off).reshape(m, d).copy()
    off += 8 * m * d
    coeffs = np.frombuffer(body, dtype="<f8", count=m, offset=off).copy()
    spec = KernelSpec(kind=kind, gamma=None if np.isnan(gamma) else float(gamma))
    return TrainedSvm(
        support_vectors=svs,
        dual_coeffs=coeffs,
        bias=float(bias),
        kernel=spec,
        standardizer=Standardizer(means=means, stds=stds),
        converged=converged == "1",
    )
