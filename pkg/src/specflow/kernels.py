"""Gaussian kernels on state space and windowed flow space."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import cdist

from .errors import ConfigurationError, ValidationError

log = logging.getLogger(__name__)

__all__ = ["KernelSpec", "gram", "cross_gram", "median_heuristic"]


@dataclass(frozen=True)
class KernelSpec:
    """Scalar Gaussian RBF with per-coordinate lengthscales.

    Vector-valued outputs use the scalar kernel times the identity, so
    ``output_dim`` only records how many output columns a model carries.
    """

    lengthscales: tuple[float, ...]
    family: str = "gaussian_rbf"
    output_dim: int = 1

    def __post_init__(self):
        if self.family != "gaussian_rbf":
            raise ConfigurationError(f"unsupported kernel family {self.family!r}")
        ls = tuple(float(v) for v in np.atleast_1d(self.lengthscales))
        if not ls or any(not (v > 0 and np.isfinite(v)) for v in ls):
            raise ValidationError(f"lengthscales must be positive and finite, got {ls}")
        object.__setattr__(self, "lengthscales", ls)

    @property
    def input_dim(self) -> int:
        return len(self.lengthscales)

    def to_dict(self) -> dict:
        return {"family": self.family, "lengthscales": list(self.lengthscales), "output_dim": self.output_dim}

    @classmethod
    def from_dict(cls, d: dict) -> "KernelSpec":
        return cls(lengthscales=tuple(d["lengthscales"]), family=d.get("family", "gaussian_rbf"),
                   output_dim=int(d.get("output_dim", 1)))


def _scaled(spec: KernelSpec, points) -> np.ndarray:
    pts = np.asarray(points, dtype=float)
    if pts.ndim == 1:
        pts = pts[:, None] if spec.input_dim == 1 else pts[None, :]
    if pts.shape[1] != spec.input_dim:
        raise ValidationError(f"points have dimension {pts.shape[1]}, kernel expects {spec.input_dim}")
    return pts / np.asarray(spec.lengthscales)


def cross_gram(spec: KernelSpec, points_a, points_b) -> np.ndarray:
    """``K[i, j] = exp(-0.5 * sum_c ((a_i - b_j)_c / l_c)^2)``."""
    a = _scaled(spec, points_a)
    b = _scaled(spec, points_b)
    if a.shape[0] == 0 or b.shape[0] == 0:
        return np.zeros((a.shape[0], b.shape[0]))
    return np.exp(-0.5 * cdist(a, b, "sqeuclidean"))


def gram(spec: KernelSpec, points) -> np.ndarray:
    """Symmetric Gram matrix; the diagonal is exactly one."""
    K = cross_gram(spec, points, points)
    K = 0.5 * (K + K.T)
    np.fill_diagonal(K, 1.0)
    return K


def median_heuristic(points, max_points: int = 1000) -> np.ndarray:
    """Per-coordinate median of nonzero pairwise absolute differences.

    At most ``max_points`` evenly spaced rows are used. A coordinate with no
    nonzero difference falls back to 1.0 (with a warning).
    """
    pts = np.asarray(points, dtype=float)
    if pts.ndim == 1:
        pts = pts[:, None]
    if pts.shape[0] > max_points:
        idx = np.linspace(0, pts.shape[0] - 1, max_points).round().astype(int)
        pts = pts[idx]
    iu = np.triu_indices(pts.shape[0], k=1)
    out = np.empty(pts.shape[1])
    for c in range(pts.shape[1]):
        col = pts[:, c]
        diffs = np.abs(col[:, None] - col[None, :])[iu]
        diffs = diffs[diffs > 0]
        if diffs.size == 0:
            log.warning("coordinate %d is constant; lengthscale falls back to 1.0", c)
            out[c] = 1.0
        else:
            out[c] = float(np.median(diffs))
    return out
