"""Flow and vector-field estimators and observability diagnostics."""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import io
from .errors import ValidationError
from .filters import SpectralFilterSpec, apply_filter, spectral_decomposition
from .kernels import KernelSpec, cross_gram, gram, median_heuristic
from .sampling import Dataset
from .vlmm import VlmmScheme, label_matrix

__all__ = [
    "KernelExpansionModel",
    "ForcingMatrix",
    "ObservabilityReport",
    "resolve_kernel",
    "select_centers",
    "fit_flow",
    "build_forcing_matrix",
    "fit_field",
    "observability_report",
]

INPUT_KINDS = ("flow", "state")


@dataclass
class KernelExpansionModel:
    """``predict(z) = k(z, centers) @ coefficients``.

    ``input_kind`` is ``"flow"`` for inputs ``(x, h[, zeta])`` and ``"state"``
    for vector-field models evaluated at ``x``.
    """

    kernel: KernelSpec
    centers: np.ndarray
    coefficients: np.ndarray
    input_kind: str
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.input_kind not in INPUT_KINDS:
            raise ValidationError(f"input_kind must be one of {INPUT_KINDS}")
        self.centers = np.asarray(self.centers, dtype=float)
        self.coefficients = np.asarray(self.coefficients, dtype=float)

    @property
    def input_dim(self) -> int:
        return self.centers.shape[1]

    @property
    def output_dim(self) -> int:
        return self.coefficients.shape[1]

    def predict(self, points) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        if pts.shape[0] and pts.shape[1] != self.input_dim:
            raise ValidationError(f"points have {pts.shape[1]} columns, model expects {self.input_dim}")
        return cross_gram(self.kernel, pts.reshape(-1, self.input_dim), self.centers) @ self.coefficients

    __call__ = predict

    def to_dict(self) -> dict:
        return {
            "format": "specflow.kernel_expansion/1",
            "input_kind": self.input_kind,
            "kernel": self.kernel.to_dict(),
            "centers": self.centers.tolist(),
            "coefficients": self.coefficients.tolist(),
            "meta": self.meta,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "KernelExpansionModel":
        centers = np.asarray(d["centers"], dtype=float)
        coefs = np.asarray(d["coefficients"], dtype=float)
        return cls(
            kernel=KernelSpec.from_dict(d["kernel"]),
            centers=centers.reshape(len(d["centers"]), -1),
            coefficients=coefs.reshape(len(d["coefficients"]), -1),
            input_kind=d["input_kind"],
            meta=d.get("meta", {}),
        )

    def save(self, path) -> Path:
        return io.write_json(path, self.to_dict())

    @classmethod
    def load(cls, path) -> "KernelExpansionModel":
        return cls.from_dict(json.loads(Path(path).read_text()))


def resolve_kernel(kernel, points) -> KernelSpec:
    """Turn ``"median"`` (or ``None``) into a median-heuristic kernel for ``points``."""
    if isinstance(kernel, KernelSpec):
        return kernel
    if kernel is None or kernel == "median":
        return KernelSpec(tuple(median_heuristic(points)))
    return KernelSpec(tuple(np.atleast_1d(np.asarray(kernel, dtype=float))))


def dataset_fingerprint(dataset: Dataset) -> str:
    h = hashlib.sha256()
    for arr in (dataset.steps, dataset.states):
        h.update(np.ascontiguousarray(arr).tobytes())
    return h.hexdigest()


def fit_flow(
    dataset: Dataset,
    kernel,
    filt: SpectralFilterSpec,
    include_zeta: bool = True,
    decomposition=None,
) -> KernelExpansionModel:
    """Spectral-filter regression of next states on ``(x_prev, h[, zeta])``.

    Coefficients are ``g_lam(K / ell) Y / ell``; for Tikhonov this is kernel
    ridge regression ``(K + ell * lam * I)^{-1} Y``.
    """
    ell = len(dataset)
    if ell == 0:
        raise ValidationError("cannot fit on an empty dataset")
    Z = dataset.flow_inputs(include_zeta)
    Y = dataset.flow_targets()
    kern = resolve_kernel(kernel, Z)
    if decomposition is None:
        decomposition = spectral_decomposition(gram(kern, Z) / ell)
    coef = apply_filter(filt, None, Y / ell, decomposition=decomposition)
    meta = {"lambda": filt.lam, "filter": filt.label, "ell": ell, "include_zeta": bool(include_zeta),
            "dataset": dataset_fingerprint(dataset)}
    return KernelExpansionModel(kern, Z, coef, "flow", meta)


def flow_decomposition(dataset: Dataset, kernel, include_zeta: bool = True):
    """Kernel and eigendecomposition of ``K / ell`` for reuse across filters."""
    Z = dataset.flow_inputs(include_zeta)
    kern = resolve_kernel(kernel, Z)
    return kern, spectral_decomposition(gram(kern, Z) / len(dataset))


def select_centers(dataset: Dataset, max_centers: int = 400) -> np.ndarray:
    """Evenly spaced subsample of the distinct observed window states."""
    states = np.unique(dataset.states.reshape(-1, dataset.dim), axis=0)
    if states.shape[0] <= max_centers:
        return states
    idx = np.linspace(0, states.shape[0] - 1, max_centers).round().astype(int)
    return states[idx]


@dataclass
class ForcingMatrix:
    """Empirical Koopman-lag forcing matrix and aligned labels.

    ``matrix[k, i] = h_k * sum_j beta_j(zeta_k) * k(x_{k,j}, c_i)``; the same
    block applies to every output coordinate. ``labels[k]`` is the multistep
    left-hand side of window ``k``.
    """

    matrix: np.ndarray
    labels: np.ndarray
    h_values: np.ndarray
    scheme: VlmmScheme
    kernel: KernelSpec
    centers: np.ndarray


def build_forcing_matrix(dataset: Dataset, scheme: VlmmScheme, kernel, centers=None) -> ForcingMatrix:
    if dataset.M != scheme.M:
        raise ValidationError(f"dataset windows have M={dataset.M}, scheme {scheme.name} needs M={scheme.M}")
    if centers is None:
        centers = select_centers(dataset)
    centers = np.atleast_2d(np.asarray(centers, dtype=float))
    if centers.shape[1] != dataset.dim:
        raise ValidationError(f"centers have dimension {centers.shape[1]}, states have {dataset.dim}")
    kern = resolve_kernel(kernel, dataset.states.reshape(-1, dataset.dim))
    if kern.input_dim != dataset.dim:
        raise ValidationError(f"kernel expects dimension {kern.input_dim}, states have {dataset.dim}")
    alphas, betas = label_matrix(scheme, dataset.zeta)
    n_win, n_nodes, n = dataset.states.shape
    active = np.flatnonzero(np.any(betas != 0.0, axis=0))
    K = cross_gram(kern, dataset.states[:, active].reshape(-1, n), centers).reshape(n_win, active.size, -1)
    h = dataset.h
    B = h[:, None] * np.einsum("kj,kjc->kc", betas[:, active], K)
    # consistency (alphas sum to zero) lets the labels use differences to the anchor
    labels = np.einsum("kj,kjn->kn", alphas[:, :-1], dataset.states[:, :-1] - dataset.states[:, -1:])
    return ForcingMatrix(B, labels, h.copy(), scheme, kern, centers)


def fit_field(
    dataset: Dataset,
    scheme: VlmmScheme,
    kernel,
    filt: SpectralFilterSpec,
    centers=None,
    forcing: ForcingMatrix | None = None,
) -> KernelExpansionModel:
    """Vector-field estimator from the filtered normal equations of ``B c ~ labels``.

    Coefficients are ``g_lam(B^T B / ell) B^T L / ell`` for each output column.
    """
    ell = len(dataset)
    if ell == 0:
        raise ValidationError("cannot fit on an empty dataset")
    fm = forcing or build_forcing_matrix(dataset, scheme, kernel, centers)
    B = fm.matrix
    A = B.T @ B / ell
    coef = apply_filter(filt, A, B.T @ fm.labels / ell)
    meta = {"lambda": filt.lam, "filter": filt.label, "ell": ell, "scheme": scheme.name,
            "dataset": dataset_fingerprint(dataset)}
    return KernelExpansionModel(fm.kernel, fm.centers, coef, "state", meta)


@dataclass
class ObservabilityReport:
    c_obs_hat: float
    c_obs_over_h: float
    spectrum_head: list[float]
    spectrum_tail: list[float]
    interlacing_ok: bool
    h_scaling_slope: float | None = None


def observability_report(forcing, normalization: str = "per_sample", seed: int = 0) -> ObservabilityReport:
    """Smallest singular value of ``B / sqrt(ell)`` as an empirical ``c_obs``.

    ``forcing`` may be a :class:`ForcingMatrix` or a bare matrix. When ``B``
    has fewer rows than columns, ``B^T B`` is singular and ``c_obs_hat = 0``.
    """
    if normalization != "per_sample":
        raise ValidationError(f"unsupported normalization {normalization!r}")
    B = forcing.matrix if isinstance(forcing, ForcingMatrix) else np.asarray(forcing, dtype=float)
    h_values = forcing.h_values if isinstance(forcing, ForcingMatrix) else None
    if B.ndim != 2 or B.size == 0:
        raise ValidationError("forcing matrix must be a nonempty 2-D array")
    ell, n_c = B.shape
    sv = np.linalg.svd(B / np.sqrt(ell), compute_uv=False)
    c_obs = float(sv[-1]) if ell >= n_c else 0.0
    # dropping columns cannot lower the smallest singular value of a tall matrix
    ok = True
    if ell >= n_c and n_c > 1:
        rng = np.random.default_rng(seed)
        cols = np.sort(rng.choice(n_c, size=max(1, n_c // 2), replace=False))
        sub = np.linalg.svd(B[:, cols] / np.sqrt(ell), compute_uv=False)[-1]
        ok = bool(c_obs <= sub * (1 + 1e-10) + 1e-300)
    h_ref = float(np.median(h_values)) if h_values is not None else 1.0
    return ObservabilityReport(
        c_obs_hat=c_obs,
        c_obs_over_h=c_obs / h_ref,
        spectrum_head=[float(v) for v in sv[:5]],
        spectrum_tail=[float(v) for v in sv[-5:]],
        interlacing_ok=ok,
    )
