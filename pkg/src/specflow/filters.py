"""Spectral filters and their qualification.

A filter ``g_lam`` approximates ``1/sigma`` on ``[0, kappa^2]``. It acts on a
symmetric PSD matrix through its eigendecomposition.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, ValidationError

__all__ = [
    "SpectralFilterSpec",
    "parse_filter",
    "filter_value",
    "apply_filter",
    "qualification_check",
    "gp_lambda",
]

FAMILIES = ("tikhonov", "iterated_tikhonov", "landweber", "cutoff")


@dataclass(frozen=True)
class SpectralFilterSpec:
    family: str
    lam: float
    order_t: int = 1
    landweber_tau: float = 1.0
    lipschitz_mu: float = 1.0
    kappa_sq: float = 1.0
    qualification_nu: float = field(init=False)
    beta_exponent: float = field(init=False)

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ConfigurationError(f"unknown filter family {self.family!r}")
        if not (self.lam > 0 and math.isfinite(self.lam)):
            raise ValidationError(f"filter lambda must be positive, got {self.lam}")
        if self.family == "iterated_tikhonov" and self.order_t < 1:
            raise ValidationError("iterated Tikhonov order must be >= 1")
        if self.family == "landweber":
            if not self.landweber_tau > 0:
                raise ValidationError("Landweber step must be positive")
            if self.landweber_tau * self.kappa_sq > 1.0:
                raise ValidationError("Landweber step times kappa^2 exceeds 1; the iteration would not be monotone")
        nu = {"tikhonov": 1.0, "iterated_tikhonov": float(self.order_t)}.get(self.family, math.inf)
        object.__setattr__(self, "qualification_nu", nu)
        object.__setattr__(self, "beta_exponent", max(1.0, 2.0 * self.lipschitz_mu))

    @property
    def landweber_steps(self) -> int:
        return math.ceil(1.0 / self.lam - 1e-12)

    def with_lambda(self, lam: float) -> "SpectralFilterSpec":
        return SpectralFilterSpec(self.family, lam, self.order_t, self.landweber_tau, self.lipschitz_mu, self.kappa_sq)

    @property
    def label(self) -> str:
        if self.family == "iterated_tikhonov":
            return f"itik:{self.order_t}"
        return self.family


def parse_filter(text: str) -> SpectralFilterSpec:
    """Parse ``"tikhonov:1e-3"``, ``"itik:3:1e-3"``, ``"landweber:1e-2"``, ``"cutoff:1e-4"``."""
    parts = text.strip().lower().split(":")
    try:
        if parts[0] == "tikhonov" and len(parts) == 2:
            return SpectralFilterSpec("tikhonov", float(parts[1]))
        if parts[0] in ("itik", "iterated_tikhonov") and len(parts) == 3:
            return SpectralFilterSpec("iterated_tikhonov", float(parts[2]), order_t=int(parts[1]))
        if parts[0] == "landweber" and len(parts) in (2, 3):
            tau = float(parts[2]) if len(parts) == 3 else 1.0
            return SpectralFilterSpec("landweber", float(parts[1]), landweber_tau=tau)
        if parts[0] == "cutoff" and len(parts) == 2:
            return SpectralFilterSpec("cutoff", float(parts[1]))
    except ValueError as exc:
        raise ConfigurationError(f"cannot parse filter {text!r}: {exc}") from None
    raise ConfigurationError(f"cannot parse filter {text!r}")


def gp_lambda(noise_variance: float, ell: int) -> float:
    """Tikhonov parameter matching Gaussian-process regression: ``sigma_y^2 / ell``."""
    return noise_variance / ell


def filter_value(spec: SpectralFilterSpec, sigma) -> np.ndarray:
    """Evaluate ``g_lam(sigma)`` elementwise; limits at ``sigma = 0`` are exact."""
    s = np.asarray(sigma, dtype=float)
    if np.any(s < 0):
        raise ValidationError("filter argument must be nonnegative")
    lam = spec.lam
    with np.errstate(divide="ignore", invalid="ignore"):
        if spec.family == "tikhonov":
            out = 1.0 / (s + lam)
        elif spec.family == "iterated_tikhonov":
            t = spec.order_t
            # (1 - (lam/(s+lam))^t) / s, written to avoid cancellation
            out = np.where(s > 0, -np.expm1(-t * np.log1p(s / lam)) / s, t / lam)
        elif spec.family == "landweber":
            m = spec.landweber_steps
            tau = spec.landweber_tau
            q = tau * s
            # 1 - (1 - q)^m, stable for small q
            num = np.where(q < 1.0, -np.expm1(m * np.log1p(-np.minimum(q, 0.5))), 1.0 - (1.0 - q) ** m)
            num = np.where((q >= 0.5) & (q < 1.0), 1.0 - (1.0 - q) ** m, num)
            out = np.where(s > 0, num / np.where(s > 0, s, 1.0), m * tau)
        else:
            out = np.where(s >= lam, 1.0 / np.where(s > 0, s, 1.0), 0.0)
    return out


def _check_symmetric(A) -> np.ndarray:
    A = np.asarray(A, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValidationError(f"expected a square matrix, got shape {A.shape}")
    scale = max(1.0, float(np.max(np.abs(A)))) if A.size else 1.0
    if A.size and np.max(np.abs(A - A.T)) > 1e-10 * scale:
        raise ValidationError("matrix is not symmetric within 1e-10")
    return 0.5 * (A + A.T)


def spectral_decomposition(A) -> tuple[np.ndarray, np.ndarray]:
    """Eigenpairs of a symmetric PSD matrix with negative eigenvalues clamped to 0."""
    A = _check_symmetric(A)
    w, V = np.linalg.eigh(A)
    return np.maximum(w, 0.0), V


def apply_filter(spec: SpectralFilterSpec, A, rhs, decomposition=None) -> np.ndarray:
    """Return ``V diag(g_lam(sigma)) V^T rhs`` for ``A = V diag(sigma) V^T``.

    A precomputed ``decomposition`` (from :func:`spectral_decomposition`) can be
    passed to reuse one eigendecomposition across several filters.
    """
    w, V = decomposition if decomposition is not None else spectral_decomposition(A)
    rhs = np.asarray(rhs, dtype=float)
    vec = rhs.ndim == 1
    rhs2 = rhs[:, None] if vec else rhs
    if rhs2.shape[0] != V.shape[0]:
        raise ValidationError(f"rhs has {rhs2.shape[0]} rows, matrix has {V.shape[0]}")
    if spec.family == "landweber" and w.size and w[-1] > spec.kappa_sq * (1 + 1e-9):
        raise ValidationError(
            f"largest eigenvalue {w[-1]:.4g} exceeds kappa^2={spec.kappa_sq}; rescale or raise kappa_sq"
        )
    g = filter_value(spec, w)
    out = V @ (g[:, None] * (V.T @ rhs2))
    return out[:, 0] if vec else out


@dataclass
class QualificationReport:
    family: str
    nu: float
    gamma_hat: float
    per_lambda: np.ndarray  # max over sigma of |1 - sigma g| sigma^nu / lam^nu
    lambdas: np.ndarray
    growth_per_decade: float


def qualification_check(spec: SpectralFilterSpec, nu_grid, sigma_grid, lambda_grid) -> list[QualificationReport]:
    """Empirical qualification constants ``max |1 - sigma g(sigma)| sigma^nu / lam^nu``.

    For each ``nu`` the ratio is maximised over ``sigma_grid`` per ``lam`` and
    then over ``lambda_grid``. ``growth_per_decade`` is the geometric-mean
    factor by which the per-lambda maximum grows when lambda shrinks tenfold
    (about 1 for a qualified order, about 10 for Tikhonov at ``nu = 2``).
    """
    sig = np.asarray(sigma_grid, dtype=float)
    lams = np.asarray(lambda_grid, dtype=float)
    if sig.size == 0 or lams.size == 0:
        raise ValidationError("grids must be nonempty")
    if np.any(sig <= 0) or np.any(sig > spec.kappa_sq):
        raise ValidationError("sigma grid must lie in (0, kappa^2]")
    if np.any(lams <= 0) or np.any(lams > 1):
        raise ValidationError("lambda grid must lie in (0, 1]")
    reports = []
    for nu in np.asarray(nu_grid, dtype=float):
        per_lam = np.empty(lams.size)
        for i, lam in enumerate(lams):
            g = filter_value(spec.with_lambda(lam), sig)
            per_lam[i] = np.max(np.abs(1.0 - sig * g) * sig**nu) / lam**nu
        order = np.argsort(lams)
        if lams.size > 1 and lams[order[-1]] > lams[order[0]]:
            decades = math.log10(lams[order[-1]] / lams[order[0]])
            growth = (per_lam[order[0]] / per_lam[order[-1]]) ** (1.0 / decades)
        else:
            growth = float("nan")
        reports.append(QualificationReport(spec.label, float(nu), float(per_lam.max()), per_lam, lams, float(growth)))
    return reports
