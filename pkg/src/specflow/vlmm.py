"""Variable-step linear multistep coefficients, label map and residual.

A window holds ``M+1`` states ``x_0 .. x_M`` (oldest to newest) separated by
steps ``h_0 .. h_{M-1}``; the anchor step is ``h = h_{M-1}`` and the ratio
vector is ``zeta_i = h_i / h_{i-1}`` for ``i = 1 .. M-1``. A scheme relates

    x_M + sum_{j<M} alpha_j x_j  =  h * sum_{j<=M} beta_j f(x_j)

with coefficients depending on ``zeta`` only. They are found by imposing
exactness on monomials of degree ``<= p`` at the nodes ``s_j = (t_j - t_M)/h``,
rescaled by the window length so the order-condition matrix lives on
``[-1, 0]``. The small linear solve is polished with iterative refinement
whose residuals are accumulated in extended precision.
"""

from __future__ import annotations

import functools
from dataclasses import dataclass, field

import numpy as np

from .dynamics import ReferenceFlow, VectorFieldSpec, flow_backward
from .errors import ConfigurationError, NumericalError, ValidationError

__all__ = [
    "VlmmScheme",
    "WindowCoefficients",
    "parse_scheme",
    "window_nodes",
    "coefficients",
    "exactness_residual",
    "apply_label_map",
    "residual_ms",
    "lte_constant_probe",
    "LteProbe",
]

FAMILIES = ("AB", "AM", "BDF")
COND_LIMIT = 1e12


@dataclass(frozen=True)
class VlmmScheme:
    family: str
    M: int
    p: int = field(init=False)
    implicit: bool = field(init=False)

    def __post_init__(self):
        family = self.family.upper()
        if family not in FAMILIES:
            raise ConfigurationError(f"unknown scheme family {self.family!r}")
        if self.M < 1:
            raise ConfigurationError("scheme window size M must be >= 1")
        if family == "BDF" and self.M > 6:
            raise ConfigurationError("BDF is only zero-stable for M <= 6")
        object.__setattr__(self, "family", family)
        object.__setattr__(self, "p", self.M + 1 if family == "AM" else self.M)
        object.__setattr__(self, "implicit", family != "AB")

    @property
    def name(self) -> str:
        return f"{self.family.lower()}{self.M}"


def parse_scheme(text: str) -> VlmmScheme:
    """Parse ``"ab2"``, ``"am3"``, ``"bdf4"`` (case-insensitive)."""
    t = text.strip().lower()
    for fam in ("bdf", "ab", "am"):
        if t.startswith(fam) and t[len(fam):].isdigit():
            return VlmmScheme(fam.upper(), int(t[len(fam):]))
    raise ConfigurationError(f"cannot parse scheme {text!r}; expected e.g. 'ab2', 'am3', 'bdf4'")


@dataclass(frozen=True)
class WindowCoefficients:
    """Coefficients of one window.

    ``alpha`` has ``M`` entries (past states, oldest first; the anchor state
    carries coefficient 1), ``beta`` has ``M+1`` entries and ``lags`` holds the
    backshift of each node from the anchor in units of the anchor step, so
    ``lags[-1] == 0``.
    """

    alpha: np.ndarray
    beta: np.ndarray
    lags: np.ndarray
    zeta: np.ndarray
    cond: float

    def lag_times(self, h: float) -> np.ndarray:
        return h * self.lags


def window_nodes(zeta, M: int, dtype=float) -> np.ndarray:
    """Node positions ``(t_j - t_M) / h`` for ``j = 0..M``."""
    zeta = np.asarray(zeta, dtype=float).reshape(-1)
    if zeta.size != M - 1:
        raise ValidationError(f"zeta must have M-1={M - 1} entries, got {zeta.size}")
    if np.any(~np.isfinite(zeta)) or np.any(zeta <= 0):
        raise ValidationError("step ratios must be positive and finite")
    zeta = zeta.astype(dtype)
    g = np.empty(M, dtype=dtype)
    g[M - 1] = 1
    for i in range(M - 1, 0, -1):
        g[i - 1] = g[i] / zeta[i - 1]
    nodes = np.zeros(M + 1, dtype=dtype)
    nodes[:M] = -np.cumsum(g[::-1])[::-1]
    return nodes


def _layout(scheme: VlmmScheme):
    """Free unknowns as (kind, node) pairs, fixed alphas and the degree rows."""
    M = scheme.M
    if scheme.family == "BDF":
        free = [("a", j) for j in range(M)] + [("b", M)]
        fixed_alpha = {}
        degrees = range(0, scheme.p + 1)
    else:
        # Adams: x_M - x_{M-1}; the degree-0 condition holds identically
        nodes_b = range(M) if scheme.family == "AB" else range(M + 1)
        free = [("b", j) for j in nodes_b]
        fixed_alpha = {M - 1: -1.0}
        degrees = range(1, scheme.p + 1)
    return free, fixed_alpha, list(degrees)


def _refined_solve(A_ext: np.ndarray, b_ext: np.ndarray, sweeps: int = 4) -> np.ndarray:
    # LU in double precision, residuals against the extended-precision system
    A = A_ext.astype(float)
    x = np.linalg.solve(A, b_ext.astype(float)).astype(np.longdouble)
    for _ in range(sweeps):
        r = b_ext - A_ext @ x
        x = x + np.linalg.solve(A, r.astype(float))
    return x


def _coefficients(scheme: VlmmScheme, zeta: tuple[float, ...]) -> WindowCoefficients:
    M = scheme.M
    ext = np.longdouble
    nodes = window_nodes(np.asarray(zeta), M, dtype=ext)
    length = -nodes[0]
    u = nodes / length  # in [-1, 0], anchor at 0
    free, fixed_alpha, degrees = _layout(scheme)
    A = np.zeros((len(degrees), len(free)), dtype=ext)
    rhs = np.zeros(len(degrees), dtype=ext)
    for r, d in enumerate(degrees):
        # q(s) = (s/length)^d  ->  q(s_j) = u_j^d,  dq/ds(s_j) = d u_j^(d-1) / length
        lhs_const = ext(1) if d == 0 else ext(0)  # anchor term, u_M = 0
        for j, a in fixed_alpha.items():
            lhs_const += a * u[j] ** d
        rhs[r] = -lhs_const
        for c, (kind, j) in enumerate(free):
            if kind == "a":
                A[r, c] = u[j] ** d
            elif d > 0:
                A[r, c] = -d * u[j] ** (d - 1)
    cond = float(np.linalg.cond(A.astype(float)))
    if not np.isfinite(cond) or cond > COND_LIMIT:
        raise NumericalError(
            f"order-condition system for {scheme.name} at zeta={list(zeta)} is ill-conditioned (cond={cond:.3g})"
        )
    sol = _refined_solve(A, rhs)
    alpha = np.zeros(M, dtype=ext)
    beta_scaled = np.zeros(M + 1, dtype=ext)
    for j, a in fixed_alpha.items():
        alpha[j] = a
    for val, (kind, j) in zip(sol, free):
        if kind == "a":
            alpha[j] = val
        else:
            beta_scaled[j] = val
    beta = (beta_scaled * length).astype(float)  # undo the window-length scaling
    alpha = alpha.astype(float)
    lags = (-nodes).astype(float) + 0.0  # adding 0.0 turns -0.0 into 0.0
    zeta_arr = np.asarray(zeta, dtype=float)
    for arr in (alpha, beta, lags, zeta_arr):
        arr.flags.writeable = False  # instances are shared through the cache
    return WindowCoefficients(alpha=alpha, beta=beta, lags=lags, zeta=zeta_arr, cond=cond)


@functools.lru_cache(maxsize=4096)
def _cached(family: str, M: int, zeta: tuple[float, ...]) -> WindowCoefficients:
    return _coefficients(VlmmScheme(family, M), zeta)


def coefficients(scheme: VlmmScheme, zeta=()) -> WindowCoefficients:
    """Coefficients ``alpha(zeta)``, ``beta(zeta)`` of ``scheme`` for one window.

    Raises :class:`NumericalError` when the order-condition matrix has
    condition number above ``1e12``.
    """
    key = tuple(float(z) for z in np.asarray(zeta, dtype=float).reshape(-1))
    if len(key) != scheme.M - 1:
        raise ValidationError(f"{scheme.name} needs {scheme.M - 1} step ratios, got {len(key)}")
    return _cached(scheme.family, scheme.M, key)


def exactness_residual(scheme: VlmmScheme, coeffs: WindowCoefficients) -> float:
    """Largest relative defect of the multistep identity on monomials of degree <= p.

    Monomials are taken in the window-length-scaled variable; each defect is
    divided by the sum of magnitudes of the terms entering it.
    """
    M = scheme.M
    nodes = -coeffs.lags
    length = coeffs.lags[0]
    u = nodes / length
    worst = 0.0
    for d in range(scheme.p + 1):
        vals = u**d
        ders = d * u ** (d - 1) / length if d > 0 else np.zeros_like(u)
        terms = np.concatenate([[vals[M]], coeffs.alpha * vals[:M], -coeffs.beta * ders])
        scale = max(np.sum(np.abs(terms)), 1e-300)
        worst = max(worst, abs(float(np.sum(terms))) / scale)
    return worst


def apply_label_map(coeffs: WindowCoefficients, window_states) -> np.ndarray:
    """Multistep left-hand side ``x_M + sum_j alpha_j x_j``.

    ``window_states`` has shape ``(..., M+1, n)``; the map is linear. It is
    evaluated as ``sum_j alpha_j (x_j - x_M)``, equal by the consistency
    condition ``1 + sum alpha = 0``, so constant windows give exactly zero.
    """
    states = np.asarray(window_states, dtype=float)
    M = coeffs.alpha.size
    if states.ndim < 2 or states.shape[-2] != M + 1:
        raise ValidationError(f"expected {M + 1} window states, got shape {states.shape}")
    return np.einsum("j,...jn->...n", coeffs.alpha, states[..., :M, :] - states[..., M:, :])


def label_matrix(scheme: VlmmScheme, zetas: np.ndarray):
    """Stack ``alpha`` (with the anchor's 1) and ``beta`` rows for many windows.

    ``zetas`` has shape ``(n_windows, M-1)``; a flat array is read as one
    ratio per window when ``M = 2``.
    """
    zetas = np.asarray(zetas, dtype=float)
    if zetas.ndim == 1:
        if scheme.M == 1 and zetas.size:
            raise ValidationError("one-step schemes take no step ratios")
        zetas = zetas.reshape(-1, scheme.M - 1)
    n = zetas.shape[0]
    alphas = np.empty((n, scheme.M + 1))
    betas = np.empty((n, scheme.M + 1))
    for i, z in enumerate(zetas):
        c = coefficients(scheme, z)
        alphas[i, :-1] = c.alpha
        alphas[i, -1] = 1.0
        betas[i] = c.beta
    return alphas, betas


def residual_ms(
    scheme: VlmmScheme, coeffs: WindowCoefficients, ref: ReferenceFlow, anchor_x, h, field=None
) -> np.ndarray:
    """vLMM residual on the exact trajectory ending at ``anchor_x``.

    Window states are recovered by backward reference flows over the lags
    ``h * coeffs.lags``; returns ``label - h * sum_j beta_j f(x_j)``, i.e. the
    local truncation error of the window. Batches of anchors are accepted.
    ``field`` replaces ``f`` in the forcing term (default: the system's own
    vector field), which gives the residual of a candidate field on the true
    trajectory.
    """
    x = np.asarray(anchor_x, dtype=float)
    single = x.ndim == 1
    x = np.atleast_2d(x)
    n_anchor, n = x.shape
    hb = np.broadcast_to(np.asarray(h, dtype=float), (n_anchor,))
    if np.any(hb <= 0):
        raise ValidationError("anchor step must be positive")
    M = scheme.M
    lags = coeffs.lags[:M]
    rep_x = np.repeat(x, M, axis=0)
    rep_tau = (hb[:, None] * lags[None, :]).reshape(-1)
    past = flow_backward(ref, rep_x, rep_tau).reshape(n_anchor, M, n)
    window = np.concatenate([past, x[:, None, :]], axis=1)
    label = apply_label_map(coeffs, window)
    f = ref.system.rhs if field is None else field
    fx = np.asarray(f(window.reshape(-1, n)), dtype=float).reshape(window.shape)
    forcing = hb[:, None] * np.einsum("j,ajn->an", coeffs.beta, fx)
    res = label - forcing
    return res[0] if single else res


@dataclass
class LteProbe:
    constant: float
    slope: float
    stderr: float
    intercept: float
    hs: np.ndarray
    max_residual: np.ndarray
    rms_residual: np.ndarray
    exact: bool


def probe_anchors(system: VectorFieldSpec, n_probes: int, seed: int) -> np.ndarray:
    box = system.design_box
    return np.random.default_rng(seed).uniform(box[:, 0], box[:, 1], size=(n_probes, system.dim))


def lte_constant_probe(
    scheme: VlmmScheme,
    system: VectorFieldSpec,
    hs,
    zetas=None,
    n_probes: int = 50,
    seed: int = 0,
    ref: ReferenceFlow | None = None,
    exact_floor: float = 1e-10,
) -> LteProbe:
    """Fit ``max ||residual|| ~ C h^slope`` over an ``h`` grid and ratio windows.

    ``zetas`` is a sequence of ratio vectors (default: the uniform window).
    The constant is ``exp(intercept)`` of the log-log fit. When every residual
    sits below ``exact_floor`` the probe is flagged exact and the slope is NaN.
    """
    from .slopes import fit_loglog_slope

    hs = np.asarray(hs, dtype=float)
    if hs.size < 2 or np.unique(hs).size < 2:
        raise ValidationError("lte probe needs at least two distinct step sizes")
    if n_probes < 1:
        raise ValidationError("n_probes must be >= 1")
    ref = ref or ReferenceFlow(system)
    if zetas is None:
        zetas = [np.ones(scheme.M - 1)]
    anchors = probe_anchors(system, n_probes, seed)
    max_res = np.zeros(hs.size)
    rms_res = np.zeros(hs.size)
    for i, h in enumerate(hs):
        norms = []
        for z in zetas:
            c = coefficients(scheme, z)
            r = residual_ms(scheme, c, ref, anchors, h)
            norms.append(np.linalg.norm(r, axis=1))
        norms = np.concatenate(norms)
        max_res[i] = norms.max()
        rms_res[i] = np.sqrt(np.mean(norms**2))
    if np.all(max_res < exact_floor):
        return LteProbe(float(max_res.max()), float("nan"), float("nan"), float("nan"), hs, max_res, rms_res, True)
    slope, stderr, intercept = fit_loglog_slope(hs, max_res, min_points=2)
    return LteProbe(float(np.exp(intercept)), slope, stderr, intercept, hs, max_res, rms_res, False)
