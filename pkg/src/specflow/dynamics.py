"""Benchmark vector fields and the high-accuracy reference flow.

The reference flow is a batched Dormand--Prince 5(4) integrator with adaptive
substeps. A batch of initial states with *individual* horizons is integrated
jointly on the rescaled time ``s in [0, 1]`` (``dx/ds = h_i f(x)``), so every
window of a dataset can be advanced in a single vectorised sweep. Error control
uses the max-norm over the whole batch, which makes the local error bound hold
for every member individually.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np
from scipy.linalg import expm

from .errors import ConfigurationError, NumericalError, ValidationError

__all__ = [
    "VectorFieldSpec",
    "ReferenceFlow",
    "BENCHMARKS",
    "make_benchmark",
    "flow",
    "flow_backward",
    "integrate_steps",
]

ANALYTIC = 99  # smoothness_order reported for analytic fields


@dataclass(frozen=True)
class VectorFieldSpec:
    """A benchmark system ``x' = f(x) + g(x) u(t)``.

    ``eval_f`` is vectorised over leading axes: it maps ``(..., n)`` arrays to
    ``(..., n)`` arrays. ``domain_box`` and ``design_box`` are ``(n, 2)`` arrays
    of lower/upper bounds; the first is the forward-invariant set used for
    safety checks, the second the default initial-condition box.
    """

    name: str
    dim: int
    eval_f: Callable[[np.ndarray], np.ndarray]
    domain_box: np.ndarray
    design_box: np.ndarray
    smoothness_order: int = ANALYTIC
    eval_g: Callable[[np.ndarray], np.ndarray] | None = None
    input_signal: Callable[[float], np.ndarray] | None = None
    exact_flow: Callable[[np.ndarray, np.ndarray], np.ndarray] | None = None
    params: Mapping[str, object] = field(default_factory=dict)

    def rhs(self, x: np.ndarray, t: np.ndarray | float = 0.0) -> np.ndarray:
        out = self.eval_f(x)
        if self.eval_g is not None and self.input_signal is not None:
            t = np.broadcast_to(np.asarray(t, dtype=float), x.shape[:-1])
            u = np.stack([np.atleast_1d(self.input_signal(ti)) for ti in t.ravel()])
            u = u.reshape(t.shape + (-1,))
            out = out + np.einsum("...ij,...j->...i", self.eval_g(x), u)
        return out

    def safety_box(self, factor: float = 2.0) -> np.ndarray:
        """Domain box enlarged about its centre by ``factor``."""
        centre = self.domain_box.mean(axis=1)
        half = 0.5 * (self.domain_box[:, 1] - self.domain_box[:, 0])
        return np.stack([centre - factor * half, centre + factor * half], axis=1)


@dataclass(frozen=True)
class ReferenceFlow:
    system: VectorFieldSpec
    tolerance: float = 1e-12
    max_substep: float = math.inf

    def __post_init__(self):
        if not (self.tolerance > 0 and self.max_substep > 0):
            raise ValidationError("tolerance and max_substep must be positive")


# ---------------------------------------------------------------------------
# benchmark registry


def _box(values, dim) -> np.ndarray:
    box = np.asarray(values, dtype=float)
    if box.shape == (2,):
        box = np.tile(box, (dim, 1))
    if box.shape != (dim, 2) or not np.all(box[:, 0] < box[:, 1]):
        raise ValidationError(f"box must be ({dim}, 2) with lower < upper, got {values!r}")
    return box


def _van_der_pol(params):
    mu = params.get("mu", 1.0)

    def f(x):
        x1, x2 = x[..., 0], x[..., 1]
        return np.stack([x2, mu * (1.0 - x1 * x1) * x2 - x1], axis=-1)

    return dict(dim=2, eval_f=f, design=[-2.0, 2.0], domain=[[-3.0, 3.0], [-4.0, 4.0]] if mu <= 1.5 else None)


def _duffing(params):
    alpha = params.get("alpha", 1.0)
    beta = params.get("beta", 1.0)
    delta = params.get("delta", 0.1)

    def f(x):
        x1, x2 = x[..., 0], x[..., 1]
        return np.stack([x2, -delta * x2 - alpha * x1 - beta * x1**3], axis=-1)

    return dict(dim=2, eval_f=f, design=[-1.0, 1.0], domain=[-2.0, 2.0])


def _mass_spring(params):
    k = params.get("k", 1.0)
    m = params.get("m", 1.0)
    c = params.get("c", 0.0)
    if k <= 0 or m <= 0 or c < 0:
        raise ValidationError("mass_spring needs k > 0, m > 0, c >= 0")
    a = np.array([[0.0, 1.0], [-k / m, -c / m]])
    # energy of the design-box corners bounds the orbit
    energy = 0.5 * (k + m)
    r1, r2 = 1.05 * math.sqrt(2 * energy / k), 1.05 * math.sqrt(2 * energy / m)
    domain = [[-r1, r1], [-r2, r2]]

    def f(x):
        return x @ a.T

    return dict(dim=2, eval_f=f, design=[-1.0, 1.0], domain=domain, exact=_linear_exact(a))


def _linear_exact(a):
    def exact(x, t):
        x = np.asarray(x, dtype=float)
        t = np.broadcast_to(np.asarray(t, dtype=float), x.shape[:-1])
        out = np.empty_like(x)
        for idx in np.ndindex(t.shape):
            out[idx] = expm(a * t[idx]) @ x[idx]
        return out

    return exact


def _linear_2d(params):
    a = np.asarray(params.get("A", [[0.0, 1.0], [-1.0, 0.0]]), dtype=float)
    if a.shape != (2, 2):
        raise ValidationError("linear_2d needs a 2x2 matrix A")

    def f(x):
        return x @ a.T

    return dict(dim=2, eval_f=f, design=[-1.0, 1.0], domain=[-1.5, 1.5], exact=_linear_exact(a))


def _polynomial_chain(params):
    # x1' = 1, x_i' = x_{i-1}: component i is a degree-i polynomial in time
    degree = int(params.get("degree", 2))
    if degree < 1:
        raise ValidationError("polynomial_chain needs degree >= 1")
    aug = np.zeros((degree + 1, degree + 1))
    aug[0, degree] = 1.0
    for i in range(1, degree):
        aug[i, i - 1] = 1.0

    def f(x):
        out = np.empty_like(x)
        out[..., 0] = 1.0
        out[..., 1:] = x[..., :-1]
        return out

    def exact(x, t):
        x = np.asarray(x, dtype=float)
        ones = np.ones(x.shape[:-1] + (1,))
        return _linear_exact(aug)(np.concatenate([x, ones], axis=-1), t)[..., :degree]

    return dict(dim=degree, eval_f=f, design=[-1.0, 1.0], domain=[-10.0, 10.0], exact=exact)


def _constant(params):
    c = np.atleast_1d(np.asarray(params.get("c", [0.0, 0.0]), dtype=float))

    def f(x):
        return np.broadcast_to(c, x.shape).copy()

    def exact(x, t):
        t = np.asarray(t, dtype=float)[..., None]
        return np.asarray(x, dtype=float) + t * c

    return dict(dim=c.size, eval_f=f, design=[-1.0, 1.0], domain=[-10.0, 10.0], exact=exact)


BENCHMARKS = {
    "van_der_pol": _van_der_pol,
    "duffing": _duffing,
    "mass_spring": _mass_spring,
    "linear_2d": _linear_2d,
    "polynomial_chain": _polynomial_chain,
    "constant": _constant,
}


def _check_finite(params, path="params"):
    for key, value in params.items():
        if key in ("design_box", "domain_box"):
            continue
        arr = np.asarray(value, dtype=float) if not isinstance(value, str) else None
        if arr is not None and not np.all(np.isfinite(arr)):
            raise ValidationError(f"{path}.{key} is not finite: {value!r}")


def make_benchmark(name: str, params: Mapping[str, object] | None = None) -> VectorFieldSpec:
    """Build a named benchmark system.

    ``params`` supplies system constants; ``design_box``/``domain_box`` may
    override the shipped boxes. Defaults: van_der_pol ``mu=1``; duffing
    ``alpha=1, beta=1, delta=0.1``; mass_spring ``k=1, m=1, c=0``; linear_2d
    ``A=[[0,1],[-1,0]]``; polynomial_chain ``degree=2``; constant ``c=[0,0]``.
    """
    if name not in BENCHMARKS:
        raise ConfigurationError(f"unknown system {name!r}; choose from {sorted(BENCHMARKS)}")
    params = dict(params or {})
    _check_finite(params)
    spec = BENCHMARKS[name](params)
    dim = spec["dim"]
    if spec["domain"] is None and "domain_box" not in params:
        raise ConfigurationError(f"{name} with these parameters needs an explicit domain_box")
    domain = _box(params.get("domain_box", spec["domain"]), dim)
    design = _box(params.get("design_box", spec["design"]), dim)
    if np.any(design[:, 0] < domain[:, 0]) or np.any(design[:, 1] > domain[:, 1]):
        raise ConfigurationError("design_box must lie inside domain_box")
    return VectorFieldSpec(
        name=name,
        dim=dim,
        eval_f=spec["eval_f"],
        domain_box=domain,
        design_box=design,
        exact_flow=spec.get("exact"),
        params=params,
    )


# ---------------------------------------------------------------------------
# Dormand--Prince 5(4)

_C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0])
_A = [
    [],
    [1 / 5],
    [3 / 40, 9 / 40],
    [44 / 45, -56 / 15, 32 / 9],
    [19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729],
    [9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656],
    [35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84],
]
_B = np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0.0])
_BHAT = np.array([5179 / 57600, 0.0, 7571 / 16695, 393 / 640, -92097 / 339200, 187 / 2100, 1 / 40])
_E = _B - _BHAT


def _integrate_scaled(ref: ReferenceFlow, x0: np.ndarray, span: np.ndarray, t0: np.ndarray) -> np.ndarray:
    """Integrate ``dx/ds = span * rhs(x, t0 + s*span)`` from s=0 to s=1."""
    system = ref.system
    tol = ref.tolerance
    span_col = span[:, None]

    def g(s, y):
        return span_col * system.rhs(y, t0 + s * span)

    y = x0.copy()
    s = 0.0
    k1 = g(s, y)
    max_span = float(np.max(np.abs(span))) if span.size else 0.0
    if max_span == 0.0:
        return y
    ds_cap = min(1.0, ref.max_substep / max_span)
    # initial step from the size of the derivative
    scale = tol * (1.0 + np.abs(y))
    d0 = float(np.max(np.abs(y) / scale))
    d1 = float(np.max(np.abs(k1) / scale))
    ds = 0.01 * d0 / d1 if d0 > 1e-5 and d1 > 1e-5 else 1e-6
    ds = min(ds, ds_cap, 1.0)
    ds = max(ds, 1e-6)
    ks = [None] * 7
    with np.errstate(over="ignore", invalid="ignore"):
        # overflow shows up as a non-finite error norm and is raised below
        return _dopri_loop(g, y, s, k1, ds, ds_cap, tol, ks)


def _dopri_loop(g, y, s, k1, ds, ds_cap, tol, ks):
    while s < 1.0:
        if 1.0 - s < 1e-15:
            break
        ds = min(ds, 1.0 - s)
        ks[0] = k1
        for i in range(1, 7):
            yi = y + ds * sum(a * k for a, k in zip(_A[i], ks[:i]) if a != 0.0)
            ks[i] = g(s + _C[i] * ds, yi)
        y_new = yi  # stage 7 is evaluated at the 5th-order solution (FSAL)
        err = ds * sum(e * k for e, k in zip(_E, ks) if e != 0.0)
        sc = tol * (1.0 + np.maximum(np.abs(y), np.abs(y_new)))
        ratio = np.abs(err) / sc
        err_norm = float(np.max(ratio))
        if not np.isfinite(err_norm):
            bad = int(np.argmax(~np.all(np.isfinite(y_new), axis=1)))
            raise NumericalError("non-finite state during integration", state=y[bad].copy())
        if err_norm <= 1.0:
            s = s + ds
            y = y_new
            k1 = ks[6]
            fac = 5.0 if err_norm == 0.0 else min(5.0, max(0.2, 0.9 * err_norm ** -0.2))
            ds = min(ds * fac, ds_cap)
        else:
            ds = ds * max(0.1, 0.9 * err_norm ** -0.2)
            if ds < 1e-13:
                worst = int(np.argmax(np.max(ratio, axis=1)))
                raise NumericalError("step size underflow in reference integrator", state=y[worst].copy())
    return y


def _as_batch(ref, x, h):
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    xb = np.atleast_2d(x)
    if xb.shape[-1] != ref.system.dim:
        raise ValidationError(f"state dimension {xb.shape[-1]} != system dim {ref.system.dim}")
    hb = np.broadcast_to(np.asarray(h, dtype=float), xb.shape[:1]).copy()
    if not np.all(np.isfinite(hb)):
        raise ValidationError("step must be finite")
    return xb, hb, single


def flow(ref: ReferenceFlow, x, h, t0=0.0) -> np.ndarray:
    """Time-``h`` flow map of the reference system.

    ``x`` may be a single state ``(n,)`` or a batch ``(N, n)``; ``h`` a scalar
    or ``(N,)`` array of nonnegative steps. ``t0`` only matters when an input
    signal is attached.
    """
    xb, hb, single = _as_batch(ref, x, h)
    if np.any(hb < 0):
        raise ValidationError("flow requires h >= 0; use flow_backward")
    t0b = np.broadcast_to(np.asarray(t0, dtype=float), hb.shape).copy()
    out = _integrate_scaled(ref, xb, hb, t0b)
    return out[0] if single else out


def flow_backward(ref: ReferenceFlow, x, tau, t0=0.0) -> np.ndarray:
    """Backward flow ``Phi^{-tau}(x)`` for ``tau >= 0``."""
    xb, tb, single = _as_batch(ref, x, tau)
    if np.any(tb < 0):
        raise ValidationError("flow_backward requires tau >= 0")
    t0b = np.broadcast_to(np.asarray(t0, dtype=float), tb.shape).copy()
    out = _integrate_scaled(ref, xb, -tb, t0b)
    return out[0] if single else out


def integrate_steps(ref: ReferenceFlow, x0, steps, t0=0.0) -> np.ndarray:
    """States along trajectories driven by per-trajectory step schedules.

    ``x0`` is ``(N, n)`` and ``steps`` is ``(N, K)``; returns ``(N, K+1, n)``.
    """
    x0 = np.atleast_2d(np.asarray(x0, dtype=float))
    steps = np.atleast_2d(np.asarray(steps, dtype=float))
    n_traj, n_steps = steps.shape
    out = np.empty((n_traj, n_steps + 1, x0.shape[1]))
    out[:, 0] = x0
    t = np.broadcast_to(np.asarray(t0, dtype=float), (n_traj,)).copy()
    for k in range(n_steps):
        out[:, k + 1] = flow(ref, out[:, k], steps[:, k], t0=t)
        t = t + steps[:, k]
    return out
