"""Acceptance criteria, each run at its stated tolerance.

Every test prints one ``[PASS]``/``[FAIL]`` line with the measured values and
runtime, then asserts.
"""

import dataclasses
import itertools
import time

import numpy as np
import pytest

from conftest import shipped_report
from oracles import lagrange_coefficients
from specflow.config import load_config
from specflow.dynamics import ReferenceFlow, make_benchmark
from specflow.filters import SpectralFilterSpec, apply_filter, qualification_check
from specflow.harness import PASS, _grid_centers, run_sweep, write_report
from specflow.learners import build_forcing_matrix, fit_field, observability_report
from specflow.sampling import DesignLawSpec, StepLawSpec, generate_dataset
from specflow.vlmm import coefficients, exactness_residual, parse_scheme

SCHEMES = [f"ab{m}" for m in range(1, 5)] + [f"am{m}" for m in range(1, 4)] + [f"bdf{m}" for m in range(1, 7)]


@pytest.fixture
def verdict(capsys):
    def emit(label, ok, detail, seconds):
        with capsys.disabled():
            print(f"\n[{'PASS' if ok else 'FAIL'}] {label} ({seconds:.1f} s): {detail}")
        return ok

    return emit


def test_criterion_1_coefficient_oracle(verdict):
    rng = np.random.default_rng(2024)
    windows = {name: [np.ones(parse_scheme(name).M - 1)] for name in SCHEMES}
    for name in SCHEMES:
        M = parse_scheme(name).M
        windows[name] += [rng.uniform(0.5, 2.0, M - 1) for _ in range(1000)]
    t0 = time.perf_counter()
    computed = {name: [coefficients(parse_scheme(name), z) for z in zs] for name, zs in windows.items()}
    lib_seconds = time.perf_counter() - t0
    worst_match = worst_exact = 0.0
    for name in SCHEMES:
        sch = parse_scheme(name)
        for z, c in zip(windows[name], computed[name]):
            alpha, beta = lagrange_coefficients(sch.family, sch.M, z)
            scale = max(1.0, np.max(np.abs(c.alpha)), np.max(np.abs(c.beta)))
            worst_match = max(worst_match, np.max(np.abs(c.alpha - alpha)) / scale,
                              np.max(np.abs(c.beta - beta)) / scale)
            worst_exact = max(worst_exact, exactness_residual(sch, c))
    ok = worst_match <= 1e-12 and worst_exact <= 1e-10 and lib_seconds < 10
    verdict("1 coefficient oracle equivalence", ok,
            f"13 schemes x 1001 windows, max scaled deviation {worst_match:.2e} (<= 1e-12), "
            f"max exactness residual {worst_exact:.2e} (<= 1e-10), library time {lib_seconds:.2f} s (< 10 s)",
            lib_seconds)
    assert ok


def _lte_cfg(system_from, scheme):
    cfg = load_config(system_from)
    return cfg.replace(scheme=dataclasses.replace(cfg.scheme, name=scheme))


@pytest.mark.parametrize("scheme,system_from", list(itertools.product(["ab2", "bdf2"], ["lte_ab2_vdp", "lte_bdf2_spring"])))
def test_criterion_2_lte_order(verdict, scheme, system_from):
    cfg = _lte_cfg(system_from, scheme)
    rep = run_sweep(cfg, jobs=1)
    target = cfg.scheme.scheme.p + 1
    s = rep.get_series("max_residual")
    span = s.x.max() / s.x.min()
    ok = abs(s.slope - target) <= 0.15 and span >= 10 and rep.runtime_s < 60 and rep.status == PASS
    verdict(f"2 LTE order {scheme} on {cfg.system.name}", ok,
            f"slope {s.slope:.3f} +/- {s.stderr:.2g} (target {target} +/- 0.15), h span {span:.0f}x",
            rep.runtime_s)
    assert ok


def test_criterion_3_observability(verdict):
    t0 = time.perf_counter()
    system = make_benchmark("van_der_pol")
    ref = ReferenceFlow(system)
    sch = parse_scheme("am2")
    ds = generate_dataset(system, DesignLawSpec(), StepLawSpec("log_uniform", 0.05, 0.1), sch.M, 400, seed=0, ref=ref)
    fm = build_forcing_matrix(ds, sch, "median", _grid_centers(system.design_box, 16))
    B, ell = fm.matrix, fm.matrix.shape[0]
    rep = observability_report(fm)
    direct = float(np.sqrt(max(np.linalg.eigvalsh(B.T @ B / ell)[0], 0.0)))
    rng = np.random.default_rng(0)
    margins = []
    for _ in range(1000):
        c = rng.normal(size=B.shape[1]) * 10 ** rng.uniform(-3, 3)
        margins.append(np.linalg.norm(B @ c) - (rep.c_obs_hat * np.sqrt(ell) * np.linalg.norm(c) - 1e-10))
    cobs = shipped_report("cobs_am2_vdp")
    slope = cobs.get_series("c_obs_hat").slope
    ok = min(margins) >= 0 and abs(rep.c_obs_hat - direct) <= 1e-10 and 0.85 <= slope <= 1.15
    verdict("3 observability", ok,
            f"inequality min margin {min(margins):.2e} over 1000 vectors, |c_obs - eig| = {abs(rep.c_obs_hat - direct):.1e}, "
            f"fixed-geometry c_obs slope {slope:.3f} (1 +/- 0.15)", time.perf_counter() - t0)
    assert ok


def test_criterion_4_filter_qualification(verdict):
    t0 = time.perf_counter()
    sigma = np.geomspace(1e-8, 1.0, 400)
    sigma_fine = np.geomspace(1e-8, 1.0, 1600)
    lams = np.geomspace(1e-3, 1e-1, 3)
    lams_fine = np.geomspace(1e-3, 1e-1, 9)
    cases = [(SpectralFilterSpec("tikhonov", 1.0), [0.5, 1.0]),
             (SpectralFilterSpec("iterated_tikhonov", 1.0, order_t=3), [1.0, 2.0, 3.0]),
             (SpectralFilterSpec("landweber", 1.0), [1.0, 2.0, 4.0]),
             (SpectralFilterSpec("cutoff", 1.0), [1.0, 2.0, 4.0])]
    stable = True
    worst = 0.0
    for spec, nus in cases:
        coarse = qualification_check(spec, nus, sigma, lams)
        fine = qualification_check(spec, nus, sigma_fine, lams_fine)
        for a, b in zip(coarse, fine):
            ratio = max(a.gamma_hat / b.gamma_hat, b.gamma_hat / a.gamma_hat)
            worst = max(worst, ratio)
            stable &= bool(np.isfinite(a.gamma_hat) and ratio <= 2.0)
    (sat,) = qualification_check(SpectralFilterSpec("tikhonov", 1.0), [2.0], sigma, [1e-1, 1e-2, 1e-3])
    seconds = time.perf_counter() - t0
    ok = stable and abs(sat.growth_per_decade / 10 - 1) <= 0.15 and seconds < 5
    verdict("4 filter qualification", ok,
            f"gamma_hat finite, worst refinement ratio {worst:.2f} (<= 2); "
            f"tikhonov nu=2 growth {sat.growth_per_decade:.2f}x per decade (~10x)", seconds)
    assert ok


def test_criterion_5_estimator_oracles(verdict):
    t0 = time.perf_counter()
    rng = np.random.default_rng(5)
    X = rng.normal(size=(20, 20))
    A = X @ X.T / 20
    b = rng.normal(size=(20, 3))
    lam = 1e-3
    direct = np.linalg.solve(A + lam * np.eye(20), b)
    tik_dev = np.linalg.norm(apply_filter(SpectralFilterSpec("tikhonov", lam), A, b) - direct) / np.linalg.norm(direct)

    system = make_benchmark("linear_2d", {"A": [[0.0, 1.0], [-1.0, 0.0]]})
    ref = ReferenceFlow(system)
    sch = parse_scheme("bdf2")
    law = StepLawSpec("uniform_deterministic", 0.05, 0.05)
    axes = [np.linspace(lo, hi, 30) for lo, hi in system.design_box]
    grid = np.stack(np.meshgrid(*axes), -1).reshape(-1, 2)
    rmses = []
    for seed in range(3):
        ds = generate_dataset(system, DesignLawSpec(), law, sch.M, 800, seed=seed, ref=ref)
        # nominal lambda 1e-9 on the h^2-normalised forcing operator
        lam_eff = 1e-9 * float(np.mean(ds.h**2))
        model = fit_field(ds, sch, "median", SpectralFilterSpec("tikhonov", lam_eff))
        err = model.predict(grid) - system.rhs(grid)
        rmses.append(float(np.sqrt(np.mean(np.sum(err**2, axis=1)))))

    zero = make_benchmark("constant", {"c": [0.0, 0.0]})
    zds = generate_dataset(zero, DesignLawSpec(), law, sch.M, 100, seed=0)
    zmodel = fit_field(zds, sch, "median", SpectralFilterSpec("tikhonov", 1e-9))
    zero_ok = bool(np.all(zmodel.coefficients == 0.0))
    ok = tik_dev < 1e-8 and max(rmses) < 5e-3 and zero_ok
    verdict("5 estimator oracles", ok,
            f"tikhonov vs direct {tik_dev:.1e} (< 1e-8); linear_2d field RMSE on 30x30 box grid "
            f"{', '.join(f'{r:.2e}' for r in rmses)} (< 5e-3, 3 seeds); zero field exact: {zero_ok}",
            time.perf_counter() - t0)
    assert ok


def test_criterion_6a_noisy_ell_sweep(verdict):
    rep = shipped_report("ellsweep_vdp_noisy")
    exc = rep.contract("excess_slope")
    mono = rep.contract("heldout_monotone")
    x = rep.get_series("heldout_mse").x
    ok = exc.status == PASS and exc.value < -0.25 and mono.status == PASS and x.max() / x.min() >= 10
    verdict("6a noisy sample-size sweep", ok,
            f"excess slope {exc.value:.3f} (< -0.25), held-out monotone {mono.status}, "
            f"ell {int(x.min())}..{int(x.max())}", rep.runtime_s)
    assert ok


def test_criterion_6b_noiseless_h_sweep(verdict):
    rep = shipped_report("hsweep_bdf2_spring")
    s = rep.get_series("field_rmse")
    p = 2
    ok = s.slope >= p - 0.5 and rep.contract("field_rmse_slope").status == PASS
    verdict("6b noiseless step-size sweep", ok,
            f"field RMSE slope {s.slope:.3f} +/- {s.stderr:.2g} (>= {p - 0.5}), status {rep.status}", rep.runtime_s)
    assert ok


def test_criterion_6c_bias_floor(verdict):
    rep = shipped_report("ellsweep_vdp_biasfloor")
    s = rep.get_series("heldout_mse")
    ok = abs(s.slope) < 0.05 and "BIAS-DOMINATED" in rep.flags
    verdict("6c noiseless sample-size sweep on the bias floor", ok,
            f"slope {s.slope:.4f} (|.| < 0.05), flags {rep.flags}", rep.runtime_s)
    assert ok


@pytest.mark.parametrize("name", ["lte_ab2_vdp", "ellsweep_vdp_noisy"])
def test_criterion_7_reproducibility(verdict, tmp_path, name):
    t0 = time.perf_counter()
    cfg = load_config(name)
    first = write_report(shipped_report(name), tmp_path / "a", figures=False)["cells"].read_bytes()
    second = write_report(run_sweep(cfg, jobs=1), tmp_path / "b", figures=False)["cells"].read_bytes()
    parallel = write_report(run_sweep(cfg, jobs=8), tmp_path / "c", figures=False)["cells"].read_bytes()
    ok = first == second == parallel and len(first) > 0
    verdict(f"7 reproducibility {name}", ok,
            f"cells CSV {len(first)} bytes; rerun identical {first == second}; jobs 1 vs 8 identical {first == parallel}",
            time.perf_counter() - t0)
    assert ok
