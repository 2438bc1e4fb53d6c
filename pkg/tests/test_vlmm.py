import csv
import itertools
import threading
from collections import defaultdict
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import DATA
from oracles import lagrange_coefficients
from specflow.dynamics import ReferenceFlow, make_benchmark
from specflow.errors import ConfigurationError, NumericalError, ValidationError
from specflow.vlmm import (
    VlmmScheme,
    apply_label_map,
    coefficients,
    exactness_residual,
    label_matrix,
    lte_constant_probe,
    parse_scheme,
    residual_ms,
)

SCHEMES = [f"ab{m}" for m in range(1, 5)] + [f"am{m}" for m in range(1, 4)] + [f"bdf{m}" for m in range(1, 7)]


def _golden():
    table = defaultdict(lambda: {"alpha": {}, "beta": {}})
    with open(DATA / "golden_uniform.csv") as fh:
        for row in csv.DictReader(fh):
            table[row["scheme"]][row["kind"]][int(row["index"])] = float(Fraction(row["value"]))
    return {
        k: (np.array([v["alpha"][i] for i in sorted(v["alpha"])]), np.array([v["beta"][i] for i in sorted(v["beta"])]))
        for k, v in table.items()
    }


GOLDEN = _golden()


def _scale(c):
    return max(1.0, np.max(np.abs(c.alpha)), np.max(np.abs(c.beta)))


@pytest.mark.parametrize("name", SCHEMES)
def test_uniform_golden_values(name):
    sch = parse_scheme(name)
    c = coefficients(sch, np.ones(sch.M - 1))
    alpha, beta = GOLDEN[name]
    assert c.alpha.shape == (sch.M,) and c.beta.shape == (sch.M + 1,)
    np.testing.assert_allclose(c.alpha, alpha, rtol=0, atol=1e-12 * _scale(c))
    np.testing.assert_allclose(c.beta, beta, rtol=0, atol=1e-12 * _scale(c))


@pytest.mark.parametrize("name", SCHEMES)
def test_random_windows_match_lagrange_oracle(name):
    sch = parse_scheme(name)
    rng = np.random.default_rng(hash(name) % 2**32)
    for _ in range(40):
        z = rng.uniform(0.5, 2.0, sch.M - 1)
        c = coefficients(sch, z)
        alpha, beta = lagrange_coefficients(sch.family, sch.M, z)
        tol = 1e-12 * _scale(c)
        np.testing.assert_allclose(c.alpha, alpha, rtol=0, atol=tol)
        np.testing.assert_allclose(c.beta, beta, rtol=0, atol=tol)
        assert exactness_residual(sch, c) <= 1e-10
        assert 1.0 + c.alpha.sum() == pytest.approx(0.0, abs=1e-12 * _scale(c))


def test_family_order_relations():
    for name in SCHEMES:
        sch = parse_scheme(name)
        assert sch.p == (sch.M + 1 if sch.family == "AM" else sch.M)
        assert sch.implicit == (sch.family != "AB")
    with pytest.raises(ConfigurationError):
        parse_scheme("bdf7")
    with pytest.raises(ConfigurationError):
        parse_scheme("rk4")


def test_adams_bashforth_two_step():
    c = coefficients(VlmmScheme("AB", 2), [1.0])
    np.testing.assert_allclose(c.beta, [-0.5, 1.5, 0.0], atol=1e-15)
    np.testing.assert_allclose(c.alpha, [0.0, -1.0], atol=1e-15)
    assert exactness_residual(VlmmScheme("AB", 2), c) < 1e-15


@given(st.floats(0.25, 4.0))
def test_trapezoid_independent_of_ratio(z):
    c = coefficients(VlmmScheme("AM", 1))
    np.testing.assert_allclose(c.beta, [0.5, 0.5], atol=1e-15)
    np.testing.assert_allclose(c.alpha, [-1.0])
    # AM2 is not ratio independent, but AB schemes never weight the anchor
    cab = coefficients(VlmmScheme("AB", 3), [z, 1 / z])
    assert cab.beta[-1] == 0.0


def test_backward_euler():
    c = coefficients(VlmmScheme("BDF", 1))
    np.testing.assert_allclose(c.alpha, [-1.0])
    np.testing.assert_allclose(c.beta, [0.0, 1.0])
    states = np.array([[1.0, 2.0], [3.0, 5.0]])
    np.testing.assert_allclose(apply_label_map(c, states), [2.0, 3.0])


@pytest.mark.parametrize("M", range(1, 7))
def test_bdf_beta_only_at_anchor(M):
    rng = np.random.default_rng(M)
    c = coefficients(VlmmScheme("BDF", M), rng.uniform(0.6, 1.6, M - 1))
    assert np.all(c.beta[:-1] == 0.0) and c.beta[-1] > 0


def test_lags_oldest_first_and_anchor_zero():
    c = coefficients(parse_scheme("bdf3"), [2.0, 0.5])
    # steps relative to the anchor step: 1 / (2 * 0.5) = 1, 1 / 0.5 = 2, 1
    np.testing.assert_allclose(c.lags, [4.0, 3.0, 1.0, 0.0])
    assert str(c.lags[-1]) == "0.0"
    np.testing.assert_allclose(c.lag_times(0.1), [0.4, 0.3, 0.1, 0.0])


def test_label_map_linear_and_kills_constants():
    sch = parse_scheme("ab3")
    c = coefficients(sch, [0.8, 1.3])
    rng = np.random.default_rng(0)
    s1, s2 = rng.normal(size=(2, 4, 3))
    a, b = 1.7, -0.4
    np.testing.assert_allclose(
        apply_label_map(c, a * s1 + b * s2), a * apply_label_map(c, s1) + b * apply_label_map(c, s2), atol=1e-14
    )
    const = np.tile([2.0, -1.0, 0.5], (4, 1))
    np.testing.assert_allclose(apply_label_map(c, const), 0.0, atol=1e-14)


def test_label_map_length_mismatch():
    c = coefficients(parse_scheme("bdf2"), [1.0])
    with pytest.raises(ValidationError):
        apply_label_map(c, np.zeros((2, 2)))


def test_label_matrix_rows():
    sch = parse_scheme("am2")
    zetas = np.array([[0.7], [1.0], [1.9]])
    alphas, betas = label_matrix(sch, zetas)
    for i, z in enumerate(zetas):
        c = coefficients(sch, z)
        np.testing.assert_array_equal(alphas[i], [*c.alpha, 1.0])
        np.testing.assert_array_equal(betas[i], c.beta)
    a1, b1 = label_matrix(parse_scheme("bdf1"), np.empty((4, 0)))
    assert a1.shape == (4, 2)
    with pytest.raises(ValidationError):
        label_matrix(parse_scheme("bdf1"), np.array([1.0]))


def test_wrong_ratio_count():
    with pytest.raises(ValidationError):
        coefficients(parse_scheme("ab3"), [1.0])
    with pytest.raises(ValidationError):
        coefficients(parse_scheme("ab2"), [-1.0])


def test_ill_conditioned_window_rejected():
    with pytest.raises(NumericalError, match="ill-conditioned"):
        coefficients(parse_scheme("bdf6"), [1e-3] * 5)


def test_cache_is_shared_and_read_only():
    sch = parse_scheme("ab4")
    a = coefficients(sch, [1.1, 0.9, 1.2])
    b = coefficients(sch, (1.1, 0.9, 1.2))
    assert a is b
    with pytest.raises(ValueError):
        a.beta[0] = 0.0


def test_cache_concurrent_readers():
    sch = parse_scheme("bdf4")
    zs = [tuple(np.round(np.random.default_rng(i).uniform(0.5, 2, 3), 3)) for i in range(50)]
    expected = [coefficients(sch, z).alpha.copy() for z in zs]
    errors = []

    def worker():
        for z, e in zip(zs, expected):
            if not np.array_equal(coefficients(sch, z).alpha, e):
                errors.append(z)

    threads = [threading.Thread(target=worker) for _ in range(4)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    assert not errors


def test_envelope_not_grown():
    grid = np.geomspace(0.5, 2.0, 5)
    with open(DATA / "coefficient_envelope.csv") as fh:
        stored = {r["scheme"]: (float(r["max_abs_alpha"]), float(r["max_abs_beta"])) for r in csv.DictReader(fh)}
    assert set(stored) == set(SCHEMES)
    for name in SCHEMES:
        sch = parse_scheme(name)
        amax = bmax = 0.0
        for z in itertools.product(grid, repeat=sch.M - 1):
            c = coefficients(sch, z)
            amax = max(amax, np.max(np.abs(c.alpha)))
            bmax = max(bmax, np.max(np.abs(c.beta)))
        assert amax <= stored[name][0] * (1 + 1e-12)
        assert bmax <= stored[name][1] * (1 + 1e-12)


# -- residuals ---------------------------------------------------------------


@pytest.mark.parametrize("name", ["ab1", "ab3", "am2", "bdf2", "bdf5"])
def test_constant_field_residual_zero(name):
    sch = parse_scheme(name)
    ref = ReferenceFlow(make_benchmark("constant", {"c": [0.3, -1.2]}))
    c = coefficients(sch, np.linspace(0.7, 1.4, sch.M - 1))
    x = np.random.default_rng(0).uniform(-1, 1, (10, 2))
    assert np.max(np.abs(residual_ms(sch, c, ref, x, 0.1))) < 1e-12


@pytest.mark.parametrize("name", ["ab2", "ab4", "am1", "am3", "bdf3", "bdf6"])
def test_polynomial_trajectories_exact(name):
    sch = parse_scheme(name)
    ref = ReferenceFlow(make_benchmark("polynomial_chain", {"degree": sch.p}))
    rng = np.random.default_rng(1)
    c = coefficients(sch, rng.uniform(0.6, 1.6, sch.M - 1))
    x = rng.uniform(-1, 1, (10, sch.p))
    assert np.max(np.abs(residual_ms(sch, c, ref, x, 0.2))) <= 1e-10


def test_ab2_van_der_pol_halving_ratio():
    sch = parse_scheme("ab2")
    ref = ReferenceFlow(make_benchmark("van_der_pol", {"mu": 1.0}))
    c = coefficients(sch, [1.0])
    x = np.random.default_rng(2).uniform(-1.5, 1.5, (30, 2))
    norms = [np.max(np.linalg.norm(residual_ms(sch, c, ref, x, h), axis=1)) for h in (0.01, 0.005, 0.0025)]
    for a, b in zip(norms, norms[1:]):
        assert a / b == pytest.approx(8.0, rel=0.15)


def test_residual_with_true_field_matches_default():
    sch = parse_scheme("am2")
    ref = ReferenceFlow(make_benchmark("duffing"))
    c = coefficients(sch, [1.3])
    x = np.random.default_rng(3).uniform(-1, 1, (5, 2))
    np.testing.assert_array_equal(residual_ms(sch, c, ref, x, 0.05), residual_ms(sch, c, ref, x, 0.05, field=ref.system.rhs))


def test_lte_probe_explicit_euler_vdp():
    probe = lte_constant_probe(parse_scheme("ab1"), make_benchmark("van_der_pol"), [0.04, 0.02, 0.01, 0.004], n_probes=50)
    assert 1.85 <= probe.slope <= 2.15
    assert not probe.exact


def test_lte_probe_bdf2_mass_spring():
    probe = lte_constant_probe(parse_scheme("bdf2"), make_benchmark("mass_spring"), [0.1, 0.05, 0.02, 0.01], n_probes=50)
    assert 2.8 <= probe.slope <= 3.2


def test_lte_probe_exact_regime():
    probe = lte_constant_probe(parse_scheme("bdf2"), make_benchmark("polynomial_chain", {"degree": 2}),
                               [0.1, 0.05, 0.01], n_probes=50)
    assert probe.exact and np.isnan(probe.slope)
    assert probe.constant <= 1e-9


def test_lte_probe_single_h_rejected():
    with pytest.raises(ValidationError):
        lte_constant_probe(parse_scheme("ab1"), make_benchmark("van_der_pol"), [0.1, 0.1])
