import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.linalg import expm

from specflow.dynamics import BENCHMARKS, ReferenceFlow, flow, flow_backward, integrate_steps, make_benchmark
from specflow.errors import ConfigurationError, NumericalError, ValidationError

TOL = 1e-12


@pytest.fixture(scope="module")
def rot():
    return ReferenceFlow(make_benchmark("linear_2d", {"A": [[0, 1], [-1, 0]]}))


@pytest.fixture(scope="module")
def vdp():
    return ReferenceFlow(make_benchmark("van_der_pol", {"mu": 1.0}))


def test_linear_2d_field_value():
    sys_ = make_benchmark("linear_2d", {"A": [[0, 1], [-1, 0]]})
    np.testing.assert_array_equal(sys_.eval_f(np.array([1.0, 0.0])), [0.0, -1.0])


def test_van_der_pol_origin_is_equilibrium():
    sys_ = make_benchmark("van_der_pol", {"mu": 1})
    np.testing.assert_array_equal(sys_.eval_f(np.zeros(2)), [0.0, 0.0])


def test_shipped_benchmarks_are_planar():
    for name in ("van_der_pol", "duffing", "mass_spring", "linear_2d"):
        sys_ = make_benchmark(name)
        assert sys_.dim == 2
        assert np.all(sys_.design_box[:, 0] >= sys_.domain_box[:, 0])
        assert np.all(sys_.design_box[:, 1] <= sys_.domain_box[:, 1])


def test_field_evaluation_is_deterministic():
    x = np.random.default_rng(0).uniform(-1, 1, (50, 2))
    for name in BENCHMARKS:
        sys_ = make_benchmark(name)
        if sys_.dim != 2:
            continue
        assert np.array_equal(sys_.eval_f(x), sys_.eval_f(x.copy()))


def test_unknown_benchmark_is_config_error():
    with pytest.raises(ConfigurationError):
        make_benchmark("lorenz")


@pytest.mark.parametrize("bad", [math.nan, math.inf])
def test_nonfinite_params_rejected(bad):
    with pytest.raises(ValidationError):
        make_benchmark("van_der_pol", {"mu": bad})


def test_mass_spring_energy_drift():
    ref = ReferenceFlow(make_benchmark("mass_spring", {"k": 1, "m": 1, "c": 0}))
    x0 = np.array([[0.8, -0.3]])
    traj = integrate_steps(ref, x0, np.full((1, 100), 0.1))[0]
    energy = 0.5 * traj[:, 1] ** 2 + 0.5 * traj[:, 0] ** 2
    assert np.max(np.abs(energy - energy[0])) < 1e-8


def test_rotation_quarter_turn(rot):
    np.testing.assert_allclose(flow(rot, np.array([1.0, 0.0]), math.pi / 2), [0.0, -1.0], atol=1e-9)


def test_backward_quarter_turn(rot):
    np.testing.assert_allclose(flow_backward(rot, np.array([0.0, -1.0]), math.pi / 2), [1.0, 0.0], atol=1e-9)


def test_zero_step_is_identity(vdp):
    x = np.array([0.7, -1.2])
    np.testing.assert_allclose(flow(vdp, x, 1e-300), x, atol=TOL)
    np.testing.assert_array_equal(flow_backward(vdp, x, 0.0), x)


def test_semigroup_example(vdp):
    x = np.array([1.1, 0.4])
    a = flow(vdp, flow(vdp, x, 0.3), 0.2)
    b = flow(vdp, x, 0.5)
    assert np.linalg.norm(a - b) < 10 * TOL


def test_round_trip_van_der_pol(vdp):
    x = np.random.default_rng(1).uniform(-2, 2, (100, 2))
    for tau in (0.1, 0.5, 1.0):
        back = flow_backward(vdp, flow(vdp, x, tau), tau)
        assert np.max(np.linalg.norm(back - x, axis=1)) < 1e-8


def test_linear_matches_matrix_exponential():
    A = np.array([[0.1, 1.0], [-2.0, -0.3]])
    ref = ReferenceFlow(make_benchmark("linear_2d", {"A": A.tolist()}))
    x = np.random.default_rng(2).uniform(-1, 1, (40, 2))
    for h in (0.01, 0.3, 1.0):
        exact = x @ expm(A * h).T
        np.testing.assert_allclose(flow(ref, x, h), exact, atol=1e-9)


def test_batched_horizons_match_individual(vdp):
    x = np.random.default_rng(3).uniform(-2, 2, (5, 2))
    hs = np.array([0.01, 0.1, 0.2, 0.05, 0.3])
    batch = flow(vdp, x, hs)
    for i in range(5):
        np.testing.assert_allclose(batch[i], flow(vdp, x[i], hs[i]), atol=10 * TOL)


@given(
    x=st.tuples(st.floats(-2, 2), st.floats(-2, 2)),
    s=st.floats(0.0, 0.25),
    t=st.floats(0.0, 0.25),
)
def test_semigroup_property(vdp, x, s, t):
    x = np.array(x)
    a = flow(vdp, flow(vdp, x, s), t)
    b = flow(vdp, x, s + t)
    assert np.linalg.norm(a - b) <= 10 * TOL * max(1.0, np.linalg.norm(x))


@given(x=st.tuples(st.floats(-2, 2), st.floats(-2, 2)), h=st.floats(1e-6, 0.2))
def test_increment_bounded_by_field(vdp, x, h):
    x = np.array(x)
    # crude bound on |f| over the tube the orbit can reach in time h
    grid = np.stack(np.meshgrid(np.linspace(-4, 4, 81), np.linspace(-6, 6, 121)), -1).reshape(-1, 2)
    fmax = np.max(np.linalg.norm(vdp.system.eval_f(grid), axis=1))
    assert np.linalg.norm(flow(vdp, x, h) - x) <= h * fmax + 1e-12


def test_blowup_raises_numerical_error_with_state():
    # x' = x^2 style escape: the cubic Duffing with negative stiffness escapes quickly
    sys_ = make_benchmark("duffing", {"alpha": 1.0, "beta": -50.0, "delta": 0.0})
    ref = ReferenceFlow(sys_)
    with pytest.raises(NumericalError) as info:
        flow(ref, np.array([3.0, 3.0]), 5.0)
    assert info.value.state is not None
