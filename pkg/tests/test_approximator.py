import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate
from scipy.special import erfc

from approxbp.approximator import (
    PUBLISHED,
    CoefficientFileError,
    CombinationParams,
    FastObjective,
    QuadratureError,
    SAConfig,
    activation,
    activation_grad,
    adaptive_simpson,
    coeffile,
    combo_deriv,
    combo_eval,
    constraint_residual,
    fit,
    objective,
    published_params,
    reference_deriv,
    reference_eval,
    segment_codes,
    simpson_reference,
    tail_interval,
)
from approxbp.approximator.functions import SCALAR_FORWARD, SCALAR_GRAD, ActivationKind

from conftest import GOLDEN


# ---- reference activations

def test_gelu_matches_erf_definition():
    # erfc form: 1 + erf cancels badly for negative x
    x = np.linspace(-8, 8, 1001)
    expected = 0.5 * x * erfc(-x / math.sqrt(2))
    np.testing.assert_allclose(activation("gelu", x), expected, rtol=5e-14, atol=1e-300)


def test_silu_matches_logistic_definition():
    x = np.linspace(-30, 30, 1001)
    np.testing.assert_allclose(activation("silu", x), x / (1 + np.exp(-x)), rtol=1e-14)


@pytest.mark.parametrize("kind", ["gelu", "silu"])
def test_scalar_and_vector_kernels_agree(kind):
    xs = np.linspace(-12, 12, 97)
    k = ActivationKind.parse(kind)
    # math.erfc and scipy's ndtr differ by a few ulps deep in the left tail
    for x in xs:
        assert SCALAR_FORWARD[k](x) == pytest.approx(float(activation(kind, x)), rel=1e-12, abs=1e-300)
        assert SCALAR_GRAD[k](x) == pytest.approx(float(activation_grad(kind, x)), rel=1e-13, abs=1e-15)


@pytest.mark.parametrize("kind", ["gelu", "silu"])
def test_derivative_matches_central_difference(kind):
    x = np.linspace(-6, 6, 61)
    h = 1e-6
    fd = (reference_eval(kind, x + h) - reference_eval(kind, x - h)) / (2 * h)
    np.testing.assert_allclose(reference_deriv(kind, x), fd, rtol=1e-8, atol=1e-9)


def test_reference_rejects_nonfinite():
    with pytest.raises(ValueError):
        reference_eval("gelu", [0.0, np.nan])
    with pytest.raises(ValueError):
        reference_deriv("silu", np.inf)


def test_reference_scalar_returns_float():
    assert isinstance(reference_eval("gelu", 1.0), float)
    assert reference_eval("gelu", 0.0) == 0.0


def test_unknown_activation():
    with pytest.raises(ValueError):
        ActivationKind.parse("tanh")


# ---- tail interval

def test_tail_interval_values():
    g = tail_interval("gelu", 1e-8)
    s = tail_interval("silu", 1e-8)
    assert g.B == pytest.approx(6.0697085175405858, rel=1e-15)
    assert s.B == pytest.approx(38.22765584902462, rel=1e-15)
    assert g.A == -g.B and s.A == -s.B


def test_gelu_tail_mass_below_epsilon():
    # squared error of any slope-0/1 tail fit is at most (h - relu)^2
    iv = tail_interval("gelu", 1e-8)
    f = lambda x: (activation("gelu", x) - max(x, 0.0)) ** 2  # noqa: E731
    tail = 2 * integrate.quad(f, iv.B, np.inf, epsabs=1e-20)[0]
    assert tail < 1e-8


@pytest.mark.parametrize("eps", [0.0, 1.0, -1e-3, 2.0])
def test_tail_interval_rejects_bad_epsilon(eps):
    with pytest.raises(ValueError):
        tail_interval("gelu", eps)


# ---- combination params

def test_published_weights_and_levels():
    p = published_params("gelu")
    a1, a2 = PUBLISHED[("gelu", "primitive")][0]
    assert p.weights[2] == 1.0 - (a1 + a2)
    assert a1 + a2 == pytest.approx(1.0487405950855512, abs=1e-15)
    assert p.levels[0] == 0.0 and p.levels[-1] == 1.0
    np.testing.assert_allclose(p.levels[1:3], [a1, a1 + a2], rtol=1e-15)


@pytest.mark.parametrize("kind", ["gelu", "silu"])
def test_published_primitive_residual_small(kind):
    assert abs(constraint_residual(published_params(kind))) < 1e-4


def test_derivative_coefficients_do_not_satisfy_primitive_constraint():
    # the derivative objective has no reason to honour it
    r = constraint_residual(published_params("gelu", "derivative"))
    assert r == pytest.approx(-7.87e-4, abs=5e-6)


@pytest.mark.parametrize("a,c", [
    ((0.1,), (-1.0, 0.0, 1.0)),
    ((0.1, 0.2), (-1.0, 1.0)),
    ((0.1, 0.2), (1.0, 0.0, 2.0)),
    ((0.1, 0.2), (0.0, 0.0, 1.0)),
    ((np.nan, 0.2), (-1.0, 0.0, 1.0)),
])
def test_params_validation(a, c):
    with pytest.raises(ValueError):
        CombinationParams(a=a, c=c)


def test_combination_tails():
    p = published_params("gelu")
    left = np.linspace(-50, p.c[0], 20)
    assert np.all(combo_eval(p, left) == 0.0)
    right = np.linspace(p.c[-1] + 1e-9, 80, 20)
    np.testing.assert_allclose(combo_eval(p, right), right - constraint_residual(p), rtol=1e-13)


@given(st.floats(-40, 40))
def test_combo_deriv_is_slope(x):
    p = published_params("silu")
    if min(abs(x - ci) for ci in p.c) < 1e-4:
        return
    h = 1e-6
    fd = (combo_eval(p, x + h) - combo_eval(p, x - h)) / (2 * h)
    level, code = combo_deriv(p, x)
    assert level == pytest.approx(fd, abs=1e-7)
    assert 0 <= code <= 3


def test_segment_codes():
    c = (-1.0, 0.0, 1.0)
    x = np.array([-2.0, -1.0, -0.5, 0.0, 0.5, 1.0, 2.0, np.nan])
    np.testing.assert_array_equal(segment_codes(c, x), [0, 0, 1, 1, 2, 2, 3, 0])


# ---- quadrature

def test_adaptive_simpson_polynomial_exact():
    assert adaptive_simpson(lambda x: x ** 3 - 2 * x, -1.0, 3.0) == pytest.approx(12.0, rel=1e-14)


def test_adaptive_simpson_smooth():
    assert adaptive_simpson(math.exp, 0.0, 1.0) == pytest.approx(math.e - 1, rel=1e-13)


def test_adaptive_simpson_depth_overflow():
    with pytest.raises(QuadratureError) as info:
        adaptive_simpson(lambda x: math.sin(1.0 / x) if x else 0.0, 0.0, 1.0, tol=1e-15, max_depth=4)
    assert math.isfinite(info.value.partial)


@pytest.mark.parametrize("key", sorted(GOLDEN))
def test_golden_objectives(key):
    kind, mode = key
    p = published_params(kind, mode)
    assert objective(kind, p, mode) == pytest.approx(GOLDEN[key], rel=1e-9)


@pytest.mark.parametrize("key", sorted(GOLDEN))
def test_golden_against_scipy_quad(key):
    kind, mode = key
    p = published_params(kind, mode)
    A, B = p.interval
    pts = sorted(p.c)
    w = p.weights
    if mode == "primitive":
        f = lambda x: (activation(kind, x) - sum(wi * max(x - ci, 0) for wi, ci in zip(w, p.c))) ** 2  # noqa: E731
    else:
        f = lambda x: (activation_grad(kind, x) - combo_deriv(p, x)[0]) ** 2  # noqa: E731
    edges = [A, *pts, B]
    total = sum(integrate.quad(f, lo, hi, epsabs=1e-15, epsrel=1e-13, limit=200)[0]
                for lo, hi in zip(edges[:-1], edges[1:]))
    assert total == pytest.approx(GOLDEN[key], rel=1e-9)


def test_simpson_reference_agrees():
    p = published_params("gelu")
    assert simpson_reference("gelu", p, n_points=1_000_000) == pytest.approx(GOLDEN[("gelu", "primitive")], rel=1e-9)


def test_cross_objectives():
    gp = published_params("gelu")
    gd = published_params("gelu", "derivative")
    assert objective("gelu", gd, "primitive") == pytest.approx(0.07692369365126606, rel=1e-9)
    assert objective("gelu", gp, "derivative") == pytest.approx(0.15679417772023835, rel=1e-9)


def test_objective_degenerate_interval():
    p = published_params("gelu")
    assert objective("gelu", p, interval=(1.0, 1.0)) == 0.0
    with pytest.raises(ValueError):
        objective("gelu", p, interval=(1.0, 0.0))


params_strategy = st.tuples(
    st.floats(-1.5, 1.5), st.floats(-1.5, 1.5),
    st.lists(st.floats(-5.9, 5.9), min_size=3, max_size=3, unique=True),
).filter(lambda t: min(np.diff(sorted(t[2]))) > 1e-3)


@settings(max_examples=40, deadline=None)
@given(params_strategy, st.sampled_from(["primitive", "derivative"]))
def test_fast_objective_matches_quadrature(t, mode):
    a1, a2, c = t
    p = CombinationParams(a=(a1, a2), c=sorted(c), interval=(-6.0697085175405858, 6.0697085175405858))
    fast = FastObjective("gelu", mode, tail_interval("gelu"))
    exact = objective("gelu", p, mode)
    assert exact >= 0.0
    assert fast.params_value(p) == pytest.approx(exact, rel=1e-9, abs=1e-13)


@settings(max_examples=25, deadline=None)
@given(params_strategy)
def test_objective_nonnegative_and_zero_only_at_target(t):
    a1, a2, c = t
    p = CombinationParams(a=(a1, a2), c=sorted(c), interval=(-6.0, 6.0))
    assert objective("gelu", p) > 0.0


# ---- fitting

def test_fit_is_deterministic():
    cfg = SAConfig(restarts=1, iterations=5_000, seed=3, polish=False)
    p1 = fit("gelu", config=cfg)
    p2 = fit("gelu", config=cfg)
    assert p1.a == p2.a and p1.c == p2.c and p1.objective_value == p2.objective_value


def test_fit_rejects_bad_k():
    with pytest.raises(ValueError):
        fit("gelu", k=1)


def test_sa_config_validation():
    with pytest.raises(ValueError):
        SAConfig(restarts=0)
    with pytest.raises(ValueError):
        SAConfig(cooling_ratio=1.0)


@pytest.mark.parametrize("key", sorted(GOLDEN))
def test_fit_reaches_golden(fitted, key):
    p = fitted(*key)
    assert p.objective_value <= 1.01 * GOLDEN[key]
    assert p.objective_value == pytest.approx(objective(key[0], p, key[1]), rel=1e-12)


@pytest.mark.parametrize("kind", ["gelu", "silu"])
def test_fit_primitive_residual(fitted, kind):
    assert abs(constraint_residual(fitted(kind, "primitive"))) <= 1e-4


def test_fit_lands_near_published_solution(fitted):
    p = fitted("gelu", "primitive")
    np.testing.assert_allclose(p.c, PUBLISHED[("gelu", "primitive")][1], atol=0.03)
    np.testing.assert_allclose(p.a, PUBLISHED[("gelu", "primitive")][0], atol=0.01)


# ---- coefficient files

def test_coefficient_round_trip(tmp_path, fitted):
    p = fitted("gelu", "primitive")
    path = tmp_path / "c.json"
    coeffile.save(p, path)
    q = coeffile.load(path)
    assert q.a == p.a and q.c == p.c and q.objective_value == p.objective_value
    assert objective("gelu", q) == pytest.approx(q.objective_value, rel=1e-9)
    first = path.read_bytes()
    coeffile.save(q, path)
    assert path.read_bytes() == first


def test_coefficient_file_errors(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text('{"a": [0.1, 0.2]}')
    with pytest.raises(CoefficientFileError, match="missing"):
        coeffile.load(bad)
    bad.write_text("{nope")
    with pytest.raises(CoefficientFileError):
        coeffile.load(bad)


@pytest.mark.parametrize("key", sorted(GOLDEN))
def test_shipped_files_hold_published_values(key):
    p = coeffile.shipped(*key)
    a, c = PUBLISHED[key]
    assert p.a == a and p.c == c
    assert p.objective_value == pytest.approx(GOLDEN[key], rel=1e-12)
