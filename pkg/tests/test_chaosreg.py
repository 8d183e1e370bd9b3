import numpy as np
import pytest

from chaosbench._util import derive_seed, midpoints
from chaosbench.chaosreg import (
    ChaosKernelEstimate,
    FittedModel,
    Sample,
    _fit_generic,
    _fit_parts,
    estimate_mean,
    fit_chaos_kernel,
    model_from_json,
    model_to_json,
    predict,
    risk_isometry,
    risk_monte_carlo,
    smoothed_truth,
)
from chaosbench.kernelkit import build_kernel
from chaosbench.mappingzoo import GaussianNoise, quadratic_terminal, synthesize
from chaosbench.pathlab import make_grid, sample_brownian

K0 = build_kernel(1.0)
K1 = build_kernel(2.0)


def _toy_sample(n=16, n_steps=64, seed=0, responses=None):
    grid = make_grid(n_steps)
    rows = np.stack([sample_brownian(grid, derive_seed(seed, i)).values for i in range(n)])
    if responses is None:
        responses = np.arange(n, dtype=float)
    return Sample(grid, responses, rows)


def test_estimate_mean_examples():
    assert estimate_mean(_toy_sample(3, responses=np.array([1.0, 1.0, 1.0]))) == 1.0
    assert estimate_mean(_toy_sample(2, responses=np.array([0.0, 2.0]))) == 1.0


def test_estimate_mean_is_clt_consistent():
    rng = np.random.default_rng(5)
    for _ in range(20):
        y = rng.normal(3.0, 1.0, 400)
        sample = _toy_sample(400, 8, 1, responses=y)
        assert abs(estimate_mean(sample) - 3.0) <= 3.0 / np.sqrt(400) + 3 * 1.0 / np.sqrt(400)


def test_sample_validation():
    grid = make_grid(8)
    with pytest.raises(ValueError):
        Sample(grid, np.array([1.0]), np.zeros((1, 9)))
    with pytest.raises(ValueError):
        Sample(grid, np.array([1.0, 2.0]), np.ones((2, 9)))  # paths must start at 0


def test_fit_zero_responses_gives_zero_surface():
    sample = _toy_sample(8, responses=np.zeros(8))
    est = fit_chaos_kernel(sample, 2, 0.25, 8, K1)
    assert np.all(est.values == 0.0)


def test_fit_is_linear_in_responses():
    sample = _toy_sample(10, seed=3)
    scaled = Sample(sample.grid, 2.5 * sample.responses, sample.path_values)
    a = fit_chaos_kernel(sample, 2, 0.3, 8, K1)
    b = fit_chaos_kernel(scaled, 2, 0.3, 8, K1)
    assert np.allclose(b.values, 2.5 * a.values, rtol=1e-12, atol=1e-12)


@pytest.mark.parametrize("order", [2, 3])
def test_fitted_surface_is_symmetric(order):
    sample = _toy_sample(12, seed=7)
    est = fit_chaos_kernel(sample, order, 0.3, 6, K1)
    gridded = est.as_gridded()
    assert gridded.is_symmetric(tol=1e-10)


def test_order_three_matches_generic_route():
    # the einsum fast path and the ordered-node recursion must agree
    sample = _toy_sample(9, seed=11)
    est = fit_chaos_kernel(sample, 3, 0.4, 4, K1)
    x, gram = _fit_parts(sample, 0.4, 4, K1, 10_000)
    generic = _fit_generic(x, gram, sample.responses, 3, 4)
    assert np.allclose(est.values, generic, rtol=1e-10, atol=1e-12)


def test_fit_bandwidth_validation():
    sample = _toy_sample(4)
    with pytest.raises(ValueError):
        fit_chaos_kernel(sample, 2, 1.2, 8, K1)


def test_smoothed_truth_constant_is_exact():
    for order in (1, 2):
        sm = smoothed_truth(order, 0.3, lambda *xs: np.full_like(sum(xs), 2.5), 8, K1)
        assert np.max(np.abs(sm.values - 2.5)) <= 1e-10


def test_smoothed_truth_flat_kernel_window_average():
    # m = 0 kernel: exact window average, t + h/2 on the left side, t - h/2 right
    h = 0.2
    sm = smoothed_truth(1, h, lambda u: u, 10, K0)
    t = midpoints(10)
    expected = np.where(t <= 0.5, t + h / 2, t - h / 2)
    assert np.allclose(sm.values, expected, atol=1e-10)


def test_smoothed_truth_bias_shrinks_with_bandwidth():
    f = np.polynomial.Polynomial([0.0, 1.0, -1.0])  # u - u^2, curvature everywhere
    t = midpoints(16)
    errors = []
    for h in (0.4, 0.2, 0.1, 0.05):
        sm = smoothed_truth(1, h, f, 16, K0)
        errors.append(np.sqrt(np.mean((sm.values - f(t)) ** 2)))
    assert errors == sorted(errors, reverse=True)


def test_fit_is_centered_on_smoothed_truth():
    # estimator mean matches the kernel-smoothed surface within MC resolution;
    # noise is set so Monte Carlo error dominates the left-point discretization
    truth = quadratic_terminal(noise=GaussianNoise(2.0))
    grid = make_grid(512)
    smoothed = smoothed_truth(2, 0.25, lambda a, b: np.ones_like(a * b), 8, K0)
    reps, n = 200, 100
    fits = np.empty((reps, 8, 8))
    for r in range(reps):
        sample = synthesize(truth, n, grid, 5000 + r)
        fits[r] = fit_chaos_kernel(sample, 2, 0.25, 8, K0).values
    stderr = fits.std(axis=0, ddof=1) / np.sqrt(reps)
    z = (fits.mean(axis=0) - smoothed.values) / stderr
    assert np.max(np.abs(z)) <= 3.0
    gaps = (fits - smoothed.values).mean(axis=(1, 2))
    assert abs(gaps.mean()) <= 3.0 * gaps.std(ddof=1) / np.sqrt(reps)


def _model_with(values_by_order: dict, mean_hat: float, h=0.25) -> FittedModel:
    estimates = tuple(
        ChaosKernelEstimate(order, h, values.shape[0], values)
        for order, values in values_by_order.items()
    )
    return FittedModel(mean_hat, estimates)


def test_predict_mean_only():
    model = FittedModel(3.25, ())
    w = sample_brownian(make_grid(64), 1)
    assert predict(model, w) == 3.25


def test_predict_order_one_telescopes():
    model = _model_with({1: np.ones(16)}, 1.5)
    w = sample_brownian(make_grid(64), 2)
    assert predict(model, w) == pytest.approx(1.5 + w.values[-1], abs=1e-10)


def test_predict_order_two_quadratic_variation():
    w = sample_brownian(make_grid(512), 3)
    target = (w.values[-1] ** 2 - 1.0) / 2.0
    gaps = []
    for g in (8, 64, 512):
        model = _model_with({2: np.ones((g, g))}, 0.0)
        gaps.append(abs(predict(model, w) - target))
    assert gaps[2] < gaps[0]


def test_predict_rejects_high_orders():
    from chaosbench.errors import UnsupportedOrderError

    model = _model_with({4: np.ones((4,) * 4)}, 0.0)
    with pytest.raises(UnsupportedOrderError):
        predict(model, sample_brownian(make_grid(64), 0))


def test_risk_isometry_zero_for_exact_model():
    truth = quadratic_terminal()
    values = truth.component_values(2, 16)
    model = _model_with({2: values}, truth.a)
    report = risk_isometry(model, truth)
    assert report.value == 0.0
    assert report.mc_stderr == 0.0


def test_risk_isometry_missing_order_breakdown():
    truth = quadratic_terminal()
    model = FittedModel(truth.a, ())
    report = risk_isometry(model, truth, grid_size=16)
    # || f_2 ||^2 / 2! = 1/2 for the unit constant component
    assert report.breakdown[2] == pytest.approx(0.5, abs=1e-12)
    assert report.value == pytest.approx(np.sqrt(0.5), abs=1e-12)


def test_risk_isometry_rejects_other_p():
    with pytest.raises(ValueError):
        risk_isometry(FittedModel(0.0, ()), quadratic_terminal(), p=4.0)


def test_risk_monte_carlo_agrees_with_isometry():
    truth = quadratic_terminal()
    sample = synthesize(truth, 2000, make_grid(512), 424242)
    est = fit_chaos_kernel(sample, 2, 0.25, 64, K1)
    model = FittedModel(estimate_mean(sample), (est,))
    iso = risk_isometry(model, truth)
    mc = risk_monte_carlo(model, truth, 2.0, 400, 777, 64, 512)
    assert abs(iso.value - mc.value) <= 3 * mc.mc_stderr


def test_risk_monte_carlo_self_comparison_is_discretization_floor():
    # the truth pushed through the gridded predictor differs from its own
    # evaluation only by discretization, well below any non-degenerate fit
    truth = quadratic_terminal()
    values = truth.component_values(2, 64)
    perfect = _model_with({2: values}, truth.a)
    floor = risk_monte_carlo(perfect, truth, 2.0, 300, 11, 64, 512)
    sample = synthesize(truth, 500, make_grid(512), 13)
    fitted = FittedModel(
        estimate_mean(sample), (fit_chaos_kernel(sample, 2, 0.25, 64, K1),)
    )
    fitted_iso = risk_isometry(fitted, truth)
    assert floor.value < fitted_iso.value


def test_risk_monte_carlo_moment_monotonicity():
    truth = quadratic_terminal()
    sample = synthesize(truth, 500, make_grid(256), 9)
    est = fit_chaos_kernel(sample, 2, 0.25, 32, K1)
    model = FittedModel(estimate_mean(sample), (est,))
    r2 = risk_monte_carlo(model, truth, 2.0, 200, 4, 32, 256)
    r4 = risk_monte_carlo(model, truth, 4.0, 200, 4, 32, 256)
    assert r4.value >= r2.value


def test_risk_decreases_with_sample_size():
    truth = quadratic_terminal()
    grid = make_grid(256)
    means = {}
    for n in (400, 1600):
        risks = []
        for rep in range(10):
            sample = synthesize(truth, n, grid, derive_seed(33, n, rep))
            est = fit_chaos_kernel(sample, 2, 0.25, 16, K1)
            model = FittedModel(estimate_mean(sample), (est,))
            risks.append(risk_isometry(model, truth).value)
        means[n] = np.mean(risks)
    assert means[1600] < means[400]


def test_model_json_round_trip():
    values = np.arange(16.0).reshape(4, 4)
    values = (values + values.T) / 2
    model = _model_with({1: np.arange(4.0), 2: values}, 1.25)
    back = model_from_json(model_to_json(model))
    assert back.mean_hat == model.mean_hat
    assert back.chaos_orders == (1, 2)
    for a, b in zip(back.estimates, model.estimates):
        assert a.order == b.order and a.bandwidth == b.bandwidth
        assert np.array_equal(a.values, b.values)


def test_model_rejects_duplicate_orders():
    with pytest.raises(ValueError):
        _model_with({1: np.ones(4)}, 0.0).estimates + ()
        FittedModel(
            0.0,
            (
                ChaosKernelEstimate(1, 0.25, 4, np.ones(4)),
                ChaosKernelEstimate(1, 0.5, 4, np.ones(4)),
            ),
        )


def test_risk_report_serialization():
    truth = quadratic_terminal()
    report = risk_isometry(FittedModel(truth.a, ()), truth, grid_size=8)
    doc = report.to_json()
    assert '"method": "isometry"' in doc and '"breakdown"' in doc
