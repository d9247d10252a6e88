import math

import mpmath
import numpy as np
import pytest

from kecusp.core.workflow_runner import WorkflowRunner
from kecusp.services.models import (
    ChartError,
    ModelKind,
    ModelMetric,
    Normalization,
    _to_numpy,
    default_sample_points,
    dump_model_csv,
    einstein_check,
    exact_cone,
    exact_cusp,
    metric_tensor,
    model_table,
    potential,
    reduced_profile,
    ricci_fd,
)


def test_exact_cusp_solves_reduced_equation():
    t = np.linspace(-8.0, -1.0, 50)
    second = 2.0 / t**2
    np.testing.assert_allclose(second, 4.0 * np.exp(2.0 * t + exact_cusp(t)), rtol=1e-13)


def test_exact_cone_solves_reduced_equation():
    t = np.linspace(-1000.0, -10.0, 50)
    first, second = -3.0 / t, 3.0 / t**2
    np.testing.assert_allclose(first * second, np.exp(exact_cone(t)), rtol=1e-13)


@pytest.mark.parametrize(
    "model, expected, tol",
    [
        (ModelMetric(ModelKind.HILBERT_CUSP, 2), 2.0, 1e-6),
        (ModelMetric(ModelKind.BALL_CUSP, 2), 3.0, 1e-4),
        (ModelMetric(ModelKind.CUSP_DISK, 1, Normalization.BARE), 2.0, 1e-4),
        (ModelMetric(ModelKind.CUSP_DISK, 1), 1.0, 1e-4),
        (ModelMetric(ModelKind.CONE_ELLIPTIC, 2), 1.0, 1e-4),
    ],
)
def test_model_einstein_constants(model, expected, tol):
    report = einstein_check(model, default_sample_points(model))
    assert report.lambda_hat == pytest.approx(expected, abs=tol)
    assert report.n_points == 3


@pytest.mark.parametrize("fd_step", [1e-3, 5e-4])
def test_hilbert_residual_is_small_at_both_steps(fd_step):
    model = ModelMetric(ModelKind.HILBERT_CUSP, 2)
    report = einstein_check(model, default_sample_points(model), fd_step)
    assert report.max_residual <= 1e-6


def test_ball_cusp_in_higher_dimension():
    model = ModelMetric(ModelKind.BALL_CUSP, 3)
    report = einstein_check(model, default_sample_points(model))
    assert report.lambda_hat == pytest.approx(4.0, abs=1e-4)


def test_scaling_divides_einstein_constant():
    model = ModelMetric(ModelKind.HILBERT_CUSP, 2)
    scaled = einstein_check(model.scaled(2.0), default_sample_points(model))
    assert scaled.lambda_hat == pytest.approx(1.0, abs=1e-6)


def test_hilbert_metric_is_product_of_poincare_metrics():
    model = ModelMetric(ModelKind.HILBERT_CUSP, 2)
    g = metric_tensor(model, [0.3 + 2j, -0.1 + 0.5j])
    expected = np.diag([1.0 / (4 * 2.0**2), 1.0 / (4 * 0.5**2)])
    np.testing.assert_allclose(g, expected, atol=1e-10)


def test_metric_is_hermitian_positive():
    model = ModelMetric(ModelKind.BALL_CUSP, 2)
    g = metric_tensor(model, [0.1 + 1.5j, 0.2])
    np.testing.assert_allclose(g, g.conj().T)
    assert np.all(np.linalg.eigvalsh(g) > 0)


def test_ricci_of_cusp_disk_is_minus_metric():
    model = ModelMetric(ModelKind.CUSP_DISK, 1)
    point = [0.2 + 0.1j]
    np.testing.assert_allclose(ricci_fd(model, point), -metric_tensor(model, point), rtol=1e-6)


def test_off_chart_points_raise():
    with pytest.raises(ChartError):
        potential(ModelMetric(ModelKind.CUSP_DISK, 1), [1.5])
    with pytest.raises(ChartError):
        potential(ModelMetric(ModelKind.HILBERT_CUSP, 2), [1j, -1j])
    with pytest.raises(ChartError):
        metric_tensor(ModelMetric(ModelKind.BALL_CUSP, 2), [1e-4j, 0])
    with pytest.raises(ChartError):
        potential(ModelMetric(ModelKind.BALL_CUSP, 2), [1j])


def test_invalid_models_raise():
    with pytest.raises(ChartError):
        ModelMetric(ModelKind.CUSP_DISK, 2)
    with pytest.raises(ChartError):
        ModelMetric(ModelKind.BALL_CUSP, 1)
    with pytest.raises(ChartError):
        ModelMetric(ModelKind.HILBERT_CUSP, 2, scale=0.0)


def test_einstein_check_needs_three_points():
    model = ModelMetric(ModelKind.HILBERT_CUSP, 2)
    with pytest.raises(ChartError):
        einstein_check(model, default_sample_points(model)[:2])


def test_cusp_bare_potential():
    model = ModelMetric(ModelKind.CUSP_DISK, 1, Normalization.BARE)
    assert potential(model, [0.5]) == pytest.approx(-math.log(-math.log(0.25)))


def test_reduced_profile_derivatives():
    t = np.linspace(-6.0, -1.5, 40)
    h = 1e-4
    for model in (ModelMetric(ModelKind.CUSP_DISK, 1), ModelMetric(ModelKind.CONE_ELLIPTIC, 2)):
        rho, d1, d2 = reduced_profile(model, t)
        plus, minus = reduced_profile(model, t + h)[0], reduced_profile(model, t - h)[0]
        np.testing.assert_allclose(d1, (plus - minus) / (2 * h), rtol=1e-6)
        np.testing.assert_allclose(d2, (plus - 2 * rho + minus) / h**2, rtol=1e-4)
    with pytest.raises(ChartError):
        reduced_profile(ModelMetric(ModelKind.HILBERT_CUSP, 2), t)


def test_dump_model_csv(tmp_path):
    model = ModelMetric(ModelKind.CUSP_DISK, 1)
    path = tmp_path / "model.csv"
    report = dump_model_csv(model, default_sample_points(model), path)
    lines = path.read_text().splitlines()
    assert lines[0].split(",") == ["x1", "y1", "g_11_re", "g_11_im", "ric_11_re", "ric_11_im", "lambda_hat"]
    assert len(lines) == 4
    assert float(lines[1].split(",")[-1]) == report.lambda_hat


def test_model_table_rows_match_the_fit():
    model = ModelMetric(ModelKind.BALL_CUSP, 2)
    points = default_sample_points(model)
    table = model_table(model, points)
    # two coordinates, then g and Ric as re/im pairs, then lambda_hat
    assert len(table.header) == 2 * 2 + 2 * (2 * 2 * 2) + 1
    assert len(table.rows) == len(points)
    assert all(len(row) == len(table.header) for row in table.rows)
    assert all(row[-1] == table.report.lambda_hat for row in table.rows)
    assert table.report.lambda_hat == pytest.approx(einstein_check(model, points).lambda_hat)


@pytest.mark.parametrize(
    "model, points",
    [
        (ModelMetric(ModelKind.HILBERT_CUSP, 2), [[2j, 0.5j], [1 + 1j, 3 + 2j], [-2 + 0.8j, 0.4 + 1.5j]]),
        (ModelMetric(ModelKind.BALL_CUSP, 2), [[5 + 3j, 0.5], [-1 + 1.2j, 0.3j], [0.2 + 0.9j, -0.4 + 0.1j]]),
        (ModelMetric(ModelKind.CUSP_DISK, 1), [[0.15], [-0.4j], [0.6 - 0.2j]]),
    ],
)
def test_einstein_constant_does_not_depend_on_sample_points(model, points):
    at_defaults = einstein_check(model, default_sample_points(model))
    moved = einstein_check(model, points)
    assert moved.lambda_hat == pytest.approx(at_defaults.lambda_hat, abs=1e-4)


def test_threaded_fits_match_serial_fits():
    models = [
        ModelMetric(ModelKind.BALL_CUSP, 2),
        ModelMetric(ModelKind.CONE_ELLIPTIC, 2),
        ModelMetric(ModelKind.HILBERT_CUSP, 2),
        ModelMetric(ModelKind.CUSP_DISK, 1),
    ] * 2
    dps = mpmath.mp.dps

    def fit(model):
        return einstein_check(model, default_sample_points(model)).lambda_hat

    serial = [fit(model) for model in models]
    threaded, errors = WorkflowRunner.run_all(fit, models, "fit", threads=4)
    assert not errors
    assert threaded == serial
    assert mpmath.mp.dps == dps


def test_non_hermitian_levi_form_is_rejected():
    ctx = mpmath.MPContext()
    skewed = ctx.matrix([[1, 0.5], [0, 1]])
    with pytest.raises(ChartError, match="not hermitian"):
        _to_numpy(skewed, 1e-5, "skewed form")
    g = _to_numpy(ctx.matrix([[2, 1j], [-1j, 3]]), 1e-5, "hermitian form")
    np.testing.assert_allclose(g, [[2, 1j], [-1j, 3]])
