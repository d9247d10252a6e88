import math

import numpy as np
import pytest

from kecusp.core.geom import TRIVIAL_DIVISOR, DensityKind, Reduction, build_density, build_domain
from kecusp.services.analysis import (
    AnalysisError,
    GridMismatchError,
    RadialProfile,
    distance_profile,
    fit_rigidity_constant,
    lelong_estimate,
    profile_to_csv,
    radial_length,
    rigidity_profile,
    rigidity_report,
    sublog_check,
    trace_comparison,
    volume_integral,
    volume_profile,
)
from kecusp.services.models import ModelKind, ModelMetric, exact_cone, exact_cusp
from kecusp.services.solver import PotentialField


def _sampled(domain, values):
    return PotentialField.from_samples(domain, values)


def _cone_domain(t_min=-1000.0, t_max=-10.0, n_t=2049):
    return build_domain(Reduction.CALABI_CONE_N2, t_min, t_max, n_t, k=1)


def test_cusp_volume_of_half_disk(sampled_cusp):
    domain, field_ = sampled_cusp()
    report = volume_integral(field_, domain, -math.log(2.0))
    assert report.extrapolated == pytest.approx(2 * math.pi / math.log(2.0), rel=5e-3)
    assert report.tail_power == 1
    assert report.truncated < report.extrapolated


@pytest.mark.parametrize("k", [4, 8, 16])
def test_cusp_volume_tails(sampled_cusp, k):
    domain, field_ = sampled_cusp()
    report = volume_integral(field_, domain, -float(k))
    assert report.extrapolated == pytest.approx(2 * math.pi / k, rel=2e-2)


def test_volume_cut_must_leave_room_for_the_tail_fit(sampled_cusp):
    domain, field_ = sampled_cusp()
    with pytest.raises(AnalysisError):
        volume_integral(field_, domain, domain.t_min + 1.0)
    with pytest.raises(AnalysisError):
        volume_integral(field_, domain, 0.5)


def test_volume_grows_with_the_cut(sampled_cusp):
    domain, field_ = sampled_cusp()
    cuts = np.linspace(-10.0, -0.5, 12)
    volumes = [volume_integral(field_, domain, c).truncated for c in cuts]
    assert all(b > a for a, b in zip(volumes, volumes[1:]))


def test_volume_converges_as_the_grid_deepens(sampled_cusp):
    truncated, extrapolated = [], []
    for t_min in (-16.0, -32.0, -64.0, -128.0):
        # same spacing at every depth, so the grids share their nodes
        domain, field_ = sampled_cusp(t_min=t_min, n_t=int((-0.5 - t_min) * 32) + 1)
        report = volume_integral(field_, domain, -math.log(2.0))
        truncated.append(report.truncated)
        extrapolated.append(report.extrapolated)
    gaps = np.diff(truncated)
    assert np.all(gaps > 0)
    assert all(a / b >= 1.5 for a, b in zip(gaps, gaps[1:]))
    for value in extrapolated:
        assert value == pytest.approx(2 * math.pi / math.log(2.0), rel=5e-3)


def test_flat_density_volume():
    domain = build_domain(Reduction.RADIAL_N1, -3.0, -0.5, 1025)
    phi = np.exp(2.0 * domain.t) / 2.0
    density = build_density(domain, TRIVIAL_DIVISOR, 0.0, DensityKind.CUSTOM, samples=math.log(0.5) - phi)
    profile = volume_profile(_sampled(domain, phi), domain, density)
    expected = math.pi * (math.exp(-1.0) - math.exp(-6.0))
    assert profile.values[-1] == pytest.approx(expected, rel=1e-4)
    assert profile.values[0] == 0.0


def test_polar_volume_matches_radial():
    radial = build_domain(Reduction.RADIAL_N1, -6.0, -1.0, 129)
    polar = build_domain(Reduction.POLAR2D_N1, -6.0, -1.0, 129, n_theta=16)
    phi = exact_cusp(radial.t)
    r = volume_profile(_sampled(radial, phi), radial)
    p = volume_profile(_sampled(polar, np.repeat(phi[:, None], 16, axis=1)), polar)
    np.testing.assert_allclose(p.values, r.values, rtol=1e-12)


def test_flat_radial_length_is_euclidean():
    domain = build_domain(Reduction.RADIAL_N1, -3.0, -0.5, 2049)
    field_ = _sampled(domain, np.exp(2.0 * domain.t) / 2.0)
    length = radial_length(field_, domain, -2.0, -1.0)
    assert length == pytest.approx(math.exp(-1.0) - math.exp(-2.0), rel=1e-5)


def test_radial_length_is_additive():
    domain = build_domain(Reduction.RADIAL_N1, -8.0, -1.0, 513)
    field_ = _sampled(domain, exact_cusp(domain.t))
    whole = radial_length(field_, domain, -7.3, -1.2)
    parts = radial_length(field_, domain, -7.3, -4.05) + radial_length(field_, domain, -4.05, -1.2)
    assert whole == pytest.approx(parts, rel=1e-12)
    with pytest.raises(AnalysisError):
        radial_length(field_, domain, -9.0, -2.0)


def test_cusp_distance_grows_logarithmically():
    depths = []
    for log_depth in (1.0, 3.0):
        t_min = -math.exp(log_depth)
        n_t = int(round((-1.0 - t_min) / 0.005)) + 1
        domain = build_domain(Reduction.RADIAL_N1, t_min, -1.0, n_t)
        profile = distance_profile(_sampled(domain, exact_cusp(domain.t)), domain)
        assert profile.values[-1] == 0.0
        assert np.all(np.diff(profile.values) < 0)
        depths.append(profile.values[0])
    assert depths[1] - depths[0] == pytest.approx(2.0, rel=2e-2)


def test_cone_distance_rate():
    shallow = _cone_domain(-10.0 * math.e, -10.0, 1025)
    deep = _cone_domain(-10.0 * math.e**3, -10.0, 8193)
    R = [distance_profile(_sampled(d, exact_cone(d.t)), d).values[0] for d in (shallow, deep)]
    assert R[1] - R[0] == pytest.approx(2.0 * math.sqrt(1.5), rel=2e-2)


def test_distance_rejects_non_convex_fields():
    domain = build_domain(Reduction.RADIAL_N1, -4.0, -1.0, 65)
    with pytest.raises(AnalysisError):
        distance_profile(_sampled(domain, -domain.t**2), domain)


def test_rigidity_report_on_decaying_ratio():
    domain = build_domain(Reduction.RADIAL_N1, -math.exp(4.5), -1.0, 8193)
    phi = exact_cusp(domain.t)
    c = 0.5
    report = rigidity_report(_sampled(domain, phi), _sampled(domain, phi + c / (-domain.t)), domain)
    assert report.non_increasing
    assert [r0 for r0, _ in report.ladder] == [1.0, 2.0, 4.0]
    assert report.fitted_constant == pytest.approx(c / math.e, rel=1e-2)
    assert 1.0 < report.deepest_decile_ratio < 1.0 + c


def test_rigidity_rejects_mismatched_grids():
    a = build_domain(Reduction.RADIAL_N1, -8.0, -1.0, 65)
    b = build_domain(Reduction.RADIAL_N1, -8.0, -1.0, 129)
    with pytest.raises(GridMismatchError):
        rigidity_report(_sampled(a, exact_cusp(a.t)), _sampled(b, exact_cusp(b.t)), a)


def test_fit_rigidity_constant():
    assert fit_rigidity_constant([(1.0, 0.3), (2.0, 0.2), (4.0, 0.05)]) == pytest.approx(0.4)
    assert fit_rigidity_constant([]) == 0.0


def test_rigidity_profile_is_antisymmetric():
    domain = build_domain(Reduction.RADIAL_N1, -math.exp(3.0), -1.0, 1025)
    phi = _sampled(domain, exact_cusp(domain.t))
    other = _sampled(domain, exact_cusp(domain.t) + 0.5 / (-domain.t))
    forward = rigidity_profile(phi, other, domain)
    backward = rigidity_profile(other, phi, domain)
    np.testing.assert_array_equal(backward.values, -forward.values)
    assert forward.quantity == "log_det_ratio"


def test_lelong_of_engineered_and_cone_fields():
    domain = _cone_domain()
    assert lelong_estimate(_sampled(domain, domain.t), domain) == pytest.approx(1.0, abs=1e-10)
    cone_slope = lelong_estimate(_sampled(domain, exact_cone(domain.t)), domain)
    assert abs(cone_slope) <= 0.03
    with pytest.raises(AnalysisError):
        lelong_estimate(_sampled(domain, domain.t), domain, window=5)


def test_degenerating_trace_on_the_cone():
    domain = _cone_domain()
    phi = exact_cone(domain.t)
    report = trace_comparison(_sampled(domain, phi + domain.t), _sampled(domain, phi), domain)
    np.testing.assert_allclose(report.profile.values, 2.0 + (-domain.t[1:-1]) / 3.0, rtol=1e-3)
    assert report.index_at_sup == 1
    assert not report.near_outer_boundary


def test_trace_of_identical_metrics_is_dimension():
    domain = build_domain(Reduction.RADIAL_N1, -8.0, -1.0, 257)
    field_ = _sampled(domain, exact_cusp(domain.t))
    np.testing.assert_allclose(trace_comparison(field_, field_, domain).profile.values, 1.0)


def test_sublog_holds_for_exact_models():
    radial = build_domain(Reduction.RADIAL_N1, -8.0, -1.0, 257)
    density = build_density(radial, TRIVIAL_DIVISOR, 0.0, DensityKind.SMOOTH_UNIT)
    report = sublog_check(density, ModelMetric(ModelKind.CUSP_DISK, 1), radial)
    assert report.all_stable
    for eps in report.epsilons:
        assert report.c_deep[eps] == pytest.approx(-eps * radial.t_max, abs=1e-9)

    cone = _cone_domain()
    cone_density = build_density(cone, TRIVIAL_DIVISOR, 0.0, DensityKind.CONE_POLE)
    assert sublog_check(cone_density, ModelMetric(ModelKind.CONE_ELLIPTIC, 2), cone).all_stable


def test_sublog_detects_growing_density():
    domain = build_domain(Reduction.RADIAL_N1, -8.0, -1.0, 257)
    density = build_density(domain, TRIVIAL_DIVISOR, 0.0, DensityKind.CUSTOM, samples=-2.0 * domain.t)
    report = sublog_check(density, ModelMetric(ModelKind.CUSP_DISK, 1), domain)
    assert not report.all_stable


def test_sublog_requires_matching_model():
    domain = build_domain(Reduction.RADIAL_N1, -8.0, -1.0, 65)
    density = build_density(domain, TRIVIAL_DIVISOR, 0.0, DensityKind.SMOOTH_UNIT)
    with pytest.raises(AnalysisError):
        sublog_check(density, ModelMetric(ModelKind.CONE_ELLIPTIC, 2), domain)
    with pytest.raises(AnalysisError):
        sublog_check(density, ModelMetric(ModelKind.HILBERT_CUSP, 2), domain)


def test_radial_profile_validation():
    with pytest.raises(AnalysisError):
        RadialProfile([0.0, -1.0], [1.0, 2.0], "R")
    with pytest.raises(AnalysisError):
        RadialProfile([0.0, 1.0], [1.0, np.nan], "R")


def test_profile_csv_headers(tmp_path):
    domain = build_domain(Reduction.RADIAL_N1, -8.0, -1.0, 65)
    field_ = _sampled(domain, exact_cusp(domain.t))
    profile_to_csv(distance_profile(field_, domain), tmp_path / "distance.csv")
    assert (tmp_path / "distance.csv").read_text().splitlines()[0] == "t,R"
    rigidity = rigidity_report(field_, field_, domain).profile
    profile_to_csv(rigidity, tmp_path / "rigidity.csv")
    assert (tmp_path / "rigidity.csv").read_text().splitlines()[0] == "t,R,log_det_ratio"
