import math

import numpy as np
import pytest

from kecusp.core.geom import (
    TRIVIAL_DIVISOR,
    DensityKind,
    DivisorData,
    DomainError,
    Reduction,
    build_density,
    build_domain,
    density_to_csv,
    regularization_shift,
    sigma_d_weight,
)
from kecusp.utils.stencils import d1, d2, d2_periodic


def test_radial_domain_grid():
    domain = build_domain("radial_n1", -8.0, -1.0, 1025)
    assert domain.reduction is Reduction.RADIAL_N1
    assert domain.shape == (1025,)
    assert domain.t[0] == -8.0 and domain.t[-1] == -1.0
    assert domain.h == pytest.approx(7.0 / 1024)
    assert domain.dimension == 1


def test_polar_domain_needs_theta_nodes():
    domain = build_domain(Reduction.POLAR2D_N1, -4.0, -1.0, 33, n_theta=16)
    assert domain.shape == (33, 16)
    np.testing.assert_allclose(domain.theta[1], 2 * np.pi / 16)
    with pytest.raises(DomainError):
        build_domain(Reduction.POLAR2D_N1, -4.0, -1.0, 33)


def test_cone_domain_needs_degree():
    with pytest.raises(DomainError, match="k is required"):
        build_domain(Reduction.CALABI_CONE_N2, -100.0, -10.0, 65)
    domain = build_domain(Reduction.CALABI_CONE_N2, -100.0, -10.0, 65, k=2)
    assert domain.k == 2 and domain.dimension == 2


@pytest.mark.parametrize(
    "t_min, t_max, n_t",
    [(-1.0, -1.0, 65), (-1.0, -2.0, 65), (-2.0, 0.5, 65), (-2.0, -1.0, 4), (-math.inf, -1.0, 65)],
)
def test_invalid_domains_raise(t_min, t_max, n_t):
    with pytest.raises(DomainError):
        build_domain(Reduction.RADIAL_N1, t_min, t_max, n_t)


def test_with_t_min_keeps_outer_radius():
    domain = build_domain(Reduction.CALABI_CONE_N2, -100.0, -10.0, 65, k=1)
    deeper = domain.with_t_min(-190.0, n_t=129)
    assert deeper.t_max == domain.t_max and deeper.k == 1
    assert deeper.h == pytest.approx(domain.h)
    assert not deeper.same_grid(domain)


def test_divisor_validation():
    divisor = DivisorData(("1/2", "1/3"), ("1",), pole_order=2)
    assert divisor.e_weight == pytest.approx(5 / 6)
    assert divisor.f_weight == 1.0
    with pytest.raises(DomainError):
        DivisorData(("-1/2",))
    with pytest.raises(DomainError):
        DivisorData((), ("3/2",))
    with pytest.raises(DomainError):
        DivisorData(pole_order=0)


def test_sigma_weight_scales_with_pole_order():
    domain = build_domain(Reduction.RADIAL_N1, -4.0, -1.0, 17)
    np.testing.assert_allclose(sigma_d_weight(domain, DivisorData(pole_order=3)), 3 * domain.t)


def test_regularization_shift_vanishes_at_zero():
    domain = build_domain(Reduction.RADIAL_N1, -4.0, -1.0, 17)
    divisor = DivisorData(("1/2",), ("1/3",))
    np.testing.assert_array_equal(regularization_shift(domain, divisor, 0.0), 0.0)


def test_regularization_shift_formula():
    domain = build_domain(Reduction.RADIAL_N1, -4.0, -1.0, 17)
    s = 0.25
    shift = regularization_shift(domain, DivisorData(("1/2",), ("1/3",)), s)
    e, f = np.exp(0.5 * domain.t), np.exp(domain.t / 3)
    expected = np.log((e + s) / e) - np.log((f + s) / f)
    np.testing.assert_allclose(shift, expected, rtol=1e-12)


def test_empty_divisor_lists_contribute_nothing():
    domain = build_domain(Reduction.RADIAL_N1, -4.0, -1.0, 17)
    np.testing.assert_array_equal(regularization_shift(domain, TRIVIAL_DIVISOR, 0.5), 0.0)


def test_density_kinds():
    radial = build_domain(Reduction.RADIAL_N1, -4.0, -1.0, 17)
    cone = build_domain(Reduction.CALABI_CONE_N2, -100.0, -10.0, 17, k=3)

    smooth = build_density(radial, TRIVIAL_DIVISOR, 0.0, DensityKind.SMOOTH_UNIT)
    np.testing.assert_array_equal(smooth.f, 1.0)

    pole = build_density(cone, TRIVIAL_DIVISOR, 0.0, DensityKind.CONE_POLE)
    assert pole.normalization == 6.0
    np.testing.assert_allclose(pole.f, 6.0)
    with pytest.raises(DomainError):
        build_density(radial, TRIVIAL_DIVISOR, 0.0, DensityKind.CONE_POLE)


def test_custom_density_shapes():
    polar = build_domain(Reduction.POLAR2D_N1, -4.0, -1.0, 17, n_theta=8)
    density = build_density(polar, TRIVIAL_DIVISOR, 0.0, "custom", samples=np.linspace(0, 1, 17))
    assert density.log_f.shape == (17, 8)
    with pytest.raises(DomainError):
        build_density(polar, TRIVIAL_DIVISOR, 0.0, "custom", samples=np.zeros(5))
    with pytest.raises(DomainError):
        build_density(polar, TRIVIAL_DIVISOR, 0.0, "custom")


def test_zero_density_and_frozen_samples():
    domain = build_domain(Reduction.RADIAL_N1, -4.0, -1.0, 17)
    density = build_density(domain, TRIVIAL_DIVISOR, 0.0, "smooth_unit", zero=True)
    np.testing.assert_array_equal(density.f, 0.0)
    with pytest.raises(ValueError):
        density.log_f[0] = 1.0
    with pytest.raises(DomainError):
        build_density(domain, TRIVIAL_DIVISOR, -1.0, "smooth_unit")


def test_density_csv(tmp_path):
    domain = build_domain(Reduction.RADIAL_N1, -4.0, -1.0, 9)
    path = tmp_path / "density.csv"
    density_to_csv(build_density(domain, TRIVIAL_DIVISOR, 0.0, "smooth_unit"), path)
    lines = path.read_text().splitlines()
    assert lines[0] == "t,log_f,sigma_d_log"
    assert len(lines) == 10


def test_stencils_exact_on_quadratics():
    t = np.linspace(-3.0, -1.0, 21)
    h = t[1] - t[0]
    values = 3.0 * t**2 - t + 2.0
    np.testing.assert_allclose(d2(values, h), 6.0, atol=1e-9)
    np.testing.assert_allclose(d1(values, h), 6.0 * t - 1.0, atol=1e-9)


def test_periodic_stencil_on_cosine():
    theta = 2 * np.pi * np.arange(64) / 64
    values = np.cos(theta)[None, :].repeat(3, axis=0)
    np.testing.assert_allclose(d2_periodic(values, theta[1]), -values, atol=1e-2)
