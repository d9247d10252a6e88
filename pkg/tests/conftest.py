import numpy as np
import pytest

from kecusp.core.geom import TRIVIAL_DIVISOR, DensityKind, Reduction, build_density, build_domain
from kecusp.services.models import exact_cone, exact_cusp
from kecusp.services.solver import PotentialField, solve_calabi_ansatz, solve_liouville_radial


def solve_exact_cusp(t_min=-8.0, t_max=-1.0, n_t=1025, **kwargs):
    domain = build_domain(Reduction.RADIAL_N1, t_min, t_max, n_t)
    density = build_density(domain, TRIVIAL_DIVISOR, 0.0, DensityKind.SMOOTH_UNIT)
    trace = exact_cusp([t_min, t_max])
    field_, report = solve_liouville_radial(domain, density, trace[0], trace[1], **kwargs)
    return domain, field_, report


def solve_exact_cone(t_min=-1000.0, t_max=-10.0, n_t=2049, k=1, **kwargs):
    domain = build_domain(Reduction.CALABI_CONE_N2, t_min, t_max, n_t, k=k)
    density = build_density(domain, TRIVIAL_DIVISOR, 0.0, DensityKind.CONE_POLE)
    trace = exact_cone([t_min, t_max])
    field_, report = solve_calabi_ansatz(domain, density, trace[0], trace[1], **kwargs)
    return domain, field_, report


@pytest.fixture(scope="session")
def cusp_solution():
    return solve_exact_cusp()


@pytest.fixture(scope="session")
def cone_solution():
    return solve_exact_cone(tol=1e-13)


@pytest.fixture
def sampled_cusp():
    """The exact cusp potential sampled on a grid reaching |z| = 1/2."""

    def build(t_min=-64.0, t_max=-0.5, n_t=2049):
        domain = build_domain(Reduction.RADIAL_N1, t_min, t_max, n_t)
        return domain, PotentialField.from_samples(domain, exact_cusp(domain.t))

    return build


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)
