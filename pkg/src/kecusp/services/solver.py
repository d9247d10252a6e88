"""Newton solvers for the reduced Monge-Ampère equations.

Reductions and their discrete residual rows (every row is multiplied by h²):

    radial_n1       φ_tt + 4sθ₀e^{2t} = 4 e^{2t+φ} F
    polar2d_n1      φ_tt + φ_θθ + 4sθ₀e^{2t} = 4 e^{2t+φ} F      (θ periodic)
    calabi_cone_n2  2k (φ′ + sθ₀(1+e^t)) (φ″ + sθ₀e^t) = e^{φ} F

Dirichlet data are imposed at t_min and t_max. The Newton Jacobians are
(negated) M-matrices, so the linear solves are direct: banded elimination in
1D and sparse LU in 2D.
"""

import csv
import logging
import math
from dataclasses import dataclass, field
from typing import Callable, List, Optional

import numpy as np
import scipy.sparse as sp
from scipy.linalg import solve_banded
from scipy.sparse.linalg import spsolve

from kecusp.core.geom import (
    TRIVIAL_DIVISOR,
    DensityField,
    DensityKind,
    DivisorData,
    ReducedDomain,
    Reduction,
    build_density,
    sigma_d_weight,
)
from kecusp.core.metrics import (
    newton_iteration_counter,
    positivity_retry_counter,
    solve_counter,
    solve_failure_counter,
)

logger = logging.getLogger(__name__)

DEFAULT_TOL = 1e-10
DEFAULT_MAX_ITER = 50
ARMIJO_C = 1e-4
MIN_STEP = 2.0**-20


class SolverError(RuntimeError):
    """Base class for solver failures."""

    pass


class ConvergenceError(SolverError):
    """Raised by callers that require convergence; carries partial results."""

    def __init__(self, message, partial=None, report=None):
        super().__init__(message)
        self.partial = partial or []
        self.report = report


class PositivityError(SolverError):
    """Raised when an iterate leaves the positive cone of the cone reduction."""

    pass


@dataclass(frozen=True)
class PotentialField:
    domain: ReducedDomain
    phi: np.ndarray
    boundary_psi: np.ndarray

    def __post_init__(self):
        phi = np.array(self.phi, dtype=float)
        psi = np.array(self.boundary_psi, dtype=float)
        if phi.shape != self.domain.shape:
            raise SolverError(f"phi has shape {phi.shape}, expected {self.domain.shape}")
        if not np.array_equal(np.stack([phi[0], phi[-1]]), psi):
            raise SolverError("phi does not match the Dirichlet trace at boundary nodes")
        phi.setflags(write=False)
        psi.setflags(write=False)
        object.__setattr__(self, "phi", phi)
        object.__setattr__(self, "boundary_psi", psi)

    @classmethod
    def from_samples(cls, domain: ReducedDomain, phi) -> "PotentialField":
        phi = np.array(phi, dtype=float)
        return cls(domain, phi, np.stack([phi[0], phi[-1]]))

    @property
    def inner(self):
        return self.boundary_psi[0]

    @property
    def outer(self):
        return self.boundary_psi[1]


@dataclass
class ContinuationSchedule:
    s_values: List[float]
    tol: float = DEFAULT_TOL
    max_iter: int = DEFAULT_MAX_ITER

    def __post_init__(self):
        s = [float(x) for x in self.s_values]
        if not s:
            raise SolverError("schedule must contain at least one s value")
        if s[0] > 1:
            raise SolverError(f"schedule must start at s <= 1 (got {s[0]})")
        if s[-1] != 0:
            raise SolverError(f"schedule must end at s = 0 (got {s[-1]})")
        if any(b >= a for a, b in zip(s, s[1:])):
            raise SolverError(f"schedule must be strictly decreasing: {s}")
        if any(x < 0 for x in s):
            raise SolverError("schedule values must be nonnegative")
        if self.tol <= 0 or self.max_iter < 1:
            raise SolverError("tolerance must be positive and max_iter at least 1")
        self.s_values = s

    @classmethod
    def halving(cls, n_halvings: int, **kwargs) -> "ContinuationSchedule":
        """The ladder 1, 1/2, ..., 2^-n, 0."""
        return cls([2.0**-j for j in range(n_halvings + 1)] + [0.0], **kwargs)


@dataclass
class SolveReport:
    s_values: List[float] = field(default_factory=list)
    residual_history: List[List[float]] = field(default_factory=list)
    merit_history: List[List[float]] = field(default_factory=list)
    iterations: List[int] = field(default_factory=list)
    final_residual: float = math.inf
    converged: bool = False
    positivity_maintained: bool = True
    retried: bool = False
    lipschitz: List[float] = field(default_factory=list)

    @property
    def lipschitz_constant(self) -> Optional[float]:
        return max(self.lipschitz) if self.lipschitz else None

    def extend(self, other: "SolveReport") -> None:
        self.s_values.extend(other.s_values)
        self.residual_history.extend(other.residual_history)
        self.merit_history.extend(other.merit_history)
        self.iterations.extend(other.iterations)
        self.final_residual = other.final_residual
        self.positivity_maintained = self.positivity_maintained and other.positivity_maintained
        self.retried = self.retried or other.retried

    def as_dict(self) -> dict:
        return {
            "s_values": self.s_values,
            "iterations": self.iterations,
            "residual_history": self.residual_history,
            "final_residual": self.final_residual,
            "converged": self.converged,
            "positivity_maintained": self.positivity_maintained,
            "retried": self.retried,
            "lipschitz": self.lipschitz,
        }


@dataclass
class _NewtonResult:
    x: np.ndarray
    residuals: List[float]
    merits: List[float]
    iterations: int
    converged: bool
    positivity_lost: bool


def _newton(
    residual: Callable[[np.ndarray], np.ndarray],
    step: Callable[[np.ndarray, np.ndarray], np.ndarray],
    x0: np.ndarray,
    tol: float,
    max_iter: int,
    admissible: Callable[[np.ndarray], bool] = lambda x: True,
    label: str = "",
) -> _NewtonResult:
    """Damped Newton with Armijo backtracking on the residual 2-norm."""
    x = np.array(x0, dtype=float)
    if not admissible(x):
        return _NewtonResult(x, [math.inf], [math.inf], 0, False, True)

    r = residual(x)
    sup, merit = float(np.max(np.abs(r), initial=0.0)), float(np.linalg.norm(r))
    residuals, merits = [sup], [merit]
    positivity_lost = False
    iterations = 0

    while sup > tol and iterations < max_iter:
        dx = step(x, r)
        lam = 1.0
        accepted = False
        blocked_by_positivity = False
        while lam >= MIN_STEP:
            candidate = x + lam * dx
            if not admissible(candidate):
                blocked_by_positivity = True
            else:
                r_new = residual(candidate)
                merit_new = float(np.linalg.norm(r_new))
                if np.isfinite(merit_new) and merit_new <= (1.0 - ARMIJO_C * lam) * merit:
                    accepted = True
                    break
            lam *= 0.5

        if not accepted:
            positivity_lost = blocked_by_positivity
            logger.warning(
                f"[{label}] Line search stalled at residual {sup:.3e}"
                + (" (positivity constraint active)" if positivity_lost else "")
            )
            break

        x, r, merit = candidate, r_new, merit_new
        sup = float(np.max(np.abs(r), initial=0.0))
        iterations += 1
        residuals.append(sup)
        merits.append(merit)
        logger.debug(f"[{label}] Newton step {iterations}: lambda={lam:g}, residual={sup:.3e}")

    return _NewtonResult(x, residuals, merits, iterations, sup <= tol, positivity_lost)


def _as_ends(value, width: Optional[int]) -> np.ndarray:
    if width is None:
        return np.asarray(float(value))
    return np.broadcast_to(np.asarray(value, dtype=float), (width,)).copy()


def _affine_seed(base: np.ndarray, t: np.ndarray, inner, outer) -> np.ndarray:
    """Shift base by an affine function of t so both ends match the data."""
    width = (t - t[0]) / (t[-1] - t[0])
    if base.ndim == 2:
        width = width[:, None]
    return base + (inner - base[0]) * (1.0 - width) + (outer - base[-1]) * width


def _finish(
    domain, phi, result: _NewtonResult, s, label, positivity_ok=True, retried=False
):
    reduction = domain.reduction.value
    solve_counter.labels(reduction=reduction).inc()
    newton_iteration_counter.labels(reduction=reduction).inc(result.iterations)
    if not result.converged:
        solve_failure_counter.labels(reduction=reduction).inc()
        logger.warning(
            f"[{label}] Newton did not converge after {result.iterations} iterations "
            f"(residual {result.residuals[-1]:.3e})"
        )
    else:
        logger.info(
            f"[{label}] Newton converged in {result.iterations} iterations "
            f"(residual {result.residuals[-1]:.3e}, s={s:g})"
        )
    report = SolveReport(
        s_values=[s],
        residual_history=[result.residuals],
        merit_history=[result.merits],
        iterations=[result.iterations],
        final_residual=result.residuals[-1],
        converged=result.converged,
        positivity_maintained=positivity_ok,
        retried=retried,
    )
    return PotentialField.from_samples(domain, phi), report


def _check_density(domain: ReducedDomain, density: DensityField, expected: Reduction):
    if domain.reduction is not expected:
        raise SolverError(f"expected a {expected.value} domain, got {domain.reduction.value}")
    if not density.domain.same_grid(domain):
        raise SolverError("density was built on a different grid")


def barrier_initializer(
    domain: ReducedDomain, divisor: DivisorData = TRIVIAL_DIVISOR, outer=None
) -> PotentialField:
    """Lower barrier −2n·log(−log|σ_D|²), shifted to the outer Dirichlet value."""
    sigma = sigma_d_weight(domain, divisor)
    phi = -2.0 * domain.dimension * np.log(-sigma)
    if outer is not None:
        phi = phi + (np.asarray(outer, dtype=float) - phi[-1])
    return PotentialField.from_samples(domain, phi)


def solve_liouville_radial(
    domain: ReducedDomain,
    density: DensityField,
    inner: float,
    outer: float,
    tol: float = DEFAULT_TOL,
    max_iter: int = DEFAULT_MAX_ITER,
    theta0: float = 1.0,
    divisor: DivisorData = TRIVIAL_DIVISOR,
    seed: Optional[np.ndarray] = None,
):
    _check_density(domain, density, Reduction.RADIAL_N1)
    if not (math.isfinite(inner) and math.isfinite(outer)):
        raise SolverError("boundary values must be finite")
    t, h = domain.t, domain.h
    label = domain.reduction.value
    weight = 4.0 * h**2 * np.exp(2.0 * t[1:-1]) * density.f[1:-1]
    background = 4.0 * h**2 * density.s * theta0 * np.exp(2.0 * t[1:-1])

    def assemble(x):
        return np.concatenate([[inner], x, [outer]])

    def residual(x):
        phi = assemble(x)
        return phi[2:] - 2.0 * phi[1:-1] + phi[:-2] + background - weight * np.exp(x)

    def step(x, r):
        n = x.size
        ab = np.zeros((3, n))
        ab[0, 1:] = 1.0
        ab[1, :] = -2.0 - weight * np.exp(x)
        ab[2, :-1] = 1.0
        return solve_banded((1, 1), ab, -r)

    if seed is None:
        seed = _affine_seed(barrier_initializer(domain, divisor).phi, t, inner, outer)
    result = _newton(residual, step, np.asarray(seed, dtype=float)[1:-1], tol, max_iter, label=label)
    return _finish(domain, assemble(result.x), result, density.s, label)


def _periodic_second_difference(n: int) -> sp.csr_matrix:
    main = -2.0 * np.ones(n)
    off = np.ones(n - 1)
    mat = sp.diags([off, main, off], [-1, 0, 1], format="lil")
    mat[0, n - 1] = 1.0
    mat[n - 1, 0] = 1.0
    return mat.tocsr()


def solve_liouville_2d(
    domain: ReducedDomain,
    density: DensityField,
    boundary_psi,
    inner,
    tol: float = DEFAULT_TOL,
    max_iter: int = DEFAULT_MAX_ITER,
    theta0: float = 1.0,
    divisor: DivisorData = TRIVIAL_DIVISOR,
    seed: Optional[np.ndarray] = None,
):
    """Annulus solve with ψ(θ) on t = t_max and a supplied inner trace on t = t_min."""
    _check_density(domain, density, Reduction.POLAR2D_N1)
    n_t, n_th = domain.n_t, domain.n_theta
    outer_row = _as_ends(boundary_psi, n_th)
    inner_row = _as_ends(inner, n_th)
    if not (np.all(np.isfinite(outer_row)) and np.all(np.isfinite(inner_row))):
        raise SolverError("boundary values must be finite")
    t, h = domain.t, domain.h
    ratio = (h / domain.dtheta) ** 2
    label = domain.reduction.value

    e2t = np.exp(2.0 * t[1:-1])[:, None]
    weight = (4.0 * h**2 * e2t * density.f[1:-1]).ravel()
    background = np.repeat(4.0 * h**2 * density.s * theta0 * e2t, n_th, axis=1).ravel()

    n_inner = n_t - 2
    lap_t = sp.diags(
        [np.ones(n_inner - 1), -2.0 * np.ones(n_inner), np.ones(n_inner - 1)], [-1, 0, 1]
    )
    linear = (
        sp.kron(lap_t, sp.identity(n_th))
        + ratio * sp.kron(sp.identity(n_inner), _periodic_second_difference(n_th))
    ).tocsr()
    boundary_term = np.zeros((n_inner, n_th))
    boundary_term[0] += inner_row
    boundary_term[-1] += outer_row
    boundary_term = boundary_term.ravel()

    def assemble(x):
        return np.vstack([inner_row, x.reshape(n_inner, n_th), outer_row])

    def residual(x):
        return linear @ x + boundary_term + background - weight * np.exp(x)

    def step(x, r):
        jac = (linear - sp.diags(weight * np.exp(x))).tocsc()
        return spsolve(jac, -r)

    if seed is None:
        base = barrier_initializer(domain, divisor).phi
        seed = _affine_seed(base, t, inner_row, outer_row)
    x0 = np.asarray(seed, dtype=float)[1:-1].ravel()
    result = _newton(residual, step, x0, tol, max_iter, label=label)
    return _finish(domain, assemble(result.x), result, density.s, label)


def cone_positivity(phi: np.ndarray, h: float, shift_p=0.0, shift_q=0.0) -> bool:
    """Discrete φ′ > 0 and φ″ > 0 at interior nodes (after the background shift)."""
    p = (phi[2:] - phi[:-2]) / (2.0 * h) + shift_p
    q = (phi[2:] - 2.0 * phi[1:-1] + phi[:-2]) / h**2 + shift_q
    return bool(np.all(p > 0) and np.all(q > 0))


def _cone_log_seed(domain: ReducedDomain, divisor: DivisorData, inner, outer):
    """−B·log(−l t) + C through both boundary values, when B > 0."""
    lt = -divisor.pole_order * domain.t
    gap = math.log(lt[0]) - math.log(lt[-1])
    exponent = (outer - inner) / gap
    if exponent <= 0:
        return None
    return -exponent * np.log(lt) + (outer + exponent * math.log(lt[-1]))


def solve_calabi_ansatz(
    domain: ReducedDomain,
    density: DensityField,
    inner: float,
    outer: float,
    tol: float = DEFAULT_TOL,
    max_iter: int = DEFAULT_MAX_ITER,
    theta0: float = 1.0,
    divisor: DivisorData = TRIVIAL_DIVISOR,
    seed: Optional[np.ndarray] = None,
):
    _check_density(domain, density, Reduction.CALABI_CONE_N2)
    if not (math.isfinite(inner) and math.isfinite(outer)):
        raise SolverError("boundary values must be finite")
    t, h, k = domain.t, domain.h, domain.k
    label = domain.reduction.value
    s = density.s
    shift_p = s * theta0 * (1.0 + np.exp(t[1:-1]))
    shift_q = s * theta0 * np.exp(t[1:-1])
    f = density.f[1:-1]

    def assemble(x):
        return np.concatenate([[inner], x, [outer]])

    def derivatives(phi):
        p = (phi[2:] - phi[:-2]) / (2.0 * h) + shift_p
        q = (phi[2:] - 2.0 * phi[1:-1] + phi[:-2]) / h**2 + shift_q
        return p, q

    def admissible(x):
        p, q = derivatives(assemble(x))
        return bool(np.all(p > 0) and np.all(q > 0))

    def residual(x):
        p, q = derivatives(assemble(x))
        return h**2 * (2.0 * k * p * q - np.exp(x) * f)

    def step(x, r):
        p, q = derivatives(assemble(x))
        ab = np.zeros((3, x.size))
        ab[0, 1:] = (2.0 * k * (p + 0.5 * h * q))[:-1]
        ab[1, :] = -4.0 * k * p - h**2 * np.exp(x) * f
        ab[2, :-1] = (2.0 * k * (p - 0.5 * h * q))[1:]
        return solve_banded((1, 1), ab, -r)

    seeds = []
    if seed is not None:
        seeds.append(np.asarray(seed, dtype=float))
    else:
        fitted = _cone_log_seed(domain, divisor, inner, outer)
        if fitted is not None:
            seeds.append(fitted)
    barrier = _affine_seed(barrier_initializer(domain, divisor).phi, t, inner, outer)
    seeds.append(barrier)

    result, retried = None, False
    for attempt, start in enumerate(seeds):
        result = _newton(residual, step, start[1:-1], tol, max_iter, admissible, label=label)
        if not result.positivity_lost:
            break
        if attempt + 1 < len(seeds):
            retried = True
            positivity_retry_counter.labels(reduction=label).inc()
            logger.warning(f"[{label}] Positivity lost; retrying from the barrier initializer")

    phi = assemble(result.x)
    positive = cone_positivity(phi, h, shift_p, shift_q)
    return _finish(domain, phi, result, s, label, positivity_ok=positive, retried=retried)


@dataclass(frozen=True)
class ReducedProblem:
    """Everything needed to rebuild the s-problem for any s."""

    domain: ReducedDomain
    inner: object
    outer: object
    divisor: DivisorData = TRIVIAL_DIVISOR
    density_kind: DensityKind = DensityKind.SMOOTH_UNIT
    density_samples: Optional[tuple] = None
    zero_density: bool = False
    theta0: float = 1.0

    def density(self, s: float) -> DensityField:
        return build_density(
            self.domain,
            self.divisor,
            s,
            self.density_kind,
            samples=self.density_samples,
            zero=self.zero_density,
        )


def solve_reduced(
    problem: ReducedProblem,
    s: float = 0.0,
    seed: Optional[np.ndarray] = None,
    tol: float = DEFAULT_TOL,
    max_iter: int = DEFAULT_MAX_ITER,
):
    domain = problem.domain
    density = problem.density(s)
    kwargs = dict(
        tol=tol, max_iter=max_iter, theta0=problem.theta0, divisor=problem.divisor, seed=seed
    )
    if domain.reduction is Reduction.RADIAL_N1:
        return solve_liouville_radial(domain, density, problem.inner, problem.outer, **kwargs)
    if domain.reduction is Reduction.POLAR2D_N1:
        return solve_liouville_2d(domain, density, problem.outer, problem.inner, **kwargs)
    return solve_calabi_ansatz(domain, density, problem.inner, problem.outer, **kwargs)


def solve_reference_dirichlet(
    domain: ReducedDomain,
    inner: float,
    outer: float,
    tol: float = DEFAULT_TOL,
    max_iter: int = DEFAULT_MAX_ITER,
):
    """Bounded solution u of (ω + √−1∂∂̄u) = e^u ω, ω the complete cusp metric.

    Solved as φ = φ* + u for the Liouville equation; u is returned.
    """
    from kecusp.services.models import exact_cusp

    base = exact_cusp(domain.t)
    density = build_density(domain, TRIVIAL_DIVISOR, 0.0, DensityKind.SMOOTH_UNIT)
    field_, report = solve_liouville_radial(
        domain,
        density,
        base[0] + inner,
        base[-1] + outer,
        tol=tol,
        max_iter=max_iter,
        seed=_affine_seed(base, domain.t, base[0] + inner, base[-1] + outer),
    )
    u = field_.phi - base
    u[0], u[-1] = inner, outer
    return PotentialField.from_samples(domain, u), report


def manufactured_cone_density(domain: ReducedDomain, shift: float = 3.0) -> DensityField:
    """Density for which φ = (t + shift)²/2 solves the cone equation exactly."""
    x = domain.t + shift
    if np.any(x <= 0):
        raise SolverError("manufactured solution needs t + shift > 0 on the grid")
    log_f = math.log(2.0 * domain.k) + np.log(x) - 0.5 * x**2
    return build_density(domain, TRIVIAL_DIVISOR, 0.0, DensityKind.CUSTOM, samples=log_f)


@dataclass
class SandwichReport:
    lower_ok: bool
    upper_ok: bool
    lower_margin: float
    upper_margin: float
    slope_b: float
    a_used: float
    supersolution_ok: bool
    offending_node: Optional[int] = None
    upper: Optional[np.ndarray] = None
    lower: Optional[np.ndarray] = None


def _defining_function(domain: ReducedDomain, t: np.ndarray) -> np.ndarray:
    # |z|² = e^{2t} for n = 1, |ξ|²_h = e^t on the cone
    if domain.reduction is Reduction.CALABI_CONE_N2:
        return np.exp(t)
    return np.exp(2.0 * t)


def poisson_supersolution(domain: ReducedDomain, inner: float, outer: float, A: float):
    """Discrete solution of u_tt = −A with the given Dirichlet data."""
    h = domain.h
    n = domain.n_t - 2
    ab = np.zeros((3, n))
    ab[0, 1:] = 1.0
    ab[1, :] = -2.0
    ab[2, :-1] = 1.0
    rhs = np.full(n, -A * h**2)
    rhs[0] -= inner
    rhs[-1] -= outer
    return np.concatenate([[inner], solve_banded((1, 1), ab, rhs), [outer]])


def is_supersolution(
    u: np.ndarray, domain: ReducedDomain, density: DensityField, theta0: float = 1.0
) -> bool:
    t, h = domain.t[1:-1], domain.h
    f = density.f[1:-1]
    q = (u[2:] - 2.0 * u[1:-1] + u[:-2]) / h**2
    if domain.reduction is Reduction.CALABI_CONE_N2:
        p = (u[2:] - u[:-2]) / (2.0 * h) + density.s * theta0 * (1.0 + np.exp(t))
        q = q + density.s * theta0 * np.exp(t)
        # a form that is not positive has vanishing Monge-Ampère mass
        lhs = np.where((p > 0) & (q > 0), 2.0 * domain.k * p * q, 0.0)
        return bool(np.all(lhs <= np.exp(u[1:-1]) * f))
    lhs = q + 4.0 * density.s * theta0 * np.exp(2.0 * t)
    return bool(np.all(lhs <= 4.0 * np.exp(2.0 * t + u[1:-1]) * f))


def smallest_supersolution_a(
    field_: PotentialField,
    density: DensityField,
    theta0: float = 1.0,
    a_max: float = 1e6,
    rel_tol: float = 1e-6,
) -> float:
    """Bisection for the smallest A whose Poisson solution is a discrete supersolution."""
    domain = field_.domain

    def ok(a):
        u = poisson_supersolution(domain, field_.inner, field_.outer, a)
        return is_supersolution(u, domain, density, theta0)

    if ok(0.0):
        return 0.0
    if not ok(a_max):
        raise SolverError(f"no supersolution found for A <= {a_max:g}")
    lo, hi = 0.0, a_max
    while hi - lo > rel_tol * max(hi, 1.0):
        mid = 0.5 * (lo + hi)
        lo, hi = (lo, mid) if ok(mid) else (mid, hi)
    return hi


def sandwich_check(
    field_: PotentialField,
    domain: ReducedDomain,
    density: DensityField,
    A: float,
    layer: int = 10,
    theta0: float = 1.0,
    upper: Optional[np.ndarray] = None,
    lower: Optional[np.ndarray] = None,
    atol: float = 1e-12,
) -> SandwichReport:
    """Checks b(ρ − a) ≤ φ − ψ on the outer boundary layer and φ ≤ u everywhere."""
    if domain.reduction is Reduction.POLAR2D_N1:
        raise SolverError("sandwich_check supports the 1D reductions only")
    if not field_.domain.same_grid(domain):
        raise SolverError("field and domain grids differ")
    phi = field_.phi
    t = domain.t
    layer = min(layer, domain.n_t - 2)
    layer_nodes = np.arange(domain.n_t - 1 - layer, domain.n_t - 1)

    u = poisson_supersolution(domain, field_.inner, field_.outer, A)
    supersolution_ok = is_supersolution(u, domain, density, theta0)
    if upper is None:
        upper = u

    rho = _defining_function(domain, t)
    a = rho[-1]
    slope_b = 0.0
    if lower is None:
        gaps = (field_.outer - phi[layer_nodes]) / (a - rho[layer_nodes])
        slope_b = max(0.0, float(np.max(gaps)))
        lower = field_.outer + slope_b * (rho - a)

    scale = max(1.0, float(np.max(np.abs(phi))))
    upper_gap = np.asarray(upper) - phi
    lower_gap = phi[layer_nodes] - np.asarray(lower)[layer_nodes]
    upper_margin = float(np.min(upper_gap))
    lower_margin = float(np.min(lower_gap))
    upper_ok = upper_margin >= -atol * scale
    lower_ok = lower_margin >= -atol * scale

    offending = None
    if not upper_ok:
        offending = int(np.argmin(upper_gap))
    elif not lower_ok:
        offending = int(layer_nodes[np.argmin(lower_gap)])
    if offending is not None:
        logger.warning(
            f"[{domain.reduction.value}] Sandwich violated at node {offending} (t={t[offending]:.6g})"
        )
    return SandwichReport(
        lower_ok,
        upper_ok,
        lower_margin,
        upper_margin,
        slope_b,
        float(A),
        supersolution_ok,
        offending,
        np.asarray(upper),
        np.asarray(lower),
    )


def field_to_csv(field_: PotentialField, path) -> None:
    domain = field_.domain
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        if domain.reduction is Reduction.POLAR2D_N1:
            writer.writerow(["t", "theta", "phi"])
            for i, t in enumerate(domain.t):
                for j, th in enumerate(domain.theta):
                    writer.writerow([repr(float(t)), repr(float(th)), repr(float(field_.phi[i, j]))])
        else:
            writer.writerow(["t", "phi"])
            for t, value in zip(domain.t, field_.phi):
                writer.writerow([repr(float(t)), repr(float(value))])
    logger.info(f"[{domain.reduction.value}] Wrote potential samples to {path}")
