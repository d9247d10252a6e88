"""Reduced computational domains, divisor bookkeeping and sampled densities.

All types here are frozen and hold read-only numpy arrays, so they can be
shared between solver threads.
"""

import csv
import enum
import logging
import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Optional, Sequence

import numpy as np

logger = logging.getLogger(__name__)

MIN_T_NODES = 5
MIN_THETA_NODES = 8

# Normalization constant of the cone density, per unit line-bundle degree.
# With c = 2k the reduced cone equation has the exact solution -3 log(-t) + log 9.
CONE_DENSITY_PER_DEGREE = 2.0


class DomainError(ValueError):
    """Raised when a domain, divisor or density violates its invariants."""

    pass


class Reduction(str, enum.Enum):
    RADIAL_N1 = "radial_n1"
    POLAR2D_N1 = "polar2d_n1"
    CALABI_CONE_N2 = "calabi_cone_n2"

    @property
    def complex_dimension(self) -> int:
        return 2 if self is Reduction.CALABI_CONE_N2 else 1


class DensityKind(str, enum.Enum):
    SMOOTH_UNIT = "smooth_unit"
    CONE_POLE = "cone_pole"
    CUSTOM = "custom"


def _frozen(arr: np.ndarray) -> np.ndarray:
    arr = np.array(arr, dtype=float)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class ReducedDomain:
    reduction: Reduction
    t_min: float
    t_max: float
    n_t: int
    n_theta: Optional[int] = None
    k: Optional[int] = None

    @property
    def h(self) -> float:
        return (self.t_max - self.t_min) / (self.n_t - 1)

    @property
    def t(self) -> np.ndarray:
        return np.linspace(self.t_min, self.t_max, self.n_t)

    @property
    def theta(self) -> np.ndarray:
        if self.n_theta is None:
            raise DomainError(f"{self.reduction.value} domain has no theta direction")
        return 2.0 * np.pi * np.arange(self.n_theta) / self.n_theta

    @property
    def dtheta(self) -> float:
        return 2.0 * np.pi / self.n_theta

    @property
    def shape(self) -> tuple:
        if self.reduction is Reduction.POLAR2D_N1:
            return (self.n_t, self.n_theta)
        return (self.n_t,)

    @property
    def dimension(self) -> int:
        return self.reduction.complex_dimension

    def same_grid(self, other: "ReducedDomain") -> bool:
        return (
            self.reduction is other.reduction
            and self.n_t == other.n_t
            and self.n_theta == other.n_theta
            and math.isclose(self.t_min, other.t_min, rel_tol=0, abs_tol=1e-14)
            and math.isclose(self.t_max, other.t_max, rel_tol=0, abs_tol=1e-14)
        )

    def with_t_min(self, t_min: float, n_t: Optional[int] = None) -> "ReducedDomain":
        """Same reduction and outer radius, different truncation depth."""
        return build_domain(
            self.reduction, t_min, self.t_max, n_t or self.n_t, self.n_theta, self.k
        )


@dataclass(frozen=True)
class DivisorData:
    a_coeffs: tuple = ()
    b_coeffs: tuple = ()
    pole_order: int = 1

    def __post_init__(self):
        a = tuple(Fraction(x) for x in self.a_coeffs)
        b = tuple(Fraction(x) for x in self.b_coeffs)
        if any(x < 0 for x in a):
            raise DomainError(f"discrepancies must be nonnegative, got {a}")
        if any(not (0 < x <= 1) for x in b):
            raise DomainError(f"coefficients b_j must lie in (0, 1], got {b}")
        if int(self.pole_order) != self.pole_order or self.pole_order < 1:
            raise DomainError(f"pole_order must be a positive integer, got {self.pole_order}")
        object.__setattr__(self, "a_coeffs", a)
        object.__setattr__(self, "b_coeffs", b)
        object.__setattr__(self, "pole_order", int(self.pole_order))

    @property
    def e_weight(self) -> float:
        return float(sum(self.a_coeffs))

    @property
    def f_weight(self) -> float:
        return float(sum(self.b_coeffs))


TRIVIAL_DIVISOR = DivisorData()


@dataclass(frozen=True)
class DensityField:
    domain: ReducedDomain
    log_f: np.ndarray
    sigma_d_log: np.ndarray
    s: float = 0.0
    kind: DensityKind = DensityKind.SMOOTH_UNIT
    normalization: Optional[float] = None
    zero: bool = False

    def __post_init__(self):
        object.__setattr__(self, "log_f", _frozen(self.log_f))
        object.__setattr__(self, "sigma_d_log", _frozen(self.sigma_d_log))
        if self.log_f.shape != self.domain.shape:
            raise DomainError(
                f"log_f has shape {self.log_f.shape}, domain grid is {self.domain.shape}"
            )
        if not np.all(np.isfinite(self.log_f)):
            raise DomainError("log_f must be finite at every grid node")

    @property
    def f(self) -> np.ndarray:
        """Density samples e^{log_f}; identically zero for the Laplace limit."""
        if self.zero:
            return np.zeros(self.domain.shape)
        return np.exp(self.log_f)


def build_domain(
    reduction,
    t_min: float,
    t_max: float,
    n_t: int,
    n_theta: Optional[int] = None,
    k: Optional[int] = None,
) -> ReducedDomain:
    try:
        reduction = Reduction(reduction)
    except ValueError:
        raise DomainError(f"unknown reduction {reduction!r}")

    t_min, t_max = float(t_min), float(t_max)
    if not (math.isfinite(t_min) and math.isfinite(t_max)):
        raise DomainError("t_min and t_max must be finite")
    if t_min >= t_max:
        raise DomainError(f"t_min must be < t_max (got t_min={t_min}, t_max={t_max})")
    if t_max > 0:
        raise DomainError(f"t_max must be <= 0 (got {t_max})")
    if int(n_t) != n_t or n_t < MIN_T_NODES:
        raise DomainError(f"n_t must be an integer >= {MIN_T_NODES} (got {n_t})")

    if reduction is Reduction.POLAR2D_N1:
        if n_theta is None or int(n_theta) != n_theta or n_theta < MIN_THETA_NODES:
            raise DomainError(
                f"n_theta must be an integer >= {MIN_THETA_NODES} for polar2d (got {n_theta})"
            )
        n_theta = int(n_theta)
    else:
        n_theta = None

    if reduction is Reduction.CALABI_CONE_N2:
        if k is None:
            raise DomainError("line bundle degree k is required for calabi_cone_n2")
        if int(k) != k or k < 1:
            raise DomainError(f"k must be a positive integer (got {k})")
        k = int(k)
    else:
        k = None

    return ReducedDomain(reduction, t_min, t_max, int(n_t), n_theta, k)


def _broadcast(domain: ReducedDomain, values_t: np.ndarray) -> np.ndarray:
    if domain.reduction is Reduction.POLAR2D_N1:
        return np.repeat(values_t[:, None], domain.n_theta, axis=1)
    return values_t


def sigma_d_weight(domain: ReducedDomain, divisor: DivisorData) -> np.ndarray:
    """Samples of log|σ_D|² = l·t; the barrier needs these strictly negative."""
    if domain.t_max >= 0:
        raise DomainError(
            f"log|sigma_D|^2 must be negative on the grid, but t_max={domain.t_max}"
        )
    return _broadcast(domain, divisor.pole_order * domain.t)


def regularization_shift(
    domain: ReducedDomain, divisor: DivisorData, s: float
) -> np.ndarray:
    """log of (|σ_E|²+s)/|σ_E|² · |σ_F|²/(|σ_F|²+s); zero at s = 0."""
    shift = np.zeros(domain.n_t)
    if s == 0:
        return _broadcast(domain, shift)
    lt = divisor.pole_order * domain.t
    if divisor.a_coeffs:
        log_e = divisor.e_weight * lt
        shift += np.logaddexp(log_e, math.log(s)) - log_e
    if divisor.b_coeffs:
        log_f = divisor.f_weight * lt
        shift -= np.logaddexp(log_f, math.log(s)) - log_f
    return _broadcast(domain, shift)


def build_density(
    domain: ReducedDomain,
    divisor: DivisorData,
    s: float,
    kind,
    samples: Optional[Sequence[float]] = None,
    zero: bool = False,
) -> DensityField:
    if s < 0 or not math.isfinite(s):
        raise DomainError(f"regularization parameter s must be >= 0 (got {s})")
    kind = DensityKind(kind)

    sigma = sigma_d_weight(domain, divisor)
    normalization = None
    if kind is DensityKind.SMOOTH_UNIT:
        base = np.zeros(domain.shape)
    elif kind is DensityKind.CONE_POLE:
        if domain.reduction is not Reduction.CALABI_CONE_N2:
            raise DomainError("cone_pole density requires a calabi_cone_n2 domain")
        # |σ_F|^{-2} cancels against the fiber volume element; only c survives
        normalization = CONE_DENSITY_PER_DEGREE * domain.k
        base = np.full(domain.shape, math.log(normalization))
    else:
        if samples is None:
            raise DomainError("custom density requires log_f samples")
        base = np.asarray(samples, dtype=float)
        if base.shape == (domain.n_t,) and domain.reduction is Reduction.POLAR2D_N1:
            base = _broadcast(domain, base)
        if base.shape != domain.shape:
            raise DomainError(
                f"custom log_f samples have shape {base.shape}, expected {domain.shape}"
            )
        if not np.all(np.isfinite(base)):
            raise DomainError("custom log_f samples contain non-finite entries")

    log_f = base + regularization_shift(domain, divisor, s)
    return DensityField(
        domain, log_f, sigma, float(s), kind, normalization=normalization, zero=zero
    )


def density_to_csv(density: DensityField, path) -> None:
    domain = density.domain
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        if domain.reduction is Reduction.POLAR2D_N1:
            writer.writerow(["t", "theta", "log_f", "sigma_d_log"])
            for i, t in enumerate(domain.t):
                for j, th in enumerate(domain.theta):
                    writer.writerow(
                        [
                            repr(float(t)),
                            repr(float(th)),
                            repr(float(density.log_f[i, j])),
                            repr(float(density.sigma_d_log[i, j])),
                        ]
                    )
        else:
            writer.writerow(["t", "log_f", "sigma_d_log"])
            for i, t in enumerate(domain.t):
                writer.writerow(
                    [
                        repr(float(t)),
                        repr(float(density.log_f[i])),
                        repr(float(density.sigma_d_log[i])),
                    ]
                )
    logger.info(f"[{domain.reduction.value}] Wrote density samples to {path}")
