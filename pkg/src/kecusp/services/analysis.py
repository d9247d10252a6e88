"""Diagnostics on solver output.

Conventions: the real metric is twice the real part of the hermitian one, so
the radial length element is √(φ_tt/2) dt for n = 1 (t = log r) and
√(φ″/2) dt on the cone (t = log|ξ|²_h). Volumes integrate e^{φ+log F} against
2e^{2t} dt dθ (n = 1) and 2π dt (cone).
"""

import csv
import logging
import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.integrate import cumulative_trapezoid, simpson, trapezoid

from kecusp.core.geom import DensityField, ReducedDomain, Reduction
from kecusp.services.models import ModelKind, ModelMetric, reduced_profile
from kecusp.services.solver import PotentialField
from kecusp.utils.stencils import d1, d2, d2_periodic

logger = logging.getLogger(__name__)

MIN_LELONG_WINDOW = 10
DEFAULT_LADDER = (1.0, 2.0, 4.0)
DEFAULT_EPSILONS = (1.0, 0.5, 0.25, 0.125)


class AnalysisError(ValueError):
    pass


class GridMismatchError(AnalysisError):
    pass


@dataclass
class RadialProfile:
    t: np.ndarray
    values: np.ndarray
    quantity: str
    distance: Optional[np.ndarray] = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.t = np.asarray(self.t, dtype=float)
        self.values = np.asarray(self.values, dtype=float)
        if self.t.shape != self.values.shape:
            raise AnalysisError(f"{self.quantity}: t and values differ in length")
        if np.any(np.diff(self.t) <= 0):
            raise AnalysisError(f"{self.quantity}: t samples must be strictly increasing")
        if not np.all(np.isfinite(self.values)):
            raise AnalysisError(f"{self.quantity}: profile contains non-finite values")


@dataclass
class VolumeReport:
    t_cut: float
    truncated: float
    extrapolated: float
    error_bar: float
    tail_coefficient: float
    tail_offset: float
    tail_power: int


@dataclass
class RigidityReport:
    profile: RadialProfile
    ladder: List[Tuple[float, float]]
    fitted_constant: float
    deepest_decile_ratio: float
    non_increasing: bool


@dataclass
class TraceReport:
    sup: float
    t_at_sup: float
    index_at_sup: int
    near_outer_boundary: bool
    profile: RadialProfile


@dataclass
class SublogReport:
    epsilons: List[float]
    c_shallow: Dict[float, float]
    c_deep: Dict[float, float]
    stable: Dict[float, bool]

    @property
    def all_stable(self) -> bool:
        return all(self.stable.values())


def _require_grid(domain: ReducedDomain, *fields: PotentialField) -> None:
    for f in fields:
        if not f.domain.same_grid(domain):
            raise GridMismatchError(
                f"field grid {f.domain.reduction.value}[{f.domain.t_min}, {f.domain.t_max}]x"
                f"{f.domain.n_t} does not match the analysis domain"
            )


def _volume_density(phi: np.ndarray, domain: ReducedDomain, log_f) -> np.ndarray:
    """Integrand in t, already integrated over the angular directions."""
    t = domain.t
    if domain.reduction is Reduction.CALABI_CONE_N2:
        return 2.0 * np.pi * np.exp(phi + log_f)
    if domain.reduction is Reduction.POLAR2D_N1:
        area = np.exp(phi + log_f) * 2.0 * np.exp(2.0 * t)[:, None]
        return area.sum(axis=1) * domain.dtheta
    return 2.0 * np.pi * np.exp(phi + log_f) * 2.0 * np.exp(2.0 * t)


def _integral_to(t: np.ndarray, values: np.ndarray, t_cut: float) -> Tuple[float, float]:
    """Trapezoid and Simpson integrals of values over [t_0, t_cut]."""
    below = t < t_cut
    ts = np.append(t[below], t_cut)
    # the integrand is exponential-like in t, so interpolate its logarithm
    end = math.exp(np.interp(t_cut, t, np.log(values)))
    vs = np.append(values[below], end)
    return float(trapezoid(vs, ts)), float(simpson(vs, x=ts))


def volume_profile(
    field_: PotentialField, domain: ReducedDomain, density: Optional[DensityField] = None
) -> RadialProfile:
    """Cumulative volume of {t_min ≤ t' ≤ t} on the grid nodes."""
    _require_grid(domain, field_)
    log_f = 0.0 if density is None else density.log_f
    values = _volume_density(field_.phi, domain, log_f)
    return RadialProfile(domain.t, cumulative_trapezoid(values, domain.t, initial=0.0), "volume")


def volume_integral(
    field_: PotentialField,
    domain: ReducedDomain,
    t_cut: float,
    density: Optional[DensityField] = None,
) -> VolumeReport:
    """Volume of {t ≤ t_cut} with the unresolved tail below t_min extrapolated.

    The cut-off volumes P(c) at three deep cuts are fitted to a/(−c)^p + b,
    with p = 1 for n = 1 and p = 2 on the cone, and −b estimates the tail.
    """
    _require_grid(domain, field_)
    t = domain.t
    if not (domain.t_min < t_cut <= domain.t_max):
        raise AnalysisError(f"t_cut={t_cut} outside ({domain.t_min}, {domain.t_max}]")
    log_f = 0.0 if density is None else density.log_f
    values = _volume_density(field_.phi, domain, log_f)

    truncated, simpson_value = _integral_to(t, values, t_cut)
    cumulative = cumulative_trapezoid(values, t, initial=0.0)

    power = 2 if domain.reduction is Reduction.CALABI_CONE_N2 else 1
    m = max(4, (domain.n_t - 1) // 16)
    cuts = np.array([m, 2 * m, 4 * m])
    if t[cuts[-1]] >= t_cut:
        raise AnalysisError(
            f"t_cut={t_cut} is too shallow for tail extrapolation (needs t_cut > {t[cuts[-1]]:.4g})"
        )
    design = np.column_stack([(-t[cuts]) ** (-power), np.ones(3)])
    coeffs, *_ = np.linalg.lstsq(design, cumulative[cuts], rcond=None)
    a, b = float(coeffs[0]), float(coeffs[1])
    fit_residual = float(np.max(np.abs(design @ coeffs - cumulative[cuts])))

    report = VolumeReport(
        t_cut=float(t_cut),
        truncated=truncated,
        extrapolated=truncated - b,
        error_bar=fit_residual + abs(truncated - simpson_value),
        tail_coefficient=a,
        tail_offset=b,
        tail_power=power,
    )
    logger.info(
        f"[{domain.reduction.value}] Volume to t={t_cut:.6g}: truncated {truncated:.8g}, "
        f"extrapolated {report.extrapolated:.8g} +/- {report.error_bar:.2e}"
    )
    return report


def _length_element(field_: PotentialField, domain: ReducedDomain) -> np.ndarray:
    phi, h = field_.phi, domain.h
    if domain.reduction is Reduction.POLAR2D_N1:
        lap = d2(phi, h) + d2_periodic(phi, domain.dtheta)
    else:
        lap = d2(phi, h)
    if np.any(lap <= 0):
        bad = np.argwhere(lap <= 0)[0]
        raise AnalysisError(
            f"non-positive radial metric coefficient at node {tuple(bad)}; "
            "the field lost positivity upstream"
        )
    return np.sqrt(lap / 2.0)


def _cumulative_length(field_: PotentialField, domain: ReducedDomain) -> np.ndarray:
    element = _length_element(field_, domain)
    cum = cumulative_trapezoid(element, domain.t, axis=0, initial=0.0)
    if cum.ndim == 2:
        # the shortest ray bounds the true distance from below
        return np.min(cum[-1] - cum, axis=1)
    return cum[-1] - cum


def distance_profile(field_: PotentialField, domain: ReducedDomain) -> RadialProfile:
    """R(t): radial distance from level t to the outer boundary t_max."""
    _require_grid(domain, field_)
    R = _cumulative_length(field_, domain)
    logger.info(f"[{domain.reduction.value}] Distance to the deep end R(t_min)={R[0]:.8g}")
    return RadialProfile(domain.t, R, "R", distance=R)


def radial_length(
    field_: PotentialField, domain: ReducedDomain, t_from: float, t_to: float
) -> float:
    """Length of the radial segment [t_from, t_to]; additive over adjacent segments."""
    _require_grid(domain, field_)
    if not (domain.t_min <= t_from <= t_to <= domain.t_max):
        raise AnalysisError(f"segment [{t_from}, {t_to}] outside the domain")
    R = _cumulative_length(field_, domain)
    return float(np.interp(t_from, domain.t, R) - np.interp(t_to, domain.t, R))


def _signed_extreme(values: np.ndarray) -> np.ndarray:
    if values.ndim == 1:
        return values
    idx = np.argmax(np.abs(values), axis=1)
    return values[np.arange(values.shape[0]), idx]


def rigidity_profile(
    phi: PotentialField, phi_prime: PotentialField, domain: ReducedDomain
) -> RadialProfile:
    """log(det g′/det g) = φ′ − φ against the distance R(t) under g."""
    _require_grid(domain, phi, phi_prime)
    ratio = _signed_extreme(phi_prime.phi - phi.phi)
    R = distance_profile(phi, domain).values
    return RadialProfile(domain.t, ratio, "log_det_ratio", distance=R)


def fit_rigidity_constant(ladder: Sequence[Tuple[float, float]]) -> float:
    """Smallest C with sup_{R ≥ R₀}|log ratio| ≤ C/R₀ over the ladder."""
    return max((r0 * sup for r0, sup in ladder), default=0.0)


def rigidity_report(
    phi: PotentialField,
    phi_prime: PotentialField,
    domain: ReducedDomain,
    ladder: Sequence[float] = DEFAULT_LADDER,
) -> RigidityReport:
    profile = rigidity_profile(phi, phi_prime, domain)
    R, ratio = profile.distance, np.abs(profile.values)
    rungs = []
    for r0 in ladder:
        reach = R >= r0
        if not np.any(reach):
            logger.warning(f"[{domain.reduction.value}] Ladder rung R0={r0} exceeds R(t_min)={R[0]:.4g}")
            continue
        rungs.append((float(r0), float(np.max(ratio[reach]))))
    sups = [s for _, s in rungs]
    non_increasing = all(b <= a for a, b in zip(sups, sups[1:]))

    decile = max(1, domain.n_t // 10)
    deep = profile.values[:decile]
    deepest = float(np.exp(deep[np.argmax(np.abs(deep))]))
    report = RigidityReport(profile, rungs, fit_rigidity_constant(rungs), deepest, non_increasing)
    logger.info(
        f"[{domain.reduction.value}] Rigidity constant {report.fitted_constant:.6g}, "
        f"deepest decile ratio {deepest:.6f}"
    )
    return report


def lelong_estimate(
    field_: PotentialField, domain: ReducedDomain, window: int = MIN_LELONG_WINDOW, pole_order: int = 1
) -> float:
    """Slope of φ against log|σ_D|² over the deepest interior nodes."""
    _require_grid(domain, field_)
    if window < MIN_LELONG_WINDOW:
        raise AnalysisError(f"window must hold at least {MIN_LELONG_WINDOW} nodes, got {window}")
    if window > domain.n_t - 2:
        raise AnalysisError(f"window of {window} nodes exceeds the {domain.n_t - 2} interior nodes")
    phi = field_.phi if field_.phi.ndim == 1 else field_.phi.mean(axis=1)
    nodes = slice(1, window + 1)
    slope, _ = np.polyfit(pole_order * domain.t[nodes], phi[nodes], 1)
    logger.info(f"[{domain.reduction.value}] Lelong slope {slope:.6g} over {window} deepest nodes")
    return float(slope)


def _trace_terms(field_: PotentialField, domain: ReducedDomain) -> List[np.ndarray]:
    phi, h = field_.phi, domain.h
    if domain.reduction is Reduction.CALABI_CONE_N2:
        return [d1(phi, h)[1:-1], d2(phi, h)[1:-1]]
    if domain.reduction is Reduction.POLAR2D_N1:
        return [(d2(phi, h) + d2_periodic(phi, domain.dtheta))[1:-1]]
    return [d2(phi, h)[1:-1]]


def trace_comparison(
    phi: PotentialField, phi_prime: PotentialField, domain: ReducedDomain, outer_fraction=0.1
) -> TraceReport:
    """tr_{g′} g from the diagonal reduced metrics, on interior nodes."""
    _require_grid(domain, phi, phi_prime)
    trace = 0.0
    for num, den in zip(_trace_terms(phi, domain), _trace_terms(phi_prime, domain)):
        if np.any(den <= 0):
            raise AnalysisError("reference metric g′ is not positive on the grid")
        trace = trace + num / den
    trace = np.asarray(trace)
    per_t = trace if trace.ndim == 1 else trace.max(axis=1)
    idx = int(np.argmax(per_t)) + 1
    t = domain.t
    near_outer = t[idx] >= t[-1] - outer_fraction * (t[-1] - t[0])
    report = TraceReport(
        sup=float(per_t[idx - 1]),
        t_at_sup=float(t[idx]),
        index_at_sup=idx,
        near_outer_boundary=bool(near_outer),
        profile=RadialProfile(t[1:-1], per_t, "trace"),
    )
    logger.info(
        f"[{domain.reduction.value}] sup tr_g' g = {report.sup:.6g} at t={report.t_at_sup:.6g}"
    )
    return report


def _sublog_q(model: ModelMetric, domain: ReducedDomain, log_f: np.ndarray) -> np.ndarray:
    """log(ω^n/Ω) − ρ for the model potential ρ in the reduced coordinate."""
    t = domain.t
    rho, rho_1, rho_2 = reduced_profile(model, t)
    if model.kind is ModelKind.CUSP_DISK:
        if domain.reduction is not Reduction.RADIAL_N1:
            raise AnalysisError("cusp_disk sublog check needs a radial_n1 domain")
        return np.log(rho_2 / 4.0) - 2.0 * t - log_f - rho
    if domain.reduction is not Reduction.CALABI_CONE_N2:
        raise AnalysisError("cone_elliptic sublog check needs a calabi_cone_n2 domain")
    return np.log(2.0 * domain.k * rho_1 * rho_2) - log_f - rho


def sublog_check(
    density: DensityField,
    model: ModelMetric,
    domain: ReducedDomain,
    epsilons: Sequence[float] = DEFAULT_EPSILONS,
    stability_tol: float = 0.25,
) -> SublogReport:
    """Best C_ε with log(ω^n/Ω) − ρ ≥ ε·log|σ_D|² + C_ε, shallow half vs full depth."""
    if model.kind not in (ModelKind.CUSP_DISK, ModelKind.CONE_ELLIPTIC):
        raise AnalysisError(f"{model.kind.value} has no closed-form reduced profile")
    if not density.domain.same_grid(domain):
        raise GridMismatchError("density grid does not match the analysis domain")
    q = _sublog_q(model, domain, density.log_f)
    sigma = density.sigma_d_log
    shallow = domain.t >= 0.5 * domain.t_min

    c_shallow, c_deep, stable = {}, {}, {}
    for eps in epsilons:
        gap = q - eps * sigma
        c_shallow[eps] = float(np.min(gap[shallow]))
        c_deep[eps] = float(np.min(gap))
        stable[eps] = c_deep[eps] >= c_shallow[eps] - stability_tol
    logger.info(
        f"[{domain.reduction.value}] Sublog constants "
        + ", ".join(f"eps={e:g}: {c_deep[e]:.4g}" for e in epsilons)
    )
    return SublogReport(list(epsilons), c_shallow, c_deep, stable)


def profile_to_csv(profile: RadialProfile, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        if profile.distance is not None and profile.quantity != "R":
            writer.writerow(["t", "R", profile.quantity])
            for row in zip(profile.t, profile.distance, profile.values):
                writer.writerow([repr(float(x)) for x in row])
        else:
            writer.writerow(["t", profile.quantity])
            for row in zip(profile.t, profile.values):
                writer.writerow([repr(float(x)) for x in row])
    logger.info(f"Wrote {profile.quantity} profile to {path}")
