"""Closed-form model metrics and numerical Einstein-constant checks.

Points are sequences of complex coordinates (z_1, ..., z_n). Derivatives are
taken by centered differences in the real coordinates (x_1, y_1, ..., x_n, y_n)
at 30-digit working precision, then combined into the Levi form

    g_{jk̄} = ¼ [∂x_j∂x_k + ∂y_j∂y_k + i(∂x_j∂y_k − ∂y_j∂x_k)] ρ

with one Richardson step over (h, h/2). Ricci is −(Levi form of log det g),
differenced the same way.
"""

import csv
import enum
import logging
import math
from dataclasses import dataclass
from typing import Callable, List, Sequence

import mpmath
import numpy as np

logger = logging.getLogger(__name__)

WORKING_DPS = 30
DEFAULT_FD_STEP = 1e-3
# nested differencing reaches this many steps away from the sample point
CHART_MARGIN_STEPS = 4


class ChartError(ValueError):
    """Raised when a point is outside, or too close to the edge of, a model chart."""

    pass


class ModelKind(str, enum.Enum):
    CUSP_DISK = "cusp_disk"
    BALL_CUSP = "ball_cusp"
    HILBERT_CUSP = "hilbert_cusp"
    CONE_ELLIPTIC = "cone_elliptic"


class Normalization(str, enum.Enum):
    SOLVER = "solver"  # Ric = −ω, the normalization of the reduced solvers
    BARE = "bare"  # the bare model potential −log(−log|σ|²)


@dataclass(frozen=True)
class ModelMetric:
    kind: ModelKind
    dimension: int
    normalization: Normalization = Normalization.SOLVER
    scale: float = 1.0
    k: int = 1

    def __post_init__(self):
        kind = ModelKind(self.kind)
        object.__setattr__(self, "kind", kind)
        object.__setattr__(self, "normalization", Normalization(self.normalization))
        fixed = {
            ModelKind.CUSP_DISK: 1,
            ModelKind.HILBERT_CUSP: 2,
            ModelKind.CONE_ELLIPTIC: 2,
        }
        if kind in fixed and self.dimension != fixed[kind]:
            raise ChartError(f"{kind.value} has dimension {fixed[kind]}, got {self.dimension}")
        if kind is ModelKind.BALL_CUSP and self.dimension < 2:
            raise ChartError(f"ball_cusp needs dimension >= 2, got {self.dimension}")
        if self.scale <= 0:
            raise ChartError(f"scale must be positive, got {self.scale}")
        if self.k < 1:
            raise ChartError(f"line bundle degree must be positive, got {self.k}")

    def scaled(self, c: float) -> "ModelMetric":
        return ModelMetric(self.kind, self.dimension, self.normalization, self.scale * c, self.k)


@dataclass
class EinsteinReport:
    lambda_hat: float
    max_residual: float
    fd_step: float
    n_points: int = 0


def exact_cusp(t):
    """φ* in t = log|z|: solves φ_tt = 4e^{2t+φ} with e^{φ*}|dz|² the complete cusp metric."""
    t = np.asarray(t, dtype=float)
    return math.log(2.0) - 2.0 * t - 2.0 * np.log(-2.0 * t)


def exact_cone(t):
    """Solution of 2kφ′φ″ = 2k·e^{φ} in t = log|ξ|²_h, independent of k."""
    t = np.asarray(t, dtype=float)
    return -3.0 * np.log(-t) + math.log(9.0)


def _context() -> "mpmath.MPContext":
    """A private working-precision context; the global mpmath.mp is shared across threads."""
    ctx = mpmath.MPContext()
    ctx.dps = WORKING_DPS
    return ctx


def _chart_value(ctx, model: ModelMetric, x) -> "mpmath.mpf":
    """Potential at real coordinates x; ChartError off the chart."""
    n = model.dimension
    if model.kind is ModelKind.CUSP_DISK:
        r2 = x[0] ** 2 + x[1] ** 2
        if not (0 < r2 < 1):
            raise ChartError("cusp_disk chart is the punctured unit disk")
        log_r2 = ctx.log(r2)
        if model.normalization is Normalization.BARE:
            value = -ctx.log(-log_r2)
        else:
            value = ctx.log(2) - log_r2 - 2 * ctx.log(-log_r2)
    elif model.kind is ModelKind.BALL_CUSP:
        height = x[1] - sum(x[2 * j] ** 2 + x[2 * j + 1] ** 2 for j in range(1, n))
        if height <= 0:
            raise ChartError("ball_cusp chart is Im u > |v|^2")
        value = -ctx.log(height)
    elif model.kind is ModelKind.HILBERT_CUSP:
        if x[1] <= 0 or x[3] <= 0:
            raise ChartError("hilbert_cusp chart is the product of upper half-planes")
        value = -ctx.log(x[1]) - ctx.log(x[3])
    else:
        xi2 = x[2] ** 2 + x[3] ** 2
        if xi2 == 0:
            raise ChartError("cone_elliptic chart excludes the zero section")
        t = ctx.log(xi2) + model.k * (x[0] ** 2 + x[1] ** 2)
        if t >= 0:
            raise ChartError("cone_elliptic chart is log|xi|_h^2 < 0")
        if model.normalization is Normalization.BARE:
            value = -ctx.log(-t)
        else:
            value = -3 * ctx.log(-t) + ctx.log(9)
    return model.scale * value


def _real_coords(ctx, model: ModelMetric, point: Sequence[complex]) -> list:
    point = list(np.atleast_1d(np.asarray(point, dtype=complex)))
    if len(point) != model.dimension:
        raise ChartError(
            f"{model.kind.value} expects {model.dimension} complex coordinates, got {len(point)}"
        )
    coords = []
    for z in point:
        coords.extend([ctx.mpf(z.real), ctx.mpf(z.imag)])
    return coords


def _check_margin(ctx, model: ModelMetric, x: list, reach) -> None:
    for a in range(len(x)):
        for sign in (-1, 1):
            shifted = list(x)
            shifted[a] += sign * reach
            _chart_value(ctx, model, shifted)


def _hessian(fn: Callable, x: list, h) -> List[list]:
    m = len(x)
    center = fn(x)
    H = [[None] * m for _ in range(m)]

    def at(*moves):
        y = list(x)
        for a, step in moves:
            y[a] += step
        return fn(y)

    for a in range(m):
        H[a][a] = (at((a, h)) - 2 * center + at((a, -h))) / h**2
        for b in range(a + 1, m):
            H[a][b] = (
                at((a, h), (b, h)) - at((a, h), (b, -h)) - at((a, -h), (b, h)) + at((a, -h), (b, -h))
            ) / (4 * h**2)
            H[b][a] = H[a][b]
    return H


def _levi_from_hessian(ctx, H: List[list], n: int) -> "mpmath.matrix":
    g = ctx.matrix(n, n)
    for j in range(n):
        for k in range(n):
            xj, yj, xk, yk = 2 * j, 2 * j + 1, 2 * k, 2 * k + 1
            g[j, k] = ctx.mpc(H[xj][xk] + H[yj][yk], H[xj][yk] - H[yj][xk]) / 4
    return g


def _levi_form(ctx, fn: Callable, x: list, h, n: int) -> "mpmath.matrix":
    coarse = _levi_from_hessian(ctx, _hessian(fn, x, h), n)
    fine = _levi_from_hessian(ctx, _hessian(fn, x, h / 2), n)
    return (4 * fine - coarse) / 3


def _to_numpy(g: "mpmath.matrix", tolerance: float, what: str) -> np.ndarray:
    """Hermitian part of g, after checking the anti-hermitian part is within tolerance."""
    n = g.rows
    out = np.array([[complex(g[j, k]) for k in range(n)] for j in range(n)])
    asymmetry = float(np.max(np.abs(out - out.conj().T)))
    if asymmetry > tolerance:
        raise ChartError(f"{what} is not hermitian: asymmetry {asymmetry:.3e} > {tolerance:.3e}")
    return 0.5 * (out + out.conj().T)


def _hermitian_tolerance(model: ModelMetric, fd_step: float) -> float:
    return 10.0 * fd_step**2 * model.scale


def potential(model: ModelMetric, point: Sequence[complex]) -> float:
    ctx = _context()
    return float(_chart_value(ctx, model, _real_coords(ctx, model, point)))


def _metric_mp(ctx, model: ModelMetric, x: list, h) -> "mpmath.matrix":
    return _levi_form(ctx, lambda y: _chart_value(ctx, model, y), x, h, model.dimension)


def metric_tensor(
    model: ModelMetric, point: Sequence[complex], fd_step: float = DEFAULT_FD_STEP
) -> np.ndarray:
    ctx = _context()
    x = _real_coords(ctx, model, point)
    h = ctx.mpf(fd_step)
    _check_margin(ctx, model, x, CHART_MARGIN_STEPS * h)
    g = _to_numpy(
        _metric_mp(ctx, model, x, h),
        _hermitian_tolerance(model, fd_step),
        f"{model.kind.value} metric at {point}",
    )
    if np.any(np.linalg.eigvalsh(g) <= 0):
        raise ChartError(
            f"{model.kind.value} metric is not positive definite at {point}; "
            "the point is too close to the chart boundary or fd_step is too large"
        )
    return g


def ricci_fd(
    model: ModelMetric, point: Sequence[complex], fd_step: float = DEFAULT_FD_STEP
) -> np.ndarray:
    n = model.dimension
    ctx = _context()
    x = _real_coords(ctx, model, point)
    h = ctx.mpf(fd_step)
    _check_margin(ctx, model, x, 2 * CHART_MARGIN_STEPS * h)

    def log_det(y):
        det = ctx.re(ctx.det(_metric_mp(ctx, model, y, h)))
        if det <= 0:
            raise ChartError(f"{model.kind.value} metric degenerates near {point}")
        return ctx.log(det)

    ric = _levi_form(ctx, log_det, x, h, n)
    # Ric does not scale with the potential
    return -_to_numpy(ric, 10.0 * fd_step**2, f"{model.kind.value} Ricci form at {point}")


def einstein_check(
    model: ModelMetric, sample_points: Sequence, fd_step: float = DEFAULT_FD_STEP
) -> EinsteinReport:
    """Fits Ric ≈ −λ̂ω in least squares over the sample points."""
    if len(sample_points) < 3:
        raise ChartError(f"einstein_check needs at least 3 sample points, got {len(sample_points)}")
    metrics = [metric_tensor(model, p, fd_step) for p in sample_points]
    riccis = [ricci_fd(model, p, fd_step) for p in sample_points]
    return _fit_einstein(model, metrics, riccis, fd_step)


def _fit_einstein(model, metrics, riccis, fd_step) -> EinsteinReport:
    numerator = sum(float(np.real(np.vdot(g, ric))) for g, ric in zip(metrics, riccis))
    denominator = sum(float(np.real(np.vdot(g, g))) for g in metrics)
    lambda_hat = -numerator / denominator
    max_residual = max(
        float(np.max(np.abs(ric + lambda_hat * g))) for g, ric in zip(metrics, riccis)
    )
    logger.info(
        f"[{model.kind.value}] Einstein constant {lambda_hat:.8f} "
        f"(max residual {max_residual:.2e}, {len(metrics)} points)"
    )
    return EinsteinReport(lambda_hat, max_residual, fd_step, len(metrics))


def default_sample_points(model: ModelMetric) -> list:
    """Three interior chart points per model kind."""
    if model.kind is ModelKind.CUSP_DISK:
        return [[0.3], [0.2 + 0.1j], [math.exp(-1.0)]]
    if model.kind is ModelKind.HILBERT_CUSP:
        return [[1j, 1j], [0.3 + 2j, -0.1 + 0.5j], [1 + 0.7j, 2 + 1.2j]]
    if model.kind is ModelKind.CONE_ELLIPTIC:
        return [[0, 0.5], [0.2 + 0.1j, 0.3], [-0.1, 0.1 + 0.2j]]
    rest = model.dimension - 1
    return [
        [1j] + [0] * rest,
        [0.1 + 1.5j] + [0.2] + [0] * (rest - 1),
        [-0.3 + 2j] + [0.1 + 0.3j] * rest,
    ]


def reduced_profile(model: ModelMetric, t):
    """(ρ, ρ′, ρ″) of the model potential in the reduced coordinate.

    t = log|z| for cusp_disk and t = log|ξ|²_h for cone_elliptic.
    """
    t = np.asarray(t, dtype=float)
    if np.any(t >= 0):
        raise ChartError("reduced coordinate must be negative")
    c = model.scale
    bare = model.normalization is Normalization.BARE
    if model.kind is ModelKind.CUSP_DISK:
        if bare:
            rho, d1, d2 = -np.log(-2.0 * t), -1.0 / t, 1.0 / t**2
        else:
            rho, d1, d2 = exact_cusp(t), -2.0 - 2.0 / t, 2.0 / t**2
    elif model.kind is ModelKind.CONE_ELLIPTIC:
        if bare:
            rho, d1, d2 = -np.log(-t), -1.0 / t, 1.0 / t**2
        else:
            rho, d1, d2 = exact_cone(t), -3.0 / t, 3.0 / t**2
    else:
        raise ChartError(f"{model.kind.value} has no radial reduction")
    return c * rho, c * d1, c * d2


@dataclass
class ModelTable:
    report: EinsteinReport
    header: List[str]
    rows: List[list]


def model_table(
    model: ModelMetric, points: Sequence, fd_step: float = DEFAULT_FD_STEP
) -> ModelTable:
    """The (point, g, Ric, λ̂) rows behind one Einstein fit."""
    if len(points) < 3:
        raise ChartError(f"einstein_check needs at least 3 sample points, got {len(points)}")
    metrics = [metric_tensor(model, p, fd_step) for p in points]
    riccis = [ricci_fd(model, p, fd_step) for p in points]
    report = _fit_einstein(model, metrics, riccis, fd_step)
    n = model.dimension
    header = []
    for j in range(n):
        header += [f"x{j + 1}", f"y{j + 1}"]
    for name in ("g", "ric"):
        for j in range(n):
            for k in range(n):
                header += [f"{name}_{j + 1}{k + 1}_re", f"{name}_{j + 1}{k + 1}_im"]
    header.append("lambda_hat")

    rows = []
    for point, g, ric in zip(points, metrics, riccis):
        row = []
        for z in np.atleast_1d(np.asarray(point, dtype=complex)):
            row += [float(z.real), float(z.imag)]
        for mat in (g, ric):
            for value in mat.ravel():
                row += [float(value.real), float(value.imag)]
        row.append(report.lambda_hat)
        rows.append(row)
    return ModelTable(report, header, rows)


def dump_model_csv(
    model: ModelMetric, points: Sequence, path, fd_step: float = DEFAULT_FD_STEP
) -> EinsteinReport:
    table = model_table(model, points, fd_step)
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(table.header)
        for row in table.rows:
            writer.writerow([repr(x) for x in row])
    logger.info(f"[{model.kind.value}] Wrote model table to {path}")
    return table.report
