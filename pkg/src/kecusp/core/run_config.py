"""Validated run configuration.

Every section model builds its runtime object eagerly inside a validator, so a config
that parses is a config whose domain, density, schedule and lattice are all
constructible.
"""

import enum
from fractions import Fraction
from typing import List, Literal, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from kecusp.core.geom import (
    DensityKind,
    DivisorData,
    DomainError,
    ReducedDomain,
    Reduction,
    build_domain,
)
from kecusp.services.collapse import LatticeError, QuadraticLattice
from kecusp.services.models import (
    ChartError,
    ModelKind,
    ModelMetric,
    Normalization,
    exact_cone,
    exact_cusp,
)
from kecusp.services.solver import ContinuationSchedule, ReducedProblem, SolverError


class Command(str, enum.Enum):
    SOLVE = "solve"
    CONTINUATION = "continuation"
    VERIFY_MODEL = "verify-model"
    RIGIDITY = "rigidity"
    VOLUME = "volume"
    COLLAPSE = "collapse"
    LELONG = "lelong"
    DISTANCE = "distance"


DOMAIN_COMMANDS = {
    Command.SOLVE,
    Command.CONTINUATION,
    Command.RIGIDITY,
    Command.VOLUME,
    Command.LELONG,
    Command.DISTANCE,
}


class _Spec(BaseModel):
    model_config = ConfigDict(extra="forbid")


class DomainSpec(_Spec):
    reduction: Reduction
    t_min: float
    t_max: float
    n_t: int = 1025
    n_theta: Optional[int] = None
    k: Optional[int] = None

    @model_validator(mode="after")
    def _buildable(self):
        self.build()
        return self

    def build(self) -> ReducedDomain:
        return build_domain(self.reduction, self.t_min, self.t_max, self.n_t, self.n_theta, self.k)


class DivisorSpec(_Spec):
    a_coeffs: List[str] = Field(default_factory=list)
    b_coeffs: List[str] = Field(default_factory=list)
    pole_order: int = 1

    @field_validator("a_coeffs", "b_coeffs", mode="before")
    @classmethod
    def _as_fraction_strings(cls, values):
        try:
            return [str(Fraction(str(v))) for v in values]
        except (ValueError, ZeroDivisionError) as e:
            raise ValueError(f"coefficients must be rationals like '1/2': {e}")

    @model_validator(mode="after")
    def _buildable(self):
        self.build()
        return self

    def build(self) -> DivisorData:
        return DivisorData(tuple(self.a_coeffs), tuple(self.b_coeffs), self.pole_order)


class DensitySpec(_Spec):
    kind: DensityKind = DensityKind.SMOOTH_UNIT
    samples: Optional[List[float]] = None
    zero: bool = False
    theta0: float = 1.0


class BoundarySpec(_Spec):
    """Dirichlet data: constants, or offsets from the exact model trace."""

    kind: Literal["constant", "model_trace"] = "constant"
    inner: float = 0.0
    outer: float = 0.0
    # extra outer data ψ(θ) for polar2d, one value per θ node
    outer_samples: Optional[List[float]] = None

    def values(self, domain: ReducedDomain) -> Tuple[object, object]:
        inner, outer = self.inner, self.outer
        if self.kind == "model_trace":
            trace = exact_cone if domain.reduction is Reduction.CALABI_CONE_N2 else exact_cusp
            ends = trace(np.array([domain.t_min, domain.t_max]))
            inner, outer = inner + float(ends[0]), outer + float(ends[1])
        if self.outer_samples is not None:
            if domain.reduction is not Reduction.POLAR2D_N1:
                raise ValueError("boundary.outer_samples is only valid for polar2d_n1")
            if len(self.outer_samples) != domain.n_theta:
                raise ValueError(
                    f"boundary.outer_samples has {len(self.outer_samples)} values, "
                    f"expected n_theta={domain.n_theta}"
                )
            outer = outer + np.asarray(self.outer_samples, dtype=float)
        return inner, outer


class ScheduleSpec(_Spec):
    s_values: Optional[List[float]] = None
    halvings: Optional[int] = None
    tol: float = 1e-10
    max_iter: int = 50

    @model_validator(mode="after")
    def _buildable(self):
        if self.s_values is not None and self.halvings is not None:
            raise ValueError("give either schedule.s_values or schedule.halvings, not both")
        try:
            self.build()
        except SolverError as e:
            raise ValueError(str(e))
        return self

    def build(self) -> ContinuationSchedule:
        if self.halvings is not None:
            return ContinuationSchedule.halving(self.halvings, tol=self.tol, max_iter=self.max_iter)
        s_values = self.s_values if self.s_values is not None else [0.0]
        return ContinuationSchedule(s_values, tol=self.tol, max_iter=self.max_iter)


class ModelSpec(_Spec):
    kind: ModelKind
    dimension: Optional[int] = None
    normalization: Normalization = Normalization.SOLVER
    scale: float = 1.0
    k: int = 1
    fd_step: float = 1e-3
    # complex coordinates as [re, im] pairs, one list per point
    points: Optional[List[List[Tuple[float, float]]]] = None
    # extra points jittered around the defaults, drawn from the run seed
    random_points: int = 0
    expected_lambda: Optional[float] = None
    lambda_tol: float = 1e-4

    @model_validator(mode="after")
    def _buildable(self):
        try:
            self.build()
        except ChartError as e:
            raise ValueError(str(e))
        return self

    def build(self) -> ModelMetric:
        default_dim = {ModelKind.CUSP_DISK: 1}.get(self.kind, 2)
        return ModelMetric(
            self.kind, self.dimension or default_dim, self.normalization, self.scale, self.k
        )

    def sample_points(self) -> Optional[list]:
        if self.points is None:
            return None
        return [[complex(re, im) for re, im in point] for point in self.points]


class LatticeSpec(_Spec):
    d: int
    p1: str
    q1: str
    p2: str
    q2: str
    c_hat: List[float] = Field(default_factory=lambda: [float(c) for c in range(9)])
    y1: float = 1.0

    @field_validator("p1", "q1", "p2", "q2", mode="before")
    @classmethod
    def _as_fraction_string(cls, value):
        return str(Fraction(str(value)))

    @model_validator(mode="after")
    def _buildable(self):
        try:
            self.build()
        except LatticeError as e:
            raise ValueError(str(e))
        return self

    def build(self) -> QuadraticLattice:
        return QuadraticLattice(self.d, ((self.p1, self.q1), (self.p2, self.q2)))


class DiagnosticSpec(_Spec):
    t_cut: Optional[float] = None
    ladder: List[float] = Field(default_factory=lambda: [1.0, 2.0, 4.0])
    lelong_window: int = 10
    max_lelong_slope: Optional[float] = None
    deepen_to: Optional[float] = None
    compare_boundary: Optional[BoundarySpec] = None
    max_lipschitz_spread: float = 2.0
    max_exact_error: Optional[float] = None


class RunConfig(_Spec):
    command: Command
    domain: Optional[DomainSpec] = None
    divisor: DivisorSpec = Field(default_factory=DivisorSpec)
    density: DensitySpec = Field(default_factory=DensitySpec)
    boundary: BoundarySpec = Field(default_factory=BoundarySpec)
    schedule: ScheduleSpec = Field(default_factory=ScheduleSpec)
    models: List[ModelSpec] = Field(default_factory=list)
    lattice: Optional[LatticeSpec] = None
    diagnostics: DiagnosticSpec = Field(default_factory=DiagnosticSpec)
    output_dir: str = "runs/latest"
    seed: int = 0
    threads: int = 1

    @model_validator(mode="after")
    def _complete(self):
        if self.command in DOMAIN_COMMANDS and self.domain is None:
            raise ValueError(f"command '{self.command.value}' requires a domain section")
        if self.command is Command.COLLAPSE and self.lattice is None:
            raise ValueError("command 'collapse' requires a lattice section")
        if self.command is Command.VERIFY_MODEL and not self.models:
            raise ValueError("command 'verify-model' requires at least one entry in models")
        if self.command is Command.RIGIDITY and self.diagnostics.compare_boundary is None:
            raise ValueError("command 'rigidity' requires diagnostics.compare_boundary")
        if self.threads < 1:
            raise ValueError("threads must be at least 1")
        if self.domain is not None:
            domain = self.domain.build()
            try:
                self.boundary.values(domain)
                if self.diagnostics.compare_boundary is not None:
                    self.diagnostics.compare_boundary.values(domain)
                self.problem().density(0.0)
            except DomainError as e:
                raise ValueError(f"density: {e}")
            if self.diagnostics.t_cut is not None and not (
                domain.t_min < self.diagnostics.t_cut <= domain.t_max
            ):
                raise ValueError("diagnostics.t_cut must lie in (domain.t_min, domain.t_max]")
            if self.diagnostics.deepen_to is not None and self.diagnostics.deepen_to >= domain.t_min:
                raise ValueError("diagnostics.deepen_to must be below domain.t_min")
        return self

    def problem(self, boundary: Optional[BoundarySpec] = None, domain=None) -> ReducedProblem:
        domain = domain or self.domain.build()
        inner, outer = (boundary or self.boundary).values(domain)
        samples = None if self.density.samples is None else tuple(self.density.samples)
        return ReducedProblem(
            domain=domain,
            inner=inner,
            outer=outer,
            divisor=self.divisor.build(),
            density_kind=self.density.kind,
            density_samples=samples,
            zero_density=self.density.zero,
            theta0=self.density.theta0,
        )
