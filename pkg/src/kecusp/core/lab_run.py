import logging
import math

import numpy as np

from kecusp.core.geom import DensityField, Reduction, density_to_csv
from kecusp.core.metrics import diagnostic_counter, run_counter
from kecusp.core.run_config import Command, RunConfig
from kecusp.core.workflow_runner import WorkflowRunner
from kecusp.services.analysis import (
    distance_profile,
    lelong_estimate,
    profile_to_csv,
    rigidity_report,
    sublog_check,
    trace_comparison,
    volume_integral,
    volume_profile,
)
from kecusp.services.collapse import collapse_profile, cylinder_limit_gram
from kecusp.services.collapse import profile_to_csv as collapse_to_csv
from kecusp.services.continuation import continuation_solve
from kecusp.services.models import (
    ModelKind,
    ModelMetric,
    default_sample_points,
    exact_cone,
    exact_cusp,
    model_table,
)
from kecusp.services.report_writer import ReportWriter
from kecusp.services.solver import (
    ConvergenceError,
    ReducedProblem,
    barrier_initializer,
    field_to_csv,
    sandwich_check,
    smallest_supersolution_a,
    solve_reduced,
)

logger = logging.getLogger(__name__)

# jitter applied to default model sample points for the seeded extra points
POINT_JITTER = 0.05


class DiagnosticFailure(RuntimeError):
    """Raised after a run whose diagnostic checks did not all pass."""

    pass


class LabRun:
    def __init__(self, config: RunConfig, out_dir: str, threads: int = None):
        self.config = config
        self.command = config.command
        self.threads = threads or config.threads
        self.writer = ReportWriter(out_dir)
        self.domain = config.domain.build() if config.domain is not None else None
        self.schedule = config.schedule.build()
        self.constants = {}
        self.sections = []
        self.failures = []

    def run(self):
        run_counter.labels(command=self.command.value).inc()
        handlers = {
            Command.SOLVE: self.solve,
            Command.CONTINUATION: self.continuation,
            Command.VERIFY_MODEL: self.verify_model,
            Command.RIGIDITY: self.rigidity,
            Command.VOLUME: self.volume,
            Command.COLLAPSE: self.collapse,
            Command.LELONG: self.lelong,
            Command.DISTANCE: self.distance,
        }
        logger.info(f"[{self.command.value}] Starting run into {self.writer.out_dir}")
        status = "error"
        try:
            handlers[self.command]()
            status = "diagnostic_failure" if self.failures else "ok"
        finally:
            if self.sections:
                self.writer.write_report("report.txt", self.sections)
            self.writer.write_metrics()
            self.writer.write_manifest(self.config, status, self.constants)
        if self.failures:
            raise DiagnosticFailure("; ".join(self.failures))
        logger.info(f"[{self.command.value}] Run completed.")
        return self.constants

    def _check(self, name, ok, detail):
        diagnostic_counter.labels(check=name, outcome="pass" if ok else "fail").inc()
        self.constants.setdefault("checks", {})[name] = bool(ok)
        if not ok:
            logger.warning(f"[{self.command.value}] Check {name} failed: {detail}")
            self.failures.append(f"{name}: {detail}")

    def _solve(self, problem: ReducedProblem):
        field_, report = solve_reduced(
            problem, 0.0, tol=self.schedule.tol, max_iter=self.schedule.max_iter
        )
        if not report.converged:
            raise ConvergenceError(
                f"{problem.domain.reduction.value} solve did not converge "
                f"(residual {report.final_residual:.3e} after {report.iterations[0]} iterations)",
                report=report,
            )
        return field_, report

    def _solve_many(self, problems, action_name):
        results, errors = WorkflowRunner.run_all(
            self._solve,
            problems,
            action_name,
            self.threads,
            label=lambda p: f"{p.domain.reduction.value}[{p.domain.t_min:g}]",
        )
        if errors:
            raise errors[0][1]
        return [field_ for field_, _ in results]

    def _deepened_domain(self):
        depth = self.config.diagnostics.deepen_to
        n_t = int(round((self.domain.t_max - depth) / self.domain.h)) + 1
        return self.domain.with_t_min(depth, n_t=n_t)

    def _solve_section(self, report):
        return (
            "solve",
            [
                ("iterations", report.iterations[0]),
                ("final_residual", report.final_residual),
                ("converged", report.converged),
                ("positivity_maintained", report.positivity_maintained),
                ("retried_from_barrier", report.retried),
            ],
        )

    def solve(self):
        problem = self.config.problem()
        density = problem.density(0.0)
        field_, report = self._solve(problem)
        self.writer.write_with("phi.csv", field_to_csv, field_)
        self.writer.write_with("density.csv", density_to_csv, density)
        self.sections.append(self._solve_section(report))
        self.constants["final_residual"] = report.final_residual

        domain, diag = self.domain, self.config.diagnostics
        items = []
        barrier = barrier_initializer(domain, problem.divisor).phi
        items.append(("barrier_constant", float(np.max(barrier - field_.phi))))

        if self.config.boundary.kind == "model_trace" and domain.reduction is not Reduction.POLAR2D_N1:
            exact = (exact_cone if domain.reduction is Reduction.CALABI_CONE_N2 else exact_cusp)(domain.t)
            error = float(np.max(np.abs(field_.phi - exact)))
            items.append(("max_error_vs_exact", error))
            if diag.max_exact_error is not None:
                self._check("exact_error", error <= diag.max_exact_error, f"{error:.3e}")

        if domain.reduction is not Reduction.POLAR2D_N1:
            window = slice(1, diag.lelong_window + 1)
            lt = -problem.divisor.pole_order * domain.t[window]
            slope = float(np.polyfit(np.log(lt), field_.phi[window], 1)[0])
            items.append(("deep_log_slope", slope))
            items.extend(self._sandwich_items(field_, density, problem.theta0))
            items.extend(self._sublog_items(density))

        lelong = lelong_estimate(field_, domain, diag.lelong_window, problem.divisor.pole_order)
        items.append(("lelong_slope", lelong))
        if diag.max_lelong_slope is not None:
            self._check("lelong", abs(lelong) <= diag.max_lelong_slope, f"slope {lelong:.4g}")

        self.sections.append(("diagnostics", items))
        self.constants.update(dict(items))

    def _sandwich_items(self, field_, density: DensityField, theta0):
        A = smallest_supersolution_a(field_, density, theta0)
        sandwich = sandwich_check(field_, self.domain, density, A, theta0=theta0)
        self._check(
            "sandwich",
            sandwich.lower_ok and sandwich.upper_ok,
            f"violated at node {sandwich.offending_node}",
        )
        return [
            ("supersolution_A", A),
            ("sandwich_lower_slope_b", sandwich.slope_b),
            ("sandwich_lower_margin", sandwich.lower_margin),
            ("sandwich_upper_margin", sandwich.upper_margin),
        ]

    def _sublog_items(self, density: DensityField):
        if self.domain.reduction is Reduction.CALABI_CONE_N2:
            model = ModelMetric(ModelKind.CONE_ELLIPTIC, 2, k=self.domain.k)
        else:
            model = ModelMetric(ModelKind.CUSP_DISK, 1)
        report = sublog_check(density, model, self.domain)
        unstable = [eps for eps in report.epsilons if not report.stable[eps]]
        self._check("sublog", report.all_stable, f"C_eps drifts with depth for eps in {unstable}")
        return [(f"sublog_C[{eps:g}]", report.c_deep[eps]) for eps in report.epsilons]

    def continuation(self):
        problem = self.config.problem()
        label = problem.domain.reduction.value
        try:
            fields, report = continuation_solve(problem, self.schedule)
        except ConvergenceError as e:
            self._write_continuation(e.partial, e.report)
            raise
        self.writer.write_with("phi.csv", field_to_csv, fields[-1])
        self._write_continuation(fields, report)

        barrier = barrier_initializer(self.domain, problem.divisor).phi
        barrier_constants = [float(np.max(barrier - f.phi)) for f in fields]
        quotients = [q for q in report.lipschitz if q > 0]
        spread = max(quotients) / min(quotients) if quotients else 1.0
        self._check(
            "lipschitz_spread",
            spread <= self.config.diagnostics.max_lipschitz_spread,
            f"quotients vary by a factor {spread:.3f}",
        )
        items = [
            ("steps", len(fields)),
            ("total_iterations", sum(report.iterations)),
            ("lipschitz_constant", report.lipschitz_constant or 0.0),
            ("lipschitz_spread", spread),
            ("barrier_constant_min", min(barrier_constants)),
            ("barrier_constant_max", max(barrier_constants)),
        ]
        self.sections.append((f"continuation ({label})", items))
        self.constants.update(dict(items))

    def _write_continuation(self, fields, report):
        rows = []
        quotients = list(report.lipschitz) + [math.nan]
        for j, f in enumerate(fields):
            rows.append(
                [report.s_values[j], report.iterations[j], report.residual_history[j][-1], quotients[j]]
            )
        self.writer.write_csv(
            "continuation.csv", ["s", "iterations", "final_residual", "lipschitz_quotient"], rows
        )

    def verify_model(self):
        rng = np.random.default_rng(self.config.seed)
        tasks = []
        for i, spec in enumerate(self.config.models):
            model = spec.build()
            points = spec.sample_points() or default_sample_points(model)
            for _ in range(spec.random_points):
                base = points[rng.integers(len(points))]
                jitter = rng.uniform(-POINT_JITTER, POINT_JITTER, size=(len(base), 2))
                points.append([z + complex(dx, dy) for z, (dx, dy) in zip(base, jitter)])
            name = f"model_{i}_{model.kind.value}_{model.normalization.value}.csv"
            tasks.append((spec, model, points, name))

        def check(task):
            spec, model, points, name = task
            return model_table(model, points, spec.fd_step)

        tables, errors = WorkflowRunner.run_all(
            check, tasks, "Einstein check", self.threads, label=lambda task: task[3]
        )
        if errors:
            raise errors[0][1]

        items = []
        for (spec, _, _, name), table in zip(tasks, tables):
            self.writer.write_csv(name, table.header, table.rows)
            report = table.report
            key = name[: -len(".csv")]
            items.append((f"{key}.lambda_hat", report.lambda_hat))
            items.append((f"{key}.max_residual", report.max_residual))
            if spec.expected_lambda is not None:
                gap = abs(report.lambda_hat - spec.expected_lambda)
                self._check(
                    f"{key}.lambda",
                    gap <= spec.lambda_tol,
                    f"lambda_hat={report.lambda_hat:.8f}, expected {spec.expected_lambda}",
                )
        self.sections.append(("einstein constants", items))
        self.constants.update(dict(items))

    def rigidity(self):
        diag = self.config.diagnostics
        problems = [self.config.problem(), self.config.problem(diag.compare_boundary)]
        if diag.deepen_to is not None:
            deep = self._deepened_domain()
            problems += [
                self.config.problem(domain=deep),
                self.config.problem(diag.compare_boundary, domain=deep),
            ]
        fields = self._solve_many(problems, "Rigidity solve")

        phi, phi_prime = fields[0], fields[1]
        report = rigidity_report(phi, phi_prime, self.domain, diag.ladder)
        trace = trace_comparison(phi_prime, phi, self.domain)
        self.writer.write_with("rigidity.csv", profile_to_csv, report.profile)
        self._check("rigidity_monotone", report.non_increasing, f"ladder {report.ladder}")

        items = [(f"sup_R>={r0:g}", sup) for r0, sup in report.ladder]
        items += [
            ("fitted_constant", report.fitted_constant),
            ("deepest_decile_ratio", report.deepest_decile_ratio),
            ("trace_sup", trace.sup),
            ("trace_sup_t", trace.t_at_sup),
            ("trace_near_outer_boundary", trace.near_outer_boundary),
        ]
        if diag.deepen_to is not None:
            deep_report = rigidity_report(fields[2], fields[3], problems[2].domain, diag.ladder)
            shallow_gap = abs(report.deepest_decile_ratio - 1.0)
            deep_gap = abs(deep_report.deepest_decile_ratio - 1.0)
            items.append(("deepened_decile_ratio", deep_report.deepest_decile_ratio))
            self._check(
                "rigidity_deepening",
                deep_gap <= shallow_gap,
                f"deepest decile gap grew from {shallow_gap:.3e} to {deep_gap:.3e}",
            )
        self.sections.append(("rigidity", items))
        self.constants.update(dict(items))

    def volume(self):
        problem = self.config.problem()
        density = problem.density(0.0)
        field_, report = self._solve(problem)
        t_cut = self.config.diagnostics.t_cut or self.domain.t_max
        volume = volume_integral(field_, self.domain, t_cut, density)
        self.writer.write_with("volume.csv", profile_to_csv, volume_profile(field_, self.domain, density))
        items = [
            ("t_cut", volume.t_cut),
            ("truncated", volume.truncated),
            ("extrapolated", volume.extrapolated),
            ("error_bar", volume.error_bar),
            ("tail_coefficient", volume.tail_coefficient),
            ("tail_power", volume.tail_power),
        ]
        self.sections += [self._solve_section(report), ("volume", items)]
        self.constants.update(dict(items))

    def lelong(self):
        problem = self.config.problem()
        field_, report = self._solve(problem)
        diag = self.config.diagnostics
        slope = lelong_estimate(field_, self.domain, diag.lelong_window, problem.divisor.pole_order)
        if diag.max_lelong_slope is not None:
            self._check("lelong", abs(slope) <= diag.max_lelong_slope, f"slope {slope:.4g}")
        self.sections += [self._solve_section(report), ("lelong", [("slope", slope)])]
        self.constants["lelong_slope"] = slope

    def distance(self):
        problems = [self.config.problem()]
        if self.config.diagnostics.deepen_to is not None:
            problems.append(self.config.problem(domain=self._deepened_domain()))
        fields = self._solve_many(problems, "Distance solve")
        profile = distance_profile(fields[0], self.domain)
        self.writer.write_with("distance.csv", profile_to_csv, profile)
        items = [("R_t_min", float(profile.values[0]))]
        if len(fields) > 1:
            deep = problems[1].domain
            deep_R = float(distance_profile(fields[1], deep).values[0])
            gain = math.log(-deep.t_min) - math.log(-self.domain.t_min)
            items += [
                ("R_t_min_deepened", deep_R),
                ("distance_rate", (deep_R - profile.values[0]) / gain),
            ]
        self.sections.append(("distance", items))
        self.constants.update(dict(items))

    def collapse(self):
        spec = self.config.lattice
        profile = collapse_profile(spec.build(), spec.c_hat, spec.y1)
        self.writer.write_with("collapse.csv", collapse_to_csv, profile)
        self._check("collapse_monotone", profile.monotone, f"radii {profile.covering_radii}")
        if profile.halved is not None:
            self._check(
                "collapse_halved",
                profile.halved,
                f"{profile.covering_radii[-1]:.6g} is not below half of {profile.covering_radii[0]:.6g}",
            )
        items = [(f"covering_radius[{c:g}]", r) for c, r in zip(profile.c_hat, profile.covering_radii)]
        items.append(("cylinder_limit_gram", cylinder_limit_gram().tolist()))
        self.sections.append(("collapse", items))
        self.constants.update(dict(items))
