import hashlib
import json
import logging
from dataclasses import dataclass
from typing import Any, Callable, Dict, List, Optional

import numpy as np
from pydantic import ValidationError

from app.models.pydantic_models import (
    Command,
    CoverName,
    DiskSeed,
    ExperimentConfig,
    LinkingPair,
    MetricPoint,
    ResultRecord,
    RunSummary,
    SolveConfig,
    from_pair,
    to_pair,
)
from app.services import integral_ops
from app.services.almost_complex import (
    AlmostComplexStructure,
    rescale,
    standard_structure,
    structure_bound,
    structure_from_definition,
    validate,
)
from app.services.beltrami_solver import DiskMap, build_cutoff, solve_coupled
from app.services.disk_grid import DiskGrid, GridFunction, build_grid, finite_diff_dbar, finite_diff_dz, sample
from app.services.hyperbolic_metric import calibrate_constants, punctured_path_lengths, royden_estimate
from app.services.linking import verify_linking_index
from app.services.schwarz_probe import gauge_scan, gromov_scan
from app.utils.config import Settings, get_settings
from app.utils.errors import BeltramiError, SchemaError

logger = logging.getLogger(__name__)

DEFAULT_METRIC_RADII = (0.0, 0.3, 0.5, 0.7)
DEFAULT_PUNCTURED_RADII = (0.01, 0.05, 0.1, 0.2)
DBAR_TOLERANCE = 1e-2
CZ_TOLERANCE = 2e-2
ORACLE_TOLERANCE = 1e-8

SAMPLING_COMMANDS = {Command.schwarz_scan, Command.gauge_scan}


def canonical_json(payload: Any) -> str:
    return json.dumps(payload, sort_keys=True, separators=(",", ":"))


def config_hash(config: ExperimentConfig) -> str:
    return hashlib.sha256(canonical_json(config.model_dump(mode="json")).encode()).hexdigest()


@dataclass
class RunOutcome:
    records: List[ResultRecord]
    summary: RunSummary


def canonical_pairs() -> List[LinkingPair]:
    """Transversal, quadratic and cubic tangency against the line {(z, 0)}."""
    line = DiskSeed(u=[(0.0, 0.0), (1.0, 0.0)], v=[(0.0, 0.0)])
    return [
        LinkingPair(first=line, second=DiskSeed(u=[(0.0, 0.0)], v=[(0.0, 0.0), (1.0, 0.0)])),
        LinkingPair(first=line, second=DiskSeed(u=[(0.0, 0.0), (1.0, 0.0)], v=[(0.0, 0.0), (0.0, 0.0), (1.0, 0.0)])),
        LinkingPair(
            first=line,
            second=DiskSeed(u=[(0.0, 0.0), (1.0, 0.0)], v=[(0.0, 0.0), (0.0, 0.0), (0.0, 0.0), (1.0, 0.0)]),
        ),
    ]


class ExperimentService:
    def __init__(self, settings: Optional[Settings] = None):
        self.settings = settings or get_settings()
        self._handlers: Dict[Command, Callable] = {
            Command.validate: self._validate,
            Command.solve_disk: self._solve_disk,
            Command.metric: self._metric,
            Command.completeness: self._completeness,
            Command.schwarz_scan: self._schwarz_scan,
            Command.gauge_scan: self._gauge_scan,
            Command.linking: self._linking,
            Command.operators_selftest: self._operators_selftest,
        }

    def apply_overrides(
        self,
        config: ExperimentConfig,
        seed: Optional[int] = None,
        resolution: Optional[int] = None,
        epsilon: Optional[float] = None,
    ) -> ExperimentConfig:
        update = {k: v for k, v in {"seed": seed, "resolution": resolution, "epsilon": epsilon}.items() if v is not None}
        if not update:
            return config
        try:
            return ExperimentConfig.model_validate({**config.model_dump(), **update})
        except ValidationError as e:
            raise SchemaError("override violates the config schema", {"errors": json.loads(e.json())})

    def describe(self, config: ExperimentConfig) -> Dict[str, Any]:
        """Resolution, epsilon and mu_bound a record of this config carries."""
        fields: Dict[str, Any] = {
            "resolution": config.resolution or self.settings.default_resolution,
            "epsilon": None,
            "mu_bound": None,
        }
        try:
            J = _structure(config)
            fields["epsilon"] = J.epsilon
            fields["mu_bound"] = structure_bound(J)
        except BeltramiError:
            pass
        return fields

    def run(self, command: str, config: ExperimentConfig) -> RunOutcome:
        try:
            cmd = Command(command)
        except ValueError:
            raise SchemaError(f"unknown command '{command}'", {"known": [c.value for c in Command]})
        if cmd in SAMPLING_COMMANDS and config.seed is None:
            raise SchemaError("sampling commands need a seed", {"command": cmd.value})
        logger.info("running %s", cmd.value)
        try:
            context = _RunContext(self.settings, cmd, config)
            series = self._handlers[cmd](context) or {}
        except BeltramiError as e:
            e.context.update(self.describe(config))
            raise
        summary = RunSummary(
            command=cmd.value,
            status="ok",
            exit_code=0,
            record_count=len(context.records),
            config_hash=config_hash(config),
            series=series,
        )
        logger.info("finished %s with %d records", cmd.value, len(context.records))
        return RunOutcome(context.records, summary)

    def _validate(self, ctx: "_RunContext"):
        if ctx.config.structure is None:
            raise SchemaError("validate needs a structure definition")
        report = ctx.validation.model_copy(update={"mu_bound": ctx.mu_bound})
        ctx.emit({"description": ctx.structure.description}, report.model_dump(mode="json"))

    def _solve_disk(self, ctx: "_RunContext"):
        disk = ctx.config.disk or DiskSeed()
        seed = DiskMap.from_holomorphic(
            ctx.grid, [from_pair(c) for c in disk.u], [from_pair(c) for c in disk.v]
        )
        f = solve_coupled(seed, ctx.structure, ctx.solve_config)
        ctx.emit(
            disk.model_dump(mode="json"),
            {
                "residual": f.residual,
                "residual_u": f.residual_u,
                "residual_v": f.residual_v,
                "contraction": f.contraction,
                "jets": [to_pair(j) for j in f.jets],
                "differential_norm": f.differential_norm(),
                "deviation": max(
                    float(np.max(np.abs(f.u.values - seed.u.values))),
                    float(np.max(np.abs(f.v.values - seed.v.values))),
                ),
                "sweeps": f.diagnostics.get("sweeps"),
                "localized_residual": f.diagnostics.get("localized_residual"),
            },
        )
        history = f.diagnostics.get("u_history", [])
        return {"iteration": list(range(len(history))), "residual": history}

    def _metric(self, ctx: "_RunContext"):
        domain = ctx.config.domain
        points = ctx.config.points or _default_metric_points(domain)
        samples = []
        for p in points:
            point = tuple(from_pair(c) for c in p.point)
            direction = tuple(from_pair(c) for c in p.direction)
            s = royden_estimate(
                ctx.structure, point, direction, ctx.solve_config, ctx.grid, domain, ctx.config.calibration
            )
            samples.append(s)
            ctx.emit(p.model_dump(mode="json"), s.model_dump(mode="json"))
        calibration = calibrate_constants(samples)
        abs_a = [float(np.hypot(*s.point[0])) for s in samples]
        return {
            "abs_a": abs_a,
            "upper": [s.upper_estimate for s in samples],
            "lower": [s.lower_bound for s in samples],
            "reference": [_reference_metric(domain, a) for a in abs_a],
            "calibration": [calibration.model_dump(mode="json")],
        }

    def _completeness(self, ctx: "_RunContext"):
        cal = ctx.config.calibration
        k1 = cal.k1 if cal is not None else 0.5
        report = punctured_path_lengths(ctx.config.truncations, k1)
        for delta, length, expected in zip(report.truncations, report.lengths, report.expected):
            ctx.emit({"delta": delta, "k1": k1}, {"length": length, "expected": expected})
        return {"delta": report.truncations, "length": report.lengths, "expected": report.expected}

    def _schwarz_scan(self, ctx: "_RunContext"):
        report = gromov_scan(
            ctx.structure,
            ctx.config.n_samples,
            ctx.solve_config,
            ctx.config.seed,
            ctx.grid,
            ctx.config.direction_restricted,
        )
        for row in report.per_sample:
            ctx.emit({"index": row["index"]}, row)
        return {
            "value": [report.value],
            "n_feasible": [report.n_feasible],
            "norm": [row["norm"] for row in report.per_sample],
        }

    def _gauge_scan(self, ctx: "_RunContext"):
        report = gauge_scan(
            ctx.structure, ctx.config.cover, ctx.config.n_samples, ctx.solve_config, ctx.config.seed, ctx.grid
        )
        for row in report.per_sample:
            ctx.emit({"index": row["index"]}, row)
        for row in report.failures:
            ctx.emit({"index": row["index"]}, row, status="failed")
        series = {
            "value": [report.value],
            "partial": [report.partial],
            "norm": [row["norm"] for row in report.per_sample],
        }
        if report.normalized_max is not None:
            series["normalized_max"] = [report.normalized_max]
        return series

    def _linking(self, ctx: "_RunContext"):
        pairs = ctx.config.pairs or canonical_pairs()
        slices = []
        for k, pair in enumerate(pairs):
            m1 = _disk_from_seed(ctx.grid, pair.first)
            m2 = _disk_from_seed(ctx.grid, pair.second)
            report = verify_linking_index(m1, m2, pair.radii, ctx.structure)
            ctx.emit(pair.model_dump(mode="json"), report.model_dump(mode="json", exclude={"slices"}))
            for s in report.slices:
                slices.append({"pair": k, **s})
        return {"slices": slices}

    def _operators_selftest(self, ctx: "_RunContext"):
        names, errors, passed = [], [], []
        for name, value, tolerance in operator_checks(ctx.grid, self.settings.cutoff_inner_radius):
            ok = bool(value <= tolerance)
            ctx.emit({"check": name, "tolerance": tolerance}, {"error": value, "passed": ok})
            names.append(name)
            errors.append(value)
            passed.append(ok)
        return {"check": names, "error": errors, "passed": passed}


class _RunContext:
    def __init__(self, settings: Settings, command: Command, config: ExperimentConfig):
        self.settings = settings
        self.command = command
        self.config = config
        self.records: List[ResultRecord] = []
        self.grid: DiskGrid = build_grid(config.resolution or settings.default_resolution)
        self.structure: AlmostComplexStructure = _structure(config)
        self.validation = validate(self.structure) if config.structure is not None else None
        self.solve_config: SolveConfig = config.solver or SolveConfig.from_settings(settings)
        self._mu_bound: Optional[float] = None

    @property
    def epsilon(self) -> float:
        return self.structure.epsilon

    @property
    def mu_bound(self) -> float:
        if self._mu_bound is None:
            self._mu_bound = structure_bound(self.structure)
        return self._mu_bound

    def emit(self, inputs: Dict[str, Any], outputs: Dict[str, Any], status: str = "ok") -> None:
        self.records.append(
            ResultRecord(
                command=self.command.value,
                index=len(self.records),
                tool_version=self.settings.tool_version,
                resolution=self.grid.resolution,
                epsilon=self.epsilon,
                mu_bound=self.mu_bound,
                seed=self.config.seed,
                inputs=inputs,
                outputs=outputs,
                status=status,
            )
        )


def _structure(config: ExperimentConfig) -> AlmostComplexStructure:
    if config.structure is None:
        J = standard_structure()
        return rescale(J, config.epsilon) if config.epsilon is not None else J
    defn = config.structure
    if config.epsilon is not None:
        defn = defn.model_copy(update={"epsilon": config.epsilon})
    return structure_from_definition(defn)


def _disk_from_seed(grid: DiskGrid, seed: DiskSeed) -> DiskMap:
    return DiskMap.from_holomorphic(grid, [from_pair(c) for c in seed.u], [from_pair(c) for c in seed.v])


def _default_metric_points(domain: CoverName) -> List[MetricPoint]:
    radii = DEFAULT_PUNCTURED_RADII if domain == CoverName.punctured else DEFAULT_METRIC_RADII
    return [MetricPoint(point=((r, 0.0), (0.0, 0.0))) for r in radii]


def _reference_metric(domain: CoverName, a: float) -> float:
    """Metric of the model domain at (a, 0) in direction (1, 0)."""
    if domain == CoverName.punctured:
        return 1.0 / (2.0 * a * np.log(1.0 / a))
    return 1.0 / (1.0 - a ** 2)


def operator_checks(grid: DiskGrid, inner_radius: float):
    """(name, error, tolerance) for the operator identities on ``grid``."""
    mask = grid.interior
    checks = []
    suite = {
        "one": lambda z: np.ones_like(z),
        "z": lambda z: z,
        "zbar": lambda z: np.conj(z),
        "z2": lambda z: z ** 2,
        "z3": lambda z: z ** 3,
        "abs2": lambda z: np.abs(z) ** 2,
        "gaussian": lambda z: np.exp(-8.0 * np.abs(z - 0.2) ** 2),
    }
    for name, fn in suite.items():
        g = sample(fn, grid)
        w = integral_ops.cauchy_green(g)
        checks.append((f"dbar_cg_{name}", integral_ops.relative_error(finite_diff_dbar(w), g, mask), DBAR_TOLERANCE))
        checks.append(
            (
                f"cz_vs_dz_cg_{name}",
                integral_ops.relative_error(integral_ops.calderon_zygmund(g), finite_diff_dz(w), mask),
                CZ_TOLERANCE,
            )
        )
    one = sample(lambda z: np.ones_like(z), grid)
    zeta = sample(lambda z: z, grid)
    zbar = sample(np.conj, grid)
    checks.append(("cg_one_is_zbar", integral_ops.relative_error(integral_ops.cauchy_green(one), zbar), ORACLE_TOLERANCE))
    checks.append(
        (
            "cg_z_is_abs2_minus_one",
            integral_ops.relative_error(integral_ops.cauchy_green(zeta), sample(lambda z: np.abs(z) ** 2 - 1.0, grid)),
            DBAR_TOLERANCE,
        )
    )
    checks.append(("cz_one_is_zero", integral_ops.calderon_zygmund(one).sup_norm(), ORACLE_TOLERANCE))
    checks.append(("cz_z_is_zbar", integral_ops.relative_error(integral_ops.calderon_zygmund(zeta), zbar), ORACLE_TOLERANCE))
    rho = build_cutoff(grid, inner_radius)
    f = GridFunction(grid, rho.values * np.conj(grid.nodes))
    checks.append(
        (
            "cz_dbar_cutoff",
            integral_ops.relative_error(integral_ops.calderon_zygmund(finite_diff_dbar(f).with_mask(None)), finite_diff_dz(f), mask),
            CZ_TOLERANCE,
        )
    )
    return [(name, float(err), tol) for name, err, tol in checks]
