"""
Service layer - runs the solver/estimator pipeline and the experiment studies.
CLI commands call these classes instead of containing pipeline logic directly.
"""
import logging
import math
import time
from dataclasses import dataclass, field
from typing import Iterable, Optional

import numpy as np

from .algorithms import error_estimator, flux_equilibration, mesh_core
from .algorithms.curl_curl_solver import check_patch_orthogonality, solve_magnetic_potential
from .cases import check_current, get_case, self_check
from .config import Config
from .exceptions import CurlEquilibError, InvalidArgumentError, PostCheckError
from .models import (
    CaseDefinition, EstimatorReport, ExperimentConfig, MagneticPotentialSolution, StudyRow, TetMesh,
)

logger = logging.getLogger(__name__)


@dataclass
class PipelineResult:
    """Everything one (mesh, degree) run produces"""
    solution: MagneticPotentialSolution
    equilibration: flux_equilibration.EquilibrationReport
    report: EstimatorReport
    marked: np.ndarray
    seconds: float
    checks: dict = field(default_factory=dict)

    @property
    def dofs(self) -> int:
        return int(self.solution.potential.space.n_free)


class EstimatorService:
    """Service for one solve-equilibrate-estimate run"""

    @staticmethod
    def run(mesh: TetMesh, p: int, case: CaseDefinition, verify: bool = False,
            volume_quad_extra: int = Config.VOLUME_QUAD_EXTRA,
            data_quad_extra: int = Config.DATA_QUAD_EXTRA,
            c_lift: float = Config.C_LIFT, c_pf: float = Config.C_PF,
            doerfler_theta: float = Config.DOERFLER_THETA,
            dump_dir: Optional[str] = Config.DUMP_DIR) -> PipelineResult:
        """
        Solve the curl-curl problem, reconstruct sigma_h and evaluate the
        estimator. In verify mode every post-condition is checked, otherwise
        a sample of patches and elements.

        Raises:
            PostCheckError: a checked post-condition failed
        """
        start = time.perf_counter()
        mesh_core.validate_patch_geometry(mesh)
        solution = solve_magnetic_potential(mesh, p, case.current, volume_quad_extra, data_quad_extra)
        checks = {}
        if verify and case.current.is_piecewise_rt(p):
            checks["patch_orthogonality"] = check_patch_orthogonality(solution, case.current)
            if checks["patch_orthogonality"] > Config.POST_CHECK_TOLERANCE:
                raise PostCheckError(
                    f"patch orthogonality residual {checks['patch_orthogonality']:.3e} "
                    f"> {Config.POST_CHECK_TOLERANCE:.1e}"
                )

        equilibration = flux_equilibration.equilibrate(solution, case.current, verify=verify, dump_dir=dump_dir)
        checks.update(equilibration.checks)
        report = error_estimator.build_report(
            equilibration.flux.flux, solution, equilibration.bundle.osc_jh,
            exact_curl=case.exact_curl, c_lift=c_lift, c_pf=c_pf,
            error_exactness=min(2 * p + 8, 30),
        )
        marked = error_estimator.doerfler_mark(report.eta_elements, doerfler_theta)
        report.metadata.update(
            stability_ratio=equilibration.bundle.stability_ratio,
            marked=int(marked.size),
            equilibration_residual=equilibration.flux.equilibration_residual,
        )
        if report.exact_error is not None and report.eta_osc == 0.0 and report.eta < report.exact_error:
            logger.warning("eta = %.6e below the error %.6e with vanishing oscillation",
                           report.eta, report.exact_error)
        seconds = time.perf_counter() - start
        logger.info("run %s p=%d on %d tets: eta=%.6e eff=%s (%.2fs)", case.case_id, p, mesh.n_tets,
                    report.eta, "n/a" if report.effectivity is None else f"{report.effectivity:.4f}", seconds)
        return PipelineResult(solution, equilibration, report, marked, seconds, checks)


class ExperimentService:
    """Service for convergence studies, p-sweeps and rate evaluation"""

    @staticmethod
    def _meshes(config: ExperimentConfig, case: CaseDefinition):
        if config.mesh_file:
            yield 0, mesh_core.load_mesh(config.mesh_file)
            return
        builder = case.domain or mesh_core.build_structured_cube_mesh
        for N in config.mesh_n:
            yield int(N), builder(int(N))

    @staticmethod
    def _row(config: ExperimentConfig, N: int, mesh: TetMesh, p: int, result: PipelineResult) -> StudyRow:
        report = result.report
        error = report.exact_error if report.exact_error is not None else float("nan")
        effectivity = report.effectivity if report.effectivity is not None else float("nan")
        return StudyRow(
            case=config.case, p=p, N=N, h=mesh.h, dofs=result.dofs, err=error,
            eta=report.eta, eta_osc=report.eta_osc, eff=effectivity,
            equil_res=result.equilibration.flux.equilibration_residual,
            seconds=result.seconds if config.record_timing else 0.0,
            marked=int(result.marked.size),
        )

    @staticmethod
    def _run_pairs(config: ExperimentConfig, pairs) -> list:
        case = get_case(config.case, config.series_terms)
        self_check(case)
        rows = []
        for N, mesh in ExperimentService._meshes(config, case):
            check_current(case.current, mesh)
            for p in pairs(N):
                try:
                    result = EstimatorService.run(
                        mesh, p, case, verify=config.verify,
                        volume_quad_extra=config.volume_quad_extra,
                        data_quad_extra=config.data_quad_extra,
                        c_lift=config.c_lift, c_pf=config.c_pf,
                        doerfler_theta=config.doerfler_theta, dump_dir=config.dump_dir,
                    )
                except CurlEquilibError:
                    logger.error("case %s, N=%d, p=%d failed", config.case, N, p)
                    raise
                rows.append(ExperimentService._row(config, N, mesh, p, result))
        rows.sort(key=lambda row: (row.p, row.N))
        ExperimentService.log_eta_monotonicity(rows)
        return rows

    @staticmethod
    def eta_increases(rows: Iterable[StudyRow]) -> list:
        """(p, N) of every refinement where eta grew over the next coarser mesh of the same degree"""
        increases = []
        by_degree: dict = {}
        for row in rows:
            by_degree.setdefault(row.p, []).append(row)
        for p, entries in sorted(by_degree.items()):
            entries.sort(key=lambda row: -row.h)
            for coarse, fine in zip(entries, entries[1:]):
                if fine.h < coarse.h and fine.eta > coarse.eta:
                    increases.append((p, fine.N))
        return increases

    @staticmethod
    def log_eta_monotonicity(rows: list) -> None:
        if len({(row.p, row.h) for row in rows}) == len({row.p for row in rows}):
            return
        increases = ExperimentService.eta_increases(rows)
        if increases:
            logger.warning("eta increased under refinement at (p, N) = %s", increases)
        else:
            logger.info("eta decreased monotonically under refinement")

    @staticmethod
    def run_convergence_study(config: ExperimentConfig) -> list:
        """One StudyRow per (mesh, degree) pair"""
        config.validate()
        for p in config.degrees:
            if not 0 <= p <= Config.MAX_DISCRETIZATION_DEGREE:
                raise InvalidArgumentError(f"degree {p} outside 0..{Config.MAX_DISCRETIZATION_DEGREE}")
        return ExperimentService._run_pairs(config, lambda N: config.degrees)

    @staticmethod
    def run_p_sweep(config: ExperimentConfig) -> list:
        """Degrees on a single mesh"""
        config.validate()
        if not config.mesh_file and len(config.mesh_n) != 1:
            raise InvalidArgumentError(f"a p-sweep runs on a single mesh, got mesh_n={config.mesh_n}")
        for p in config.degrees:
            if not 1 <= p <= Config.MAX_DISCRETIZATION_DEGREE:
                raise InvalidArgumentError(f"p-sweep degree {p} outside 1..{Config.MAX_DISCRETIZATION_DEGREE}")
        return ExperimentService._run_pairs(config, lambda N: sorted(config.degrees))

    @staticmethod
    def run(config: ExperimentConfig) -> list:
        if config.study == "p_sweep":
            return ExperimentService.run_p_sweep(config)
        return ExperimentService.run_convergence_study(config)

    @staticmethod
    def rate(error_coarse: float, error_fine: float, h_coarse: float, h_fine: float) -> float:
        """log2 of the error ratio when h halves, else log(e ratio) / log(h ratio)"""
        if error_coarse <= 0 or error_fine <= 0:
            return float("nan")
        if math.isclose(h_coarse, 2.0 * h_fine, rel_tol=1e-9):
            return math.log2(error_coarse / error_fine)
        return math.log(error_coarse / error_fine) / math.log(h_coarse / h_fine)

    @staticmethod
    def observed_rates(rows: Iterable) -> list:
        """
        Rates between consecutive meshes for every (case, p), meshes ordered
        by decreasing h. Rows are StudyRow objects or CSV dicts.

        Returns:
            [{"case", "p", "N", "rate"}] with N the finer mesh of each pair
        """
        groups: dict = {}
        for row in rows:
            get = row.get if isinstance(row, dict) else lambda name, row=row: getattr(row, name)
            key = (str(get("case")), int(get("p")))
            groups.setdefault(key, []).append((float(get("h")), int(get("N")), float(get("err"))))
        rates = []
        for (case, p), entries in sorted(groups.items()):
            entries.sort(key=lambda entry: -entry[0])
            if len(entries) < 2:
                continue
            for (h0, _, e0), (h1, n1, e1) in zip(entries, entries[1:]):
                if h1 >= h0:
                    raise InvalidArgumentError(f"case {case}, p={p}: repeated mesh size h={h1}")
                rates.append({"case": case, "p": p, "N": n1, "rate": ExperimentService.rate(e0, e1, h0, h1)})
        return rates
