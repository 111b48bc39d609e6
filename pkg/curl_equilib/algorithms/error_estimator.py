"""
Error estimator

eta = ||sigma_h - curl A_h|| with its elementwise indicators, the data
oscillation aggregate, the exact error against a manufactured curl, and
Doerfler marking. All estimator arithmetic is isolated in this file.
"""
import logging
from typing import Callable, Optional

import numpy as np
from scipy import stats

from ..config import Config
from ..exceptions import InvalidArgumentError
from ..models import CoefficientField, EstimatorReport, MagneticPotentialSolution
from .poly_spaces import evaluate_field, field_on_rule
from .quadrature import gauss_rule_tet

logger = logging.getLogger(__name__)


def eta_elements(flux: CoefficientField, sol: MagneticPotentialSolution):
    """
    Indicators eta_K = ||sigma_h - curl A_h||_K.

    Returns:
        (eta_K array, eta) with eta the root sum of squares
    """
    mesh = sol.mesh
    if flux.space.mesh.n_tets != mesh.n_tets:
        raise InvalidArgumentError("flux and potential live on different meshes")
    exactness = 2 * (sol.degree + 1) + 2
    weights = gauss_rule_tet(exactness).weights
    indicators = np.empty(mesh.n_tets)
    for t in range(mesh.n_tets):
        sigma, _ = field_on_rule(flux, t, exactness)
        _, curl = field_on_rule(sol.potential, t, exactness)
        indicators[t] = abs(mesh.dets[t]) * weights @ np.sum((sigma - curl) ** 2, axis=1)
    indicators = np.sqrt(np.maximum(indicators, 0.0))
    return indicators, float(np.sqrt(np.sum(indicators ** 2)))


def element_errors(sol: MagneticPotentialSolution, exact_curl: Callable, exactness: Optional[int] = None) -> np.ndarray:
    """Elementwise ||curl A - curl A_h||_K"""
    mesh = sol.mesh
    exactness = 2 * sol.degree + 8 if exactness is None else exactness
    rule = gauss_rule_tet(exactness)
    errors = np.empty(mesh.n_tets)
    for t in range(mesh.n_tets):
        reference = np.asarray(exact_curl(mesh.map_points(t, rule.points)), dtype=float).reshape(-1, 3)
        _, curl = evaluate_field(sol.potential, t, rule.points)
        errors[t] = abs(mesh.dets[t]) * rule.weights @ np.sum((reference - curl) ** 2, axis=1)
    return np.sqrt(np.maximum(errors, 0.0))


def exact_error(sol: MagneticPotentialSolution, exact_curl: Callable, exactness: Optional[int] = None) -> float:
    """||curl(A - A_h)|| with a quadrature of exactness 2p+8 unless given"""
    return float(np.sqrt(np.sum(element_errors(sol, exact_curl, exactness) ** 2)))


def oscillation_total(patch_terms, c_lift: float = Config.C_LIFT, c_pf: float = Config.C_PF) -> float:
    """2 C_lift (sum_a C_PF^2 eta_osc_jh_a^2)^(1/2)"""
    values = np.asarray(list(patch_terms.values()) if isinstance(patch_terms, dict) else patch_terms, dtype=float)
    if values.size == 0:
        return 0.0
    return float(2.0 * c_lift * np.sqrt(np.sum((c_pf * values) ** 2)))


def doerfler_mark(indicators, theta: float) -> np.ndarray:
    """
    Smallest set of elements, taken by decreasing eta_K (ties by element
    index), with sum eta_K^2 >= theta^2 sum eta^2.

    Returns:
        marked element indices in selection order
    """
    if not 0.0 <= theta <= 1.0:
        raise InvalidArgumentError(f"marking fraction must lie in [0, 1], got {theta}")
    indicators = np.asarray(indicators, dtype=float)
    order = np.lexsort((np.arange(indicators.size), -indicators))
    cumulative = np.cumsum(indicators[order] ** 2)
    if theta == 0.0 or cumulative.size == 0 or cumulative[-1] == 0.0:
        return np.zeros(0, dtype=int)
    count = int(np.searchsorted(cumulative, theta ** 2 * cumulative[-1], side="left")) + 1
    return order[:min(count, order.size)]


def rank_correlation(indicators, errors) -> float:
    """Spearman rank correlation between eta_K and the elementwise error"""
    result = stats.spearmanr(indicators, errors)
    return float(result[0])


def build_report(flux: CoefficientField, sol: MagneticPotentialSolution, osc_jh=None,
                 exact_curl: Optional[Callable] = None,
                 c_lift: float = Config.C_LIFT, c_pf: float = Config.C_PF,
                 c_lift_certified: bool = Config.C_LIFT_CERTIFIED,
                 error_exactness: Optional[int] = None) -> EstimatorReport:
    """
    Estimator report of one run.

    The effectivity is eta / exact error, the oscillation aggregate is
    reported next to eta and enters eta_total only.
    """
    indicators, eta = eta_elements(flux, sol)
    eta_osc = oscillation_total(osc_jh if osc_jh is not None else [], c_lift, c_pf)
    report = EstimatorReport(
        eta_elements=indicators, eta=eta, eta_osc=eta_osc, eta_total=eta + eta_osc,
        c_lift=c_lift, c_pf=c_pf, c_lift_certified=c_lift_certified,
    )
    if exact_curl is not None:
        errors = element_errors(sol, exact_curl, error_exactness)
        report.exact_error = float(np.sqrt(np.sum(errors ** 2)))
        report.effectivity = eta / report.exact_error if report.exact_error > 0 else float("nan")
        if errors.size > 1 and np.ptp(errors) > 0 and np.ptp(indicators) > 0:
            report.metadata["rank_correlation"] = rank_correlation(indicators, errors)
    if eta_osc > 0 and not c_lift_certified:
        logger.warning("eta_osc = %.3e uses the uncertified C_lift = %g; the bound is not guaranteed", eta_osc, c_lift)
    logger.info("estimator: eta = %.6e, eta_osc = %.3e, error = %s", eta, eta_osc,
                "n/a" if report.exact_error is None else f"{report.exact_error:.6e}")
    return report
