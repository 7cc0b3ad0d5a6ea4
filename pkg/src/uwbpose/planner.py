"""Two-step anchor/tag sizing from linear fits of Monte-Carlo error sweeps."""

from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field, replace
from typing import Sequence

import numpy as np

from .errors import AssumptionViolated, DegenerateFit, LowCorrelation, TargetInfeasible
from .fim import SQRT3, ErrorModel
from .simlab import SweepTable, TrialConfig, max_error_over_poses, sweep

log = logging.getLogger(__name__)

X_SEMANTICS = ("d/z_a", "d/(z_a*h1)", "d", "1/z_a")


@dataclass(frozen=True)
class LinearFit:
    slope: float
    intercept: float
    pearson_r: float
    x_semantics: str = "d/z_a"
    n_points: int = 0

    def predict(self, x: float) -> float:
        return self.slope * x + self.intercept

    def invert(self, y: float) -> float:
        return (y - self.intercept) / self.slope

    def to_model(self, sigma_d: float) -> ErrorModel:
        """Constants of ``E = C sigma_d x + D`` for the sweep's noise level."""
        return ErrorModel(self.slope / sigma_d, self.intercept)


def fit_linear(x, y, x_semantics: str = "d/z_a") -> LinearFit:
    """Ordinary least squares line with the Pearson correlation of the pairs."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x_semantics not in X_SEMANTICS:
        raise ValueError(f"x_semantics must be one of {X_SEMANTICS}")
    if len(x) != len(y) or len(x) < 3:
        raise DegenerateFit("need at least 3 (x, y) pairs")
    dx = x - x.mean()
    sxx = dx @ dx
    if sxx <= 1e-15 * max(1.0, x @ x):
        raise DegenerateFit("x values are all equal")
    dy = y - y.mean()
    slope = float(dx @ dy / sxx)
    syy = dy @ dy
    r = float(dx @ dy / math.sqrt(sxx * syy)) if syy > 0 else 0.0
    return LinearFit(slope, float(y.mean() - slope * x.mean()), max(-1.0, min(1.0, r)),
                     x_semantics, len(x))


@dataclass
class DeploymentPlan:
    L_a_min: float
    L_t_min: float
    predicted_E_t: float
    predicted_E_phi: float
    fit_translation: LinearFit
    fit_orientation: LinearFit
    validated: bool
    measured_E_t: float | None = None
    measured_E_phi: float | None = None
    diagnostics: list = field(default_factory=list)

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "DeploymentPlan":
        rec = json.loads(text)
        rec["fit_translation"] = LinearFit(**rec["fit_translation"])
        rec["fit_orientation"] = LinearFit(**rec["fit_orientation"])
        return cls(**rec)


def _check_validity(d: float, z_a_max: float, k: float):
    if d <= k * z_a_max:
        raise AssumptionViolated(
            f"d = {d:g} m must exceed {k:.4g} * z_a = {k * z_a_max:.4g} m for the linear model")


def _invert_for_size(fit: LinearFit, target: float, grid: Sequence[float], measured,
                     to_size, what: str) -> float:
    """Smallest size on [min(grid), max(grid)] whose predicted error meets ``target``."""
    if fit.slope <= 0:
        raise LowCorrelation(f"{what} fit slope {fit.slope:.4g} is not positive", fit.pearson_r)
    x_req = fit.invert(target)
    lo, hi = min(grid), max(grid)
    if x_req <= 0:
        raise TargetInfeasible(f"{what} target {target:.4g} is below the fitted intercept "
                               f"{fit.intercept:.4g}", best=float(np.min(measured)))
    size = max(to_size(x_req), lo)
    if size > hi * (1 + 1e-12):
        raise TargetInfeasible(f"no {what} grid point meets the target {target:.4g}; "
                               f"best achievable is {np.min(measured):.4g}",
                               best=float(np.min(measured)))
    return size


def _step_translation(d: float, L_t: float, grid, base: TrialConfig, target: float,
                      min_r: float, table: SweepTable | None = None):
    table = table or sweep("L_a", grid, replace(base, d=d, L_t=L_t))
    x = table.column("d") / table.column("z_a")
    y = table.column("E_t_rmse")
    fit = fit_linear(x, y, "d/z_a")
    if fit.pearson_r < min_r:
        raise LowCorrelation(f"translation fit Pearson r = {fit.pearson_r:.4f} < {min_r}",
                             fit.pearson_r)
    # z_a = 4/3 L_a, so L_a = 3/4 d / x
    size = _invert_for_size(fit, target, table.column("L_a"), y,
                            lambda xr: 0.75 * d / xr, "anchor")
    return size, fit, table


def plan_deployment(d_max: float, e_t_target: float, e_phi_target: float, sigma_d: float,
                    L_a_grid: Sequence[float], L_t_grid: Sequence[float],
                    base: TrialConfig | None = None, *, margin: float = 1.05,
                    min_r: float = 0.95, k_validity: float = SQRT3, confirm: bool = True,
                    diagnose: bool = True, sweep_translation: SweepTable | None = None,
                    sweep_orientation: SweepTable | None = None) -> DeploymentPlan:
    """Size the anchor tetrahedron, then the tag triangle, to meet RMSE targets.

    Step one fixes ``d_max`` and the largest tag triangle, sweeps ``L_a`` and
    inverts the fit of E_t against d/z_a. Step two fixes the chosen ``L_a``,
    sweeps ``L_t`` and inverts E_phi against d/(z_a h1). Targets are divided
    by ``margin`` before inversion. Precomputed sweep tables skip the
    corresponding simulations.
    """
    if e_t_target <= 0 or e_phi_target <= 0:
        raise ValueError("targets must be positive")
    base = replace(base or TrialConfig(), sigma_d=sigma_d, d=d_max)
    L_a_grid = sorted(float(v) for v in L_a_grid)
    L_t_grid = sorted(float(v) for v in L_t_grid)
    _check_validity(d_max, 4.0 / 3.0 * L_a_grid[-1], k_validity)
    diagnostics = []

    L_t_big = L_t_grid[-1]
    L_a_min, fit_t, _ = _step_translation(d_max, L_t_big, L_a_grid, base, e_t_target / margin,
                                          min_r, sweep_translation)
    if diagnose and sweep_translation is None:
        try:
            alt, _, _ = _step_translation(d_max, 0.5 * L_t_big, L_a_grid, base,
                                          e_t_target / margin, min_r)
            if abs(alt - L_a_min) > 0.1 * L_a_min:
                msg = (f"L_a_min moves from {L_a_min:.4g} to {alt:.4g} m when L_t is halved; "
                       "the tag triangle may not be large enough to decouple translation")
                log.warning(msg)
                diagnostics.append(msg)
        except (TargetInfeasible, LowCorrelation) as exc:
            diagnostics.append(f"half-L_t diagnostic failed: {exc}")

    z_a = 4.0 / 3.0 * L_a_min
    table = sweep_orientation or sweep("L_t", L_t_grid, replace(base, L_a=L_a_min))
    x = table.column("d") / (table.column("z_a") * table.column("h1"))
    y = table.column("E_phi_rmse")
    fit_phi = fit_linear(x, y, "d/(z_a*h1)")
    if fit_phi.pearson_r < min_r:
        raise LowCorrelation(f"orientation fit Pearson r = {fit_phi.pearson_r:.4f} < {min_r}",
                             fit_phi.pearson_r)
    # h1 = 3/2 L_t, so L_t = 2/3 d / (z_a x)
    L_t_min = _invert_for_size(fit_phi, e_phi_target / margin, table.column("L_t"), y,
                               lambda xr: 2.0 / 3.0 * d_max / (z_a * xr), "tag")

    plan = DeploymentPlan(
        L_a_min, L_t_min,
        fit_t.predict(d_max / z_a),
        fit_phi.predict(d_max / (z_a * 1.5 * L_t_min)),
        fit_t, fit_phi, False, diagnostics=diagnostics)
    if confirm:
        check = max_error_over_poses(replace(base, L_a=L_a_min, L_t=L_t_min))
        plan.measured_E_t = check.e_t_max
        plan.measured_E_phi = check.e_phi_max
        plan.validated = (check.e_t_max <= 1.1 * e_t_target
                          and check.e_phi_max <= 1.1 * e_phi_target)
    return plan
