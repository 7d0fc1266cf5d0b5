"""Plug-in variances, confidence intervals and placebo p-values.

Each interval conditions on a different latent set:

==============  ========================  =================================
method          conditioning tag          variance source
==============  ========================  =================================
horizontal      ``given_loadings``        spread of treated outcomes over
                                          post periods
vertical        ``given_factors``         spread across treated units
synthetic DiD   ``worst_case``            max of the two, on contrasts
placebo         ``permutation``           rank among pool statistics
==============  ========================  =================================

Critical values default to Student-t with ``T1 - 1`` (horizontal) or
``N1 - 1`` (vertical) degrees of freedom since the plug-in variance averages
only a handful of post-treatment terms; ``critical="normal"`` gives the
Gaussian quantile.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import stats

from .errors import PanelError, SpecError
from .estimators import (
    TauEstimate,
    _aggregation,
    _check_direction,
    _check_len,
    estimate_dr,
    estimate_horizontal,
    estimate_vertical,
)
from .panel import HORIZONTAL, VERTICAL, Panel, WeightSet

CONDITIONING = ("given_loadings", "given_factors", "worst_case", "permutation")
CRITICAL = ("t", "normal")


@dataclass(frozen=True)
class EstimateReport:
    """Point estimate with a two-sided interval and its conditioning set."""

    tau_hat: float
    se: float
    ci_low: float
    ci_high: float
    level: float
    conditioning: str
    estimator: str
    variance_components: dict = field(default_factory=dict)
    critical_value: float = float("nan")
    df: float = float("inf")

    def __post_init__(self):
        if self.conditioning not in CONDITIONING:
            raise SpecError(f"unknown conditioning {self.conditioning!r}")
        if not self.se >= 0:
            raise SpecError(f"se must be >= 0, got {self.se}")
        if not self.ci_low <= self.tau_hat <= self.ci_high:
            raise SpecError("interval does not contain the point estimate")

    @property
    def width(self) -> float:
        return self.ci_high - self.ci_low

    def covers(self, value: float) -> bool:
        return self.ci_low <= value <= self.ci_high

    def to_dict(self) -> dict:
        return {
            "tau_hat": self.tau_hat,
            "se": self.se,
            "ci_low": self.ci_low,
            "ci_high": self.ci_high,
            "level": self.level,
            "conditioning": self.conditioning,
            "estimator": self.estimator,
            "variance_components": dict(self.variance_components),
            "critical_value": self.critical_value,
            "df": None if np.isinf(self.df) else self.df,
        }


def critical_value(level: float, df: float = float("inf"), critical: str = "t") -> float:
    """Two-sided quantile ``q_{1 - alpha/2}``; Gaussian when ``critical='normal'`` or ``df`` infinite."""
    if not 0 < level < 1:
        raise SpecError(f"level must be in (0, 1), got {level}")
    if critical not in CRITICAL:
        raise SpecError(f"critical must be one of {CRITICAL}, got {critical!r}")
    upper = 0.5 + level / 2.0
    if critical == "normal" or np.isinf(df):
        return float(stats.norm.ppf(upper))
    return float(stats.t.ppf(upper, df))


def _sample_var(z: np.ndarray) -> float:
    v = float(np.var(z, ddof=1))
    # exact zero for constant statistics (rounding can leave ~1e-33)
    return 0.0 if np.ptp(z) == 0 else max(v, 0.0)


def variance_horizontal(panel: Panel, ws: WeightSet, q=None) -> float:
    """``|v|^2 * s^2`` with ``s^2`` the sample variance of ``Z_t = sum_n q_n Y_nt`` over post periods."""
    _check_direction(ws, HORIZONTAL)
    p = panel.pattern
    if p.n_post < 3:
        raise PanelError(f"horizontal variance needs T1 >= 3 post periods, got {p.n_post}")
    _check_len("v", ws.v.size, p.n_post)
    q = _aggregation(q, p.n_treated)
    z = q.q @ panel.treated_post
    return float(ws.v @ ws.v) * _sample_var(z)


def variance_vertical(panel: Panel, ws: WeightSet, q=None) -> float:
    """``|v|^2 * s^2`` with ``s^2`` the sample variance of ``Z_n = sum_t q_t Y_nt`` over treated units."""
    _check_direction(ws, VERTICAL)
    p = panel.pattern
    if p.n_treated < 3:
        raise PanelError(f"vertical variance needs N1 >= 3 treated units, got {p.n_treated}")
    _check_len("v", ws.v.size, p.n_treated)
    q = _aggregation(q, p.n_post)
    z = panel.treated_post @ q.q
    return float(ws.v @ ws.v) * _sample_var(z)


def _interval(est: TauEstimate, var: float, level: float, df: float, critical: str,
              conditioning: str, components: dict) -> EstimateReport:
    se = float(np.sqrt(var))
    crit = critical_value(level, df, critical)
    half = crit * se
    return EstimateReport(
        tau_hat=est.tau_hat,
        se=se,
        ci_low=est.tau_hat - half,
        ci_high=est.tau_hat + half,
        level=level,
        conditioning=conditioning,
        estimator=est.estimator,
        variance_components=components,
        critical_value=crit,
        df=float("inf") if critical == "normal" else df,
    )


def ci_regression(panel: Panel, ws: WeightSet, q=None, method: str | None = None,
                  level: float = 0.95, *, beta: float | None = None,
                  critical: str = "t") -> EstimateReport:
    """Interval for the horizontal or vertical regression estimate.

    ``method`` defaults to ``ws.direction``. Horizontal intervals condition on
    the loadings, vertical ones on the factors.
    """
    method = ws.direction if method is None else method
    if method == HORIZONTAL:
        est = estimate_horizontal(panel, ws, q, beta=beta)
        var = variance_horizontal(panel, ws, q)
        df, tag, key = panel.pattern.n_post - 1, "given_loadings", "v_h_hat"
    elif method == VERTICAL:
        est = estimate_vertical(panel, ws, q, beta=beta)
        var = variance_vertical(panel, ws, q)
        df, tag, key = panel.pattern.n_treated - 1, "given_factors", "v_v_hat"
    else:
        raise SpecError(f"method must be horizontal or vertical, got {method!r}")
    return _interval(est, var, level, df, critical, tag, {key: var})


def dr_variance_components(panel: Panel, ws_h: WeightSet, ws_v: WeightSet) -> dict:
    """Worst-case variance components of the doubly robust estimate.

    ``v_h_hat = |v_h|^2 var_t(D_t)`` with ``D_t = v_v'Y_treated,t - w_v'Y_control,t``
    and ``v_v_hat = |v_v|^2 var_n(E_n)`` with ``E_n = v_h'Y_n,post - w_h'Y_n,pre``
    over treated units ``n``.
    """
    p = panel.pattern
    if p.n_post < 3 or p.n_treated < 3:
        raise PanelError(
            f"worst-case variance needs N1 >= 3 and T1 >= 3, got N1={p.n_treated}, T1={p.n_post}"
        )
    _check_direction(ws_h, HORIZONTAL)
    _check_direction(ws_v, VERTICAL)
    D = ws_v.v @ panel.treated_post - ws_v.w @ panel.control_post
    E = panel.treated_post @ ws_h.v - panel.treated_pre @ ws_h.w
    return {
        "v_h_hat": float(ws_h.v @ ws_h.v) * _sample_var(D),
        "v_v_hat": float(ws_v.v @ ws_v.v) * _sample_var(E),
    }


def ci_dr(panel: Panel, ws_h: WeightSet, ws_v: WeightSet, level: float = 0.95, *,
          critical: str = "t") -> EstimateReport:
    """Worst-case interval for the synthetic DiD estimate: ``se = sqrt(max(V_h, V_v))``.

    With the t rule the degrees of freedom are those of the larger component.
    """
    est = estimate_dr(panel, ws_h, ws_v)
    comp = dr_variance_components(panel, ws_h, ws_v)
    p = panel.pattern
    if comp["v_h_hat"] >= comp["v_v_hat"]:
        var, df = comp["v_h_hat"], p.n_post - 1
    else:
        var, df = comp["v_v_hat"], p.n_treated - 1
    return _interval(est, var, level, df, critical, "worst_case", comp)


def placebo_test(estimates: Sequence[TauEstimate], treated_index: int) -> float:
    """Permutation p-value of the treated statistic within the placebo pool.

    ``p = (1 + #{j != treated : |tau_j| >= |tau_treated|}) / n``; ties count
    against rejection.
    """
    taus = np.array([e.tau_hat if isinstance(e, TauEstimate) else float(e) for e in estimates])
    n = taus.size
    if n < 2:
        raise PanelError("placebo test needs at least two statistics")
    if not 0 <= treated_index < n:
        raise PanelError(f"treated_index {treated_index} outside 0..{n - 1}")
    stat = abs(taus[treated_index])
    others = np.delete(np.abs(taus), treated_index)
    return float((1 + np.count_nonzero(others >= stat)) / n)
