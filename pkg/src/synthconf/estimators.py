"""Horizontal, vertical, doubly robust, placebo and PCA treatment-effect estimators.

All estimators are plain weighted arithmetic on a :class:`~synthconf.panel.Panel`
given weights; none of them refits anything except the PCA baseline and
:func:`fit_placebo_weights`.

Intercepts are subtracted: the weight regressions fit
``v'Y_post - w'Y_pre ~ beta`` on controls, so a treated unit carries
``tau + beta`` and the estimate is the residual minus ``beta``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .errors import PanelError, SpecError, WeightConstraintError
from .panel import (
    HORIZONTAL,
    VERTICAL,
    AggregationWeights,
    Panel,
    WeightSet,
    validate_weights,
)

ESTIMATORS = ("horizontal", "vertical", "synthetic_did", "placebo", "pca_baseline")
EXCLUSION_TOL = 1e-12


@dataclass(frozen=True, eq=False)
class TauEstimate:
    """A point estimate with the weights that produced it.

    ``unit`` is set for placebo estimates (row index of the pseudo-treated
    unit); ``n_factors`` for the PCA baseline.
    """

    tau_hat: float
    estimator: str
    weights_used: tuple[WeightSet, ...] = ()
    q_used: AggregationWeights | None = None
    unit: int | None = None
    n_factors: int | None = None

    def __post_init__(self):
        if self.estimator not in ESTIMATORS:
            raise SpecError(f"unknown estimator {self.estimator!r}")
        if not np.isfinite(self.tau_hat):
            raise PanelError(f"{self.estimator} estimate is not finite")
        object.__setattr__(self, "tau_hat", float(self.tau_hat))

    def to_dict(self) -> dict:
        out = {"tau_hat": self.tau_hat, "estimator": self.estimator,
               "weights_used": [ws.to_dict() for ws in self.weights_used]}
        if self.q_used is not None:
            out["q_used"] = self.q_used.q.tolist()
        if self.unit is not None:
            out["unit"] = self.unit
        if self.n_factors is not None:
            out["n_factors"] = self.n_factors
        return out


def _check_direction(ws: WeightSet, direction: str) -> None:
    if ws.direction != direction:
        raise PanelError(f"expected {direction} weights, got {ws.direction}")
    validate_weights(ws)


def _check_len(name: str, got: int, want: int) -> None:
    if got != want:
        raise PanelError(f"{name} has length {got}, panel needs {want}")


def _aggregation(q, n: int) -> AggregationWeights:
    if q is None:
        return AggregationWeights.uniform(n)
    q = q if isinstance(q, AggregationWeights) else AggregationWeights(q)
    _check_len("q", len(q), n)
    return q


def horizontal_effects(panel: Panel, ws: WeightSet, beta: float | None = None) -> np.ndarray:
    """Per-treated-unit estimates ``v'Y_n,post - w'Y_n,pre - beta``."""
    _check_direction(ws, HORIZONTAL)
    p = panel.pattern
    _check_len("w", ws.w.size, p.n_pre)
    _check_len("v", ws.v.size, p.n_post)
    b = ws.beta if beta is None else float(beta)
    return panel.treated_post @ ws.v - panel.treated_pre @ ws.w - b


def vertical_effects(panel: Panel, ws: WeightSet, beta: float | None = None) -> np.ndarray:
    """Per-treated-period estimates ``v'Y_treated,t - w'Y_control,t - beta``."""
    _check_direction(ws, VERTICAL)
    p = panel.pattern
    _check_len("w", ws.w.size, p.n_controls)
    _check_len("v", ws.v.size, p.n_treated)
    b = ws.beta if beta is None else float(beta)
    return ws.v @ panel.treated_post - ws.w @ panel.control_post - b


def estimate_horizontal(panel: Panel, ws: WeightSet, q=None, *, beta: float | None = None) -> TauEstimate:
    """Horizontal regression estimate aggregated over treated units with ``q``.

    ``beta`` overrides ``ws.beta`` (e.g. with :func:`oracle_beta_horizontal`).
    """
    q = _aggregation(q, panel.pattern.n_treated)
    tau = float(q.q @ horizontal_effects(panel, ws, beta))
    used = ws if beta is None else ws.with_beta(beta)
    return TauEstimate(tau, "horizontal", (used,), q)


def estimate_vertical(panel: Panel, ws: WeightSet, q=None, *, beta: float | None = None) -> TauEstimate:
    """Vertical (synthetic control) estimate aggregated over treated periods with ``q``."""
    q = _aggregation(q, panel.pattern.n_post)
    tau = float(q.q @ vertical_effects(panel, ws, beta))
    used = ws if beta is None else ws.with_beta(beta)
    return TauEstimate(tau, "vertical", (used,), q)


def _dr_value(Y_tp, Y_tpre, Y_cp, Y_cpre, w_h, v_h, w_v, v_v) -> float:
    return float(
        v_v @ Y_tp @ v_h - v_v @ Y_tpre @ w_h - w_v @ Y_cp @ v_h + w_v @ Y_cpre @ w_h
    )


def estimate_dr(panel: Panel, ws_h: WeightSet, ws_v: WeightSet) -> TauEstimate:
    """Synthetic difference-in-differences (doubly robust) estimate.

    Intercepts are not used: the four-term contrast cancels any additive
    unit and time effects because every weight vector sums to one.
    """
    _check_direction(ws_h, HORIZONTAL)
    _check_direction(ws_v, VERTICAL)
    p = panel.pattern
    _check_len("horizontal w", ws_h.w.size, p.n_pre)
    _check_len("horizontal v", ws_h.v.size, p.n_post)
    _check_len("vertical w", ws_v.w.size, p.n_controls)
    _check_len("vertical v", ws_v.v.size, p.n_treated)
    tau = _dr_value(panel.treated_post, panel.treated_pre, panel.control_post, panel.control_pre,
                    ws_h.w, ws_h.v, ws_v.w, ws_v.v)
    return TauEstimate(tau, "synthetic_did", (ws_h, ws_v))


# ---------------------------------------------------------------------------
# Simulation-only helpers


def oracle_beta_horizontal(spec, ws: WeightSet) -> float:
    """Intercept implied by the time effects: ``v'iota_post - w'iota_pre``."""
    p = spec.pattern
    return float(ws.v @ spec.iota_time[p.n_pre :] - ws.w @ spec.iota_time[: p.n_pre])


def oracle_beta_vertical(spec, ws: WeightSet) -> float:
    """Intercept implied by the unit effects: ``v'iota_treated - w'iota_control``."""
    p = spec.pattern
    return float(ws.v @ spec.iota_unit[p.n_controls :] - ws.w @ spec.iota_unit[: p.n_controls])


def bias_oracle(spec, ws_h: WeightSet, ws_v: WeightSet, draw=None) -> float:
    """Exact ``tau - E[tau_dr]`` for fixed weights.

    The expectation is over the exogenous draws and noise, so only the
    endogenous parts enter::

        (gbar_pre(w_v) - gbar_post(v_v))' (lbar_post(v_h) - lbar_pre(w_h))

    It vanishes when either the loadings or the factors are matched. With
    ``draw`` the realized ``lambda + Lt`` and ``gamma + Gt`` are used
    instead, giving the bias conditional on the latent draw (noise still
    averaged out).
    """
    _check_direction(ws_h, HORIZONTAL)
    _check_direction(ws_v, VERTICAL)
    p = spec.pattern
    lam = spec.lambda_ if draw is None else spec.lambda_ + draw.lambda_tilde
    gam = spec.gamma if draw is None else spec.gamma + draw.gamma_tilde
    _check_len("horizontal w", ws_h.w.size, p.n_pre)
    _check_len("horizontal v", ws_h.v.size, p.n_post)
    _check_len("vertical w", ws_v.w.size, p.n_controls)
    _check_len("vertical v", ws_v.v.size, p.n_treated)
    g_pre = ws_v.w @ gam[: p.n_controls]
    g_post = ws_v.v @ gam[p.n_controls :]
    l_pre = ws_h.w @ lam[: p.n_pre]
    l_post = ws_h.v @ lam[p.n_pre :]
    return float((g_pre - g_post) @ (l_post - l_pre))


# ---------------------------------------------------------------------------
# Placebo estimates


def estimate_placebo_set(
    panel: Panel,
    placebo_units: Sequence[int],
    ws_h: WeightSet,
    per_unit_vertical: Mapping[int, WeightSet],
) -> list[TauEstimate]:
    """Placebo difference-in-differences statistic for every unit in the pool.

    ``placebo_units`` are row indices of ``panel`` (the treated unit
    included). Each unit ``j`` has its own vertical weights whose ``w``
    spans every row of the panel and must vanish on ``j`` and on the other
    pool members; ``v`` is the single weight ``[1.0]``. All units share
    ``ws_h``. The statistic for ``j`` is

        sum_t v_t {Y_jt - w_h'Y_j,pre - sum_i w_i(j) Y_it + sum_i,s w_i(j) w_h,s Y_is}.
    """
    _check_direction(ws_h, HORIZONTAL)
    p = panel.pattern
    _check_len("horizontal w", ws_h.w.size, p.n_pre)
    _check_len("horizontal v", ws_h.v.size, p.n_post)
    pool = [int(j) for j in placebo_units]
    if len(set(pool)) != len(pool):
        raise PanelError("placebo units must be distinct")
    N = p.n_units
    for j in pool:
        if not 0 <= j < N:
            raise PanelError(f"placebo unit {j} outside 0..{N - 1}")
    Y = panel.outcomes
    pre, post = Y[:, : p.n_pre], Y[:, p.n_pre :]
    out = []
    for j in pool:
        if j not in per_unit_vertical:
            raise PanelError(f"no vertical weights for placebo unit {j}")
        ws_v = per_unit_vertical[j]
        _check_direction(ws_v, VERTICAL)
        _check_len(f"vertical w for unit {j}", ws_v.w.size, N)
        if ws_v.v.size != 1:
            raise PanelError(f"vertical v for unit {j} must have one entry, got {ws_v.v.size}")
        touched = float(np.abs(ws_v.w[pool]).max())
        if touched > EXCLUSION_TOL:
            raise WeightConstraintError(
                "exclusion", touched,
                f"vertical weights for unit {j} put {touched:.3g} on a placebo-pool unit",
            )
        tau = _dr_value(post[j : j + 1], pre[j : j + 1], post, pre, ws_h.w, ws_h.v, ws_v.w, ws_v.v)
        out.append(TauEstimate(tau, "placebo", (ws_h, ws_v), unit=j))
    return out


def fit_placebo_weights(panel: Panel, placebo_units: Sequence[int], cfg=None):
    """Fit the shared horizontal weights and one vertical weight set per pool unit.

    Donors are the control units outside the pool. Horizontal weights are fit
    on the donors; the vertical weights for unit ``j`` are fit with ``j`` as
    the only treated unit and the donors as controls, then embedded into a
    full-length ``w`` that is zero on every pool unit.
    """
    from .solver import SolverConfig, solve_horizontal, solve_vertical

    cfg = SolverConfig() if cfg is None else cfg
    p = panel.pattern
    pool = [int(j) for j in placebo_units]
    donors = [i for i in range(p.n_controls) if i not in set(pool)]
    if len(donors) < 2:
        raise PanelError(f"need >= 2 donor units outside the placebo pool, got {len(donors)}")
    # any single pool unit serves as the treated row; horizontal weights ignore treated rows
    ws_h = solve_horizontal(panel.subpanel(donors, [pool[0]]), cfg)
    per_unit = {}
    for j in pool:
        ws = solve_vertical(panel.subpanel(donors, [j]), cfg)
        w = np.zeros(p.n_units)
        w[donors] = ws.w
        per_unit[j] = WeightSet(VERTICAL, w, ws.v, ws.beta, ws.cap_w, ws.cap_v)
    return ws_h, per_unit


# ---------------------------------------------------------------------------
# PCA / least-squares baseline


def _ic_p2(k: int, N: int, T: int) -> float:
    NT = N * T
    return k * ((N + T) / NT) * np.log(min(N, T))


def _ic_p1(k: int, N: int, T: int) -> float:
    NT = N * T
    return k * ((N + T) / NT) * np.log(NT / (N + T))


def _ic_default(k: int, N: int, T: int) -> float:
    NT = N * T
    return k * ((N + T) / NT) * np.log(NT * min(N, T) / (N + T))


INFORMATION_CRITERIA = {"default": _ic_default, "ic_p1": _ic_p1, "ic_p2": _ic_p2}


def select_factors(X: np.ndarray, max_factors: int, criterion: str = "default") -> tuple[int, np.ndarray, np.ndarray]:
    """Choose the factor count for a demeaned ``units x periods`` matrix.

    Minimizes ``ln(SSR_k / NT) + penalty(k)`` over ``k = 0..max_factors``.
    Returns ``(k, singular values, right singular vectors)``.
    """
    if criterion not in INFORMATION_CRITERIA:
        raise SpecError(f"criterion must be one of {sorted(INFORMATION_CRITERIA)}")
    N, T = X.shape
    _, s, Vt = np.linalg.svd(X, full_matrices=False)
    total = float(s @ s)
    if not total > 0:
        raise PanelError("control outcomes have zero variance after time demeaning")
    kmax = min(int(max_factors), s.size)
    tail = total - np.concatenate([[0.0], np.cumsum(s**2)])[: kmax + 1]
    floor = total * 1e-14
    pen = INFORMATION_CRITERIA[criterion]
    ic = [np.log(max(tail[k], floor) / (N * T)) + pen(k, N, T) for k in range(kmax + 1)]
    return int(np.argmin(ic)), s, Vt


def estimate_pca_baseline(panel: Panel, max_factors: int = 10, *, criterion: str = "default") -> TauEstimate:
    """Least-squares regression on principal components of the controls.

    Time means of the control block are removed, factors are the leading
    principal component series over all periods, each treated unit's
    demeaned pre-period outcomes are regressed on an intercept plus those
    series, and the treated-cell residuals (observed minus fitted) are
    averaged.
    """
    p = panel.pattern
    if p.n_controls < 2 or p.n_pre < 2:
        raise PanelError("PCA baseline needs >= 2 control units and >= 2 pre-periods")
    if int(max_factors) < 0:
        raise SpecError("max_factors must be >= 0")
    ctrl = panel.outcomes[: p.n_controls]
    mu = ctrl.mean(axis=0)
    k, s, Vt = select_factors(ctrl - mu, max_factors, criterion)
    # the intercept plus k factors must be estimable from the pre-periods
    k = min(k, p.n_pre - 1)
    F = (Vt[:k].T * s[:k]) if k else np.zeros((p.n_periods, 0))
    X = np.hstack([np.ones((p.n_periods, 1)), F])
    Yt = panel.outcomes[p.n_controls :] - mu
    coef, *_ = np.linalg.lstsq(X[: p.n_pre], Yt[:, : p.n_pre].T, rcond=None)
    fitted = (X[p.n_pre :] @ coef).T
    tau = float(np.mean(Yt[:, p.n_pre :] - fitted))
    return TauEstimate(tau, "pca_baseline", n_factors=k)
