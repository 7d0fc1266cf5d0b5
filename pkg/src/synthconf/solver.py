"""Penalized simplex-box least squares for horizontal and vertical weights.

Horizontal weights solve

    min_{w, v, beta}  sum_{i < N0} (v'Y_i,post - w'Y_i,pre - beta)^2 + p N0 (|w|^2 + |v|^2)

over ``w >= 0, 1'w = 1, |w|_inf <= K T0^(-2/3)`` and
``v >= 0, 1'v = 1, |v|_inf <= K T1^(-2/3)``. Vertical weights solve the
same problem on the transposed panel, i.e. over pre-periods with unit
weights and caps ``K N0^(-2/3)``, ``K N1^(-2/3)``.

``beta`` is profiled out in closed form (weighted mean of the residuals) and
the joint ``(w, v)`` block is minimized by projected gradient with
backtracking. Acceleration uses the monotone variant with adaptive restart,
so the objective never increases between reported iterates.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConvergenceError, InfeasibleCapError, PanelError, SpecError
from .panel import HORIZONTAL, VERTICAL, Panel, TreatmentPattern, WeightSet

STEP_RULES = ("fixed", "backtracking")


@dataclass(frozen=True)
class SolverConfig:
    """Penalty, cap scale ``K`` and stopping rule for the weight solver."""

    penalty: float = 0.01
    cap_scale: float = 1.0
    max_iters: int = 50_000
    tol: float = 1e-8  # on |theta - P(theta - grad / L)|, i.e. in weight units
    step_rule: str = "backtracking"
    accelerate: bool = True

    def __post_init__(self):
        if not (math.isfinite(self.penalty) and self.penalty >= 0):
            raise SpecError(f"penalty must be >= 0, got {self.penalty}")
        if not (math.isfinite(self.cap_scale) and self.cap_scale > 0):
            raise SpecError(f"cap_scale must be > 0, got {self.cap_scale}")
        if not self.tol > 0:
            raise SpecError(f"tol must be > 0, got {self.tol}")
        if int(self.max_iters) < 1:
            raise SpecError(f"max_iters must be >= 1, got {self.max_iters}")
        if self.step_rule not in STEP_RULES:
            raise SpecError(f"step_rule must be one of {STEP_RULES}, got {self.step_rule!r}")

    def caps(self, n_pre_index: int, n_post_index: int) -> tuple[float, float]:
        """Caps ``K * n^(-2/3)`` for the pre and post blocks (1-based counts)."""
        return (self.cap_scale * n_pre_index ** (-2.0 / 3.0),
                self.cap_scale * n_post_index ** (-2.0 / 3.0))

    def to_dict(self) -> dict:
        return dict(self.__dict__)

    @classmethod
    def from_dict(cls, d: dict) -> "SolverConfig":
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise SpecError(f"unknown solver fields: {sorted(unknown)}")
        return cls(**d)


@dataclass
class SolveInfo:
    iterations: int
    grad_norm: float
    objective: float
    lipschitz: float
    trace: list = field(default_factory=list)


# ---------------------------------------------------------------------------
# Projection


def project_simplex_box(y, cap: float) -> np.ndarray:
    """Euclidean projection onto ``{x >= 0, sum(x) = 1, x <= cap}``.

    The solution is ``clip(y - tau, 0, cap)`` where ``tau`` is the root of
    the non-increasing piecewise-linear ``g(tau) = sum clip(y - tau, 0, cap) - 1``;
    the root is bracketed between breakpoints by bisection and then solved
    in closed form on that linear piece.
    """
    y = np.asarray(y, dtype=float).ravel()
    n = y.size
    if n == 0:
        raise InfeasibleCapError("cannot project an empty vector")
    if not np.all(np.isfinite(y)):
        raise ValueError("y must be finite")
    cap = float(cap)
    if not cap * n >= 1.0 - 1e-12:
        raise InfeasibleCapError(f"cap {cap:g} times length {n} is below 1")
    cap = min(cap, 1.0)

    # g at every breakpoint at once: sum(y_i - tau over y_i > tau) minus the same over y_i - cap
    ys = np.sort(y)
    tail = np.concatenate([np.cumsum(ys[::-1])[::-1], [0.0]])
    bps = np.unique(np.concatenate([y, y - cap]))
    k1 = np.searchsorted(ys, bps, side="right")
    k2 = np.searchsorted(ys - cap, bps, side="right")
    g = (tail[k1] - (n - k1) * bps) - (tail[k2] - cap * (n - k2) - (n - k2) * bps) - 1.0
    if g[0] < 0:  # only possible when cap * n == 1 up to rounding
        return np.full(n, 1.0 / n)
    lo = int(np.flatnonzero(g >= 0)[-1])  # g is non-increasing and g(max y) = -1
    a, b = bps[lo], bps[lo + 1]
    mid = 0.5 * (a + b)
    free = (y - mid > 0) & (y - mid < cap)
    n_cap = np.count_nonzero(y - mid >= cap)
    if np.any(free):
        tau = (y[free].sum() + cap * n_cap - 1.0) / np.count_nonzero(free)
        tau = min(max(tau, a), b)
    else:
        tau = a
    return np.clip(y - tau, 0.0, cap)


# ---------------------------------------------------------------------------
# Core solver


class _Problem:
    """Quadratic ``f(theta) = |S theta + m|^2 + c |theta|^2`` with ``theta = (w, v)``.

    Rows of the centered design are also centered within the ``w`` and ``v``
    blocks; on the feasible set (each block sums to one) that shift is the
    constant ``m``. It removes curvature along directions the constraints
    forbid, so the Lipschitz constant reflects only the feasible directions.
    """

    def __init__(self, pre, post, row_weights, penalty_scale, cap_w, cap_v):
        pre = np.asarray(pre, dtype=float)
        post = np.asarray(post, dtype=float)
        delta = np.asarray(row_weights, dtype=float)
        if np.any(delta < 0) or not delta.sum() > 0:
            raise SpecError("row weights must be non-negative with positive sum")
        A = np.hstack([-pre, post])
        self.mean_row = (delta / delta.sum()) @ A  # beta(theta) = mean_row @ theta
        S = np.sqrt(delta)[:, None] * (A - self.mean_row)
        n_w = pre.shape[1]
        m_w = S[:, :n_w].mean(axis=1)
        m_v = S[:, n_w:].mean(axis=1)
        S[:, :n_w] -= m_w[:, None]
        S[:, n_w:] -= m_v[:, None]
        self.S = S
        self.m = m_w + m_v
        self.c = float(penalty_scale)
        self.n_w = n_w
        self.cap_w = cap_w
        self.cap_v = cap_v

    def residual(self, theta):
        return self.S @ theta + self.m

    def value(self, theta):
        r = self.residual(theta)
        return float(r @ r + self.c * (theta @ theta))

    def loss(self, theta):
        r = self.residual(theta)
        return float(r @ r)

    def grad(self, theta):
        return 2.0 * (self.S.T @ self.residual(theta)) + 2.0 * self.c * theta

    def change(self, a, d):
        """``f(a + d) - f(a)`` computed without cancellation."""
        Sd = self.S @ d
        return float(Sd @ Sd + 2.0 * (self.residual(a) @ Sd) + self.c * (d @ d + 2.0 * (a @ d)))

    def project(self, theta):
        return np.concatenate([
            project_simplex_box(theta[: self.n_w], self.cap_w),
            project_simplex_box(theta[self.n_w :], self.cap_v),
        ])

    def beta(self, theta):
        return float(self.mean_row @ theta)

    def lipschitz_estimate(self, exact: bool) -> float:
        if exact or min(self.S.shape) <= 64:
            s = np.linalg.norm(self.S, 2) if self.S.size else 0.0
        else:
            x = np.random.default_rng(0).standard_normal(self.S.shape[1])
            for _ in range(30):
                x = self.S.T @ (self.S @ x)
                x /= np.linalg.norm(x)
            s = 1.05 * math.sqrt(np.linalg.norm(self.S @ x) ** 2)
        return 2.0 * (s * s + self.c) + 1e-300


def _check_caps(n_w: int, cap_w: float, n_v: int, cap_v: float) -> None:
    if cap_w * n_w < 1.0 - 1e-12:
        raise InfeasibleCapError(
            f"pre-block cap {cap_w:.4g} over {n_w} coordinates cannot sum to one; raise cap_scale"
        )
    if cap_v * n_v < 1.0 - 1e-12:
        raise InfeasibleCapError(
            f"post-block cap {cap_v:.4g} over {n_v} coordinates cannot sum to one; raise cap_scale"
        )


def _minimize(prob: _Problem, cfg: SolverConfig, record_trace: bool) -> tuple[np.ndarray, SolveInfo]:
    n_w = prob.n_w
    n_v = prob.S.shape[1] - n_w
    x = prob.project(np.concatenate([np.full(n_w, 1.0 / n_w), np.full(n_v, 1.0 / n_v)]))
    L = prob.lipschitz_estimate(exact=cfg.step_rule == "fixed")
    gx = prob.grad(x)
    trace = [prob.value(x)] if record_trace else []

    def grad_map_norm(point, g):
        # gradient mapping divided by L: a step length in weight units, free of outcome scale
        return float(np.linalg.norm(point - prob.project(point - g / L)))

    gnorm = grad_map_norm(x, gx)
    if gnorm <= cfg.tol:
        return x, SolveInfo(0, gnorm, prob.value(x), L, trace)

    y, gy = x, gx
    t = 1.0
    for k in range(1, int(cfg.max_iters) + 1):
        while True:
            z = prob.project(y - gy / L)
            d = z - y
            Sd = prob.S @ d
            # for a quadratic the sufficient-decrease test reduces to curvature along d
            if cfg.step_rule == "fixed" or Sd @ Sd + prob.c * (d @ d) <= 0.5 * L * (d @ d) * (1 + 1e-12):
                break
            L *= 2.0
        improve = prob.change(x, z - x)
        # a plain gradient step from x cannot ascend; a positive change there is rounding
        from_x = y is x
        x_new = z if improve <= 0 or from_x else x
        if from_x:
            improve = min(improve, 0.0)
        if cfg.accelerate:
            t_new = 0.5 * (1.0 + math.sqrt(1.0 + 4.0 * t * t))
            if improve > 0 or float((y - z) @ (z - x)) > 0:
                t_new = 1.0
                y = x_new
            else:
                y = x_new + (t / t_new) * (z - x_new) + ((t - 1.0) / t_new) * (x_new - x)
            t = t_new
        else:
            y = x_new
        x = x_new
        if record_trace:
            trace.append(prob.value(x))
        gx = prob.grad(x)
        gnorm = grad_map_norm(x, gx)
        if gnorm <= cfg.tol:
            return x, SolveInfo(k, gnorm, prob.value(x), L, trace)
        gy = gx if y is x else prob.grad(y)
    raise ConvergenceError(
        f"weight solver did not reach tol={cfg.tol:g} in {cfg.max_iters} iterations "
        f"(projected-gradient norm {gnorm:.3g})",
        last_iterate=x,
        grad_norm=gnorm,
    )


def _solve_block(pre, post, row_weights, penalty_scale, caps, cfg, direction, return_info, record_trace):
    cap_w, cap_v = caps
    _check_caps(pre.shape[1], cap_w, post.shape[1], cap_v)
    prob = _Problem(pre, post, row_weights, penalty_scale, cap_w, cap_v)
    theta, info = _minimize(prob, cfg, record_trace)
    ws = WeightSet(direction, theta[: prob.n_w], theta[prob.n_w :], prob.beta(theta), cap_w, cap_v)
    return (ws, info) if return_info else ws


def solve_horizontal(panel: Panel, cfg: SolverConfig = SolverConfig(), *, return_info=False,
                     record_trace=False):
    """Fit horizontal weights on the control units' pre/post outcomes."""
    p = panel.pattern
    if p.n_controls < 2:
        raise PanelError(f"horizontal weights need >= 2 control units, got {p.n_controls}")
    return _solve_block(
        panel.control_pre, panel.control_post, np.ones(p.n_controls), cfg.penalty * p.n0,
        cfg.caps(p.t0, p.t1), cfg, HORIZONTAL, return_info, record_trace,
    )


def solve_vertical(panel: Panel, cfg: SolverConfig = SolverConfig(), *, return_info=False,
                   record_trace=False):
    """Fit vertical (synthetic control) weights on pre-period outcomes.

    Equivalent to :func:`solve_horizontal` on the transposed panel.
    """
    p = panel.pattern
    if p.n_pre < 2:
        raise PanelError(f"vertical weights need >= 2 pre-treatment periods, got {p.n_pre}")
    return _solve_block(
        panel.control_pre.T, panel.treated_pre.T, np.ones(p.n_pre), cfg.penalty * p.t0,
        cfg.caps(p.n0, p.n1), cfg, VERTICAL, return_info, record_trace,
    )


def horizontal_objective(panel: Panel, ws: WeightSet, penalty: float) -> float:
    """Objective at ``(w, v)`` with ``beta`` at its minimizer (``ws.beta`` ignored)."""
    p = panel.pattern
    prob = _Problem(panel.control_pre, panel.control_post, np.ones(p.n_controls),
                    penalty * p.n0, ws.cap_w, ws.cap_v)
    return prob.value(np.concatenate([ws.w, ws.v]))


def vertical_objective(panel: Panel, ws: WeightSet, penalty: float) -> float:
    p = panel.pattern
    prob = _Problem(panel.control_pre.T, panel.treated_pre.T, np.ones(p.n_pre),
                    penalty * p.t0, ws.cap_w, ws.cap_v)
    return prob.value(np.concatenate([ws.w, ws.v]))


# ---------------------------------------------------------------------------
# Oracle weights (simulation only)


@dataclass(frozen=True, eq=False)
class OracleInputs:
    """Latent quantities defining the oracle weight problem.

    For horizontal weights ``endogenous`` holds the factors ``lambda_t`` of
    every period, ``fixed_effects`` the time effects, and ``cross_section``
    the realized loadings ``gamma_i + Gt_i`` of the control units. For
    vertical weights the roles flip: loadings of every unit, unit effects,
    and realized factors of the pre-periods. ``delta`` weights the rows of
    ``cross_section`` (all ones by default).
    """

    endogenous: np.ndarray
    fixed_effects: np.ndarray
    cross_section: np.ndarray
    delta: np.ndarray | None = None
    penalty_star: float = 0.01

    def __post_init__(self):
        E = np.atleast_2d(np.asarray(self.endogenous, dtype=float))
        C = np.atleast_2d(np.asarray(self.cross_section, dtype=float))
        fe = np.asarray(self.fixed_effects, dtype=float).ravel()
        if E.shape[1] != C.shape[1] or fe.size != E.shape[0]:
            raise SpecError(
                f"oracle inputs disagree: endogenous {E.shape}, cross_section {C.shape}, "
                f"fixed_effects {fe.shape}"
            )
        delta = np.ones(C.shape[0]) if self.delta is None else np.asarray(self.delta, float).ravel()
        if delta.shape != (C.shape[0],) or np.any(delta < 0):
            raise SpecError("delta must be non-negative with one entry per cross-section row")
        if self.penalty_star < 0:
            raise SpecError("penalty_star must be >= 0")
        object.__setattr__(self, "endogenous", E)
        object.__setattr__(self, "cross_section", C)
        object.__setattr__(self, "fixed_effects", fe)
        object.__setattr__(self, "delta", delta)

    def pseudo_outcomes(self) -> np.ndarray:
        """``cross_section @ endogenous' + fixed_effects`` (rows x weighted index)."""
        return self.cross_section @ self.endogenous.T + self.fixed_effects[None, :]


def oracle_inputs(spec, draw, direction: str, penalty_star: float = 0.01, delta=None) -> OracleInputs:
    """Assemble :class:`OracleInputs` from a DGP spec and its latent draw."""
    p = spec.pattern
    if direction == HORIZONTAL:
        loadings = (spec.gamma + draw.gamma_tilde)[: p.n_controls]
        return OracleInputs(spec.lambda_, spec.iota_time, loadings, delta, penalty_star)
    if direction == VERTICAL:
        factors = (spec.lambda_ + draw.lambda_tilde)[: p.n_pre]
        return OracleInputs(spec.gamma, spec.iota_unit, factors, delta, penalty_star)
    raise SpecError(f"unknown direction {direction!r}")


def _oracle_problem(inputs: OracleInputs, pattern: TreatmentPattern, direction: str, cfg: SolverConfig):
    if direction == HORIZONTAL:
        split, n_rows, scale = pattern.n_pre, pattern.n_controls, pattern.n0
        caps = cfg.caps(pattern.t0, pattern.t1)
        n_index = pattern.n_periods
    else:
        split, n_rows, scale = pattern.n_controls, pattern.n_pre, pattern.t0
        caps = cfg.caps(pattern.n0, pattern.n1)
        n_index = pattern.n_units
    X = inputs.pseudo_outcomes()
    if X.shape != (n_rows, n_index):
        raise SpecError(f"oracle inputs give a {X.shape} problem, pattern needs {(n_rows, n_index)}")
    return X[:, :split], X[:, split:], caps, inputs.penalty_star * scale


def oracle_weights_horizontal(inputs: OracleInputs, pattern: TreatmentPattern,
                              cfg: SolverConfig = SolverConfig(), *, return_info=False):
    """Minimize the latent-variable (oracle) horizontal objective."""
    pre, post, caps, scale = _oracle_problem(inputs, pattern, HORIZONTAL, cfg)
    return _solve_block(pre, post, inputs.delta, scale, caps, cfg, HORIZONTAL, return_info, False)


def oracle_weights_vertical(inputs: OracleInputs, pattern: TreatmentPattern,
                            cfg: SolverConfig = SolverConfig(), *, return_info=False):
    """Mirror of :func:`oracle_weights_horizontal` with units and periods exchanged."""
    pre, post, caps, scale = _oracle_problem(inputs, pattern, VERTICAL, cfg)
    return _solve_block(pre, post, inputs.delta, scale, caps, cfg, VERTICAL, return_info, False)


def oracle_loss(inputs: OracleInputs, pattern: TreatmentPattern, ws: WeightSet) -> float:
    """Non-penalty part of the oracle objective at ``ws`` (using ``ws.beta``)."""
    pre, post, _, _ = _oracle_problem(inputs, pattern, ws.direction, SolverConfig())
    resid = post @ ws.v - pre @ ws.w - ws.beta
    return float(inputs.delta @ resid**2)
