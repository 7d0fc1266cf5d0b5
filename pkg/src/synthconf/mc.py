"""Monte Carlo replication engine and table emitter.

Replication ``r`` of grid cell ``c`` draws its panel from seed
``(seed, c, r)``, so results do not depend on worker count or completion
order. Per-replication failures (solver non-convergence, degenerate
panels) are recorded instead of aborting; a cell whose failure share
exceeds :data:`FAILURE_BUDGET` marks the whole report invalid.
"""

from __future__ import annotations

import csv
import itertools
import json
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .dgp import DgpTemplate, draw_gamma_tilde, draw_lambda_tilde, simulate
from .errors import SpecError, SynthConfError
from .estimators import (
    bias_oracle,
    estimate_dr,
    estimate_horizontal,
    estimate_pca_baseline,
    estimate_vertical,
    oracle_beta_horizontal,
    oracle_beta_vertical,
)
from .inference import ci_dr, ci_regression
from .panel import HORIZONTAL, VERTICAL, TreatmentPattern, WeightSet
from .solver import (
    SolverConfig,
    oracle_inputs,
    oracle_weights_horizontal,
    oracle_weights_vertical,
    solve_horizontal,
    solve_vertical,
)

METHODS = ("sdid", "vertical", "horizontal", "pca")
TABLE_LABELS = {"sdid": "Synthetic DiD", "vertical": "Vertical", "horizontal": "Horizontal", "pca": "PCA"}
WEIGHT_MODES = ("estimated", "oracle", "uniform")
HOLD_FIXED = ("none", "gamma", "lambda")
FAILURE_BUDGET = 0.01


@dataclass(frozen=True)
class ExperimentSpec:
    """Grid of designs, estimators and replication settings.

    ``cells`` lists ``(n0, t0, n1, t1)`` patterns and ``strengths`` the
    confounding multipliers passed to :meth:`DgpTemplate.build`; the grid is
    their product. ``weights`` chooses estimated, oracle or uniform weights.
    ``hold_fixed`` keeps the exogenous loadings (``gamma``) or factors
    (``lambda``) at one draw per cell, giving conditional experiments.
    """

    template: DgpTemplate
    cells: tuple
    strengths: tuple = (1.0,)
    methods: tuple = ("sdid", "vertical", "horizontal")
    weights: str = "estimated"
    reps: int = 100
    level: float = 0.95
    seed: int = 0
    solver: SolverConfig = SolverConfig()
    hold_fixed: str = "none"
    critical: str = "t"
    max_factors: int = 10

    def __post_init__(self):
        cells = tuple(TreatmentPattern(*c) if not isinstance(c, TreatmentPattern) else c
                      for c in self.cells)
        object.__setattr__(self, "cells", cells)
        object.__setattr__(self, "strengths", tuple(float(s) for s in self.strengths))
        object.__setattr__(self, "methods", tuple(self.methods))
        if not cells or not self.strengths:
            raise SpecError("grid must contain at least one cell and one strength")
        if int(self.reps) < 1:
            raise SpecError(f"reps must be >= 1, got {self.reps}")
        bad = set(self.methods) - set(METHODS)
        if bad or not self.methods:
            raise SpecError(f"methods must be a non-empty subset of {METHODS}, got {sorted(bad)}")
        if self.weights not in WEIGHT_MODES:
            raise SpecError(f"weights must be one of {WEIGHT_MODES}")
        if self.hold_fixed not in HOLD_FIXED:
            raise SpecError(f"hold_fixed must be one of {HOLD_FIXED}")
        if not 0 < self.level < 1:
            raise SpecError("level must be in (0, 1)")

    def grid(self) -> list[tuple[TreatmentPattern, float]]:
        return list(itertools.product(self.cells, self.strengths))

    def to_dict(self) -> dict:
        return {
            "template": self.template.to_dict(),
            "cells": [[c.n0, c.t0, c.n1, c.t1] for c in self.cells],
            "strengths": list(self.strengths),
            "methods": list(self.methods),
            "weights": self.weights,
            "reps": self.reps,
            "level": self.level,
            "seed": self.seed,
            "solver": self.solver.to_dict(),
            "hold_fixed": self.hold_fixed,
            "critical": self.critical,
            "max_factors": self.max_factors,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentSpec":
        d = dict(d)
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise SpecError(f"unknown experiment fields: {sorted(unknown)}")
        if "template" not in d or "cells" not in d:
            raise SpecError("experiment spec needs 'template' and 'cells'")
        d["template"] = DgpTemplate.from_dict(d["template"])
        d["cells"] = tuple(tuple(c) for c in d["cells"])
        if "solver" in d:
            d["solver"] = SolverConfig.from_dict(d["solver"])
        return cls(**d)


# ---------------------------------------------------------------------------
# One replication


def _cell_spec(spec: ExperimentSpec, cell: int, rep: int):
    pattern, strength = spec.grid()[cell]
    return spec.template.build(pattern, strength, design_seed=(spec.seed, cell), seed=(spec.seed, cell, rep))


def _fixed_draws(spec: ExperimentSpec, cell: int, dgp) -> dict:
    if spec.hold_fixed == "none":
        return {}
    key = (spec.seed, cell, 2**31 - 1)
    if spec.hold_fixed == "gamma":
        return {"gamma_tilde": draw_gamma_tilde(dgp, seed=key)}
    return {"lambda_tilde": draw_lambda_tilde(dgp, seed=key)}


def _uniform(direction: str, n_w: int, n_v: int, caps) -> WeightSet:
    cap_w = max(caps[0], 1.0 / n_w)
    cap_v = max(caps[1], 1.0 / n_v)
    return WeightSet.uniform(direction, n_w, n_v, 0.0, cap_w, cap_v)


def _weights(spec: ExperimentSpec, dgp, panel, draw, direction: str) -> WeightSet:
    p = dgp.pattern
    cfg = spec.solver
    if spec.weights == "estimated":
        return solve_horizontal(panel, cfg) if direction == HORIZONTAL else solve_vertical(panel, cfg)
    if spec.weights == "oracle":
        inputs = oracle_inputs(dgp, draw, direction, penalty_star=cfg.penalty)
        if direction == HORIZONTAL:
            return oracle_weights_horizontal(inputs, p, cfg)
        return oracle_weights_vertical(inputs, p, cfg)
    if direction == HORIZONTAL:
        ws = _uniform(HORIZONTAL, p.n_pre, p.n_post, cfg.caps(p.t0, p.t1))
        return ws.with_beta(oracle_beta_horizontal(dgp, ws))
    ws = _uniform(VERTICAL, p.n_controls, p.n_treated, cfg.caps(p.n0, p.n1))
    return ws.with_beta(oracle_beta_vertical(dgp, ws))


def run_replication(spec: ExperimentSpec, cell: int, rep: int) -> dict:
    """Run every method on one simulated panel.

    Returns ``{method: record}`` where a record holds ``tau_hat``,
    ``error`` (estimate minus truth), ``covered``, ``width``, ``runtime``
    and, for ``sdid``, ``bias_oracle``; or ``{"failed": message}``.
    """
    dgp = _cell_spec(spec, cell, rep)
    panel, draw = simulate(dgp, **_fixed_draws(spec, cell, dgp))
    p = dgp.pattern
    out = {}
    cache = {}

    def weights(direction):
        if direction not in cache:
            cache[direction] = _weights(spec, dgp, panel, draw, direction)
        return cache[direction]

    for method in spec.methods:
        start = time.perf_counter()
        try:
            rec = {"bias_oracle": float("nan")}
            if method == "pca":
                est = estimate_pca_baseline(panel, spec.max_factors)
                tau, rep_ci = est.tau_hat, None
            elif method == "sdid":
                ws_h, ws_v = weights(HORIZONTAL), weights(VERTICAL)
                tau = estimate_dr(panel, ws_h, ws_v).tau_hat
                rep_ci = ci_dr(panel, ws_h, ws_v, spec.level, critical=spec.critical) \
                    if p.n_post >= 3 and p.n_treated >= 3 else None
                rec["bias_oracle"] = bias_oracle(dgp, ws_h, ws_v)
            else:
                direction = HORIZONTAL if method == "horizontal" else VERTICAL
                ws = weights(direction)
                enough = (p.n_post if direction == HORIZONTAL else p.n_treated) >= 3
                if enough:
                    rep_ci = ci_regression(panel, ws, None, direction, spec.level, critical=spec.critical)
                    tau = rep_ci.tau_hat
                else:
                    est = estimate_horizontal(panel, ws) if direction == HORIZONTAL else estimate_vertical(panel, ws)
                    tau, rep_ci = est.tau_hat, None
            rec.update(
                tau_hat=tau,
                error=tau - dgp.tau,
                covered=float(rep_ci.covers(dgp.tau)) if rep_ci is not None else float("nan"),
                width=rep_ci.width if rep_ci is not None else float("nan"),
            )
        except SynthConfError as exc:
            rec = {"failed": f"{type(exc).__name__}: {exc}"}
        rec["runtime"] = time.perf_counter() - start
        out[method] = rec
    return out


def _run_chunk(spec_dict: dict, jobs: list) -> list:
    spec = ExperimentSpec.from_dict(spec_dict)
    return [(cell, rep, run_replication(spec, cell, rep)) for cell, rep in jobs]


# ---------------------------------------------------------------------------
# Aggregation


@dataclass
class CellSummary:
    """Summary of one (cell, method) pair with Monte Carlo standard errors."""

    cell: int
    pattern: TreatmentPattern
    strength: float
    method: str
    n_ok: int
    n_failed: int
    bias: float
    bias_se: float
    rmse: float
    rmse_se: float
    coverage: float
    coverage_se: float
    width: float
    width_se: float
    bias_oracle: float
    runtime: float
    errors: list = field(default_factory=list)

    @property
    def label(self) -> str:
        c = self.pattern
        return f"N0={c.n0};T0={c.t0};N1={c.n1};T1={c.t1};s={self.strength:g}"

    def to_dict(self, timing: bool = False) -> dict:
        d = {k: getattr(self, k) for k in (
            "cell", "strength", "method", "n_ok", "n_failed", "bias", "bias_se", "rmse", "rmse_se",
            "coverage", "coverage_se", "width", "width_se", "bias_oracle")}
        d["pattern"] = self.pattern.to_dict()
        d["errors"] = list(self.errors)
        if timing:
            d["runtime"] = self.runtime
        return {k: (None if isinstance(v, float) and math.isnan(v) else v) for k, v in d.items()}


def _mean_se(x: np.ndarray) -> tuple[float, float]:
    x = x[~np.isnan(x)]
    if x.size == 0:
        return float("nan"), float("nan")
    se = float(np.std(x, ddof=1) / np.sqrt(x.size)) if x.size > 1 else float("nan")
    return float(x.mean()), se


def summarize(cell: int, pattern, strength: float, method: str, records: list) -> CellSummary:
    ok = [r for r in records if "failed" not in r]
    failed = [r["failed"] for r in records if "failed" in r]
    err = np.array([r["error"] for r in ok])
    bias, bias_se = _mean_se(err)
    if err.size:
        mse = float(np.mean(err**2))
        rmse = math.sqrt(mse)
        mse_se = float(np.std(err**2, ddof=1) / np.sqrt(err.size)) if err.size > 1 else float("nan")
        rmse_se = mse_se / (2 * rmse) if rmse > 0 else 0.0
    else:
        rmse = rmse_se = float("nan")
    cov = np.array([r["covered"] for r in ok])
    cov = cov[~np.isnan(cov)]
    if cov.size:
        coverage = float(cov.mean())
        coverage_se = math.sqrt(coverage * (1 - coverage) / cov.size)
    else:
        coverage = coverage_se = float("nan")
    width, width_se = _mean_se(np.array([r["width"] for r in ok]))
    bo = np.array([r["bias_oracle"] for r in ok])
    bo = bo[~np.isnan(bo)]
    return CellSummary(
        cell=cell, pattern=pattern, strength=strength, method=method,
        n_ok=len(ok), n_failed=len(failed),
        bias=bias, bias_se=bias_se, rmse=rmse, rmse_se=rmse_se,
        coverage=coverage, coverage_se=coverage_se, width=width, width_se=width_se,
        bias_oracle=float(bo.mean()) if bo.size else float("nan"),
        runtime=float(np.mean([r["runtime"] for r in records])) if records else float("nan"),
        errors=sorted(set(failed))[:5],
    )


@dataclass
class McReport:
    """All (cell, method) summaries of an experiment.

    ``errors`` holds per-replication errors (estimate minus truth) keyed by
    ``(cell, method)`` in replication order, for downstream analysis.
    """

    spec: ExperimentSpec
    summaries: list
    valid: bool
    errors: dict = field(default_factory=dict, repr=False)

    def get(self, cell: int, method: str) -> CellSummary:
        for s in self.summaries:
            if s.cell == cell and s.method == method:
                return s
        raise KeyError((cell, method))

    def to_dict(self, timing: bool = False) -> dict:
        return {
            "valid": self.valid,
            "failure_budget": FAILURE_BUDGET,
            "cells": [s.to_dict(timing) for s in self.summaries],
        }


def run_experiment(spec: ExperimentSpec, workers: int = 1, chunk_size: int = 64) -> McReport:
    """Run every replication of every grid cell and aggregate.

    With ``workers > 1`` chunks of replications run in a process pool.
    Results are re-sorted by ``(cell, rep)`` so the report is identical for
    any worker count.
    """
    grid = spec.grid()
    jobs = [(c, r) for c in range(len(grid)) for r in range(int(spec.reps))]
    chunks = [jobs[i : i + chunk_size] for i in range(0, len(jobs), chunk_size)]
    if workers <= 1 or len(chunks) == 1:
        results = [(c, r, run_replication(spec, c, r)) for c, r in jobs]
    else:
        spec_dict = spec.to_dict()
        with ProcessPoolExecutor(max_workers=workers) as pool:
            parts = pool.map(_run_chunk, [spec_dict] * len(chunks), chunks)
            results = [item for part in parts for item in part]
    results.sort(key=lambda x: (x[0], x[1]))

    summaries, errors, valid = [], {}, True
    for c, (pattern, strength) in enumerate(grid):
        cell_results = [res for cc, _, res in results if cc == c]
        for m in spec.methods:
            records = [res[m] for res in cell_results]
            s = summarize(c, pattern, strength, m, records)
            if s.n_failed > FAILURE_BUDGET * len(records):
                valid = False
            summaries.append(s)
            errors[(c, m)] = np.array([r.get("error", np.nan) for r in records])
    return McReport(spec, summaries, valid, errors)


# ---------------------------------------------------------------------------
# Output


def format_sig(x: float, digits: int = 3) -> str:
    if x is None or (isinstance(x, float) and math.isnan(x)):
        return "nan"
    return f"{x:.{digits}g}"


def emit_table(report: McReport, path, *, timing: bool = False) -> None:
    """Write an RMSE table (estimators x grid cells) plus a JSON sidecar.

    Rows follow the order Synthetic DiD, Vertical, Horizontal, PCA (methods
    not run are omitted); values carry 3 significant digits. The sidecar,
    next to ``path`` with suffix ``.json``, holds the full report including
    Monte Carlo standard errors.
    """
    path = Path(path)
    grid = report.spec.grid()
    labels = [report.get(c, report.spec.methods[0]).label for c in range(len(grid))]
    try:
        with path.open("w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["estimator", *labels])
            for m in METHODS:
                if m not in report.spec.methods:
                    continue
                writer.writerow([TABLE_LABELS[m], *(format_sig(report.get(c, m).rmse) for c in range(len(grid)))])
        sidecar = path.with_suffix(".json")
        sidecar.write_text(json.dumps(report.to_dict(timing), indent=2, sort_keys=True) + "\n",
                           encoding="utf-8")
    except OSError as exc:
        raise SynthConfError(f"cannot write table to {path}: {exc}") from exc


def read_table(path) -> dict:
    """Parse a table written by :func:`emit_table` into ``{label: [floats]}``."""
    with Path(path).open(newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    return {row[0]: [float(x) for x in row[1:]] for row in rows[1:]}
