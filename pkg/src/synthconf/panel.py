"""Panel data model, weight containers and wide-CSV I/O.

Index convention
----------------
Units and periods are stored 0-based. With a treatment pattern
``(n0, t0, n1, t1)`` the outcome matrix has ``n0 - 1 + n1`` rows and
``t0 - 1 + t1`` columns:

=====================  ==========================  ======================
quantity               notation                    array slice
=====================  ==========================  ======================
control units          i < N0                      ``rows[: n0 - 1]``
treated units          i >= N0                     ``rows[n0 - 1 :]``
pre-treatment periods  s < T0                      ``cols[: t0 - 1]``
post periods           t >= T0                     ``cols[t0 - 1 :]``
assignment             W_it = 1{i>=N0} 1{t>=T0}    ``Panel.treatment``
=====================  ==========================  ======================
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import PanelError, WeightConstraintError

SUM_TOL = 1e-9

HORIZONTAL = "horizontal"
VERTICAL = "vertical"
DIRECTIONS = (HORIZONTAL, VERTICAL)


@dataclass(frozen=True)
class TreatmentPattern:
    """Block assignment ``W_it = 1{i >= n0} 1{t >= t0}`` (1-based indices)."""

    n0: int
    t0: int
    n1: int
    t1: int

    def __post_init__(self):
        for name in ("n0", "t0", "n1", "t1"):
            value = getattr(self, name)
            if isinstance(value, bool) or int(value) != value:
                raise PanelError(f"{name} must be an integer, got {value!r}")
            object.__setattr__(self, name, int(value))
        if self.n0 < 2 or self.t0 < 2:
            raise PanelError(f"need n0 >= 2 and t0 >= 2, got n0={self.n0}, t0={self.t0}")
        if self.n1 < 1 or self.t1 < 1:
            raise PanelError(f"need n1 >= 1 and t1 >= 1, got n1={self.n1}, t1={self.t1}")

    @property
    def n_controls(self) -> int:
        return self.n0 - 1

    @property
    def n_treated(self) -> int:
        return self.n1

    @property
    def n_pre(self) -> int:
        return self.t0 - 1

    @property
    def n_post(self) -> int:
        return self.t1

    @property
    def n_units(self) -> int:
        return self.n_controls + self.n_treated

    @property
    def n_periods(self) -> int:
        return self.n_pre + self.n_post

    @property
    def shape(self) -> tuple[int, int]:
        return (self.n_units, self.n_periods)

    def transposed(self) -> "TreatmentPattern":
        """Pattern of the transposed panel (units and periods swap roles)."""
        return TreatmentPattern(n0=self.t0, t0=self.n0, n1=self.t1, t1=self.n1)

    def treatment_matrix(self) -> np.ndarray:
        W = np.zeros(self.shape)
        W[self.n_controls :, self.n_pre :] = 1.0
        return W

    def to_dict(self) -> dict:
        return {"n0": self.n0, "t0": self.t0, "n1": self.n1, "t1": self.t1}

    @classmethod
    def from_dict(cls, d: dict) -> "TreatmentPattern":
        return cls(n0=d["n0"], t0=d["t0"], n1=d["n1"], t1=d["t1"])

    @classmethod
    def parse(cls, text: str) -> "TreatmentPattern":
        """Parse ``"n0,t0,n1,t1"``."""
        parts = [p.strip() for p in text.split(",")]
        if len(parts) != 4:
            raise PanelError(f"pattern must be 'n0,t0,n1,t1', got {text!r}")
        try:
            n0, t0, n1, t1 = (int(p) for p in parts)
        except ValueError as exc:
            raise PanelError(f"pattern must contain integers, got {text!r}") from exc
        return cls(n0, t0, n1, t1)


@dataclass(frozen=True, eq=False)
class Panel:
    """Fully observed outcome matrix (rows = units, columns = periods).

    Controls come first, treated units last; the bottom-right
    ``n1 x t1`` block holds treated outcomes.
    """

    outcomes: np.ndarray
    pattern: TreatmentPattern
    unit_ids: tuple[str, ...] = field(default=())
    period_ids: tuple[str, ...] = field(default=())

    def __post_init__(self):
        Y = np.array(self.outcomes, dtype=float)
        if Y.ndim != 2:
            raise PanelError(f"outcomes must be a 2-d matrix, got ndim={Y.ndim}")
        if Y.shape != self.pattern.shape:
            raise PanelError(
                f"outcome shape {Y.shape} does not match pattern shape {self.pattern.shape}"
            )
        if not np.all(np.isfinite(Y)):
            bad = np.argwhere(~np.isfinite(Y))[0]
            raise PanelError(f"non-finite outcome at row {bad[0]}, column {bad[1]}")
        Y.setflags(write=False)
        object.__setattr__(self, "outcomes", Y)
        units = tuple(str(u) for u in self.unit_ids) or tuple(f"u{i}" for i in range(Y.shape[0]))
        periods = tuple(str(p) for p in self.period_ids) or tuple(
            f"t{j}" for j in range(Y.shape[1])
        )
        if len(units) != Y.shape[0] or len(periods) != Y.shape[1]:
            raise PanelError(
                f"got {len(units)} unit ids and {len(periods)} period ids for shape {Y.shape}"
            )
        object.__setattr__(self, "unit_ids", units)
        object.__setattr__(self, "period_ids", periods)

    # Blocks of the outcome matrix.
    @property
    def control_pre(self) -> np.ndarray:
        p = self.pattern
        return self.outcomes[: p.n_controls, : p.n_pre]

    @property
    def control_post(self) -> np.ndarray:
        p = self.pattern
        return self.outcomes[: p.n_controls, p.n_pre :]

    @property
    def treated_pre(self) -> np.ndarray:
        p = self.pattern
        return self.outcomes[p.n_controls :, : p.n_pre]

    @property
    def treated_post(self) -> np.ndarray:
        p = self.pattern
        return self.outcomes[p.n_controls :, p.n_pre :]

    @property
    def treatment(self) -> np.ndarray:
        return self.pattern.treatment_matrix()

    def transposed(self) -> "Panel":
        """Swap the roles of units and periods."""
        return Panel(self.outcomes.T, self.pattern.transposed(), self.period_ids, self.unit_ids)

    def with_outcomes(self, outcomes: np.ndarray) -> "Panel":
        return Panel(outcomes, self.pattern, self.unit_ids, self.period_ids)

    def subpanel(self, controls: Sequence[int], treated: Sequence[int]) -> "Panel":
        """Panel built from the given rows, ``controls`` first, then ``treated``."""
        rows = list(controls) + list(treated)
        pattern = TreatmentPattern(len(controls) + 1, self.pattern.t0, len(treated), self.pattern.t1)
        return Panel(
            self.outcomes[rows],
            pattern,
            tuple(self.unit_ids[r] for r in rows),
            self.period_ids,
        )

    def __eq__(self, other):
        if not isinstance(other, Panel):
            return NotImplemented
        return (
            self.pattern == other.pattern
            and self.unit_ids == other.unit_ids
            and self.period_ids == other.period_ids
            and np.array_equal(self.outcomes, other.outcomes)
        )

    __hash__ = None


@dataclass(frozen=True, eq=False)
class WeightSet:
    """Pre weights ``w``, post weights ``v`` and intercept ``beta`` for one direction.

    For ``horizontal`` weights ``w`` runs over pre-treatment periods and ``v``
    over post periods; for ``vertical`` weights ``w`` runs over control units
    and ``v`` over treated units.
    """

    direction: str
    w: np.ndarray
    v: np.ndarray
    beta: float
    cap_w: float
    cap_v: float

    def __post_init__(self):
        if self.direction not in DIRECTIONS:
            raise PanelError(f"direction must be one of {DIRECTIONS}, got {self.direction!r}")
        for name in ("w", "v"):
            arr = np.array(getattr(self, name), dtype=float).ravel()
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        object.__setattr__(self, "beta", float(self.beta))
        object.__setattr__(self, "cap_w", float(self.cap_w))
        object.__setattr__(self, "cap_v", float(self.cap_v))

    @classmethod
    def uniform(cls, direction: str, n_w: int, n_v: int, beta: float = 0.0,
                cap_w: float = 1.0, cap_v: float = 1.0) -> "WeightSet":
        return cls(direction, np.full(n_w, 1.0 / n_w), np.full(n_v, 1.0 / n_v), beta, cap_w, cap_v)

    def with_beta(self, beta: float) -> "WeightSet":
        return WeightSet(self.direction, self.w, self.v, beta, self.cap_w, self.cap_v)

    def to_dict(self) -> dict:
        return {
            "direction": self.direction,
            "w": self.w.tolist(),
            "v": self.v.tolist(),
            "beta": self.beta,
            "cap_w": self.cap_w,
            "cap_v": self.cap_v,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "WeightSet":
        return cls(d["direction"], d["w"], d["v"], d["beta"], d["cap_w"], d["cap_v"])

    def __eq__(self, other):
        if not isinstance(other, WeightSet):
            return NotImplemented
        return (
            self.direction == other.direction
            and np.array_equal(self.w, other.w)
            and np.array_equal(self.v, other.v)
            and self.beta == other.beta
            and self.cap_w == other.cap_w
            and self.cap_v == other.cap_v
        )

    __hash__ = None


@dataclass(frozen=True, eq=False)
class AggregationWeights:
    """Weights ``q`` combining per-unit (or per-period) estimates; must sum to one."""

    q: np.ndarray

    def __post_init__(self):
        q = np.array(self.q, dtype=float).ravel()
        if q.size == 0 or not np.all(np.isfinite(q)):
            raise WeightConstraintError("finite_q", float("nan"), "q must be non-empty and finite")
        gap = abs(q.sum() - 1.0)
        if gap > SUM_TOL:
            raise WeightConstraintError("sum_q", gap, f"q sums to {q.sum()!r}, off by {gap:.3g}")
        q.setflags(write=False)
        object.__setattr__(self, "q", q)

    @classmethod
    def uniform(cls, n: int) -> "AggregationWeights":
        return cls(np.full(n, 1.0 / n))

    def __len__(self):
        return self.q.size


def validate_weights(ws: WeightSet) -> None:
    """Raise :class:`WeightConstraintError` unless ``ws`` lies in the simplex-box set."""
    for name, x, cap in (("w", ws.w, ws.cap_w), ("v", ws.v, ws.cap_v)):
        if x.size == 0:
            raise WeightConstraintError(f"empty_{name}", float("nan"), f"{name} is empty")
        if not np.all(np.isfinite(x)):
            raise WeightConstraintError(f"finite_{name}", float("nan"), f"{name} has non-finite entries")
        gap = abs(float(x.sum()) - 1.0)
        if gap > SUM_TOL:
            raise WeightConstraintError(
                f"sum_{name}", gap, f"sum({name}) = {x.sum()!r} is off by {gap:.3g} (tolerance {SUM_TOL:g})"
            )
        low = float(x.min())
        if low < 0.0:
            raise WeightConstraintError(f"nonneg_{name}", -low, f"{name} has a negative entry {low:.3g}")
        excess = float(x.max()) - cap
        if excess > 0.0:
            raise WeightConstraintError(
                f"cap_{name}", excess, f"max({name}) exceeds cap {cap:g} by {excess:.3g}"
            )


# ---------------------------------------------------------------------------
# CSV I/O


def format_wide_csv(outcomes, unit_ids: Sequence[str], period_ids: Sequence[str]) -> str:
    """Render a units x periods matrix as ``unit,<period ids...>`` CSV text."""
    Y = np.asarray(outcomes, dtype=float)
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["unit", *period_ids])
    for uid, row in zip(unit_ids, Y):
        writer.writerow([uid, *(format(float(x), ".17g") for x in row)])
    return buf.getvalue()


def write_wide_csv(outcomes, unit_ids: Sequence[str], period_ids: Sequence[str], path) -> None:
    """Write a units x periods matrix with 17 significant digits."""
    path = Path(path)
    try:
        path.write_text(format_wide_csv(outcomes, unit_ids, period_ids), encoding="utf-8")
    except OSError as exc:
        raise PanelError(f"cannot write panel to {path}: {exc}") from exc


def save_panel(panel: Panel, path) -> None:
    write_wide_csv(panel.outcomes, panel.unit_ids, panel.period_ids, path)


def load_panel(path, pattern: TreatmentPattern) -> Panel:
    """Read a wide CSV written by :func:`save_panel`.

    Rows must already be ordered controls first, treated last.
    """
    path = Path(path)
    try:
        with path.open(newline="", encoding="utf-8") as fh:
            rows = [r for r in csv.reader(fh) if r]
    except OSError as exc:
        raise PanelError(f"cannot read panel from {path}: {exc}") from exc
    if not rows:
        raise PanelError(f"{path} is empty")
    header, body = rows[0], rows[1:]
    period_ids = tuple(header[1:])
    shape = (len(body), len(period_ids))
    if shape != pattern.shape:
        raise PanelError(f"{path}: expected shape {pattern.shape} from pattern, found {shape}")
    values = np.empty(shape)
    unit_ids = []
    for i, row in enumerate(body):
        if len(row) != len(header):
            raise PanelError(
                f"{path}: data row {i} has {len(row) - 1} values, header has {len(period_ids)}"
            )
        unit_ids.append(row[0])
        for j, cell in enumerate(row[1:]):
            try:
                x = float(cell)
            except ValueError:
                x = math.nan
            if not math.isfinite(x):
                raise PanelError(f"{path}: cannot parse cell at row {i}, column {j}: {cell!r}")
            values[i, j] = x
    return Panel(values, pattern, tuple(unit_ids), period_ids)
