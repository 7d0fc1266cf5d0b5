"""Confounded interactive factor model simulator.

Untreated outcomes follow

    Y_it(0) = (lambda_t + Lt_t)' (gamma_i + Gt_i) + iota_unit_i + iota_time_t + eps_it

with deterministic endogenous factors ``lambda_t`` and loadings ``gamma_i``,
mean-zero Gaussian exogenous parts ``Lt_t ~ N(0, sigma_lambda)`` and
``Gt_i ~ N(0, sigma_gamma)``, and ``eps_it ~ N(0, sigma_eps^2)``. Treated
cells add a constant ``tau``.

Confounding is encoded entirely in ``lambda`` (when treatment starts) and
``gamma`` (who is treated); the exogenous draws never depend on the pattern.
The three random streams use separate seed substreams so the factor draws
are bit-identical whatever happens to the loading or noise streams.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .errors import SpecError
from .panel import HORIZONTAL, VERTICAL, Panel, TreatmentPattern

STREAM_LAMBDA = 0
STREAM_GAMMA = 1
STREAM_EPS = 2
STREAM_DESIGN = 3


def stream_rng(seed, tag: int) -> np.random.Generator:
    """Generator for substream ``tag`` of ``seed`` (int or sequence of ints)."""
    entropy = list(seed) if isinstance(seed, (list, tuple)) else int(seed)
    return np.random.default_rng(np.random.SeedSequence(entropy, spawn_key=(tag,)))


def _as_matrix(x, rows: int, cols: int, name: str) -> np.ndarray:
    arr = np.array(x, dtype=float)
    if arr.ndim == 1 and cols == 1:
        arr = arr.reshape(-1, 1)
    if arr.shape != (rows, cols):
        raise SpecError(f"{name} must have shape {(rows, cols)}, got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise SpecError(f"{name} has non-finite entries")
    arr.setflags(write=False)
    return arr


def _as_vector(x, n: int, name: str) -> np.ndarray:
    arr = np.array(x, dtype=float).ravel()
    if arr.shape != (n,):
        raise SpecError(f"{name} must have length {n}, got {arr.shape[0]}")
    if not np.all(np.isfinite(arr)):
        raise SpecError(f"{name} has non-finite entries")
    arr.setflags(write=False)
    return arr


def _cholesky(cov: np.ndarray, name: str) -> np.ndarray:
    if not np.allclose(cov, cov.T, rtol=0.0, atol=1e-12 * max(1.0, np.abs(cov).max())):
        raise SpecError(f"{name} is not symmetric")
    try:
        return np.linalg.cholesky(cov)
    except np.linalg.LinAlgError as exc:
        raise SpecError(f"{name} is not positive definite") from exc


@dataclass(frozen=True, eq=False)
class DgpSpec:
    """Full generative specification for one panel.

    ``lambda_`` is ``(n_periods, r)``, ``gamma`` is ``(n_units, r)``; rows
    follow the panel ordering (controls / pre-periods first). In JSON the
    factor field is spelled ``lambda``.
    """

    r: int
    lambda_: np.ndarray
    gamma: np.ndarray
    sigma_lambda: np.ndarray
    sigma_gamma: np.ndarray
    iota_unit: np.ndarray
    iota_time: np.ndarray
    sigma_eps: float
    tau: float
    pattern: TreatmentPattern
    bound_l2: float | None = None
    seed: int | tuple[int, ...] = 0

    def __post_init__(self):
        r = int(self.r)
        if r < 1:
            raise SpecError(f"r must be >= 1, got {self.r}")
        object.__setattr__(self, "r", r)
        N, T = self.pattern.shape
        object.__setattr__(self, "lambda_", _as_matrix(self.lambda_, T, r, "lambda"))
        object.__setattr__(self, "gamma", _as_matrix(self.gamma, N, r, "gamma"))
        object.__setattr__(self, "sigma_lambda", _as_matrix(self.sigma_lambda, r, r, "sigma_lambda"))
        object.__setattr__(self, "sigma_gamma", _as_matrix(self.sigma_gamma, r, r, "sigma_gamma"))
        object.__setattr__(self, "iota_unit", _as_vector(self.iota_unit, N, "iota_unit"))
        object.__setattr__(self, "iota_time", _as_vector(self.iota_time, T, "iota_time"))
        _cholesky(self.sigma_lambda, "sigma_lambda")
        _cholesky(self.sigma_gamma, "sigma_gamma")
        if not (np.isfinite(self.sigma_eps) and self.sigma_eps > 0):
            raise SpecError(f"sigma_eps must be > 0, got {self.sigma_eps}")
        object.__setattr__(self, "sigma_eps", float(self.sigma_eps))
        object.__setattr__(self, "tau", float(self.tau))
        if self.bound_l2 is not None:
            if not self.bound_l2 > 0:
                raise SpecError(f"bound_l2 must be positive, got {self.bound_l2}")
            object.__setattr__(self, "bound_l2", float(self.bound_l2))
        seed = self.seed
        if isinstance(seed, (list, tuple)):
            seed = tuple(int(s) for s in seed)
        else:
            seed = int(seed)
        object.__setattr__(self, "seed", seed)

    def replace(self, **changes) -> "DgpSpec":
        return replace(self, **changes)

    def deterministic_outcomes(self) -> np.ndarray:
        """``lambda_t' gamma_i + iota_unit_i + iota_time_t`` (no random parts, no tau)."""
        return self.gamma @ self.lambda_.T + self.iota_unit[:, None] + self.iota_time[None, :]

    def to_dict(self) -> dict:
        return {
            "r": self.r,
            "lambda": self.lambda_.tolist(),
            "gamma": self.gamma.tolist(),
            "sigma_lambda": self.sigma_lambda.tolist(),
            "sigma_gamma": self.sigma_gamma.tolist(),
            "iota_unit": self.iota_unit.tolist(),
            "iota_time": self.iota_time.tolist(),
            "sigma_eps": self.sigma_eps,
            "tau": self.tau,
            "pattern": self.pattern.to_dict(),
            "bound_l2": self.bound_l2,
            "seed": list(self.seed) if isinstance(self.seed, tuple) else self.seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "DgpSpec":
        missing = {"r", "lambda", "gamma", "sigma_lambda", "sigma_gamma", "iota_unit",
                   "iota_time", "sigma_eps", "tau", "pattern"} - set(d)
        if missing:
            raise SpecError(f"DGP spec is missing fields: {sorted(missing)}")
        return cls(
            r=d["r"],
            lambda_=d["lambda"],
            gamma=d["gamma"],
            sigma_lambda=d["sigma_lambda"],
            sigma_gamma=d["sigma_gamma"],
            iota_unit=d["iota_unit"],
            iota_time=d["iota_time"],
            sigma_eps=d["sigma_eps"],
            tau=d["tau"],
            pattern=TreatmentPattern.from_dict(d["pattern"]),
            bound_l2=d.get("bound_l2"),
            seed=d.get("seed", 0),
        )

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path) -> "DgpSpec":
        try:
            return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))
        except (OSError, json.JSONDecodeError) as exc:
            raise SpecError(f"cannot read DGP spec {path}: {exc}") from exc


@dataclass(frozen=True, eq=False)
class LatentDraw:
    """Exogenous draws behind one simulated panel."""

    lambda_tilde: np.ndarray  # (n_periods, r)
    gamma_tilde: np.ndarray  # (n_units, r)
    eps: np.ndarray  # (n_units, n_periods)


def _draw_vectors(rng, n: int, chol: np.ndarray, bound: float | None) -> np.ndarray:
    X = rng.standard_normal((n, chol.shape[0])) @ chol.T
    if bound is not None:
        norms = np.linalg.norm(X, axis=1)
        scale = np.minimum(1.0, bound / np.maximum(norms, np.finfo(float).tiny))
        X = X * scale[:, None]
    return X


def draw_lambda_tilde(spec: DgpSpec, seed=None) -> np.ndarray:
    rng = stream_rng(spec.seed if seed is None else seed, STREAM_LAMBDA)
    return _draw_vectors(rng, spec.pattern.n_periods, _cholesky(spec.sigma_lambda, "sigma_lambda"),
                         spec.bound_l2)


def draw_gamma_tilde(spec: DgpSpec, seed=None) -> np.ndarray:
    rng = stream_rng(spec.seed if seed is None else seed, STREAM_GAMMA)
    return _draw_vectors(rng, spec.pattern.n_units, _cholesky(spec.sigma_gamma, "sigma_gamma"),
                         spec.bound_l2)


def untreated_outcomes(spec: DgpSpec, draw: LatentDraw) -> np.ndarray:
    """Counterfactual matrix ``Y(0)`` implied by ``spec`` and ``draw``."""
    factors = spec.lambda_ + draw.lambda_tilde
    loadings = spec.gamma + draw.gamma_tilde
    return (
        loadings @ factors.T
        + spec.iota_unit[:, None]
        + spec.iota_time[None, :]
        + draw.eps
    )


def simulate(spec: DgpSpec, *, lambda_tilde=None, gamma_tilde=None) -> tuple[Panel, LatentDraw]:
    """Draw one panel from ``spec``.

    ``lambda_tilde`` / ``gamma_tilde`` may be passed to hold an exogenous
    component fixed across calls (conditional experiments); otherwise it is
    drawn from its own substream of ``spec.seed``.
    """
    N, T = spec.pattern.shape
    if lambda_tilde is None:
        lambda_tilde = draw_lambda_tilde(spec)
    else:
        lambda_tilde = _as_matrix(lambda_tilde, T, spec.r, "lambda_tilde")
    if gamma_tilde is None:
        gamma_tilde = draw_gamma_tilde(spec)
    else:
        gamma_tilde = _as_matrix(gamma_tilde, N, spec.r, "gamma_tilde")
    eps = spec.sigma_eps * stream_rng(spec.seed, STREAM_EPS).standard_normal((N, T))
    draw = LatentDraw(lambda_tilde, gamma_tilde, eps)
    Y = untreated_outcomes(spec, draw) + spec.tau * spec.pattern.treatment_matrix()
    return Panel(Y, spec.pattern), draw


def _recenter_blocks(x: np.ndarray, split: int) -> np.ndarray:
    pre, post = x[:split], x[split:]
    overall = x.mean(axis=0)
    return np.vstack([pre - pre.mean(axis=0) + overall, post - post.mean(axis=0) + overall])


def make_matched_spec(base: DgpSpec, direction: str) -> DgpSpec:
    """Recenter endogenous factors (horizontal) or loadings (vertical) blockwise.

    After recentering, uniform pre/post weights match exactly: the pre-block
    mean equals the post-block mean, both equal to the original overall mean.
    """
    p = base.pattern
    if direction == HORIZONTAL:
        if p.n_pre < 1 or p.n_post < 1:
            raise SpecError("need non-empty pre and post period blocks")
        return base.replace(lambda_=_recenter_blocks(np.array(base.lambda_), p.n_pre))
    if direction == VERTICAL:
        if p.n_controls < 1 or p.n_treated < 1:
            raise SpecError("need non-empty control and treated unit blocks")
        return base.replace(gamma=_recenter_blocks(np.array(base.gamma), p.n_controls))
    raise SpecError(f"direction must be 'horizontal' or 'vertical', got {direction!r}")


# ---------------------------------------------------------------------------
# Size-independent templates used by the Monte Carlo harness.


def _vec(x, r: int, name: str) -> np.ndarray:
    arr = np.array(x, dtype=float).ravel()
    if arr.size == 1:
        arr = np.full(r, float(arr[0]))
    if arr.shape != (r,):
        raise SpecError(f"{name} must be a scalar or length-{r} vector")
    return arr


def _cov(x, r: int, name: str) -> np.ndarray:
    arr = np.array(x, dtype=float)
    if arr.ndim == 0:
        return float(arr) * np.eye(r)
    if arr.ndim == 1:
        return np.diag(_vec(arr, r, name))
    if arr.shape != (r, r):
        raise SpecError(f"{name} must be scalar, length-{r} diagonal or {r}x{r}")
    return arr


@dataclass(frozen=True)
class DgpTemplate:
    """Recipe producing a :class:`DgpSpec` for any treatment pattern.

    Endogenous factors are ``lambda_pre`` before treatment and
    ``lambda_post`` after, plus ``lambda_trend * t / (T - 1)``; loadings are
    ``gamma_control`` for controls and ``gamma_treated`` for treated units.
    ``strength`` in :meth:`build` scales both pre/post and control/treated
    gaps. Jitter terms are fixed (design-stream) deviations; unless
    ``jitter_all`` they only touch controls and pre-periods, which keeps the
    deterministic part constant over the treated block. ``match`` applies
    :func:`make_matched_spec` afterwards (``none``, ``horizontal``,
    ``vertical`` or ``both``).
    """

    r: int = 1
    sigma_lambda: object = 1.0
    sigma_gamma: object = 1.0
    sigma_eps: float = 1.0
    tau: float = 0.0
    lambda_pre: object = 0.0
    lambda_post: object = 0.0
    lambda_trend: object = 0.0
    lambda_jitter: float = 0.0
    gamma_control: object = 0.0
    gamma_treated: object = 0.0
    gamma_jitter: float = 0.0
    iota_unit_sd: float = 0.0
    iota_time_sd: float = 0.0
    jitter_all: bool = False
    match: str = "none"
    bound_l2: float | None = None

    def __post_init__(self):
        if self.match not in ("none", HORIZONTAL, VERTICAL, "both"):
            raise SpecError(f"match must be none/horizontal/vertical/both, got {self.match!r}")

    def build(self, pattern: TreatmentPattern, strength: float = 1.0, design_seed=0, seed=0) -> DgpSpec:
        r = int(self.r)
        N, T = pattern.shape
        rng = stream_rng(design_seed, STREAM_DESIGN)
        lam_pre = _vec(self.lambda_pre, r, "lambda_pre")
        lam_post = lam_pre + strength * (_vec(self.lambda_post, r, "lambda_post") - lam_pre)
        g_ctrl = _vec(self.gamma_control, r, "gamma_control")
        g_trt = g_ctrl + strength * (_vec(self.gamma_treated, r, "gamma_treated") - g_ctrl)

        lam = np.vstack([np.tile(lam_pre, (pattern.n_pre, 1)), np.tile(lam_post, (pattern.n_post, 1))])
        lam = lam + np.outer(np.arange(T) / max(T - 1, 1), _vec(self.lambda_trend, r, "lambda_trend"))
        gam = np.vstack([np.tile(g_ctrl, (pattern.n_controls, 1)), np.tile(g_trt, (pattern.n_treated, 1))])

        # Fixed draws are taken for all rows so the design does not depend on jitter_all.
        lam_j = self.lambda_jitter * rng.standard_normal((T, r))
        gam_j = self.gamma_jitter * rng.standard_normal((N, r))
        iu = self.iota_unit_sd * rng.standard_normal(N)
        it = self.iota_time_sd * rng.standard_normal(T)
        if not self.jitter_all:
            lam_j[pattern.n_pre :] = 0.0
            gam_j[pattern.n_controls :] = 0.0
            iu[pattern.n_controls :] = 0.0
            it[pattern.n_pre :] = 0.0
        spec = DgpSpec(
            r=r,
            lambda_=lam + lam_j,
            gamma=gam + gam_j,
            sigma_lambda=_cov(self.sigma_lambda, r, "sigma_lambda"),
            sigma_gamma=_cov(self.sigma_gamma, r, "sigma_gamma"),
            iota_unit=iu,
            iota_time=it,
            sigma_eps=self.sigma_eps,
            tau=self.tau,
            pattern=pattern,
            bound_l2=self.bound_l2,
            seed=seed,
        )
        if self.match in (HORIZONTAL, "both"):
            spec = make_matched_spec(spec, HORIZONTAL)
        if self.match in (VERTICAL, "both"):
            spec = make_matched_spec(spec, VERTICAL)
        return spec

    def to_dict(self) -> dict:
        out = {}
        for k, v in self.__dict__.items():
            out[k] = v.tolist() if isinstance(v, np.ndarray) else v
        return out

    @classmethod
    def from_dict(cls, d: dict) -> "DgpTemplate":
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise SpecError(f"unknown DGP template fields: {sorted(unknown)}")
        return cls(**d)
