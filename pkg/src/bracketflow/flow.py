"""Bracket-flow, metric-flow and gauge ODEs with adaptive integration.

The bracket flow moves only the two components of mu restricted to p x p
(the isotropy rows are constant in time), so the integration state packs the
canonical i < j entries of the structure array and the tangent of the
isotropy rows is exactly zero.  Every trajectory co-integrates the scaling
pair (c, tau) with c' = r c, tau' = c^2, which ties a normalized run to its
unnormalized parent.

A single integration owns its state; trajectories and all inputs are
immutable once produced, so independent integrations may run concurrently.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Callable

import numpy as np

from . import core as _core
from ._rk import (
    STATUS_REACHED_END,
    STATUS_STEP_UNDERFLOW,
    HermitePath,
    solve_rk54,
)
from .core import (
    BracketTensor,
    CompatibilityError,
    HomogeneousPoint,
    act_pi_n,
    pack_array,
    pack_state,
    rescale,
    unpack_state,
)
from .curvature import (
    CurvatureReport,
    curvature_pieces,
    laplacian_op,
    ricci_operator,
)

__all__ = [
    "Normalization",
    "UNNORMALIZED",
    "VOLUME",
    "SCALAR_CURVATURE",
    "BRACKET_NORM",
    "RICCI_NORM",
    "custom_rate",
    "NormalizationError",
    "ValidityDriftError",
    "EventConfig",
    "IntegrationStats",
    "FlowTrajectory",
    "MetricState",
    "MetricTrajectory",
    "GaugeRecord",
    "EquivalenceReport",
    "bracket_rhs",
    "normalization_rate",
    "normalized_rhs",
    "integrate",
    "integrate_reduced",
    "metric_rhs",
    "integrate_metric",
    "integrate_gauge",
    "reparametrize",
    "rescale_to_ricci_norm",
    "equivalence_report",
]

TERM_REACHED_END = "reached-t-end"
TERM_BLOWUP = "blowup-detected"
TERM_CONVERGED = "converged-to-fixed-point"
TERM_UNDERFLOW = "step-underflow"
_TERM_DRIFT = "validity-drift"


class NormalizationError(ValueError):
    """A normalization strategy cannot be applied to the given point."""


class ValidityDriftError(RuntimeError):
    """Membership residuals drifted past the abort threshold during a run."""

    def __init__(self, message: str, trajectory: "FlowTrajectory | None" = None):
        super().__init__(message)
        self.trajectory = trajectory


@dataclass(frozen=True)
class Normalization:
    """Tagged normalization choice for the flow; the rate r(mu) follows the tag.

    kinds: none | volume | scalar-curvature | bracket-norm | ricci-norm |
    custom.  'ricci-norm' has no pointwise rate and is realized by the
    reparametrization in rescale_to_ricci_norm.
    """

    kind: str
    rate_fn: Callable[[BracketTensor], float] | None = None

    def describe(self) -> str:
        return self.kind


UNNORMALIZED = Normalization("none")
VOLUME = Normalization("volume")
SCALAR_CURVATURE = Normalization("scalar-curvature")
BRACKET_NORM = Normalization("bracket-norm")
RICCI_NORM = Normalization("ricci-norm")


def custom_rate(fn: Callable[[BracketTensor], float]) -> Normalization:
    return Normalization("custom", rate_fn=fn)


def _rate_from_scalars(
    strategy: Normalization,
    n: int,
    R: float,
    tr_ric2: float,
    tr_ric_m: float,
    mu_p_norm2: float,
) -> float:
    if strategy.kind == "none":
        return 0.0
    if strategy.kind == "volume":
        return -R / n
    if strategy.kind == "scalar-curvature":
        if R == 0.0:
            raise NormalizationError("scalar-curvature normalization needs R != 0")
        return -tr_ric2 / R
    if strategy.kind == "bracket-norm":
        if mu_p_norm2 == 0.0:
            raise NormalizationError("bracket-norm normalization needs mu_p != 0")
        return 4.0 * tr_ric_m / mu_p_norm2
    if strategy.kind == "ricci-norm":
        raise NormalizationError(
            "ricci-norm has no pointwise rate; use rescale_to_ricci_norm"
        )
    raise NormalizationError(f"unknown normalization kind {strategy.kind!r}")


def normalization_rate(
    point: HomogeneousPoint | BracketTensor, strategy: Normalization
) -> float:
    """Normalization rate r for one bracket under the given strategy."""
    mu = point.bracket if isinstance(point, HomogeneousPoint) else point
    if strategy.kind == "custom":
        return float(strategy.rate_fn(mu))
    rep = curvature_pieces(mu)
    mu_p2 = float(np.sum(mu.mu_p**2))
    return _rate_from_scalars(
        strategy,
        mu.n,
        rep.R,
        float(np.sum(rep.Ric * rep.Ric)),
        float(np.sum(rep.Ric * rep.M)),
        mu_p2,
    )


def _tangent_components(mu: BracketTensor, ric: np.ndarray, r: float):
    """Flow tangent of the p x p components: (d mu_k, d mu_p)."""
    ck = mu.mu_k
    cp = mu.mu_p
    dck = np.einsum("xi,xjz->ijz", ric, ck) + np.einsum("xj,ixz->ijz", ric, ck)
    dcp = -act_pi_n(ric, cp)
    if r != 0.0:
        dck = dck + 2.0 * r * ck
        dcp = dcp + r * cp
    return dck, dcp


def _tangent_tensor(mu: BracketTensor, ric: np.ndarray, r: float) -> BracketTensor:
    dck, dcp = _tangent_components(mu, ric, r)
    d = mu.dim
    q = mu.q
    c = np.zeros((d, d, d))
    c[q:, q:, :q] = dck
    c[q:, q:, q:] = dcp
    return BracketTensor(mu.q, mu.n, c)


def bracket_rhs(point: HomogeneousPoint) -> BracketTensor:
    """Right-hand side of the bracket flow at a validated point.

    Assembled componentwise, so the isotropy rows of the tangent are exactly
    zero.
    """
    point.require_valid()
    mu = point.bracket
    return _tangent_tensor(mu, ricci_operator(mu), 0.0)


def normalized_rhs(point: HomogeneousPoint, strategy: Normalization) -> BracketTensor:
    """Right-hand side of the r-normalized bracket flow."""
    point.require_valid()
    mu = point.bracket
    r = normalization_rate(mu, strategy)
    return _tangent_tensor(mu, ricci_operator(mu), r)


@dataclass(frozen=True)
class EventConfig:
    """Event thresholds for flow integration.

    blowup_norm triggers on the auxiliary tensor norm; conv_tangent must stay
    below threshold for conv_window consecutive accepted steps to declare
    convergence; the run aborts when the Jacobi residual exceeds
    drift_factor * rtol.
    """

    blowup_norm: float = 1e6
    conv_tangent: float = 1e-10
    conv_window: int = 8
    drift_factor: float = 1e3


@dataclass(frozen=True)
class IntegrationStats:
    n_steps: int
    n_rejected: int
    min_step: float
    max_step: float
    blowup_time_estimate: float | None = None


class TensorFlowSystem:
    """Flow state = packed i < j structure entries of the full tensor."""

    kind = "bracket"

    def __init__(self, point0: HomogeneousPoint, strategy: Normalization):
        self.q = point0.bracket.q
        self.n = point0.bracket.n
        self.strategy = strategy
        self.core0 = pack_state(point0.bracket)
        self.param_names = [
            f"c_{i}_{j}_{k}"
            for i in range(self.q + self.n)
            for j in range(i + 1, self.q + self.n)
            for k in range(self.q + self.n)
        ]

    def bracket(self, core: np.ndarray) -> BracketTensor:
        return unpack_state(self.q, self.n, core)

    def tangent(self, core: np.ndarray) -> tuple[np.ndarray, float]:
        mu = self.bracket(core)
        if self.strategy.kind == "custom":
            r = float(self.strategy.rate_fn(mu))
            ric = ricci_operator(mu)
        elif self.strategy.kind == "ricci-norm":
            # Only reachable through post-processed trajectories.
            r = ricci_norm_rate(mu)
            ric = ricci_operator(mu)
        else:
            rep = curvature_pieces(mu)
            ric = rep.Ric
            r = _rate_from_scalars(
                self.strategy,
                self.n,
                rep.R,
                float(np.sum(ric * ric)),
                float(np.sum(ric * rep.M)),
                float(np.sum(mu.mu_p**2)),
            )
        dck, dcp = _tangent_components(mu, ric, r)
        d = mu.dim
        q = self.q
        dc = np.zeros((d, d, d))
        dc[q:, q:, :q] = dck
        dc[q:, q:, q:] = dcp
        return pack_array(dc), r

    def aux_norm2(self, core: np.ndarray) -> float:
        return 2.0 * float(np.dot(core, core))

    def tangent_norm(self, dcore: np.ndarray) -> float:
        return float(np.sqrt(2.0) * np.linalg.norm(dcore))

    def drift(self, core: np.ndarray) -> float:
        return _core.jacobi_residual(self.bracket(core))

    def describe(self) -> dict:
        return {"kind": self.kind, "q": self.q, "n": self.n}


class ReducedFlowSystem:
    """Flow state = parameters of a catalog family (see families module)."""

    kind = "reduced"

    def __init__(self, family, params0, strategy: Normalization):
        self.family = family
        self.strategy = strategy
        self.core0 = np.asarray(params0, dtype=float)
        self.param_names = list(family.param_names)
        self._weights = np.asarray(family.rate_weights, dtype=float)

    def bracket(self, core: np.ndarray) -> BracketTensor:
        return self.family.embed(core)

    def tangent(self, core: np.ndarray) -> tuple[np.ndarray, float]:
        base = self.family.rhs(core)
        if self.strategy.kind == "none":
            return base, 0.0
        if self.strategy.kind == "custom":
            r = float(self.strategy.rate_fn(self.family.embed(core)))
        else:
            n, R, tr_ric2, tr_ric_m, mu_p2 = self.family.rate_scalars(core)
            r = _rate_from_scalars(self.strategy, n, R, tr_ric2, tr_ric_m, mu_p2)
        return base + r * self._weights * core, r

    def aux_norm2(self, core: np.ndarray) -> float:
        return self.family.aux_norm2(core)

    def tangent_norm(self, dcore: np.ndarray) -> float:
        return float(np.sqrt(2.0) * np.linalg.norm(dcore))

    def drift(self, core: np.ndarray) -> float:
        return 0.0

    def describe(self) -> dict:
        return {"kind": self.kind, "family": self.family.name,
                "context": self.family.context()}


@dataclass(frozen=True, eq=False)
class FlowTrajectory:
    """Sampled flow solution with scaling record and per-run diagnostics."""

    times: np.ndarray
    states: np.ndarray
    derivs: np.ndarray
    c: np.ndarray
    tau: np.ndarray
    system: object
    strategy: Normalization
    termination: str
    stats: IntegrationStats
    notes: tuple[str, ...] = ()
    gauge: "GaugeRecord | None" = None

    @property
    def n_samples(self) -> int:
        return len(self.times)

    @property
    def is_backward(self) -> bool:
        return self.n_samples >= 2 and self.times[-1] < self.times[0]

    def bracket_at(self, i: int) -> BracketTensor:
        return self.system.bracket(self.states[i])

    def final_bracket(self) -> BracketTensor:
        return self.bracket_at(-1)

    def curvature_at(self, i: int) -> CurvatureReport:
        return curvature_pieces(self.bracket_at(i))

    def rate_at(self, i: int) -> float:
        if self.strategy.kind == "none":
            return 0.0
        _, r = self.system.tangent(self.states[i])
        return r

    def interpolator(self) -> HermitePath:
        return HermitePath(self.times, self.states, self.derivs)

    def with_gauge(self, gauge: "GaugeRecord") -> "FlowTrajectory":
        return replace(self, gauge=gauge)

    def describe(self) -> dict:
        d = {
            "system": self.system.describe(),
            "strategy": self.strategy.describe(),
            "termination": self.termination,
            "t_start": float(self.times[0]),
            "t_final": float(self.times[-1]),
            "samples": int(self.n_samples),
            "steps": self.stats.n_steps,
            "rejected_steps": self.stats.n_rejected,
        }
        if self.stats.blowup_time_estimate is not None:
            d["blowup_time_estimate"] = self.stats.blowup_time_estimate
        if self.notes:
            d["notes"] = list(self.notes)
        return d


def _estimate_blowup_time(history: list[tuple[float, float]]) -> float | None:
    """Fit |mu| ~ C (T - t)^(-1/2) on the tail of the norm history.

    The fit is linear in |mu|^(-2); reported as an estimate only.
    """
    if len(history) < 5:
        return None
    tail = history[-12:]
    t = np.array([p[0] for p in tail])
    z = np.array([p[1] for p in tail]) ** (-2.0)
    a = np.vstack([t, np.ones_like(t)]).T
    slope, intercept = np.linalg.lstsq(a, z, rcond=None)[0]
    if slope == 0.0:
        return None
    return float(-intercept / slope)


def _run_flow(
    system,
    t_span: tuple[float, float],
    rtol: float,
    atol: float,
    samples: int,
    events: EventConfig,
    max_step: float | None,
    drift_raises: bool,
) -> FlowTrajectory:
    t0, t1 = float(t_span[0]), float(t_span[1])
    if t1 == t0:
        raise ValueError("t_span must be nondegenerate")
    if rtol <= 0 or atol <= 0:
        raise ValueError("tolerances must be positive")
    if samples < 2:
        raise ValueError("need at least two samples")
    direction = 1.0 if t1 > t0 else -1.0
    span = abs(t1 - t0)
    t_grid = np.linspace(t0, t1, samples)
    s_grid = np.abs(t_grid - t0)

    y0 = np.concatenate([system.core0, [1.0, 0.0]])

    def rhs(s, y):
        core = y[:-2]
        cval = y[-2]
        dcore, r = system.tangent(core)
        return direction * np.concatenate([dcore, [r * cval, cval * cval]])

    conv_count = 0
    norm_history: list[tuple[float, float]] = []
    drift_message: list[str] = []

    def callback(s, y, f, h):
        nonlocal conv_count
        core = y[:-2]
        aux = float(np.sqrt(system.aux_norm2(core)))
        norm_history.append((t0 + direction * s, aux))
        if len(norm_history) > 40:
            del norm_history[0]
        if aux > events.blowup_norm:
            return TERM_BLOWUP
        if system.tangent_norm(f[:-2]) < events.conv_tangent:
            conv_count += 1
            if conv_count >= events.conv_window:
                return TERM_CONVERGED
        else:
            conv_count = 0
        drift = system.drift(core)
        if drift > events.drift_factor * rtol:
            drift_message.append(
                f"Jacobi residual {drift:.3e} exceeded "
                f"{events.drift_factor:g} * rtol at t = {t0 + direction * s:.6g}"
            )
            return _TERM_DRIFT
        return None

    res = solve_rk54(
        rhs,
        0.0,
        span,
        y0,
        rtol=rtol,
        atol=atol,
        max_step=np.inf if max_step is None else max_step,
        sample_times=s_grid,
        step_callback=callback,
    )

    times = list(t_grid[: len(res.sample_t)])
    rows = [y for y in res.sample_y]
    frows = [direction * f for f in res.sample_f]
    stopped_early = res.status != STATUS_REACHED_END
    if stopped_early and (not times or res.t > (res.sample_t[-1] if res.sample_t else -1.0)):
        times.append(t0 + direction * res.t)
        rows.append(res.y)
        frows.append(direction * res.f)

    states = np.array([row[:-2] for row in rows])
    cs = np.array([row[-2] for row in rows])
    taus = np.array([row[-1] for row in rows])
    derivs = np.array([row[:-2] for row in frows])

    blowup_t = None
    if res.status == TERM_BLOWUP:
        blowup_t = _estimate_blowup_time(norm_history)
    stats = IntegrationStats(
        n_steps=res.n_steps,
        n_rejected=res.n_rejected,
        min_step=res.min_step,
        max_step=res.max_step,
        blowup_time_estimate=blowup_t,
    )
    termination = TERM_UNDERFLOW if res.status == STATUS_STEP_UNDERFLOW else res.status
    traj = FlowTrajectory(
        times=np.array(times),
        states=states,
        derivs=derivs,
        c=cs,
        tau=taus,
        system=system,
        strategy=system.strategy,
        termination=termination,
        stats=stats,
        notes=tuple(drift_message),
    )
    if termination == _TERM_DRIFT and drift_raises:
        raise ValidityDriftError(drift_message[0], traj)
    return traj


def _check_strategy_start(mu: BracketTensor, strategy: Normalization) -> None:
    if strategy.kind == "ricci-norm":
        raise NormalizationError(
            "ricci-norm has no pointwise rate; integrate unnormalized and "
            "apply rescale_to_ricci_norm"
        )
    if strategy.kind == "scalar-curvature":
        rep = curvature_pieces(mu)
        if abs(rep.R) < 1e-12:
            raise NormalizationError(
                "scalar-curvature normalization needs R(mu0) != 0"
            )
    if strategy.kind == "bracket-norm" and float(np.sum(mu.mu_p**2)) == 0.0:
        raise NormalizationError("bracket-norm normalization needs mu_p(0) != 0")
    if strategy.kind == "custom" and strategy.rate_fn is None:
        raise NormalizationError("custom normalization needs a rate function")


def integrate(
    point: HomogeneousPoint,
    strategy: Normalization = UNNORMALIZED,
    t_span: tuple[float, float] = (0.0, 1.0),
    *,
    rtol: float = 1e-9,
    atol: float = 1e-12,
    samples: int = 200,
    events: EventConfig = EventConfig(),
    max_step: float | None = None,
    drift_raises: bool = True,
) -> FlowTrajectory:
    """Integrate the (normalized) bracket flow from a validated point.

    Backward runs use a decreasing t_span; the trajectory then carries
    strictly decreasing sample times.
    """
    point.require_valid()
    _check_strategy_start(point.bracket, strategy)
    system = TensorFlowSystem(point, strategy)
    return _run_flow(system, t_span, rtol, atol, samples, events, max_step, drift_raises)


def integrate_reduced(
    family,
    params0,
    strategy: Normalization = UNNORMALIZED,
    t_span: tuple[float, float] = (0.0, 1.0),
    *,
    rtol: float = 1e-9,
    atol: float = 1e-12,
    samples: int = 200,
    events: EventConfig = EventConfig(),
    max_step: float | None = None,
) -> FlowTrajectory:
    """Integrate the reduced parameter-space flow of a catalog family."""
    if strategy.kind == "ricci-norm":
        raise NormalizationError(
            "ricci-norm has no pointwise rate; integrate unnormalized and "
            "apply rescale_to_ricci_norm"
        )
    system = ReducedFlowSystem(family, params0, strategy)
    return _run_flow(system, t_span, rtol, atol, samples, events, max_step, True)


# ---------------------------------------------------------------------------
# Metric-side Ricci flow.


@dataclass(frozen=True, eq=False)
class MetricState:
    """Inner product <P., .> relative to the fixed one; P symmetric positive."""

    P: np.ndarray


def _sym_sqrt(p: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Symmetric positive square root and its inverse."""
    w, v = np.linalg.eigh(p)
    if w.min() <= 0:
        raise ValueError("metric operator must be positive definite")
    sq = np.sqrt(w)
    return (v * sq) @ v.T, (v / sq) @ v.T


def _metric_compat_check(mu0: BracketTensor, p: np.ndarray, tol: float) -> None:
    for z in range(mu0.q):
        a = mu0.ad_iso_p(z)
        if np.linalg.norm(p @ a - a @ p) > tol * (1.0 + np.linalg.norm(p)):
            raise CompatibilityError(
                "inner product is not invariant under the isotropy operators"
            )


def metric_ricci(p: np.ndarray, mu0: BracketTensor) -> np.ndarray:
    """Ricci operator of the inner product <P., .> on the fixed space.

    Uses the symmetric square root h of P as a gauge: the point moved by
    diag(I, h) has the fixed inner product, and its Ricci operator conjugates
    back by h.
    """
    hs, hs_inv = _sym_sqrt(p)
    d = mu0.dim
    q = mu0.q
    h = np.eye(d)
    h[q:, q:] = hs
    lam = _core.gl_action(mu0, h)
    return hs_inv @ ricci_operator(lam) @ hs


def metric_rhs(state: MetricState, point0: HomogeneousPoint, tol: float = 1e-8) -> np.ndarray:
    """Tangent -2 P Ric(<P., .>) of the metric-side flow; symmetric."""
    point0.require_valid()
    mu0 = point0.bracket
    p = np.asarray(state.P, dtype=float)
    _metric_compat_check(mu0, p, tol)
    hs, _ = _sym_sqrt(p)
    d = mu0.dim
    q = mu0.q
    h = np.eye(d)
    h[q:, q:] = hs
    lam = _core.gl_action(mu0, h)
    return -2.0 * hs @ ricci_operator(lam) @ hs


@dataclass(frozen=True, eq=False)
class MetricTrajectory:
    times: np.ndarray
    P: np.ndarray
    derivs: np.ndarray
    point0: HomogeneousPoint
    termination: str
    stats: IntegrationStats

    @property
    def n(self) -> int:
        return self.P.shape[1]

    def interpolator(self) -> HermitePath:
        m = self.P.shape[0]
        return HermitePath(
            self.times, self.P.reshape(m, -1), self.derivs.reshape(m, -1)
        )


def _pack_sym(p: np.ndarray) -> np.ndarray:
    n = p.shape[0]
    iu = np.triu_indices(n)
    return p[iu]


def _unpack_sym(n: int, y: np.ndarray) -> np.ndarray:
    iu = np.triu_indices(n)
    p = np.zeros((n, n))
    p[iu] = y
    p = p + p.T - np.diag(np.diag(p))
    return p


def integrate_metric(
    point0: HomogeneousPoint,
    t_span: tuple[float, float],
    *,
    p0: np.ndarray | None = None,
    rtol: float = 1e-9,
    atol: float = 1e-12,
    samples: int = 200,
    max_step: float | None = None,
    blowup_norm: float = 1e8,
) -> MetricTrajectory:
    """Integrate dP/dt = -2 P Ric(<P., .>) from P(0) = I (or a given P0)."""
    point0.require_valid()
    mu0 = point0.bracket
    n = mu0.n
    p_init = np.eye(n) if p0 is None else np.asarray(p0, dtype=float)
    _metric_compat_check(mu0, p_init, 1e-8)

    t0, t1 = float(t_span[0]), float(t_span[1])
    if t1 == t0:
        raise ValueError("t_span must be nondegenerate")
    direction = 1.0 if t1 > t0 else -1.0
    t_grid = np.linspace(t0, t1, samples)
    s_grid = np.abs(t_grid - t0)

    d = mu0.dim
    q = mu0.q

    def rhs(s, y):
        p = _unpack_sym(n, y)
        hs, _ = _sym_sqrt(p)
        h = np.eye(d)
        h[q:, q:] = hs
        lam = _core.gl_action(mu0, h)
        dp = -2.0 * hs @ ricci_operator(lam) @ hs
        return direction * _pack_sym(dp)

    def callback(s, y, f, h):
        p = _unpack_sym(n, y)
        w = np.linalg.eigvalsh(p)
        if w.min() <= 0:
            return "metric-degenerate"
        if np.linalg.norm(p) > blowup_norm:
            return TERM_BLOWUP
        return None

    res = solve_rk54(
        rhs,
        0.0,
        abs(t1 - t0),
        _pack_sym(p_init),
        rtol=rtol,
        atol=atol,
        max_step=np.inf if max_step is None else max_step,
        sample_times=s_grid,
        step_callback=callback,
    )
    times = list(t_grid[: len(res.sample_t)])
    mats = [_unpack_sym(n, y) for y in res.sample_y]
    dmats = [_unpack_sym(n, direction * f) for f in res.sample_f]
    if res.status != STATUS_REACHED_END and (
        not times or res.t > (res.sample_t[-1] if res.sample_t else -1.0)
    ):
        times.append(t0 + direction * res.t)
        mats.append(_unpack_sym(n, res.y))
        dmats.append(_unpack_sym(n, direction * res.f))
    stats = IntegrationStats(res.n_steps, res.n_rejected, res.min_step, res.max_step)
    termination = res.status if res.status != STATUS_STEP_UNDERFLOW else TERM_UNDERFLOW
    return MetricTrajectory(
        times=np.array(times),
        P=np.array(mats),
        derivs=np.array(dmats),
        point0=point0,
        termination=termination,
        stats=stats,
    )


# ---------------------------------------------------------------------------
# Gauge ODEs (the time-dependent equivalence maps).


@dataclass(frozen=True, eq=False)
class GaugeRecord:
    """Sampled gauge h(t) with h(0) = I, solving one of the two gauge ODEs."""

    times: np.ndarray
    h: np.ndarray
    side: str

    def htt_h(self, i: int) -> np.ndarray:
        return self.h[i].T @ self.h[i]

    def pushforward(self, mu0: BracketTensor, i: int) -> BracketTensor:
        d = mu0.dim
        q = mu0.q
        hfull = np.eye(d)
        hfull[q:, q:] = self.h[i]
        return _core.gl_action(mu0, hfull)


def integrate_gauge(
    traj,
    side: str = "bracket",
    *,
    rtol: float = 1e-10,
    atol: float = 1e-13,
) -> GaugeRecord:
    """Integrate the gauge ODE along a stored trajectory.

    side='bracket': dh/dt = -(Ric_mu(t) + r(t) I) h over a FlowTrajectory.
    side='metric':  dh/dt = -h Ric(<P(t)., .>) over a MetricTrajectory.
    The underlying trajectory is interpolated with cubic Hermite polynomials
    built from its stored derivatives.
    """
    if side not in ("bracket", "metric"):
        raise ValueError("side must be 'bracket' or 'metric'")
    times = traj.times
    if len(times) < 2:
        raise ValueError("trajectory too short for gauge reconstruction")
    t0 = float(times[0])
    t1 = float(times[-1])
    direction = 1.0 if t1 > t0 else -1.0
    path = traj.interpolator()

    if side == "bracket":
        n = traj.system.n if hasattr(traj.system, "n") else traj.bracket_at(0).n
        system = traj.system
        normalized = traj.strategy.kind != "none"

        def ric_of(t):
            core = path(t)
            mu = system.bracket(core)
            ric = ricci_operator(mu)
            if normalized:
                _, r = system.tangent(core)
                ric = ric + r * np.eye(n)
            return ric

        def rhs(s, y):
            t = t0 + direction * s
            h = y.reshape(n, n)
            return direction * (-(ric_of(t) @ h)).ravel()

    else:
        mu0 = traj.point0.bracket
        n = mu0.n

        def rhs(s, y):
            t = t0 + direction * s
            p = path(t).reshape(n, n)
            h = y.reshape(n, n)
            return direction * (-(h @ metric_ricci(p, mu0))).ravel()

    s_grid = np.abs(times - t0)
    res = solve_rk54(
        rhs,
        0.0,
        abs(t1 - t0),
        np.eye(n).ravel(),
        rtol=rtol,
        atol=atol,
        sample_times=s_grid,
    )
    if res.status != STATUS_REACHED_END:
        raise RuntimeError(f"gauge integration failed: {res.status}")
    hs = np.array([y.reshape(n, n) for y in res.sample_y])
    return GaugeRecord(times=times[: len(hs)], h=hs, side=side)


# ---------------------------------------------------------------------------
# Reparametrization between unnormalized and normalized solutions.


def _require_unnormalized_forward(traj: FlowTrajectory) -> None:
    if traj.strategy.kind != "none":
        raise ValueError("reparametrization expects an unnormalized source trajectory")
    if traj.is_backward:
        raise ValueError("reparametrization expects a forward source trajectory")


_AUTO_HORIZON = 100.0


def _scaling_ode(rhs, callback, horizon, tau0, tau_max, rtol, atol, samples):
    """Two-phase solve of the (c, tau) system: find the reachable horizon,
    then rerun on a uniform sample grid over it.

    The probe's stopping step may overshoot tau_max, so the final horizon is
    backed off along tau' to land on the source boundary; otherwise the last
    samples would sit at clamped tau and spoil finite differencing there.
    """
    probe = solve_rk54(
        rhs,
        0.0,
        horizon,
        np.array([1.0, tau0]),
        rtol=rtol,
        atol=atol,
        step_callback=callback,
    )
    t_star = probe.t if probe.status != STATUS_REACHED_END else horizon
    if probe.status == "tau-exhausted":
        overshoot = float(probe.y[1]) - tau_max
        tau_rate = float(probe.f[1])
        if overshoot > 0 and tau_rate > 0:
            t_star -= overshoot / tau_rate
    if t_star <= 0:
        raise ValueError("reparametrized range too short to sample")
    t_grid = np.linspace(0.0, t_star, samples)
    res = solve_rk54(
        rhs,
        0.0,
        t_star,
        np.array([1.0, tau0]),
        rtol=rtol,
        atol=atol,
        sample_times=t_grid,
    )
    ts = list(res.sample_t)
    ys = list(res.sample_y)
    if res.t > (ts[-1] if ts else -1.0):
        ts.append(res.t)
        ys.append(res.y)
    if len(ts) < 2:
        raise ValueError("reparametrized range too short to sample")
    return probe.status, ts, ys, res


def reparametrize(
    traj: FlowTrajectory,
    strategy: Normalization,
    *,
    t_end: float | None = None,
    samples: int = 200,
    rtol: float = 1e-10,
    atol: float = 1e-13,
) -> FlowTrajectory:
    """Build the normalized solution c(t) . mu(tau(t)) from an unnormalized run.

    Solves c' = r c, tau' = c^2 with the source trajectory interpolated in
    tau.  With an explicit t_end, running out of source range raises; with
    t_end=None the output covers what the source supports, stopping early
    when the normalized bracket collapses to zero (tau stalling short of the
    source end while the scaling dies, which is reported in the notes).
    """
    _require_unnormalized_forward(traj)
    path = traj.interpolator()
    tau0 = float(traj.times[0])
    tau_max = float(traj.times[-1])
    system = traj.system

    def scaled_bracket(cval, tau):
        tau = float(min(max(tau, tau0), tau_max))
        return rescale(cval, system.bracket(path(tau)))

    def _pp_norm(mu: BracketTensor) -> float:
        # The isotropy rows never rescale, so collapse is measured on the
        # evolving p x p components only.
        p2, k2, _ = _core.component_norms(mu)
        return float(np.sqrt(p2 + k2))

    pp0 = _pp_norm(traj.bracket_at(0))

    def rhs(t, y):
        cval, tau = y
        r = normalization_rate(scaled_bracket(cval, tau), strategy)
        return np.array([r * cval, cval * cval])

    def callback(t, y, f, h):
        cval, tau = y
        if tau >= tau_max - 1e-12 * max(1.0, abs(tau_max)):
            return "tau-exhausted"
        if _pp_norm(scaled_bracket(cval, tau)) < 1e-9 * max(pp0, 1.0):
            return "zero-scale"
        return None

    horizon = _AUTO_HORIZON if t_end is None else float(t_end)
    status, ts, ys, res = _scaling_ode(
        rhs, callback, horizon, tau0, tau_max, rtol, atol, samples
    )
    if t_end is not None and status == "tau-exhausted":
        raise ValueError(f"tau leaves the available source range before t_end={t_end}")

    notes: list[str] = []
    termination = TERM_REACHED_END
    final_c, final_tau = float(ys[-1][0]), float(ys[-1][1])
    if status == "zero-scale" or (
        final_tau < tau_max - 1e-6 * max(1.0, abs(tau_max))
        and _pp_norm(scaled_bracket(final_c, final_tau)) < 1e-8 * max(pp0, 1.0)
    ):
        notes.append(
            "normalized bracket collapsed to zero while tau stalled at "
            f"{final_tau:.6g} < {tau_max:.6g}"
        )
        termination = TERM_CONVERGED

    out_system = TensorFlowSystem(_core.validate_point(traj.bracket_at(0)), strategy)
    out_states, out_derivs, out_c, out_tau = [], [], [], []
    for y in ys:
        cval, tau = float(y[0]), float(min(max(y[1], tau0), tau_max))
        mu_r = scaled_bracket(cval, tau)
        core = pack_state(mu_r)
        dcore, _ = out_system.tangent(core)
        out_states.append(core)
        out_derivs.append(dcore)
        out_c.append(cval)
        out_tau.append(tau)

    stats = IntegrationStats(res.n_steps, res.n_rejected, res.min_step, res.max_step)
    return FlowTrajectory(
        times=np.array(ts),
        states=np.array(out_states),
        derivs=np.array(out_derivs),
        c=np.array(out_c),
        tau=np.array(out_tau),
        system=out_system,
        strategy=strategy,
        termination=termination,
        stats=stats,
        notes=tuple(notes),
    )


def rescale_to_ricci_norm(
    traj: FlowTrajectory,
    *,
    samples: int = 200,
    rtol: float = 1e-10,
    atol: float = 1e-13,
) -> FlowTrajectory:
    """Reparametrize an unnormalized run so tr(Ric^2) stays constant.

    The scaling is c(tau) = (tr Ric_0^2 / tr Ric(mu(tau))^2)^(1/4) and the
    normalized time solves tau' = c(tau)^2.  Raises on a flat start.
    """
    _require_unnormalized_forward(traj)
    path = traj.interpolator()
    system = traj.system
    tau0 = float(traj.times[0])
    tau_max = float(traj.times[-1])

    ric0 = ricci_operator(traj.bracket_at(0))
    tr0 = float(np.sum(ric0 * ric0))
    if tr0 < 1e-24:
        raise NormalizationError("ricci-norm rescaling needs a nonflat start")

    def c_of_tau(tau):
        tau = min(max(tau, tau0), tau_max)
        ric = ricci_operator(system.bracket(path(tau)))
        tr = float(np.sum(ric * ric))
        if tr <= 0:
            raise NormalizationError("trajectory reached a flat bracket")
        return (tr0 / tr) ** 0.25

    # Same (c, tau)-state layout as reparametrize; c rides along for records.
    def rhs(t, y):
        tau = float(y[1])
        cval = c_of_tau(tau)
        return np.array([0.0, cval * cval])

    def callback(t, y, f, h):
        if y[1] >= tau_max - 1e-12 * max(1.0, abs(tau_max)):
            return "tau-exhausted"
        return None

    _, ts, ys, res = _scaling_ode(
        rhs, callback, _AUTO_HORIZON, tau0, tau_max, rtol, atol, samples
    )

    out_system = TensorFlowSystem(_core.validate_point(traj.bracket_at(0)), RICCI_NORM)
    out_states, out_derivs, out_c, out_tau = [], [], [], []
    for y in ys:
        tau = float(min(max(y[1], tau0), tau_max))
        cval = c_of_tau(tau)
        mu_r = rescale(cval, system.bracket(path(tau)))
        core = pack_state(mu_r)
        out_states.append(core)
        out_derivs.append(_ricci_norm_tangent(mu_r))
        out_c.append(cval)
        out_tau.append(tau)

    stats = IntegrationStats(res.n_steps, res.n_rejected, res.min_step, res.max_step)
    return FlowTrajectory(
        times=np.array(ts),
        states=np.array(out_states),
        derivs=np.array(out_derivs),
        c=np.array(out_c),
        tau=np.array(out_tau),
        system=out_system,
        strategy=RICCI_NORM,
        termination=TERM_REACHED_END,
        stats=stats,
    )


def ricci_norm_rate(mu: BracketTensor) -> float:
    """Pointwise rate keeping tr(Ric^2) constant along the normalized flow.

    Derived from the evolution equation of Ric: the unnormalized part D0
    gives d tr(Ric^2)/dt = 2 tr(Ric D0) + 4 r tr(Ric^2) = 0.
    """
    rep = curvature_pieces(mu)
    ric = rep.Ric
    mu_p = mu.mu_p
    ad_h = np.einsum("i,ijk->kj", rep.H, mu_p)
    ric_h = ric @ rep.H
    ad_rich = np.einsum("i,ijk->kj", ric_h, mu_p)
    d0 = (
        -0.5 * laplacian_op(mu_p, ric)
        - 0.5 * (rep.B @ ric + ric @ rep.B)
        - (ad_rich + ad_rich.T)
        - 0.5 * ((ad_h @ ric - ric @ ad_h) + (ad_h @ ric - ric @ ad_h).T)
    )
    tr2 = float(np.sum(ric * ric))
    if tr2 <= 0:
        raise NormalizationError("ricci-norm rate undefined at a flat bracket")
    return -float(np.sum(ric * d0)) / (2.0 * tr2)


def _ricci_norm_tangent(mu_r: BracketTensor) -> np.ndarray:
    r = ricci_norm_rate(mu_r)
    dck, dcp = _tangent_components(mu_r, ricci_operator(mu_r), r)
    d = mu_r.dim
    q = mu_r.q
    dc = np.zeros((d, d, d))
    dc[q:, q:, :q] = dck
    dc[q:, q:, q:] = dcp
    return pack_array(dc)


# ---------------------------------------------------------------------------
# Numerical verification of the flow equivalence.


@dataclass(frozen=True, eq=False)
class EquivalenceReport:
    """Max deviations between bracket-side and metric-side solutions."""

    times: np.ndarray
    max_bracket_dev: float
    max_metric_dev: float
    iso_drift: float
    per_side: dict
    partial: bool

    def as_dict(self) -> dict:
        return {
            "t_start": float(self.times[0]),
            "t_final": float(self.times[-1]),
            "max_bracket_dev": self.max_bracket_dev,
            "max_metric_dev": self.max_metric_dev,
            "iso_drift": self.iso_drift,
            "per_side": self.per_side,
            "partial": self.partial,
        }


def equivalence_report(
    point0: HomogeneousPoint,
    t_span: tuple[float, float],
    *,
    rtol: float = 1e-9,
    atol: float = 1e-12,
    samples: int = 601,
    gauge_rtol: float = 1e-10,
) -> EquivalenceReport:
    """Integrate bracket flow, metric flow and both gauge ODEs, and compare.

    Checks that the gauge pushforward of the initial bracket reproduces the
    bracket flow and that h^t h reproduces the metric flow; both checks are
    gauge-invariant, so either gauge ODE must pass them.
    """
    point0.require_valid()
    mu0 = point0.bracket
    traj = integrate(point0, UNNORMALIZED, t_span, rtol=rtol, atol=atol, samples=samples)
    mtraj = integrate_metric(point0, t_span, rtol=rtol, atol=atol, samples=samples)

    m = min(traj.n_samples, mtraj.P.shape[0])
    partial = (
        traj.termination != TERM_REACHED_END or mtraj.termination != TERM_REACHED_END
    )
    # Restrict to the common covered sample grid.
    times = traj.times[:m]

    per_side = {}
    worst_mu = 0.0
    worst_p = 0.0
    for side, src in (("bracket", traj), ("metric", mtraj)):
        gauge = integrate_gauge(src, side, rtol=gauge_rtol)
        mg = min(m, gauge.h.shape[0])
        dev_mu = 0.0
        dev_p = 0.0
        for i in range(mg):
            pushed = gauge.pushforward(mu0, i)
            dev_mu = max(
                dev_mu,
                float(np.sqrt(np.sum((pushed.c - traj.bracket_at(i).c) ** 2))),
            )
            dev_p = max(dev_p, float(np.linalg.norm(gauge.htt_h(i) - mtraj.P[i])))
        per_side[side] = {"bracket_dev": dev_mu, "metric_dev": dev_p}
        worst_mu = max(worst_mu, dev_mu)
        worst_p = max(worst_p, dev_p)

    iso0 = mu0.iso_part()
    iso_drift = 0.0
    for i in range(m):
        iso_drift = max(
            iso_drift, float(np.abs(traj.bracket_at(i).iso_part() - iso0).max())
        )

    return EquivalenceReport(
        times=times,
        max_bracket_dev=worst_mu,
        max_metric_dev=worst_p,
        iso_drift=iso_drift,
        per_side=per_side,
        partial=partial,
    )
