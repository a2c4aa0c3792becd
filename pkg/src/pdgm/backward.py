"""Discretised backward samplers: quadratic time grid and splitting schemes.

Each forward process gets its own one-step kernel on a time grid
0 = t_0 < ... < t_N = T_f:

* zig-zag      -- drift / frozen-rate coordinate flips / drift;
* randomised HMC -- backward rotation / frozen-rate refresh / rotation;
* bouncy particle -- half refresh / drift / bounce / drift / half refresh.

Rates are frozen at the midpoint state, so every flip or refresh event in a
step happens with probability 1 - exp(-delta * rate), which stays in [0, 1]
for capped rates.  Exact stationary characteristics (ratio one, standard
normal velocity density) are available as stubs; with those, all schemes
preserve the Gaussian base law up to the O(delta^2) splitting error, which
is the central correctness property exercised by the tests.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import pdmp
from .density import (
    CondDensityModel,
    SaturationCounter,
    backward_refresh_rate,
    log_standard_normal,
)
from .errors import ModelSpecMismatch
from .ratio import RatioModel

INIT_MODES = ("base", "learned")


@dataclass(frozen=True)
class TimeGrid:
    t_f: float
    deltas: np.ndarray

    def __post_init__(self):
        deltas = np.asarray(self.deltas, dtype=float)
        object.__setattr__(self, "deltas", deltas)
        if deltas.size and (np.any(deltas <= 0) or abs(deltas.sum() - self.t_f) > 1e-12):
            raise ValueError("step sizes must be positive and sum to the horizon")

    @property
    def n_steps(self) -> int:
        return self.deltas.size

    def times(self) -> np.ndarray:
        """Cumulative grid 0 = t_0 <= ... <= t_N = T_f."""
        return np.concatenate(([0.0], np.cumsum(self.deltas)))


def time_grid_quadratic(t_f: float, n: int) -> TimeGrid:
    """delta_n = T_f ((n/N)^2 - ((n-1)/N)^2); last step absorbs rounding."""
    if n < 1:
        return TimeGrid(t_f, np.zeros(0))
    k = np.arange(1, n + 1, dtype=float)
    deltas = t_f * ((k / n) ** 2 - ((k - 1) / n) ** 2)
    deltas[-1] = t_f - deltas[:-1].sum()
    return TimeGrid(float(t_f), deltas)


@dataclass(frozen=True)
class BackwardConfig:
    grid: TimeGrid
    n_samples: int
    seed: int = 0
    init_mode: str = "base"  # "base" = pi x nu, "learned" = pi x p(.|x, T_f)
    reevaluate_ratios: bool = False  # re-query the ratio net after each intra-step flip

    def __post_init__(self):
        if self.init_mode not in INIT_MODES:
            raise ValueError(f"unknown init mode {self.init_mode!r}")


# ---------------------------------------------------------------------------
# Exact-characteristic stubs (oracles for tests and for the bound machinery)


@dataclass(frozen=True)
class ConstantRatio:
    """Ratio model stub returning the same value for every coordinate."""

    spec: pdmp.ProcessSpec
    value: float = 1.0

    def ratios(self, x, v, t):
        x = np.atleast_2d(x)
        return np.full((x.shape[0], self.spec.d), self.value)


@dataclass(frozen=True)
class StandardNormalVelocity:
    """Exact stationary velocity law for bps/rhmc: p(v | x, t) = nu(v)."""

    spec: pdmp.ProcessSpec
    rate_cap: float = 1e4
    saturation: SaturationCounter = field(default_factory=SaturationCounter, compare=False)

    def log_density(self, v, x, t):
        return log_standard_normal(v)

    def sample_velocity(self, x, t, rng):
        x = np.atleast_2d(x)
        return rng.standard_normal(x.shape)


# ---------------------------------------------------------------------------
# Per-process steps.  All operate on (n, d) batches in place-free style and
# take the *forward* time t_mid at the frozen midpoint.


@dataclass
class StepStats:
    model_evals: int = 0
    saturations: int = 0


def _flip_rate_at(spec, x, v_current, i):
    """Forward flip rate of coordinate i evaluated at the flipped velocity."""
    g = x[:, i] if spec.gaussian else np.zeros(x.shape[0])
    return np.maximum(-v_current[:, i] * g, 0.0) + spec.lambda_r


def djd_zzp_step(model, x, v, delta, t_mid, rng, reevaluate=False,
                 stats: StepStats | None = None):
    """Drift-jump-drift step for the backward zig-zag process.

    The ratio vector is evaluated once at the pre-flip velocity; coordinates
    are then processed in ascending order, the flip rate always using the
    current velocity (set ``reevaluate`` to re-query the model after a flip).
    """
    spec = model.spec
    x_mid = x - 0.5 * delta * v
    s = model.ratios(x_mid, v, t_mid)
    if stats:
        stats.model_evals += 1
    v_new = v.copy()
    d = x.shape[1]
    for i in range(d):
        lam = _flip_rate_at(spec, x_mid, v_new, i)
        p_flip = -np.expm1(-delta * s[:, i] * lam)
        flip = rng.random(x.shape[0]) < p_flip
        v_new[flip, i] *= -1.0
        if reevaluate and i + 1 < d and np.any(flip):
            s = model.ratios(x_mid, v_new, t_mid)
            if stats:
                stats.model_evals += 1
    return x_mid - 0.5 * delta * v_new, v_new


def _backward_flow(spec, x, v, s):
    """Reversed deterministic motion for duration s >= 0."""
    if spec.kind == "rhmc" and spec.gaussian:
        return pdmp.flow_hamiltonian(x, v, -s)
    return pdmp.flow_linear(x, v, -s)


def _capped_refresh_ratio(model, v, x, t_fwd, stats):
    log_ratio = log_standard_normal(v) - model.log_density(v, x, t_fwd)
    cap = getattr(model, "rate_cap", 1e4)
    sat = log_ratio > np.log(cap)
    if stats:
        stats.saturations += int(np.sum(sat))
    if hasattr(model, "saturation"):
        model.saturation.add(int(np.sum(sat)))
    return np.exp(np.minimum(log_ratio, np.log(cap)))


def djd_rhmc_step(model, x, v, delta, t_mid, rng, stats: StepStats | None = None):
    """Drift-jump-drift step for the backward randomised HMC."""
    spec = model.spec
    x_mid, v_mid = _backward_flow(spec, x, v, 0.5 * delta)
    s_bar = _capped_refresh_ratio(model, v_mid, x_mid, t_mid, stats)
    if stats:
        stats.model_evals += 1
    rate = s_bar * spec.lambda_r
    tau = np.where(rate > 0, rng.exponential(size=x.shape[0]) / np.where(rate > 0, rate, 1.0), np.inf)
    refresh = tau <= delta
    if np.any(refresh):
        v_mid = v_mid.copy()
        v_mid[refresh] = model.sample_velocity(x_mid[refresh], t_mid, rng)
        if stats:
            stats.model_evals += 1
    return _backward_flow(spec, x_mid, v_mid, 0.5 * delta)


def _half_refresh(model, x, v, t_fwd, half_delta, rng, stats):
    spec = model.spec
    s2 = _capped_refresh_ratio(model, v, x, t_fwd, stats)
    if stats:
        stats.model_evals += 1
    p = -np.expm1(-spec.lambda_r * s2 * half_delta)
    refresh = rng.random(x.shape[0]) < p
    if np.any(refresh):
        v = v.copy()
        v[refresh] = model.sample_velocity(x[refresh], t_fwd, rng)
        if stats:
            stats.model_evals += 1
    return v


def rdbdr_bps_step(model, x, v, delta, t_start, t_mid, t_end, rng,
                   stats: StepStats | None = None):
    """Refresh-drift-bounce-drift-refresh step for the backward bouncy particle.

    ``t_start``/``t_mid``/``t_end`` are the *forward* times of the step
    endpoints and midpoint (t_start > t_mid > t_end on the backward pass).
    """
    spec = model.spec
    v1 = _half_refresh(model, x, v, t_start, 0.5 * delta, rng, stats)
    x_mid = x - 0.5 * delta * v1
    if spec.gaussian:
        n2 = np.sum(x_mid * x_mid, axis=1)
        ok = n2 >= 1e-24
        rv = v1.copy()
        if np.any(ok):
            coef = 2.0 * np.sum(v1 * x_mid, axis=1) / np.where(ok, n2, 1.0)
            rv[ok] = (v1 - coef[:, None] * x_mid)[ok]
        lam = np.where(ok, np.maximum(np.sum(rv * x_mid, axis=1), 0.0), 0.0)
        log_s1 = model.log_density(rv, x_mid, t_mid) - model.log_density(v1, x_mid, t_mid)
        cap = getattr(model, "rate_cap", 1e4)
        rate = np.minimum(np.exp(np.minimum(log_s1, np.log(cap))) * lam, cap)
        if stats:
            stats.model_evals += 2
            stats.saturations += int(np.sum(np.exp(log_s1) * lam > cap))
        bounce = rng.random(x.shape[0]) < -np.expm1(-delta * rate)
        v1 = np.where(bounce[:, None], rv, v1)
    x_next = x_mid - 0.5 * delta * v1
    v_next = _half_refresh(model, x_next, v1, t_end, 0.5 * delta, rng, stats)
    return x_next, v_next


# ---------------------------------------------------------------------------
# Whole-trajectory driver


def _check_model(model, spec):
    if getattr(model, "spec", None) is None or model.spec.kind != spec.kind:
        raise ModelSpecMismatch(
            f"model trained for {getattr(getattr(model, 'spec', None), 'kind', '?')!r} "
            f"cannot drive a {spec.kind!r} backward run"
        )


def initialize_backward(model, spec, cfg: BackwardConfig, rng):
    """Initial (x, v) draw: pi x nu, or pi x p(.|x, T_f) for bps/rhmc."""
    n = cfg.n_samples
    x = rng.standard_normal((n, spec.d))
    if cfg.init_mode == "learned":
        if spec.kind == "zzp":
            raise ModelSpecMismatch("learned initialisation is unsupported for zzp")
        v = model.sample_velocity(x, spec.t_f, rng)
    else:
        v = spec.draw_velocity(rng, n)
    return x, v


def run_backward(model, spec: pdmp.ProcessSpec, cfg: BackwardConfig, rng=None):
    """Run the per-process splitting scheme over the grid.

    Returns (x, v, stats): final positions/velocities of ``cfg.n_samples``
    chains plus model-evaluation and saturation counters.
    """
    _check_model(model, spec)
    if rng is None:
        from .streams import stream

        rng = stream(cfg.seed)
    sched = spec.schedule
    stats = StepStats()
    x, v = initialize_backward(model, spec, cfg, rng)
    # run on the warped clock so a non-unit schedule reduces to unit rates
    s_f = float(sched.warp(spec.t_f))
    scale = s_f / spec.t_f
    deltas = cfg.grid.deltas * scale if not sched.is_unit else cfg.grid.deltas
    t_n = 0.0
    for k in range(deltas.size):
        delta = float(deltas[k])
        t_next = t_n + delta
        t_mid = float(sched.unwarp(s_f - t_n - 0.5 * delta))
        if spec.kind == "zzp":
            x, v = djd_zzp_step(model, x, v, delta, t_mid, rng,
                                reevaluate=cfg.reevaluate_ratios, stats=stats)
        elif spec.kind == "rhmc":
            x, v = djd_rhmc_step(model, x, v, delta, t_mid, rng, stats=stats)
        else:
            t_start = float(sched.unwarp(s_f - t_n))
            t_end = float(sched.unwarp(s_f - t_next))
            x, v = rdbdr_bps_step(model, x, v, delta, t_start, t_mid, t_end,
                                  rng, stats=stats)
        t_n = t_next
    return x, v, stats
