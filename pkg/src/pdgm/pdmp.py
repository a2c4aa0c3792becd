"""Event-driven forward simulation for three piecewise deterministic processes.

Supported processes (all with stationary law pi (x) nu (v)):

* ``zzp``  -- per-coordinate velocity flips in {-1,+1}^d, linear flow;
* ``bps``  -- hyperplane reflections plus velocity refreshments, linear flow,
  Gaussian velocities;
* ``rhmc`` -- velocity refreshments only, rotational (Hamiltonian) flow.

The position potential is either the standard Gaussian (grad psi(x) = x) or
identically zero (free transport, refreshments only).  Both admit exact
event-time inversion, so simulation is exact in law: no thinning, no
discretisation.  A piecewise-constant schedule ``beta`` rescales flow and
rates jointly; it is handled by running the homogeneous process on the
warped clock s(t) = int_0^t beta(u) du.
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateGradient, InvalidState

KINDS = ("zzp", "bps", "rhmc")
POTENTIALS = ("gaussian", "zero")

_DEGENERATE_NORM2 = 1e-24  # |x|^2 below this skips a BPS reflection


@dataclass(frozen=True)
class State:
    """Position/velocity pair.  ZZP velocities must lie in {-1,+1}^d."""

    x: np.ndarray
    v: np.ndarray

    def __post_init__(self):
        x = np.atleast_1d(np.asarray(self.x, dtype=float))
        v = np.atleast_1d(np.asarray(self.v, dtype=float))
        if x.shape != v.shape or x.ndim != 1 or x.size < 1:
            raise InvalidState(f"position shape {x.shape} != velocity shape {v.shape}")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "v", v)

    @property
    def d(self) -> int:
        return self.x.size


@dataclass(frozen=True)
class Schedule:
    """Piecewise-constant positive schedule over [0, T_f].

    ``pieces`` is a tuple of (breakpoint, value) pairs with strictly
    increasing breakpoints starting at 0.  The schedule acts as a clock
    change: flow and rates are both multiplied by the current value.
    """

    pieces: tuple[tuple[float, float], ...] = ((0.0, 1.0),)

    def __post_init__(self):
        pts = [float(t) for t, _ in self.pieces]
        vals = [float(b) for _, b in self.pieces]
        if not pts or pts[0] != 0.0:
            raise ValueError("schedule must start with a breakpoint at 0")
        if any(b <= a for a, b in zip(pts, pts[1:])):
            raise ValueError("schedule breakpoints must be strictly increasing")
        if any(v <= 0 for v in vals):
            raise ValueError("schedule values must be positive")
        object.__setattr__(self, "pieces", tuple(zip(pts, vals)))

    @property
    def is_unit(self) -> bool:
        return self.pieces == ((0.0, 1.0),)

    def warp(self, t):
        """Integrated schedule s(t) = int_0^t beta(u) du (vectorised)."""
        t = np.asarray(t, dtype=float)
        out = np.zeros_like(t)
        pts = [p for p, _ in self.pieces] + [np.inf]
        vals = [v for _, v in self.pieces]
        for k, val in enumerate(vals):
            lo, hi = pts[k], pts[k + 1]
            seg = np.clip(t, lo, hi) - lo
            out = out + val * seg
        return out if out.shape else float(out)

    def unwarp(self, s):
        """Inverse of :meth:`warp`."""
        s = np.asarray(s, dtype=float)
        pts = [p for p, _ in self.pieces]
        vals = [v for _, v in self.pieces]
        warped_pts = [float(self.warp(p)) for p in pts]
        out = np.full_like(s, np.nan)
        for k in range(len(pts)):
            lo_w = warped_pts[k]
            hi_w = warped_pts[k + 1] if k + 1 < len(pts) else np.inf
            sel = (s >= lo_w) & (s < hi_w) if np.isfinite(hi_w) else (s >= lo_w)
            out = np.where(sel, pts[k] + (s - lo_w) / vals[k], out)
        return out if out.shape else float(out)


@dataclass(frozen=True)
class ProcessSpec:
    """Everything that determines the forward dynamics."""

    kind: str
    d: int
    t_f: float = 5.0
    lambda_r: float = 1.0
    potential: str = "gaussian"
    beta: tuple[tuple[float, float], ...] = ((0.0, 1.0),)
    # escape hatch for tests that need lambda_r = 0 on bps/rhmc
    strict: bool = field(default=True, repr=False, compare=False)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown process kind {self.kind!r}")
        if self.potential not in POTENTIALS:
            raise ValueError(f"unknown potential {self.potential!r}")
        if self.d < 1:
            raise ValueError("d must be a positive integer")
        if self.t_f <= 0:
            raise ValueError("time horizon must be positive")
        if self.lambda_r < 0:
            raise ValueError("refreshment rate must be nonnegative")
        if self.strict and self.kind in ("bps", "rhmc") and self.lambda_r <= 0:
            raise ValueError(f"{self.kind} requires a strictly positive refreshment rate")
        object.__setattr__(self, "beta", Schedule(tuple(self.beta)).pieces)

    @property
    def schedule(self) -> Schedule:
        return Schedule(self.beta)

    @property
    def gaussian(self) -> bool:
        return self.potential == "gaussian"

    def validate_state(self, x: np.ndarray, v: np.ndarray) -> None:
        x = np.asarray(x, dtype=float)
        v = np.asarray(v, dtype=float)
        if x.shape[-1] != self.d or v.shape != x.shape:
            raise InvalidState(
                f"state shapes {x.shape}/{v.shape} incompatible with d={self.d}"
            )
        if self.kind == "zzp" and not np.all(np.abs(v) == 1.0):
            raise InvalidState("zzp velocity entries must be exactly -1 or +1")

    def draw_velocity(self, rng: np.random.Generator, n: int | None = None) -> np.ndarray:
        """Fresh velocity from nu: Unif{+-1}^d for ZZP, standard normal otherwise."""
        shape = (self.d,) if n is None else (n, self.d)
        if self.kind == "zzp":
            return rng.integers(0, 2, size=shape) * 2.0 - 1.0
        return rng.standard_normal(shape)


@dataclass(frozen=True)
class EventRecord:
    time: float
    kind: str  # "flip" | "reflect" | "refresh"
    coord: int | None
    state_after: State

    def label(self) -> str:
        if self.kind == "flip":
            return f"FLIP{self.coord}"
        return self.kind.upper()


@dataclass(frozen=True)
class Trajectory:
    spec: ProcessSpec
    initial: State
    t_end: float
    events: tuple[EventRecord, ...]
    final: State


# ---------------------------------------------------------------------------
# Flows


def flow_linear(x, v, s):
    """Constant-velocity transport: (x, v) -> (x + s v, v)."""
    x = np.asarray(x, dtype=float)
    v = np.asarray(v, dtype=float)
    s = np.asarray(s, dtype=float)
    if x.ndim > 1 and s.ndim == 1:
        s = s[:, None]
    return x + s * v, np.broadcast_to(v, x.shape).copy()


def flow_hamiltonian(x, v, s):
    """Rotation flow of the standard-Gaussian Hamiltonian.

    Forward by s: x' = x cos s + v sin s, v' = -x sin s + v cos s.
    Negative s gives the backward rotation.
    """
    x = np.asarray(x, dtype=float)
    v = np.asarray(v, dtype=float)
    c, sn = np.cos(s), np.sin(s)
    if x.ndim > 1 and np.ndim(c):
        c = np.reshape(c, np.shape(c) + (1,))
        sn = np.reshape(sn, np.shape(sn) + (1,))
    return x * c + v * sn, -x * sn + v * c


def _flow(spec: ProcessSpec, x, v, s):
    if spec.kind == "rhmc" and spec.gaussian:
        return flow_hamiltonian(x, v, s)
    return flow_linear(x, v, s)


# ---------------------------------------------------------------------------
# Rates and kernels


def _grad_potential(spec: ProcessSpec, x):
    x = np.asarray(x, dtype=float)
    return x if spec.gaussian else np.zeros_like(x)


def zzp_rate(x, v, i, spec: ProcessSpec):
    """Per-coordinate flip rate (v_i d_i psi(x))_+ + lambda_r."""
    g = _grad_potential(spec, x)
    v = np.asarray(v, dtype=float)
    return np.maximum(v[..., i] * g[..., i], 0.0) + spec.lambda_r


def zzp_rates_all(x, v, spec: ProcessSpec):
    """All d flip rates at once, shape (..., d)."""
    g = _grad_potential(spec, x)
    return np.maximum(np.asarray(v, dtype=float) * g, 0.0) + spec.lambda_r


def bps_reflection_rate(x, v, spec: ProcessSpec | None = None):
    """Reflection rate <v, grad psi(x)>_+ (zero under the flat potential)."""
    x = np.asarray(x, dtype=float)
    v = np.asarray(v, dtype=float)
    if spec is not None and not spec.gaussian:
        return np.zeros(x.shape[:-1]) if x.ndim > 1 else 0.0
    out = np.maximum(np.sum(v * x, axis=-1), 0.0)
    return out if np.ndim(out) else float(out)


def zzp_flip(v, i):
    """Negate entry i of the velocity (involution)."""
    out = np.array(v, dtype=float, copy=True)
    out[..., i] = -out[..., i]
    return out


def bps_reflect(x, v):
    """Reflect v off the hyperplane normal to grad psi(x) = x.

    Raises DegenerateGradient when |x| underflows; callers treat this as
    "skip the reflection" (a probability-zero event under continuous laws).
    """
    x = np.asarray(x, dtype=float)
    v = np.asarray(v, dtype=float)
    n2 = np.sum(x * x, axis=-1)
    if np.any(n2 < _DEGENERATE_NORM2):
        raise DegenerateGradient("potential gradient vanished at a reflection point")
    coef = 2.0 * np.sum(v * x, axis=-1) / n2
    return v - coef[..., None] * x if x.ndim > 1 else v - coef * x


# ---------------------------------------------------------------------------
# Exact event-time inversion


def invert_piecewise_linear_rate(a, b, c, e):
    """Solve int_0^t ((a + b u)_+ + c) du = e for t > 0 (vectorised).

    This is the integrated-rate form every event clock takes along the
    flows used here (flip: a = v_i x_i, b = 1; reflection: a = <v, x>,
    b = |v|^2; refreshment: a = 0, b = 0, c = lambda_r).  Returns +inf
    where the total rate is identically zero.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    c = np.asarray(c, dtype=float)
    e = np.asarray(e, dtype=float)
    a, b, c, e = np.broadcast_arrays(a, b, c, e)
    out = np.full(a.shape, np.inf)

    with np.errstate(divide="ignore", invalid="ignore"):
        # b == 0: constant rate (a)_+ + c
        flat = b == 0.0
        rate = np.maximum(a, 0.0) + c
        out = np.where(flat & (rate > 0.0), e / np.where(rate > 0, rate, 1.0), out)

        # b > 0, a >= 0: (a + c) t + b t^2 / 2 = e
        grow = (b > 0.0) & (a >= 0.0)
        disc = (a + c) ** 2 + 2.0 * b * e
        t_grow = (-(a + c) + np.sqrt(np.maximum(disc, 0.0))) / np.where(b > 0, b, 1.0)
        out = np.where(grow, t_grow, out)

        # b > 0, a < 0: dead zone of length u0 = -a/b for the linear part
        neg = (b > 0.0) & (a < 0.0)
        u0 = -a / np.where(b > 0, b, 1.0)
        lin = c * u0  # integral accumulated before the ramp wakes up
        before = neg & (c > 0.0) & (e <= lin)
        out = np.where(before, e / np.where(c > 0, c, 1.0), out)
        after = neg & ~before
        disc2 = c**2 + 2.0 * b * np.maximum(e - lin, 0.0)
        t_after = u0 + (-c + np.sqrt(np.maximum(disc2, 0.0))) / np.where(b > 0, b, 1.0)
        out = np.where(after, t_after, out)

    return out if out.shape else float(out)


def integrated_rate(a, b, c, t):
    """int_0^t ((a + b u)_+ + c) du -- test oracle for the inverter."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    c = np.asarray(c, dtype=float)
    t = np.asarray(t, dtype=float)
    a, b, c, t = np.broadcast_arrays(a, b, c, t)
    ramp = np.where(
        b == 0.0,
        np.maximum(a, 0.0) * t,
        np.where(
            a >= 0.0,
            a * t + b * t**2 / 2.0,
            np.where(b > 0, b, 1.0) * np.maximum(t + a / np.where(b != 0, b, 1.0), 0.0) ** 2 / 2.0,
        ),
    )
    out = ramp + c * t
    return out if out.shape else float(out)


# ---------------------------------------------------------------------------
# Batched advancement on the homogeneous (warped) clock


def _advance_zzp(spec, x, v, dt, rng):
    n, d = x.shape
    rem = np.array(dt, dtype=float, copy=True)
    idx = np.flatnonzero(rem > 0)
    gaussian = spec.gaussian
    while idx.size:
        xa, va = x[idx], v[idx]
        a = va * xa if gaussian else np.zeros_like(xa)
        e = rng.exponential(size=(idx.size, d))
        tau = invert_piecewise_linear_rate(a, 1.0 if gaussian else 0.0, spec.lambda_r, e)
        imin = np.argmin(tau, axis=1)
        tmin = tau[np.arange(idx.size), imin]
        step = np.minimum(tmin, rem[idx])
        x[idx] = xa + step[:, None] * va
        hit = tmin < rem[idx]
        rem[idx] = np.where(hit, rem[idx] - tmin, 0.0)
        flips = idx[hit]
        v[flips, imin[hit]] *= -1.0
        idx = flips


def _advance_bps(spec, x, v, dt, rng):
    n, d = x.shape
    rem = np.array(dt, dtype=float, copy=True)
    idx = np.flatnonzero(rem > 0)
    gaussian = spec.gaussian
    while idx.size:
        xa, va = x[idx], v[idx]
        if gaussian:
            a = np.sum(va * xa, axis=1)
            b = np.sum(va * va, axis=1)
            tau_refl = invert_piecewise_linear_rate(a, b, 0.0, rng.exponential(size=idx.size))
        else:
            tau_refl = np.full(idx.size, np.inf)
        tau_ref = (
            rng.exponential(size=idx.size) / spec.lambda_r
            if spec.lambda_r > 0
            else np.full(idx.size, np.inf)
        )
        tmin = np.minimum(tau_refl, tau_ref)
        step = np.minimum(tmin, rem[idx])
        xa = xa + step[:, None] * va
        x[idx] = xa
        hit = tmin < rem[idx]
        rem[idx] = np.where(hit, rem[idx] - tmin, 0.0)
        refl = hit & (tau_refl <= tau_ref)
        refr = hit & ~refl
        if np.any(refl):
            xr, vr = xa[refl], va[refl]
            n2 = np.sum(xr * xr, axis=1)
            ok = n2 >= _DEGENERATE_NORM2  # skip probability-zero degenerate bounces
            coef = np.where(ok, 2.0 * np.sum(vr * xr, axis=1) / np.where(ok, n2, 1.0), 0.0)
            v[idx[refl]] = vr - coef[:, None] * xr
        if np.any(refr):
            v[idx[refr]] = rng.standard_normal((int(np.sum(refr)), d))
        idx = idx[hit]


def _advance_rhmc(spec, x, v, dt, rng):
    n, d = x.shape
    rem = np.array(dt, dtype=float, copy=True)
    idx = np.flatnonzero(rem > 0)
    gaussian = spec.gaussian
    while idx.size:
        tau = (
            rng.exponential(size=idx.size) / spec.lambda_r
            if spec.lambda_r > 0
            else np.full(idx.size, np.inf)
        )
        step = np.minimum(tau, rem[idx])
        if gaussian:
            xa, va = flow_hamiltonian(x[idx], v[idx], step)
        else:
            xa, va = flow_linear(x[idx], v[idx], step)
        x[idx], v[idx] = xa, va
        hit = tau < rem[idx]
        rem[idx] = np.where(hit, rem[idx] - tau, 0.0)
        if np.any(hit):
            v[idx[hit]] = rng.standard_normal((int(np.sum(hit)), d))
        idx = idx[hit]


_ADVANCE = {"zzp": _advance_zzp, "bps": _advance_bps, "rhmc": _advance_rhmc}


def advance(spec: ProcessSpec, x: np.ndarray, v: np.ndarray, dt, rng) -> None:
    """Evolve a batch (in place) by warped durations ``dt`` on the homogeneous clock."""
    _ADVANCE[spec.kind](spec, x, v, np.broadcast_to(np.asarray(dt, float), x.shape[:1]).copy(), rng)


def sample_states_at(spec: ProcessSpec, x0, t, rng, v0=None):
    """Batched (X_t, V_t) of fresh forward runs from rows of ``x0``.

    ``t`` may be a scalar or one entry per row; ``v0`` defaults to a fresh
    draw from nu.  Returns (x, v) arrays of shape (n, d).
    """
    x = np.array(np.atleast_2d(np.asarray(x0, dtype=float)), copy=True)
    n = x.shape[0]
    v = spec.draw_velocity(rng, n) if v0 is None else np.array(np.atleast_2d(v0), dtype=float)
    spec.validate_state(x, v)
    t = np.asarray(t, dtype=float)
    if np.any(t < 0) or np.any(t > spec.t_f + 1e-12):
        raise ValueError("sample time outside [0, T_f]")
    warped = spec.schedule.warp(t)
    advance(spec, x, v, warped, rng)
    return x, v


def sample_state_at(spec: ProcessSpec, x0, v0, t, rng) -> State:
    """Single-state convenience wrapper around :func:`sample_states_at`."""
    v_init = None if (isinstance(v0, str) and v0 == "draw") else np.asarray(v0, float)[None, :]
    x, v = sample_states_at(spec, np.asarray(x0, float)[None, :], t, rng, v0=v_init)
    return State(x[0], v[0])


# ---------------------------------------------------------------------------
# Single-trajectory simulation with full event logging


def simulate_forward(spec: ProcessSpec, initial: State, t_end: float, rng) -> Trajectory:
    """Exact-in-law trajectory with every event recorded.

    Competing clocks per jump type, each inverted in closed form; the
    schedule is handled on the warped clock and event times mapped back.
    """
    if t_end > spec.t_f + 1e-12:
        raise ValueError("t_end exceeds the spec horizon")
    spec.validate_state(initial.x[None, :], initial.v[None, :])
    sched = spec.schedule
    s_end = float(sched.warp(t_end))
    x = initial.x.copy()
    v = initial.v.copy()
    s = 0.0
    events: list[EventRecord] = []
    gaussian = spec.gaussian

    while True:
        if spec.kind == "zzp":
            a = v * x if gaussian else np.zeros_like(x)
            e = rng.exponential(size=spec.d)
            tau = invert_piecewise_linear_rate(a, 1.0 if gaussian else 0.0, spec.lambda_r, e)
            i = int(np.argmin(tau))
            t_evt, kind, coord = float(tau[i]), "flip", i
        elif spec.kind == "bps":
            if gaussian:
                tau_refl = float(
                    invert_piecewise_linear_rate(
                        float(np.dot(v, x)), float(np.dot(v, v)), 0.0, rng.exponential()
                    )
                )
            else:
                tau_refl = np.inf
            tau_ref = rng.exponential() / spec.lambda_r if spec.lambda_r > 0 else np.inf
            if tau_refl <= tau_ref:
                t_evt, kind, coord = tau_refl, "reflect", None
            else:
                t_evt, kind, coord = tau_ref, "refresh", None
        else:  # rhmc
            t_evt = rng.exponential() / spec.lambda_r if spec.lambda_r > 0 else np.inf
            kind, coord = "refresh", None

        if s + t_evt >= s_end:
            x, v = _flow(spec, x, v, s_end - s)
            return Trajectory(spec, initial, float(t_end), tuple(events), State(x, v))

        x, v = _flow(spec, x, v, t_evt)
        s += t_evt
        if kind == "flip":
            v = zzp_flip(v, coord)
        elif kind == "reflect":
            if float(np.dot(x, x)) >= _DEGENERATE_NORM2:
                v = bps_reflect(x, v)
            # else: degenerate gradient, skip (probability-zero event)
        else:
            v = spec.draw_velocity(rng)
        events.append(EventRecord(float(sched.unwarp(s)), kind, coord, State(x.copy(), v.copy())))


def replay_state_at(traj: Trajectory, t: float) -> State:
    """State at time t obtained by replaying the deterministic flow between events."""
    sched = traj.spec.schedule
    x, v = traj.initial.x, traj.initial.v
    s_prev = 0.0
    for ev in traj.events:
        s_ev = float(sched.warp(ev.time))
        if ev.time > t:
            break
        x, v = ev.state_after.x, ev.state_after.v
        s_prev = s_ev
    x, v = _flow(traj.spec, x, v, float(sched.warp(t)) - s_prev)
    return State(x, v)


# ---------------------------------------------------------------------------
# Trajectory export


def _fmt(value: float) -> str:
    return f"{value:.17g}"


def trajectory_to_csv(traj: Trajectory) -> str:
    """CSV dump: header ``t,kind,x0..,v0..``, INIT row, then one row per event."""
    d = traj.spec.d
    buf = io.StringIO()
    cols = ["t", "kind"] + [f"x{i}" for i in range(d)] + [f"v{i}" for i in range(d)]
    buf.write(",".join(cols) + "\n")

    def row(t, label, st):
        vals = [_fmt(t), label] + [_fmt(c) for c in st.x] + [_fmt(c) for c in st.v]
        buf.write(",".join(vals) + "\n")

    row(0.0, "INIT", traj.initial)
    for ev in traj.events:
        row(ev.time, ev.label(), ev.state_after)
    return buf.getvalue()


def save_trajectory_csv(path, traj: Trajectory) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(trajectory_to_csv(traj))
