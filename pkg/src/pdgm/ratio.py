"""Learned backward flip rates for the zig-zag process.

A positive-output network s(x, v, t) approximates the conditional-density
ratios p_t(flip_i v | x) / p_t(v | x) of the forward process.  Training
minimises the implicit ratio-matching loss, which needs no access to the
true ratios; the explicit and Bregman variants are kept as diagnostics
and cross-checks.  The assembled backward rate is

    rate_i(x, v, u) = s_i(x, v, T_f - u) * flip_rate_i(x, flip_i v)

with u the backward-clock time.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import nn, pdmp
from .errors import DomainError, NonFiniteLoss

OMEGAS = ("uniform", "quadratic")


def sample_omega(omega: str, t_f: float, n: int, rng) -> np.ndarray:
    """Draw training times from the time-weighting density over [0, T_f]."""
    u = rng.random(n)
    if omega == "uniform":
        return u * t_f
    if omega == "quadratic":  # density proportional to t
        return np.sqrt(u) * t_f
    raise ValueError(f"unknown omega {omega!r}")


@dataclass(frozen=True)
class RatioModel:
    """Ratio network plus the forward process it models."""

    params: nn.Params
    spec: pdmp.ProcessSpec
    omega: str = "uniform"

    def __post_init__(self):
        arch = self.params.arch
        if arch.in_dim != 2 * self.spec.d or arch.out_dim != self.spec.d:
            raise ValueError("ratio net must map 2d inputs to d outputs")
        if arch.head != "softplus":
            raise ValueError("ratio net needs a softplus head (ratios are positive)")
        if self.omega not in OMEGAS:
            raise ValueError(f"unknown omega {self.omega!r}")

    def ratios(self, x: np.ndarray, v: np.ndarray, t) -> np.ndarray:
        """All d ratio estimates at forward time t; shape (n, d)."""
        inp = np.concatenate([np.atleast_2d(x), np.atleast_2d(v)], axis=1)
        return nn.forward(self.params, inp, t)

    def with_params(self, params: nn.Params) -> "RatioModel":
        return RatioModel(params, self.spec, self.omega)


def make_ratio_model(spec: pdmp.ProcessSpec, rng, hidden_width=128, n_blocks=4,
                     time_embed_dim=32, omega="uniform") -> RatioModel:
    """Fresh model; the head bias starts at softplus^{-1}(1) so rates begin near 1."""
    arch = nn.MlpArch(
        in_dim=2 * spec.d, out_dim=spec.d, hidden_width=hidden_width,
        n_blocks=n_blocks, time_embed_dim=time_embed_dim,
        head="softplus", head_beta=1.0, t_scale=spec.t_f,
    )
    params = nn.init_params(arch, rng)
    parts = params.unpack()
    parts["head_b"] = np.full(spec.d, np.log(np.e - 1.0))
    return RatioModel(nn.Params(nn.pack(arch, parts), arch), spec, omega)


# ---------------------------------------------------------------------------
# Losses.  G(r) = 1/(1+r) maps ratios to (0, 1] for numerical stability.


def g_transform(r):
    """G(r) = 1 / (1 + r)."""
    return 1.0 / (1.0 + np.asarray(r, dtype=float))


def _stacked_inputs(x, v):
    """Rows: the batch itself, then one per-coordinate flipped copy of it."""
    x = np.atleast_2d(x)
    v = np.atleast_2d(v)
    d = x.shape[1]
    stacks = [np.concatenate([x, v], axis=1)]
    for i in range(d):
        stacks.append(np.concatenate([x, pdmp.zzp_flip(v, i)], axis=1))
    return np.concatenate(stacks, axis=0)


def implicit_rm_loss(model: RatioModel, batch, coord_subset=None,
                     return_pieces: bool = False):
    """Empirical implicit ratio-matching objective.

    ``batch`` is (x, v, t) with x, v of shape (n, d).  ``coord_subset``
    optionally restricts the coordinate sum to a subset, rescaled by
    d / |subset| so the estimator stays unbiased.
    """
    x, v, t = batch
    x = np.atleast_2d(x)
    v = np.atleast_2d(v)
    n, d = x.shape
    coords = np.arange(d) if coord_subset is None else np.asarray(coord_subset, dtype=int)
    scale = d / coords.size
    t_all = np.tile(np.broadcast_to(np.asarray(t, float), (n,)), d + 1)
    cache = nn.forward_cache(model.params, _stacked_inputs(x, v), t_all)
    s = cache.out  # ((d+1) n, d)
    s_base = s[:n]
    loss = 0.0
    d_out = np.zeros_like(s)
    for i in coords:
        s_b = s_base[:, i]
        s_f = s[(i + 1) * n : (i + 2) * n, i]
        gb, gf = g_transform(s_b), g_transform(s_f)
        loss += scale * np.mean(gb**2 + gf**2 - 2.0 * gb)
        # dG/ds = -G^2;  d(G^2)/ds = -2 G^3;  d(-2G)/ds = 2 G^2
        d_out[:n, i] += scale * (-2.0 * gb**3 + 2.0 * gb**2) / n
        d_out[(i + 1) * n : (i + 2) * n, i] += scale * (-2.0 * gf**3) / n
    if return_pieces:
        return float(loss), [(cache, d_out)]
    return float(loss)


def explicit_rm_loss(model: RatioModel, batch, true_ratios) -> float:
    """Squared G-error against an oracle; diagnostic only.

    ``true_ratios(x, v, t)`` must return the (n, d) matrix of exact ratios.
    """
    x, v, t = batch
    x = np.atleast_2d(x)
    v = np.atleast_2d(v)
    n, d = x.shape
    t_b = np.broadcast_to(np.asarray(t, float), (n,))
    loss = 0.0
    for i in range(d):
        vf = pdmp.zzp_flip(v, i)
        s_b = model.ratios(x, v, t_b)[:, i]
        s_f = model.ratios(x, vf, t_b)[:, i]
        r_b = np.asarray(true_ratios(x, v, t_b))[:, i]
        r_f = np.asarray(true_ratios(x, vf, t_b))[:, i]
        loss += np.mean(
            (g_transform(s_b) - g_transform(r_b)) ** 2
            + (g_transform(s_f) - g_transform(r_f)) ** 2
        )
    return float(loss)


_BREGMAN_F = {
    # f, f', f''
    "kl": (
        lambda r: r * np.log(r) - r,
        np.log,
        lambda r: 1.0 / r,
    ),
    "square": (
        lambda r: (r - 1.0) ** 2,
        lambda r: 2.0 * (r - 1.0),
        lambda r: np.full_like(np.asarray(r, float), 2.0),
    ),
    "logistic": (
        lambda r: r * np.log(r) - (1.0 + r) * np.log1p(r),
        lambda r: np.log(r) - np.log1p(r),
        lambda r: 1.0 / (r * (1.0 + r)),
    ),
}


def bregman_divergence(f_kind: str, r, s):
    """B_f(r, s) = f(r) - f(s) - f'(s)(r - s)."""
    f, fp, _ = _BREGMAN_F[f_kind]
    r = np.asarray(r, dtype=float)
    s = np.asarray(s, dtype=float)
    return f(r) - f(s) - fp(s) * (r - s)


def bregman_rm_loss(model: RatioModel, batch, f_kind: str, i: int,
                    return_pieces: bool = False):
    """Implicit Bregman objective for coordinate i.

    Uses that flipping coordinate i maps samples of the forward law onto
    samples of the flipped law, so both expectations are evaluated on the
    same batch:  mean[f'(s(x, v)) s(x, v) - f(s(x, v))]
    - mean[f'(s(x, flip v))].  The population minimizer is the same ratio
    p(x, flip v, t) / p(x, v, t) that the implicit loss targets.
    """
    if f_kind not in _BREGMAN_F:
        raise ValueError(f"unknown Bregman f {f_kind!r}")
    f, fp, fpp = _BREGMAN_F[f_kind]
    x, v, t = batch
    x = np.atleast_2d(x)
    v = np.atleast_2d(v)
    n, d = x.shape
    t_b = np.broadcast_to(np.asarray(t, float), (n,))
    inp = np.concatenate(
        [np.concatenate([x, v], axis=1), np.concatenate([x, pdmp.zzp_flip(v, i)], axis=1)],
        axis=0,
    )
    cache = nn.forward_cache(model.params, inp, np.tile(t_b, 2))
    s_b = cache.out[:n, i]
    s_f = cache.out[n:, i]
    if np.any(s_b <= 0.0) or np.any(s_f <= 0.0):
        raise DomainError("Bregman loss needs strictly positive ratio estimates")
    loss = float(np.mean(fp(s_b) * s_b - f(s_b)) - np.mean(fp(s_f)))
    d_out = np.zeros_like(cache.out)
    d_out[:n, i] = fpp(s_b) * s_b / n  # d/ds [f'(s)s - f(s)] = f''(s) s
    d_out[n:, i] = -fpp(s_f) / n
    if return_pieces:
        return loss, [(cache, d_out)]
    return loss


# ---------------------------------------------------------------------------
# Training


@dataclass
class TrainConfig:
    steps: int = 2000
    batch_size: int = 512
    lr: float = 5e-4
    hidden_width: int = 128
    n_blocks: int = 4
    time_embed_dim: int = 32
    omega: str = "uniform"
    coord_subsample: int = 0  # 0 = use every coordinate
    mixture_components: int = 8  # used by the density trainer only


def train_ratio(data: np.ndarray, spec: pdmp.ProcessSpec, cfg: TrainConfig, rng,
                model: RatioModel | None = None):
    """Fit the ratio network on forward draws started from rows of ``data``.

    Fresh forward states are simulated every step (no trajectory cache).
    Returns (model, history) with history a list of (step, loss) pairs.
    """
    data = np.atleast_2d(np.asarray(data, dtype=float))
    if model is None:
        model = make_ratio_model(
            spec, rng, hidden_width=cfg.hidden_width, n_blocks=cfg.n_blocks,
            time_embed_dim=cfg.time_embed_dim, omega=cfg.omega,
        )
    params = model.params
    state = nn.AdamState.zeros(params.arch.param_count())
    history: list[tuple[int, float]] = []
    d = spec.d
    for step in range(cfg.steps):
        idx = rng.integers(0, data.shape[0], size=cfg.batch_size)
        t = sample_omega(cfg.omega, spec.t_f, cfg.batch_size, rng)
        x, v = pdmp.sample_states_at(spec, data[idx], t, rng)
        subset = None
        if cfg.coord_subsample and cfg.coord_subsample < d:
            subset = rng.choice(d, size=cfg.coord_subsample, replace=False)
        try:
            loss, gradient = nn.grad(
                params, (x, v, t),
                lambda p, b: implicit_rm_loss(
                    model.with_params(p), b, coord_subset=subset, return_pieces=True
                ),
            )
        except NonFiniteLoss as exc:
            raise NonFiniteLoss(str(exc), step=step) from exc
        state, params = nn.adam_step(state, params, gradient, cfg.lr)
        history.append((step, loss))
    return model.with_params(params), history


# ---------------------------------------------------------------------------
# Assembled backward rate


def backward_zzp_rate(model: RatioModel, x, v, t_backward, i: int):
    """Backward flip rate of coordinate i at backward-clock time t_backward."""
    x = np.atleast_2d(x)
    v = np.atleast_2d(v)
    t_fwd = model.spec.t_f - np.asarray(t_backward, dtype=float)
    s = model.ratios(x, v, t_fwd)[:, i]
    lam = pdmp.zzp_rate(x, pdmp.zzp_flip(v, i), i, model.spec)
    out = s * lam
    return out if out.shape != (1,) else float(out[0])
