"""Conditional velocity density for the bouncy-particle and randomised-HMC
backward processes.

A Gaussian mixture conditioned on (position, time): the network maps the
position (with time conditioning) to per-component logits, means, and
log-stds.  The mixture supports exact log-density evaluation and ancestral
sampling, and is trained by maximum likelihood on forward draws.  The
backward refreshment rate is the density ratio nu / p, which can blow up
where the model underestimates; all assembled rates are therefore capped
and saturations counted.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import nn, pdmp
from .errors import NonFiniteLoss

LOG_STD_MIN = -7.0
LOG_STD_MAX = 3.0
DEFAULT_RATE_CAP = 1e4

_LOG_2PI = np.log(2.0 * np.pi)


@dataclass
class SaturationCounter:
    """Running count of rate evaluations clipped at the cap."""

    count: int = 0

    def add(self, n: int) -> None:
        self.count += int(n)


@dataclass(frozen=True)
class CondDensityModel:
    """Mixture-of-Gaussians conditional velocity model."""

    params: nn.Params
    spec: pdmp.ProcessSpec
    n_components: int = 8
    rate_cap: float = DEFAULT_RATE_CAP
    saturation: SaturationCounter = field(default_factory=SaturationCounter, compare=False)

    def __post_init__(self):
        d = self.spec.d
        arch = self.params.arch
        if arch.in_dim != d or arch.out_dim != self.n_components * (1 + 2 * d):
            raise ValueError("density net output must be K*(1+2d) wide on d inputs")
        if arch.head != "linear":
            raise ValueError("density net head must be linear")

    def with_params(self, params: nn.Params) -> "CondDensityModel":
        return CondDensityModel(params, self.spec, self.n_components, self.rate_cap)

    # -- mixture parameters -------------------------------------------------

    def _mixture(self, raw: np.ndarray):
        """Split network output into (log-weights, means, log-stds)."""
        n = raw.shape[0]
        k, d = self.n_components, self.spec.d
        logits = raw[:, :k]
        means = raw[:, k : k + k * d].reshape(n, k, d)
        log_std = np.clip(raw[:, k + k * d :].reshape(n, k, d), LOG_STD_MIN, LOG_STD_MAX)
        log_w = logits - _logsumexp(logits, axis=1, keepdims=True)
        return log_w, means, log_std

    def mixture_at(self, x: np.ndarray, t):
        return self._mixture(nn.forward(self.params, np.atleast_2d(x), t))

    # -- evaluation and sampling --------------------------------------------

    def log_density(self, v: np.ndarray, x: np.ndarray, t) -> np.ndarray:
        """log p(v | x, t), finite for any finite v."""
        v = np.atleast_2d(v)
        log_w, means, log_std = self.mixture_at(x, t)
        comp = _component_log_pdf(v, means, log_std)
        out = _logsumexp(log_w + comp, axis=1)
        return out

    def sample_velocity(self, x: np.ndarray, t, rng) -> np.ndarray:
        """Ancestral draw: component from the softmax weights, then a normal."""
        x = np.atleast_2d(x)
        n, d = x.shape
        log_w, means, log_std = self.mixture_at(x, t)
        u = rng.random((n, 1))
        cum = np.cumsum(np.exp(log_w), axis=1)
        comp = np.sum(u > cum[:, :-1], axis=1)
        comp = np.minimum(comp, log_w.shape[1] - 1)
        rows = np.arange(n)
        return means[rows, comp] + np.exp(log_std[rows, comp]) * rng.standard_normal((n, d))


def _logsumexp(a, axis, keepdims=False):
    m = np.max(a, axis=axis, keepdims=True)
    out = m + np.log(np.sum(np.exp(a - m), axis=axis, keepdims=True))
    return out if keepdims else np.squeeze(out, axis=axis)


def _component_log_pdf(v, means, log_std):
    # v: (n, d); means/log_std: (n, k, d) -> (n, k)
    z = (v[:, None, :] - means) / np.exp(log_std)
    return -0.5 * np.sum(z**2, axis=2) - np.sum(log_std, axis=2) - 0.5 * v.shape[1] * _LOG_2PI


def log_standard_normal(v: np.ndarray) -> np.ndarray:
    v = np.atleast_2d(v)
    return -0.5 * np.sum(v**2, axis=1) - 0.5 * v.shape[1] * _LOG_2PI


def make_density_model(spec: pdmp.ProcessSpec, rng, n_components=8, hidden_width=128,
                       n_blocks=4, time_embed_dim=32,
                       rate_cap=DEFAULT_RATE_CAP) -> CondDensityModel:
    """Fresh model; zero-initialised blocks make it start at the standard normal."""
    arch = nn.MlpArch(
        in_dim=spec.d, out_dim=n_components * (1 + 2 * spec.d),
        hidden_width=hidden_width, n_blocks=n_blocks, time_embed_dim=time_embed_dim,
        head="linear", t_scale=spec.t_f,
    )
    return CondDensityModel(nn.init_params(arch, rng), spec, n_components, rate_cap)


# ---------------------------------------------------------------------------
# Maximum-likelihood loss


def ml_loss(model: CondDensityModel, batch, return_pieces: bool = False):
    """Negative mean conditional log-likelihood of the velocities."""
    x, v, t = batch
    x = np.atleast_2d(x)
    v = np.atleast_2d(v)
    n, d = x.shape
    k = model.n_components
    cache = nn.forward_cache(model.params, x, np.broadcast_to(np.asarray(t, float), (n,)))
    raw = cache.out
    log_w, means, log_std = model._mixture(raw)
    comp = _component_log_pdf(v, means, log_std)
    joint = log_w + comp
    log_p = _logsumexp(joint, axis=1)
    loss = -float(np.mean(log_p))
    if not np.isfinite(loss):
        raise NonFiniteLoss("maximum-likelihood loss diverged")
    if not return_pieces:
        return loss
    # responsibilities give the analytic gradient wrt the raw network output
    resp = np.exp(joint - log_p[:, None])  # (n, k)
    d_raw = np.zeros_like(raw)
    d_raw[:, :k] = -(resp - np.exp(log_w)) / n
    z = (v[:, None, :] - means) / np.exp(log_std)
    d_means = -(resp[:, :, None] * z / np.exp(log_std)) / n
    d_logstd = -(resp[:, :, None] * (z**2 - 1.0)) / n
    # zero gradient where the clamp is active
    raw_logstd = raw[:, k + k * d :].reshape(n, k, d)
    clamped = (raw_logstd <= LOG_STD_MIN) | (raw_logstd >= LOG_STD_MAX)
    d_logstd[clamped] = 0.0
    d_raw[:, k : k + k * d] = d_means.reshape(n, k * d)
    d_raw[:, k + k * d :] = d_logstd.reshape(n, k * d)
    return loss, [(cache, d_raw)]


def train_density(data: np.ndarray, spec: pdmp.ProcessSpec, cfg, rng,
                  model: CondDensityModel | None = None):
    """Fit the conditional density on forward draws from rows of ``data``.

    ``cfg`` is a :class:`pdgm.ratio.TrainConfig`.  Returns (model, history).
    """
    from .ratio import sample_omega  # shared time-weighting sampler

    if spec.kind not in ("bps", "rhmc"):
        raise ValueError("density model applies to bps/rhmc forward processes")
    data = np.atleast_2d(np.asarray(data, dtype=float))
    if model is None:
        model = make_density_model(
            spec, rng, n_components=cfg.mixture_components,
            hidden_width=cfg.hidden_width, n_blocks=cfg.n_blocks,
            time_embed_dim=cfg.time_embed_dim,
        )
    params = model.params
    state = nn.AdamState.zeros(params.arch.param_count())
    history: list[tuple[int, float]] = []
    for step in range(cfg.steps):
        idx = rng.integers(0, data.shape[0], size=cfg.batch_size)
        t = sample_omega(cfg.omega, spec.t_f, cfg.batch_size, rng)
        x, v = pdmp.sample_states_at(spec, data[idx], t, rng)
        try:
            loss, gradient = nn.grad(
                params, (x, v, t),
                lambda p, b: ml_loss(model.with_params(p), b, return_pieces=True),
            )
        except NonFiniteLoss as exc:
            raise NonFiniteLoss(str(exc), step=step) from exc
        state, params = nn.adam_step(state, params, gradient, cfg.lr)
        history.append((step, loss))
    return model.with_params(params), history


# ---------------------------------------------------------------------------
# Assembled backward rates


def capped_density_ratio(model: CondDensityModel, log_num: np.ndarray,
                         log_den: np.ndarray, cap: float) -> np.ndarray:
    """exp(log_num - log_den) clipped at ``cap``; saturations are counted."""
    ratio = np.exp(np.minimum(log_num - log_den, np.log(cap)))
    n_sat = int(np.sum(log_num - log_den > np.log(cap)))
    if n_sat:
        model.saturation.add(n_sat)
    return ratio


def backward_refresh_rate(model: CondDensityModel, x, v, t_backward):
    """lambda_r * nu(v) / p(v | x, T_f - t_backward), capped."""
    if model.spec.lambda_r == 0.0:
        x = np.atleast_2d(x)
        return np.zeros(x.shape[0])
    t_fwd = model.spec.t_f - np.asarray(t_backward, dtype=float)
    log_ratio = log_standard_normal(v) - model.log_density(v, x, t_fwd)
    rate = model.spec.lambda_r * np.exp(log_ratio)
    n_sat = int(np.sum(rate > model.rate_cap))
    if n_sat:
        model.saturation.add(n_sat)
    return np.minimum(rate, model.rate_cap)


def backward_reflection_rate_bps(model: CondDensityModel, x, v, t_backward):
    """Forward reflection rate at the reflected velocity, times the density ratio."""
    x = np.atleast_2d(x)
    v = np.atleast_2d(v)
    n = x.shape[0]
    out = np.zeros(n)
    if not model.spec.gaussian:
        return out
    ok = np.sum(x * x, axis=1) >= 1e-24
    if not np.any(ok):
        return out
    xo, vo = x[ok], v[ok]
    rv = pdmp.bps_reflect(xo, vo)
    lam = np.maximum(np.sum(rv * xo, axis=1), 0.0)
    t_fwd = model.spec.t_f - np.asarray(t_backward, dtype=float)
    t_fwd = np.broadcast_to(t_fwd, (n,))[ok]
    ratio = capped_density_ratio(
        model,
        model.log_density(rv, xo, t_fwd),
        model.log_density(vo, xo, t_fwd),
        model.rate_cap,
    )
    rate = np.minimum(lam * ratio, model.rate_cap)
    out[ok] = rate
    return out
