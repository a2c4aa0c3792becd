"""Minimal differentiable-function toolkit.

One closed model family: a time-conditioned MLP made of residual blocks,
with a hand-derived reverse-mode pass instead of a general tape.  The
backward pass is verified against central finite differences in the test
suite, which keeps the specialised implementation honest.

Layout of the flat parameter vector (shapes use W = hidden_width,
E = time_embed_dim, I = in_dim, O = out_dim):

    time pathway   t1_w (E,E), t1_b (E,), t2_w (E,E), t2_b (E,)
    input layer    in_w (W,I), in_b (W,)
    per block      w1 (W,W), b1 (W,), tp (W,E), tb (W,), w2 (W,W), b2 (W,)
    head           head_w (O,W), head_b (O,)

Each block computes  h <- h + w2 @ silu(w1 @ h + b1 + tp @ e + tb) + b2,
where e is the time embedding.  w2/b2 are zero-initialised so a fresh net
starts as (almost) the identity on its input projection.
"""

from __future__ import annotations

import binascii
import json
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ChecksumMismatch, DimensionMismatch, NonFiniteLoss, VersionMismatch


@dataclass(frozen=True)
class MlpArch:
    in_dim: int
    out_dim: int
    hidden_width: int = 128
    n_blocks: int = 4
    time_embed_dim: int = 32
    head: str = "linear"  # "linear" | "softplus"
    head_beta: float = 1.0
    t_scale: float = 1.0  # times are divided by this before embedding

    def __post_init__(self):
        if min(self.in_dim, self.out_dim, self.hidden_width, self.n_blocks) < 1:
            raise ValueError("architecture dimensions must be positive")
        if self.time_embed_dim < 2 or self.time_embed_dim % 2:
            raise ValueError("time_embed_dim must be even and >= 2")
        if self.head not in ("linear", "softplus"):
            raise ValueError(f"unknown head {self.head!r}")

    def param_shapes(self) -> list[tuple[str, tuple[int, ...]]]:
        w, e, i, o = self.hidden_width, self.time_embed_dim, self.in_dim, self.out_dim
        shapes = [
            ("t1_w", (e, e)), ("t1_b", (e,)),
            ("t2_w", (e, e)), ("t2_b", (e,)),
            ("in_w", (w, i)), ("in_b", (w,)),
        ]
        for b in range(self.n_blocks):
            shapes += [
                (f"blk{b}_w1", (w, w)), (f"blk{b}_b1", (w,)),
                (f"blk{b}_tp", (w, e)), (f"blk{b}_tb", (w,)),
                (f"blk{b}_w2", (w, w)), (f"blk{b}_b2", (w,)),
            ]
        shapes += [("head_w", (o, w)), ("head_b", (o,))]
        return shapes

    def param_count(self) -> int:
        return sum(int(np.prod(s)) for _, s in self.param_shapes())

    def to_dict(self) -> dict:
        return {
            "in_dim": self.in_dim, "out_dim": self.out_dim,
            "hidden_width": self.hidden_width, "n_blocks": self.n_blocks,
            "time_embed_dim": self.time_embed_dim, "head": self.head,
            "head_beta": self.head_beta, "t_scale": self.t_scale,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MlpArch":
        return cls(**d)


@dataclass(frozen=True)
class Params:
    theta: np.ndarray
    arch: MlpArch

    def __post_init__(self):
        theta = np.asarray(self.theta, dtype=float).ravel()
        if theta.size != self.arch.param_count():
            raise DimensionMismatch(
                f"theta has {theta.size} entries, arch needs {self.arch.param_count()}"
            )
        if not np.all(np.isfinite(theta)):
            raise ValueError("theta contains non-finite entries")
        object.__setattr__(self, "theta", theta)

    def unpack(self) -> dict[str, np.ndarray]:
        out = {}
        off = 0
        for name, shape in self.arch.param_shapes():
            size = int(np.prod(shape))
            out[name] = self.theta[off : off + size].reshape(shape)
            off += size
        return out

    def with_theta(self, theta: np.ndarray) -> "Params":
        return Params(theta, self.arch)


def pack(arch: MlpArch, parts: dict[str, np.ndarray]) -> np.ndarray:
    return np.concatenate([np.asarray(parts[name], dtype=float).ravel()
                           for name, _ in arch.param_shapes()])


def init_params(arch: MlpArch, rng: np.random.Generator) -> Params:
    """Uniform(+-1/sqrt(fan_in)) dense init; block output layers start at zero."""
    parts = {}
    for name, shape in arch.param_shapes():
        if name.endswith(("_b", "_b1", "_b2", "_tb")) or len(shape) == 1:
            parts[name] = np.zeros(shape)
        elif name.endswith("_w2"):
            parts[name] = np.zeros(shape)
        else:
            bound = 1.0 / math.sqrt(shape[1])
            parts[name] = rng.uniform(-bound, bound, size=shape)
    return Params(pack(arch, parts), arch)


# ---------------------------------------------------------------------------
# Forward / backward


def _silu(z):
    # clamp the exponent so deeply saturated units cannot overflow exp
    s = 1.0 / (1.0 + np.exp(-np.maximum(z, -709.0)))
    return z * s, s


def _silu_grad(z, s):
    return s * (1.0 + z * (1.0 - s))


def time_features(arch: MlpArch, t: np.ndarray) -> np.ndarray:
    """Sinusoidal features of t / t_scale with log-spaced frequencies in [1, 1000]."""
    half = arch.time_embed_dim // 2
    freqs = np.exp(np.linspace(0.0, np.log(1000.0), half))
    tn = np.asarray(t, dtype=float).reshape(-1, 1) / arch.t_scale
    ang = tn * freqs
    return np.concatenate([np.sin(ang), np.cos(ang)], axis=1)


def _softplus(z, beta):
    # stable 1/beta * log(1 + exp(beta z))
    bz = beta * z
    return (np.maximum(bz, 0.0) + np.log1p(np.exp(-np.abs(bz)))) / beta


class _Cache:
    __slots__ = ("x", "feat", "e1", "a1", "e", "hs", "zs", "ss", "ms", "pre", "out")


def forward_cache(params: Params, x: np.ndarray, t) -> _Cache:
    arch = params.arch
    x = np.atleast_2d(np.asarray(x, dtype=float))
    if x.shape[1] != arch.in_dim:
        raise DimensionMismatch(f"input width {x.shape[1]} != in_dim {arch.in_dim}")
    n = x.shape[0]
    t = np.broadcast_to(np.asarray(t, dtype=float), (n,))
    p = params.unpack()
    c = _Cache()
    c.x = x
    c.feat = time_features(arch, t)
    c.e1 = c.feat @ p["t1_w"].T + p["t1_b"]
    a1, s1 = _silu(c.e1)
    c.a1 = a1
    c.e = a1 @ p["t2_w"].T + p["t2_b"]
    h = x @ p["in_w"].T + p["in_b"]
    c.hs, c.zs, c.ss, c.ms = [h], [], [], []
    for b in range(arch.n_blocks):
        z = h @ p[f"blk{b}_w1"].T + p[f"blk{b}_b1"] + c.e @ p[f"blk{b}_tp"].T + p[f"blk{b}_tb"]
        m, s = _silu(z)
        h = h + m @ p[f"blk{b}_w2"].T + p[f"blk{b}_b2"]
        c.zs.append(z)
        c.ss.append(s)
        c.ms.append(m)
        c.hs.append(h)
    c.pre = h @ p["head_w"].T + p["head_b"]
    if arch.head == "softplus":
        c.out = _softplus(c.pre, arch.head_beta)
    else:
        c.out = c.pre
    return c


def forward(params: Params, x: np.ndarray, t) -> np.ndarray:
    """Deterministic model evaluation; rows of x map to rows of the output."""
    return forward_cache(params, x, t).out


def backward(params: Params, cache: _Cache, d_out: np.ndarray) -> np.ndarray:
    """Reverse-mode pass: gradient of sum(d_out * out) with respect to theta."""
    arch = params.arch
    p = params.unpack()
    g = {name: np.zeros(shape) for name, shape in arch.param_shapes()}

    if arch.head == "softplus":
        d_pre = d_out / (1.0 + np.exp(-arch.head_beta * cache.pre))
    else:
        d_pre = np.asarray(d_out, dtype=float)
    g["head_w"] = d_pre.T @ cache.hs[-1]
    g["head_b"] = d_pre.sum(axis=0)
    dh = d_pre @ p["head_w"]
    de = np.zeros_like(cache.e)
    for b in reversed(range(arch.n_blocks)):
        dm = dh @ p[f"blk{b}_w2"]
        g[f"blk{b}_w2"] = dh.T @ cache.ms[b]
        g[f"blk{b}_b2"] = dh.sum(axis=0)
        dz = dm * _silu_grad(cache.zs[b], cache.ss[b])
        g[f"blk{b}_w1"] = dz.T @ cache.hs[b]
        g[f"blk{b}_b1"] = dz.sum(axis=0)
        g[f"blk{b}_tp"] = dz.T @ cache.e
        g[f"blk{b}_tb"] = dz.sum(axis=0)
        de += dz @ p[f"blk{b}_tp"]
        dh = dh + dz @ p[f"blk{b}_w1"]
    g["in_w"] = dh.T @ cache.x
    g["in_b"] = dh.sum(axis=0)
    g["t2_w"] = de.T @ cache.a1
    g["t2_b"] = de.sum(axis=0)
    da1 = de @ p["t2_w"]
    s1 = 1.0 / (1.0 + np.exp(-cache.e1))
    de1 = da1 * _silu_grad(cache.e1, s1)
    g["t1_w"] = de1.T @ cache.feat
    g["t1_b"] = de1.sum(axis=0)
    return pack(arch, g)


def grad(params: Params, batch, loss_fn) -> tuple[float, np.ndarray]:
    """Loss value and full flat gradient for a registered loss.

    ``loss_fn(params, batch)`` must return ``(loss, pieces)`` where pieces
    is a list of ``(cache, d_out)`` pairs whose backward contributions sum
    to the gradient.  Raises NonFiniteLoss on divergence.
    """
    loss, pieces = loss_fn(params, batch)
    if not np.isfinite(loss):
        raise NonFiniteLoss(f"loss is not finite: {loss!r}")
    total = np.zeros_like(params.theta)
    for cache, d_out in pieces:
        total += backward(params, cache, d_out)
    if not np.all(np.isfinite(total)):
        raise NonFiniteLoss("gradient contains non-finite entries")
    return float(loss), total


# ---------------------------------------------------------------------------
# Optimiser


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros(cls, n: int) -> "AdamState":
        return cls(m=np.zeros(n), v=np.zeros(n))


def adam_step(state: AdamState, params: Params, gradient: np.ndarray, lr: float):
    """One bias-corrected adaptive-moment update; returns (state, params)."""
    t = state.step + 1
    m = state.beta1 * state.m + (1 - state.beta1) * gradient
    v = state.beta2 * state.v + (1 - state.beta2) * gradient**2
    m_hat = m / (1 - state.beta1**t)
    v_hat = v / (1 - state.beta2**t)
    theta = params.theta - lr * m_hat / (np.sqrt(v_hat) + state.eps)
    return replace(state, m=m, v=v, step=t), params.with_theta(theta)


# ---------------------------------------------------------------------------
# Checkpoints


_CKPT_VERSION = 1


def _canonical_theta(theta: np.ndarray) -> str:
    return ",".join(f"{v:.17g}" for v in theta)


def save_checkpoint(path, params: Params, metadata: dict | None = None) -> None:
    """Single JSON document with a CRC-32 over the canonical theta string."""
    blob = _canonical_theta(params.theta)
    doc = {
        "version": _CKPT_VERSION,
        "crc32": binascii.crc32(blob.encode("utf-8")),
        "arch": params.arch.to_dict(),
        "metadata": metadata or {},
        "theta": [float(f"{v:.17g}") for v in params.theta],
    }
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(doc, fh)
        fh.write("\n")


def load_checkpoint(path) -> tuple[Params, dict]:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ChecksumMismatch(f"cannot read checkpoint {path}: {exc}") from exc
    if doc.get("version") != _CKPT_VERSION:
        raise VersionMismatch(f"unsupported checkpoint version {doc.get('version')!r}")
    arch = MlpArch.from_dict(doc["arch"])
    theta = np.asarray(doc["theta"], dtype=float)
    if theta.size != arch.param_count():
        raise VersionMismatch(
            f"theta length {theta.size} does not match arch ({arch.param_count()})"
        )
    if binascii.crc32(_canonical_theta(theta).encode("utf-8")) != doc.get("crc32"):
        raise ChecksumMismatch(f"checkpoint {path} failed its integrity check")
    return Params(theta, arch), doc.get("metadata", {})
