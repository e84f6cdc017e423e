"""Fourier-feature MLP denoiser with hand-written reverse mode and Adam."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, NumericError

PARAM_NAMES = ("W1", "b1", "W2", "b2", "W3", "b3")


@dataclass(frozen=True)
class NetConfig:
    input_dim: int = 2
    hidden_dim: int = 128
    n_freqs: int = 6
    time_embed: bool = True
    n_time_freqs: int = 6
    # Time input is fed as t / max_step.
    max_step: int = 200

    def validate(self) -> None:
        if self.input_dim < 1:
            raise ConfigError("input_dim must be >= 1")
        if self.hidden_dim < 1:
            raise ConfigError("hidden_dim must be >= 1")
        if self.n_freqs < 1:
            raise ConfigError("n_freqs must be >= 1")
        if self.time_embed and self.n_time_freqs < 0:
            raise ConfigError("n_time_freqs must be >= 0")
        if self.max_step < 1:
            raise ConfigError("max_step must be >= 1")

    @property
    def time_dim(self) -> int:
        return 1 + 2 * self.n_time_freqs if self.time_embed else 0

    @property
    def feature_dim(self) -> int:
        return self.input_dim * (1 + 2 * self.n_freqs) + self.time_dim


def _fourier(c: np.ndarray, n_freqs: int) -> np.ndarray:
    """[c, sin(2^0 pi c), cos(2^0 pi c), ..., sin(2^(n-1) pi c), cos(...)] per column of c."""
    n, d = c.shape
    freqs = np.pi * 2.0 ** np.arange(n_freqs)
    arg = c[:, :, None] * freqs  # (n, d, f)
    out = np.empty((n, d, 1 + 2 * n_freqs))
    out[:, :, 0] = c
    out[:, :, 1::2] = np.sin(arg)
    out[:, :, 2::2] = np.cos(arg)
    return out.reshape(n, d * (1 + 2 * n_freqs))


def _as_steps(t, n: int) -> np.ndarray:
    t = np.asarray(t)
    if t.ndim == 0:
        return np.full(n, int(t), dtype=np.int64)
    if t.shape != (n,):
        raise ValueError(f"per-element steps must have shape ({n},), got {t.shape}")
    return t.astype(np.int64)


def featurize(x: np.ndarray, t, cfg: NetConfig) -> np.ndarray:
    """Fourier features of the points, with the normalized step appended."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != cfg.input_dim:
        raise ValueError(f"expected points of shape (N, {cfg.input_dim}), got {x.shape}")
    if not np.all(np.isfinite(x)):
        raise NumericError("non-finite network input")
    steps = _as_steps(t, x.shape[0])
    if np.any(steps < 0) or np.any(steps > cfg.max_step):
        raise ValueError(f"step index out of range [0, {cfg.max_step}]")
    parts = [_fourier(x, cfg.n_freqs)]
    if cfg.time_embed:
        tau = (steps / cfg.max_step)[:, None]
        parts.append(_fourier(tau, cfg.n_time_freqs))
    return np.concatenate(parts, axis=1)


def _featurize_grad(x: np.ndarray, grad_feat: np.ndarray, cfg: NetConfig) -> np.ndarray:
    """Pull a gradient w.r.t. the point features back to the raw coordinates."""
    n, d = x.shape
    width = 1 + 2 * cfg.n_freqs
    g = grad_feat[:, : d * width].reshape(n, d, width)
    freqs = np.pi * 2.0 ** np.arange(cfg.n_freqs)
    arg = x[:, :, None] * freqs
    dsin = freqs * np.cos(arg)
    dcos = -freqs * np.sin(arg)
    return g[:, :, 0] + np.sum(g[:, :, 1::2] * dsin + g[:, :, 2::2] * dcos, axis=2)


def _silu(z):
    s = np.exp(-z)
    s += 1.0
    np.reciprocal(s, out=s)
    return z * s, s


def _silu_backward(dh, z, s):
    # d silu(z)/dz = s (1 + z (1 - s))
    d = 1.0 - s
    d *= z
    d += 1.0
    d *= s
    d *= dh
    return d


@dataclass
class ForwardTape:
    x: np.ndarray
    feats: np.ndarray
    z1: np.ndarray
    s1: np.ndarray
    h1: np.ndarray
    z2: np.ndarray
    s2: np.ndarray
    h2: np.ndarray


class DenoiserNet:
    """eps_hat(x_t, t): features -> hidden -> hidden -> input_dim, SiLU activations."""

    def __init__(self, config: NetConfig, params: dict[str, np.ndarray]):
        config.validate()
        self.config = config
        self.params = {k: np.asarray(params[k], dtype=np.float64) for k in PARAM_NAMES}
        for k, shape in self.param_shapes(config).items():
            if self.params[k].shape != shape:
                raise ConfigError(f"parameter {k} has shape {self.params[k].shape}, expected {shape}")

    @staticmethod
    def param_shapes(cfg: NetConfig) -> dict[str, tuple[int, ...]]:
        f, h, d = cfg.feature_dim, cfg.hidden_dim, cfg.input_dim
        return {"W1": (f, h), "b1": (h,), "W2": (h, h), "b2": (h,), "W3": (h, d), "b3": (d,)}

    @classmethod
    def init(cls, config: NetConfig, rng: np.random.Generator, out_scale: float = 0.01):
        """Glorot-uniform weights, zero biases, final layer scaled down."""
        config.validate()
        params = {}
        for k, shape in cls.param_shapes(config).items():
            if k.startswith("b"):
                params[k] = np.zeros(shape)
            else:
                limit = np.sqrt(6.0 / (shape[0] + shape[1]))
                params[k] = rng.uniform(-limit, limit, size=shape)
        params["W3"] *= out_scale
        return cls(config, params)

    @classmethod
    def zeros(cls, config: NetConfig):
        return cls(config, {k: np.zeros(s) for k, s in cls.param_shapes(config).items()})

    @property
    def n_params(self) -> int:
        return sum(p.size for p in self.params.values())

    def copy(self) -> "DenoiserNet":
        return DenoiserNet(self.config, {k: v.copy() for k, v in self.params.items()})

    def forward(self, x_t: np.ndarray, t) -> tuple[np.ndarray, ForwardTape]:
        x_t = np.asarray(x_t, dtype=np.float64)
        p = self.params
        feats = featurize(x_t, t, self.config)
        z1 = feats @ p["W1"] + p["b1"]
        h1, s1 = _silu(z1)
        z2 = h1 @ p["W2"] + p["b2"]
        h2, s2 = _silu(z2)
        out = h2 @ p["W3"] + p["b3"]
        if not np.all(np.isfinite(out)):
            raise NumericError("non-finite network output")
        return out, ForwardTape(x_t, feats, z1, s1, h1, z2, s2, h2)

    def __call__(self, x_t, t) -> np.ndarray:
        return self.forward(x_t, t)[0]

    def backward(self, tape: ForwardTape, grad_out: np.ndarray):
        """Return (param_grads, input_grads) for upstream gradient ``grad_out``."""
        grad_out = np.asarray(grad_out, dtype=np.float64)
        if grad_out.shape != tape.x.shape:
            raise ValueError(f"grad_out shape {grad_out.shape} does not match tape batch {tape.x.shape}")
        p = self.params
        g = {"W3": tape.h2.T @ grad_out, "b3": grad_out.sum(axis=0)}
        dh2 = grad_out @ p["W3"].T
        dz2 = _silu_backward(dh2, tape.z2, tape.s2)
        g["W2"] = tape.h1.T @ dz2
        g["b2"] = dz2.sum(axis=0)
        dh1 = dz2 @ p["W2"].T
        dz1 = _silu_backward(dh1, tape.z1, tape.s1)
        g["W1"] = tape.feats.T @ dz1
        g["b1"] = dz1.sum(axis=0)
        dfeats = dz1 @ p["W1"].T
        dx = _featurize_grad(tape.x, dfeats, self.config)
        return {k: g[k] for k in PARAM_NAMES}, dx


def zeros_like_params(params: dict[str, np.ndarray]) -> dict[str, np.ndarray]:
    return {k: np.zeros_like(v) for k, v in params.items()}


def add_grads(a: dict[str, np.ndarray], b: dict[str, np.ndarray], scale: float = 1.0):
    return {k: a[k] + scale * b[k] for k in a}


@dataclass
class AdamState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    step: int = 0
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_net(cls, net: DenoiserNet, lr: float = 1e-3, beta1: float = 0.9,
                beta2: float = 0.999, eps: float = 1e-8) -> "AdamState":
        return cls(zeros_like_params(net.params), zeros_like_params(net.params), 0, lr, beta1, beta2, eps)

    def copy(self) -> "AdamState":
        return AdamState({k: v.copy() for k, v in self.m.items()},
                         {k: v.copy() for k, v in self.v.items()},
                         self.step, self.lr, self.beta1, self.beta2, self.eps)


def adam_step(net: DenoiserNet, grads: dict[str, np.ndarray], opt: AdamState) -> None:
    """In-place Adam update of ``net.params`` and ``opt``."""
    if set(grads) != set(net.params):
        raise ValueError("gradient keys do not match parameters")
    for k, g in grads.items():
        if g.shape != net.params[k].shape:
            raise ValueError(f"gradient {k} has shape {g.shape}, expected {net.params[k].shape}")
        if not np.all(np.isfinite(g)):
            raise NumericError(f"non-finite gradient for {k} at optimizer step {opt.step + 1}")
    opt.step += 1
    bc1 = 1.0 - opt.beta1**opt.step
    bc2 = 1.0 - opt.beta2**opt.step
    for k in PARAM_NAMES:
        g = grads[k]
        opt.m[k] = opt.beta1 * opt.m[k] + (1.0 - opt.beta1) * g
        opt.v[k] = opt.beta2 * opt.v[k] + (1.0 - opt.beta2) * g * g
        m_hat = opt.m[k] / bc1
        v_hat = opt.v[k] / bc2
        net.params[k] = net.params[k] - opt.lr * m_hat / (np.sqrt(v_hat) + opt.eps)
