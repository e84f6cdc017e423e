"""Diffusion operations: noising, losses, posterior steps and the shortcut chain.

Any object with ``forward(x, t) -> (eps_hat, tape)`` can act as the denoiser;
``chain_backward`` and ``eps_loss`` additionally need ``backward(tape, grad)``.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator, Sequence

import numpy as np

from .errors import NumericError, StateError
from .schedule import NoiseSchedule, posterior_coeffs, posterior_variance
from .net import add_grads
from .data import PointSet

ALPHA_GUARD = 1e-8


@dataclass(frozen=True)
class ChainSpec:
    """Shortcut chain timesteps, largest first: steps[0] = t_K > ... > steps[-1] = t_1."""

    steps: tuple[int, ...]

    def __post_init__(self):
        steps = tuple(int(s) for s in self.steps)
        object.__setattr__(self, "steps", steps)
        if not steps:
            raise ValueError("chain needs at least one step")
        if any(a <= b for a, b in zip(steps, steps[1:])):
            raise ValueError(f"chain steps must be strictly descending: {steps}")
        if steps[-1] < 1:
            raise ValueError(f"chain steps must be >= 1: {steps}")

    @property
    def K(self) -> int:
        return len(self.steps)

    def check_range(self, T: int) -> None:
        if self.steps[0] > T:
            raise ValueError(f"chain step {self.steps[0]} exceeds T={T}")


def inference_spec(T: int, K: int) -> ChainSpec:
    """K evenly spaced steps from T down (T, T - T/K, ..., T/K)."""
    if not 1 <= K <= T:
        raise ValueError(f"need 1 <= K <= T, got K={K}, T={T}")
    return ChainSpec(tuple(int(round(v)) for v in np.linspace(T, 0, K + 1)[:-1]))


def sample_chain_spec(rng: np.random.Generator, T: int, K: int, min_top: int | None = None) -> ChainSpec:
    """K distinct steps uniform on [1, T], sorted descending, with the top step >= min_top."""
    if not 1 <= K <= T:
        raise ValueError(f"need 1 <= K <= T, got K={K}, T={T}")
    min_top = (T + 1) // 2 if min_top is None else min_top
    while True:
        steps = rng.choice(np.arange(1, T + 1), size=K, replace=False)
        if steps.max() >= min_top:
            return ChainSpec(tuple(sorted(steps.tolist(), reverse=True)))


@dataclass
class ChainState:
    """Trajectory of one shortcut chain, aligned with ``spec.steps``.

    ``noises[0]`` is the noise that produced ``states[0]``; ``noises[i]`` for i >= 1
    regenerates ``states[i]`` from ``x0_preds[i - 1]``.
    """

    spec: ChainSpec
    states: list[np.ndarray]
    noises: list[np.ndarray]
    x0_preds: list[np.ndarray]
    tapes: list | None

    @property
    def output(self) -> np.ndarray:
        return self.x0_preds[-1]


@dataclass(frozen=True)
class LossReport:
    eps_loss: float
    fidelity_loss: float
    lambda_fidelity: float = 1.0

    @property
    def total(self) -> float:
        return self.eps_loss + self.lambda_fidelity * self.fidelity_loss


def _check_congruent(a: np.ndarray, b: np.ndarray, what: str) -> None:
    if np.shape(a) != np.shape(b):
        raise ValueError(f"{what}: shape mismatch {np.shape(a)} vs {np.shape(b)}")


def _col(v, n: int) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    return v[:, None] if v.ndim == 1 else v


def forward_noise(x0: np.ndarray, t, eps: np.ndarray, sch: NoiseSchedule) -> np.ndarray:
    """alpha_t * x0 + sigma_t * eps; ``t`` may be a scalar or one step per row."""
    _check_congruent(x0, eps, "forward_noise")
    sch._check_step(t)
    t = np.asarray(t)
    return _col(sch.alpha[t], len(x0)) * x0 + _col(sch.sigma[t], len(x0)) * eps


def eps_weight(sch: NoiseSchedule, t, s=None) -> np.ndarray:
    """KL weight 0.5 * (SNR_s - SNR_t), with s = t - 1 by default."""
    t = np.asarray(t)
    if np.any(t < 1):
        raise ValueError("weighted eps loss needs t >= 1 (no predecessor for t=0)")
    s = t - 1 if s is None else np.asarray(s)
    if np.any(s >= t):
        raise ValueError("weighted eps loss needs s < t")
    snr = sch.snr
    return 0.5 * (snr[s] - snr[t])


def eps_loss(net, x0: np.ndarray, t, eps: np.ndarray, sch: NoiseSchedule,
             weighted: bool = False, s=None):
    """Noise-prediction loss mean_i w_i ||eps_i - eps_hat(x_t,i)||^2 and its parameter gradients."""
    x_t = forward_noise(x0, t, eps, sch)
    n = len(x0)
    w = eps_weight(sch, t, s) if weighted else np.ones(())
    w = np.broadcast_to(np.asarray(w, dtype=np.float64), (n,))
    eps_hat, tape = net.forward(x_t, t)
    diff = eps_hat - eps
    loss = float(np.mean(w * np.sum(diff * diff, axis=1)))
    grads, _ = net.backward(tape, 2.0 * w[:, None] * diff / n)
    return loss, grads


def _x0_from_eps(x_t, eps_hat, t: int, sch: NoiseSchedule) -> np.ndarray:
    a = sch.alpha[t]
    if a < ALPHA_GUARD:
        raise NumericError(f"alpha_{t} = {a:g} too small to invert")
    return (x_t - sch.sigma[t] * eps_hat) / a


def predict_x0(net, x_t: np.ndarray, t: int, sch: NoiseSchedule):
    """(x_t - sigma_t eps_hat) / alpha_t, plus the net tape."""
    sch._check_step(t)
    if sch.alpha[t] < ALPHA_GUARD:
        raise NumericError(f"alpha_{t} = {sch.alpha[t]:g} too small to invert")
    eps_hat, tape = net.forward(x_t, t)
    return _x0_from_eps(x_t, eps_hat, t, sch), tape


def posterior_mean(sch: NoiseSchedule, x_t: np.ndarray, x0: np.ndarray, s: int, t: int) -> np.ndarray:
    _check_congruent(x_t, x0, "posterior_mean")
    c_xt, c_x0 = posterior_coeffs(sch, s, t)
    return c_xt * x_t + c_x0 * x0


def ancestral_step(net, x_t: np.ndarray, s: int, t: int, noise: np.ndarray, sch: NoiseSchedule) -> np.ndarray:
    """Draw x_s from the forward posterior with x0 replaced by the net's prediction."""
    _check_congruent(x_t, noise, "ancestral_step")
    x0_hat, _ = predict_x0(net, x_t, t, sch)
    mean = posterior_mean(sch, x_t, x0_hat, s, t)
    return mean + np.sqrt(posterior_variance(sch, s, t)) * noise


def shortcut_step(x0_hat: np.ndarray, s: int, noise: np.ndarray, sch: NoiseSchedule) -> np.ndarray:
    """Re-noise a clean estimate straight to level s: alpha_s x0_hat + sigma_s noise."""
    return forward_noise(x0_hat, s, noise, sch)


def run_chain(net, x_init: np.ndarray, spec: ChainSpec, noises: Sequence[np.ndarray],
              sch: NoiseSchedule, keep_tapes: bool = True) -> ChainState:
    spec.check_range(sch.T)
    if len(noises) != spec.K:
        raise ValueError(f"expected {spec.K} noise batches, got {len(noises)}")
    for nz in noises:
        _check_congruent(x_init, nz, "run_chain noise")
    states, preds, tapes = [np.asarray(x_init, dtype=np.float64)], [], []
    for i, t in enumerate(spec.steps):
        x0_hat, tape = predict_x0(net, states[-1], t, sch)
        preds.append(x0_hat)
        if keep_tapes:
            tapes.append(tape)
        if i + 1 < spec.K:
            states.append(shortcut_step(x0_hat, spec.steps[i + 1], noises[i + 1], sch))
    return ChainState(spec, states, list(noises), preds, tapes if keep_tapes else None)


def chain_backward(net, chain: ChainState, grad_x0_hat: np.ndarray, sch: NoiseSchedule,
                   mode: str = "full"):
    """Parameter gradients of a loss on the chain output, unrolled through all steps.

    Noises are constants. ``mode="last_step"`` stops after the final prediction.
    """
    if chain.tapes is None or len(chain.tapes) != chain.spec.K:
        raise StateError("chain was run without tapes; rerun with keep_tapes=True")
    if mode not in ("full", "last_step"):
        raise ValueError(f"unknown chain gradient mode {mode!r}")
    _check_congruent(grad_x0_hat, chain.output, "chain_backward")
    steps = chain.spec.steps
    grads = None
    g = np.asarray(grad_x0_hat, dtype=np.float64)
    for i in range(chain.spec.K - 1, -1, -1):
        t = steps[i]
        a, sg = sch.alpha[t], sch.sigma[t]
        # x0_hat = (x - sigma eps_hat(x)) / alpha
        pg, dx_net = net.backward(chain.tapes[i], -sg / a * g)
        grads = pg if grads is None else add_grads(grads, pg)
        if mode == "last_step" or i == 0:
            break
        g_x = g / a + dx_net
        # x_{t_i} = alpha_{t_i} * x0_hat_{i-1} + sigma_{t_i} * noise
        g = sch.alpha[t] * g_x
    return grads


def fidelity_loss(x0: np.ndarray, x0_hat: np.ndarray) -> float:
    _check_congruent(x0, x0_hat, "fidelity_loss")
    d = np.asarray(x0) - np.asarray(x0_hat)
    return float(np.mean(np.sum(d * d, axis=1)))


def fidelity_grad(x0: np.ndarray, x0_hat: np.ndarray) -> np.ndarray:
    return 2.0 * (np.asarray(x0_hat) - np.asarray(x0)) / len(x0)


def prior_kl(x0: np.ndarray, sch: NoiseSchedule) -> float:
    """Mean KL(q(x_T | x0) || N(0, I)) per point.

    No parameter enters this term for a fixed schedule, so it is a diagnostic only
    (how much signal survives to step T), never part of the training loss.
    """
    x0 = np.asarray(x0, dtype=np.float64)
    a2, s2 = sch.alpha2[sch.T], sch.sigma2[sch.T]
    per_coord = 0.5 * (s2 + a2 * x0**2 - 1.0 - np.log(s2))
    return float(np.mean(np.sum(per_coord, axis=1)))


def iter_full(net, n: int, sch: NoiseSchedule, seed: int, dim: int = 2) -> Iterator[tuple[int, np.ndarray]]:
    """Yield (k, x_{T-k}) for k = 0..T along a full ancestral pass."""
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((n, dim))
    yield 0, x
    for k, t in enumerate(range(sch.T, 0, -1), start=1):
        x = ancestral_step(net, x, t - 1, t, rng.standard_normal((n, dim)), sch)
        yield k, x


def iter_shortcut(net, n: int, spec: ChainSpec, sch: NoiseSchedule, seed: int,
                  dim: int = 2, stochastic: bool = True) -> Iterator[tuple[int, np.ndarray]]:
    """Yield (k, x) after k net evaluations; k = K is the chain output x0_hat.

    With ``stochastic=False`` the re-noising draws are zero (state = alpha * x0_hat).
    """
    if spec.steps[0] != sch.T:
        raise ValueError(f"inference chain must start at T={sch.T}, got {spec.steps[0]}")
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((n, dim))
    yield 0, x
    for i, t in enumerate(spec.steps):
        x0_hat, _ = predict_x0(net, x, t, sch)
        if i + 1 == spec.K:
            yield i + 1, x0_hat
            return
        noise = rng.standard_normal((n, dim)) if stochastic else np.zeros((n, dim))
        x = shortcut_step(x0_hat, spec.steps[i + 1], noise, sch)
        yield i + 1, x


def _last(it):
    for _, x in it:
        pass
    return x


def sample_full(net, n: int, sch: NoiseSchedule, seed: int, dim: int = 2):

    return PointSet(_last(iter_full(net, n, sch, seed, dim)), generator="sample_full", seed=seed)


def sample_shortcut(net, n: int, spec: ChainSpec, sch: NoiseSchedule, seed: int,
                    dim: int = 2, stochastic: bool = True):

    pts = _last(iter_shortcut(net, n, spec, sch, seed, dim, stochastic))
    return PointSet(pts, generator=f"sample_shortcut_K{spec.K}", seed=seed)
