"""Shortcut-MCMC training loop and the eps-loss-only baseline."""
from __future__ import annotations

import logging
import math
import time
from dataclasses import asdict, dataclass, field, fields
from typing import Callable

import numpy as np

from . import diffusion as dfn
from .checkpoint import Checkpoint
from .data import PointSet
from .errors import ConfigError, NumericError
from .evaluation import chamfer, energy_distance
from .net import AdamState, DenoiserNet, NetConfig, adam_step, add_grads
from .schedule import NoiseSchedule, ScheduleConfig, build_schedule

log = logging.getLogger(__name__)

MODES = ("baseline", "shortcut")
CHAIN_GRADS = ("full", "last_step")
CHAIN_INITS = ("teacher_forced", "pure_noise")
# Wall-clock time lives in a separate table so the log itself is reproducible byte for byte.
LOG_COLUMNS = ("epoch", "eps_loss", "fidelity_loss", "energy_distance", "chamfer", "full_energy_distance")
TIMING_COLUMNS = ("epoch", "seconds")


@dataclass(frozen=True)
class TrainConfig:
    mode: str = "shortcut"
    T: int = 200
    K: int = 10
    epochs: int = 2000
    batch_size: int = 0  # 0 = full batch
    lr: float = 1e-3
    lambda_fidelity: float = 1.0
    chain_grad: str = "full"
    chain_init: str = "teacher_forced"
    weighted_eps_loss: bool = False
    combined_step: bool = False
    shared_optimizer: bool = False
    seed: int = 0
    eval_every: int = 100
    eval_n: int = 1024
    full_eval_every: int = 10  # in units of evaluations

    def validate(self) -> None:
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.chain_grad not in CHAIN_GRADS:
            raise ConfigError(f"chain_grad must be one of {CHAIN_GRADS}, got {self.chain_grad!r}")
        if self.chain_init not in CHAIN_INITS:
            raise ConfigError(f"chain_init must be one of {CHAIN_INITS}, got {self.chain_init!r}")
        if self.T < 2:
            raise ConfigError("T must be >= 2")
        if not 1 <= self.K <= self.T:
            raise ConfigError(f"need 1 <= K <= T, got K={self.K}, T={self.T}")
        if self.epochs < 1:
            raise ConfigError("epochs must be >= 1")
        if self.batch_size < 0:
            raise ConfigError("batch_size must be >= 0")
        if not self.lr > 0:
            raise ConfigError("lr must be > 0")
        if self.lambda_fidelity < 0:
            raise ConfigError("lambda_fidelity must be >= 0")
        if self.eval_every < 0 or self.eval_n < 1 or self.full_eval_every < 0:
            raise ConfigError("eval_every/full_eval_every must be >= 0 and eval_n >= 1")

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        names = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in names})


@dataclass
class TrainRecord:
    epoch: int
    eps_loss: float
    fidelity_loss: float
    energy_distance: float | None = None
    chamfer: float | None = None
    seconds: float = 0.0
    full_energy_distance: float | None = None


@dataclass
class TrainLog:
    records: list[TrainRecord] = field(default_factory=list)

    def append(self, rec: TrainRecord) -> None:
        if self.records and rec.epoch <= self.records[-1].epoch:
            raise ValueError("epoch indices must increase")
        self.records.append(rec)

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.records], dtype=float)

    def evaluated(self) -> list[TrainRecord]:
        return [r for r in self.records if r.energy_distance is not None]

    def write_csv(self, path, timing_path=None) -> None:
        with open(path, "w", newline="") as fh:
            fh.write(",".join(LOG_COLUMNS) + "\n")
            fh.writelines(log_row(r) for r in self.records)
        if timing_path is not None:
            with open(timing_path, "w", newline="") as fh:
                fh.write(",".join(TIMING_COLUMNS) + "\n")
                fh.writelines(timing_row(r) for r in self.records)


def _fmt(v) -> str:
    return "" if v is None else repr(float(v))


def log_row(r: TrainRecord) -> str:
    return ",".join([str(r.epoch), _fmt(r.eps_loss), _fmt(r.fidelity_loss), _fmt(r.energy_distance),
                     _fmt(r.chamfer), _fmt(r.full_energy_distance)]) + "\n"


def timing_row(r: TrainRecord) -> str:
    return f"{r.epoch},{r.seconds:.6f}\n"


class TrainRngs:
    """Independent streams for init, minibatching, eps/t draws and chain draws."""

    NAMES = ("init", "data", "noise", "chain")

    def __init__(self, seed: int):
        children = np.random.SeedSequence(seed).spawn(len(self.NAMES))
        for name, ss in zip(self.NAMES, children):
            setattr(self, name, np.random.Generator(np.random.PCG64(ss)))

    def state(self) -> dict:
        return {n: getattr(self, n).bit_generator.state for n in self.NAMES}

    def set_state(self, state: dict) -> None:
        for n in self.NAMES:
            getattr(self, n).bit_generator.state = state[n]


class TrainingDiverged(NumericError):
    def __init__(self, message: str, last_good: Checkpoint | None):
        super().__init__(message)
        self.last_good = last_good


def _batches(n: int, batch_size: int, rng: np.random.Generator):
    if batch_size == 0 or batch_size >= n:
        yield np.arange(n)
        return
    perm = rng.permutation(n)
    for i in range(0, n, batch_size):
        yield perm[i:i + batch_size]


def _check_finite(value: float, what: str, epoch: int | None) -> None:
    if not math.isfinite(value):
        raise NumericError(f"non-finite {what} at epoch {epoch}")


def eps_phase(net, x0: np.ndarray, cfg: TrainConfig, sch: NoiseSchedule, rng: np.random.Generator):
    """Per-element t ~ U{1..T}, returns (loss, grads) of the noise-prediction objective."""
    n = len(x0)
    t = rng.integers(1, sch.T + 1, size=n)
    eps = rng.standard_normal(x0.shape)
    return dfn.eps_loss(net, x0, t, eps, sch, weighted=cfg.weighted_eps_loss)


def fidelity_phase(net, x0: np.ndarray, cfg: TrainConfig, sch: NoiseSchedule, rng: np.random.Generator):
    """Run a random K-step shortcut chain and return (fidelity loss, grads)."""
    spec = dfn.sample_chain_spec(rng, sch.T, cfg.K)
    noises = [rng.standard_normal(x0.shape) for _ in range(spec.K)]
    if cfg.chain_init == "teacher_forced":
        x_init = dfn.forward_noise(x0, spec.steps[0], noises[0], sch)
    else:
        x_init = noises[0]
    chain = dfn.run_chain(net, x_init, spec, noises, sch)
    loss = dfn.fidelity_loss(x0, chain.output)
    grads = dfn.chain_backward(net, chain, dfn.fidelity_grad(x0, chain.output), sch, mode=cfg.chain_grad)
    return loss, grads


def train_epoch(net: DenoiserNet, opts: dict[str, AdamState], data: PointSet, cfg: TrainConfig,
                sch: NoiseSchedule, rngs: TrainRngs, epoch: int | None = None,
                callback: Callable[[str, DenoiserNet], None] | None = None) -> dfn.LossReport:
    """One pass of the training algorithm over ``data``; updates ``net`` and ``opts`` in place.

    The eps step and the fidelity step each keep their own Adam moments (``opts["eps"]``,
    ``opts["fidelity"]``); chain gradients are orders of magnitude larger than eps
    gradients and would otherwise swamp the shared second-moment estimate.
    ``cfg.shared_optimizer`` routes both steps through ``opts["eps"]``.
    """
    f_opt = opts["eps"] if cfg.shared_optimizer else opts["fidelity"]
    pts = data.points
    eps_losses, fid_losses = [], []
    for idx in _batches(len(pts), cfg.batch_size, rngs.data):
        x0 = pts[idx]
        e_loss, e_grads = eps_phase(net, x0, cfg, sch, rngs.noise)
        _check_finite(e_loss, "eps loss", epoch)
        eps_losses.append(e_loss)
        if cfg.mode == "baseline":
            adam_step(net, e_grads, opts["eps"])
            if callback:
                callback("eps", net)
            continue
        if cfg.combined_step:
            f_loss, f_grads = fidelity_phase(net, x0, cfg, sch, rngs.chain)
            _check_finite(f_loss, "fidelity loss", epoch)
            adam_step(net, add_grads(e_grads, f_grads, cfg.lambda_fidelity), opts["eps"])
            if callback:
                callback("combined", net)
        else:
            adam_step(net, e_grads, opts["eps"])
            if callback:
                callback("eps", net)
            f_loss, f_grads = fidelity_phase(net, x0, cfg, sch, rngs.chain)
            _check_finite(f_loss, "fidelity loss", epoch)
            adam_step(net, {k: cfg.lambda_fidelity * g for k, g in f_grads.items()}, f_opt)
            if callback:
                callback("fidelity", net)
        fid_losses.append(f_loss)
    return dfn.LossReport(float(np.mean(eps_losses)),
                          float(np.mean(fid_losses)) if fid_losses else 0.0,
                          cfg.lambda_fidelity)


def eval_seed(seed: int, epoch: int) -> int:
    """Sampling seed for evaluation at ``epoch``; kept apart from the training streams."""
    return int(np.random.SeedSequence([seed, 0x5EED, epoch]).generate_state(1)[0])


def evaluate_net(net, sch: NoiseSchedule, reference: PointSet, K: int, n: int, seed: int,
                 full: bool = False) -> dict:
    out = {}
    gen = dfn.sample_shortcut(net, n, dfn.inference_spec(sch.T, K), sch, seed)
    out["energy_distance"] = energy_distance(gen, reference)
    out["chamfer"] = chamfer(gen, reference)
    if full:
        out["full_energy_distance"] = energy_distance(dfn.sample_full(net, n, sch, seed), reference)
    return out


def initial_state(cfg: TrainConfig, sch_cfg: ScheduleConfig | None = None,
                  net_cfg: NetConfig | None = None) -> Checkpoint:
    """Epoch-0 checkpoint: fresh parameters, zero optimizer moments, seeded streams."""
    cfg.validate()
    sch_cfg = sch_cfg or ScheduleConfig(T=cfg.T)
    if sch_cfg.T != cfg.T:
        raise ConfigError(f"schedule T={sch_cfg.T} disagrees with train T={cfg.T}")
    sch_cfg.validate()
    net_cfg = net_cfg or NetConfig(max_step=cfg.T)
    if net_cfg.max_step != cfg.T:
        raise ConfigError(f"net max_step={net_cfg.max_step} disagrees with T={cfg.T}")
    rngs = TrainRngs(cfg.seed)
    net = DenoiserNet.init(net_cfg, rngs.init)
    opts = {"eps": AdamState.for_net(net, lr=cfg.lr), "fidelity": AdamState.for_net(net, lr=cfg.lr)}
    return Checkpoint.capture(sch_cfg, net, opts, cfg, 0, rngs.state())


def fit(data: PointSet, cfg: TrainConfig, sch_cfg: ScheduleConfig | None = None,
        net_cfg: NetConfig | None = None, *, reference: PointSet | None = None,
        resume: Checkpoint | None = None, checkpoint_every: int = 0,
        on_checkpoint: Callable[[Checkpoint], None] | None = None,
        on_record: Callable[[TrainRecord], None] | None = None):
    """Train for ``cfg.epochs`` epochs (continuing from ``resume`` if given).

    Returns ``(net, TrainLog, Checkpoint)``. On a non-finite loss, raises
    ``TrainingDiverged`` carrying the last good checkpoint.
    """
    cfg.validate()
    state = resume if resume is not None else initial_state(cfg, sch_cfg, net_cfg)
    if resume is not None:
        # Only the epoch budget may change across a resume.
        if {**asdict(state.train_config), "epochs": 0} != {**asdict(cfg), "epochs": 0}:
            raise ConfigError("resume checkpoint was trained with a different configuration")
    sch = build_schedule(state.schedule_config)
    net, opts = state.restore_net(), state.restore_optimizers()
    rngs = TrainRngs(cfg.seed)
    rngs.set_state(state.rng_state)
    reference = reference if reference is not None else data

    tlog = TrainLog()
    last_good = state
    for epoch in range(state.epoch + 1, cfg.epochs + 1):
        t0 = time.perf_counter()
        try:
            report = train_epoch(net, opts, data, cfg, sch, rngs, epoch=epoch)
        except NumericError as exc:
            raise TrainingDiverged(f"{exc}; last good checkpoint at epoch {last_good.epoch}", last_good) from exc
        rec = TrainRecord(epoch, report.eps_loss, report.fidelity_loss)
        if cfg.eval_every and (epoch % cfg.eval_every == 0 or epoch == cfg.epochs):
            # Derived from the epoch (not a running count) so resumed runs keep the cadence.
            full = bool(cfg.full_eval_every) and epoch % (cfg.eval_every * cfg.full_eval_every) == 0
            m = evaluate_net(net, sch, reference, cfg.K, cfg.eval_n, eval_seed(cfg.seed, epoch), full=full)
            rec.energy_distance, rec.chamfer = m["energy_distance"], m["chamfer"]
            rec.full_energy_distance = m.get("full_energy_distance")
            log.info("epoch %d eps %.5f fid %.5f energy %.5f", epoch, rec.eps_loss,
                     rec.fidelity_loss, rec.energy_distance)
        rec.seconds = time.perf_counter() - t0
        tlog.append(rec)
        if on_record:
            on_record(rec)
        if checkpoint_every and epoch % checkpoint_every == 0:
            last_good = Checkpoint.capture(state.schedule_config, net, opts, cfg, epoch, rngs.state())
            if on_checkpoint:
                on_checkpoint(last_good)
    final = Checkpoint.capture(state.schedule_config, net, opts, cfg, max(cfg.epochs, state.epoch), rngs.state())
    return net, tlog, final
