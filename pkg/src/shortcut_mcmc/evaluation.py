"""Sample-quality metrics and snapshot dumps."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .data import PointSet, save_points
from .diffusion import ChainSpec, iter_full, iter_shortcut
from .schedule import NoiseSchedule

MAX_POINTS = 4096
_BLOCK = 512


def _as_points(a) -> np.ndarray:
    pts = a.points if isinstance(a, PointSet) else np.asarray(a, dtype=np.float64)
    if pts.ndim != 2 or len(pts) == 0:
        raise ValueError("metric inputs must be non-empty (N, d) point sets")
    if len(pts) > MAX_POINTS:
        raise ValueError(f"exact metrics are limited to {MAX_POINTS} points, got {len(pts)}")
    return pts


def _dist(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return np.sqrt(np.sum((a[:, None, :] - b[None, :, :]) ** 2, axis=2))


def _mean_dist(a: np.ndarray, b: np.ndarray) -> float:
    # Fixed block order so the result does not depend on how pairs are visited.
    total = 0.0
    for i in range(0, len(a), _BLOCK):
        total += float(np.sum(_dist(a[i:i + _BLOCK], b)))
    return total / (len(a) * len(b))


def energy_distance(A, B) -> float:
    """2 E|a-b| - E|a-a'| - E|b-b'| over all pairs (V-statistic)."""
    a, b = _as_points(A), _as_points(B)
    if len(b) < len(a) or (len(a) == len(b) and tuple(map(tuple, b)) < tuple(map(tuple, a))):
        a, b = b, a  # canonical order keeps E(A, B) == E(B, A) bitwise
    e = 2.0 * _mean_dist(a, b) - _mean_dist(a, a) - _mean_dist(b, b)
    return max(e, 0.0)


def _nn_mean(a: np.ndarray, b: np.ndarray) -> float:
    mins = np.concatenate([_dist(a[i:i + _BLOCK], b).min(axis=1) for i in range(0, len(a), _BLOCK)])
    return float(np.mean(mins))


def chamfer(A, B) -> float:
    a, b = _as_points(A), _as_points(B)
    return _nn_mean(a, b) + _nn_mean(b, a)


@dataclass(frozen=True)
class MetricReport:
    energy_distance: float
    chamfer: float
    n_gen: int
    n_real: int
    sampler: str

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)


def evaluate(gen, real, sampler: str = "unknown") -> MetricReport:
    return MetricReport(energy_distance(gen, real), chamfer(gen, real),
                        len(_as_points(gen)), len(_as_points(real)), sampler)


def snapshot_grid(net, sch: NoiseSchedule, seed: int, out_dir=None, *, n: int = 1024,
                  spec: ChainSpec | None = None, ks=None, sampler: str = "shortcut"):
    """Run a sampler and keep intermediate batches, keyed by k = net evaluations so far.

    Shortcut runs keep every k = 0..K (k = K is the final x0 estimate); full runs keep
    the requested ``ks`` (default: all). Files are written as ``snap_<sampler>_<k>.csv``.
    """
    if sampler == "shortcut":
        if spec is None:
            raise ValueError("shortcut snapshots need a ChainSpec")
        it, keep = iter_shortcut(net, n, spec, sch, seed), None
    elif sampler == "full":
        it = iter_full(net, n, sch, seed)
        keep = None if ks is None else set(int(k) for k in ks)
        if keep is not None and any(k < 0 or k > sch.T for k in keep):
            raise ValueError(f"snapshot k values must lie in [0, {sch.T}]")
    else:
        raise ValueError(f"unknown sampler {sampler!r}")

    snaps = []
    for k, x in it:
        if keep is None or k in keep:
            snaps.append((k, PointSet(x, generator=f"snap_{sampler}", seed=seed, extra={"k": k})))
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        for k, ps in snaps:
            save_points(ps, out / f"snap_{sampler}_{k}.csv", write_meta=False)
    return snaps
