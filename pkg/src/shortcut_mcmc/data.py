"""Synthetic 2D swirl data and the points CSV format."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import NumericError, ParseError

THETA_MIN = 0.5 * np.pi
THETA_MAX = 3.0 * np.pi
HEADER = ["x", "y"]


@dataclass(frozen=True, eq=False)
class PointSet:
    """An N x 2 point batch plus where it came from.

    ``mean``/``std`` are the per-coordinate statistics removed during normalization
    (None for point sets that were never normalized, e.g. samples).
    """

    points: np.ndarray
    generator: str = "unknown"
    seed: int | None = None
    mean: np.ndarray | None = None
    std: np.ndarray | None = None
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        pts = np.array(self.points, dtype=np.float64)
        if pts.ndim != 2 or pts.shape[1] != 2:
            raise ValueError(f"points must have shape (N, 2), got {pts.shape}")
        if len(pts) < 1:
            raise ValueError("a point set needs at least one point")
        if not np.all(np.isfinite(pts)):
            raise NumericError("point set contains non-finite coordinates")
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)

    def __len__(self) -> int:
        return len(self.points)

    def denormalize(self) -> np.ndarray:
        if self.mean is None or self.std is None:
            return self.points.copy()
        return self.points * self.std + self.mean

    def metadata(self) -> dict[str, str]:
        meta = {"generator": self.generator, "n": str(len(self))}
        if self.seed is not None:
            meta["seed"] = str(self.seed)
        if self.mean is not None:
            meta["mean_x"], meta["mean_y"] = (repr(float(v)) for v in self.mean)
        if self.std is not None:
            meta["std_x"], meta["std_y"] = (repr(float(v)) for v in self.std)
        meta.update({k: str(v) for k, v in self.extra.items()})
        return meta


def normalize(points: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    mean = points.mean(axis=0)
    centered = points - mean
    std = np.sqrt(np.mean(centered**2, axis=0))
    return centered / std, mean, std


def generate_swirl(n: int = 1024, seed: int = 0, jitter: float = 0.01) -> PointSet:
    """Single-arm Archimedean spiral, normalized to zero mean and unit std.

    theta = theta_min + (theta_max - theta_min) * sqrt(u), point = theta (cos, sin) / theta_max,
    plus isotropic Gaussian jitter.
    """
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    if jitter < 0:
        raise ValueError(f"jitter must be >= 0, got {jitter}")
    rng = np.random.default_rng(seed)
    u = rng.random(n)
    theta = THETA_MIN + (THETA_MAX - THETA_MIN) * np.sqrt(u)
    raw = np.stack([theta * np.cos(theta), theta * np.sin(theta)], axis=1) / THETA_MAX
    if jitter > 0:
        raw = raw + jitter * rng.standard_normal((n, 2))
    if n == 1:
        pts, mean, std = raw - raw, raw[0], np.ones(2)
    else:
        pts, mean, std = normalize(raw)
    return PointSet(pts, generator="swirl", seed=seed, mean=mean, std=std,
                    extra={"jitter": repr(float(jitter))})


def _meta_path(path: Path) -> Path:
    return path.with_name(path.name + ".meta")


def save_points(ps: PointSet, path, write_meta: bool = True) -> None:
    path = Path(path)
    with open(path, "w", newline="") as fh:
        fh.write(",".join(HEADER) + "\n")
        for x, y in ps.points:
            fh.write(f"{float(x)!r},{float(y)!r}\n")
    if write_meta:
        with open(_meta_path(path), "w") as fh:
            for k, v in ps.metadata().items():
                fh.write(f"{k}={v}\n")


def _read_meta(path: Path) -> dict[str, str]:
    meta = {}
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            if "=" not in line:
                raise ParseError("expected key=value", path, lineno)
            k, v = line.split("=", 1)
            meta[k] = v
    return meta


def load_points(path) -> PointSet:
    path = Path(path)
    rows = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise ParseError("empty file (expected header 'x,y')", path, 1)
        if [h.strip() for h in header] != HEADER:
            raise ParseError(f"bad header {header!r}, expected 'x,y'", path, 1)
        for row in reader:
            lineno = reader.line_num
            if not row:
                continue
            if len(row) != 2:
                raise ParseError(f"expected 2 fields, got {len(row)}", path, lineno)
            try:
                rows.append((float(row[0]), float(row[1])))
            except ValueError:
                raise ParseError(f"not a number: {row!r}", path, lineno) from None
    if not rows:
        raise ParseError("no data rows", path, 2)
    pts = np.array(rows)
    if not np.all(np.isfinite(pts)):
        raise ParseError("non-finite coordinate", path)

    kwargs = {}
    mp = _meta_path(path)
    if mp.exists():
        meta = _read_meta(mp)
        kwargs["generator"] = meta.pop("generator", "unknown")
        if "seed" in meta:
            kwargs["seed"] = int(meta.pop("seed"))
        if "mean_x" in meta:
            kwargs["mean"] = np.array([float(meta.pop("mean_x")), float(meta.pop("mean_y"))])
        if "std_x" in meta:
            kwargs["std"] = np.array([float(meta.pop("std_x")), float(meta.pop("std_y"))])
        meta.pop("n", None)
        kwargs["extra"] = meta
    else:
        kwargs["generator"] = f"file:{path.name}"
    return PointSet(pts, **kwargs)
