"""Versioned binary checkpoints.

Layout (little-endian)::

    b"SDMC" | u32 version | u32 n_sections | section*
    section = u16 name_len | name (utf-8) | u8 kind | u64 payload_len | payload

``kind`` 1 is a JSON object (sorted keys, compact separators); ``kind`` 2 is a
float64 array stored as ``u8 ndim | u64 dim * ndim | f64 data``.
"""
from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .errors import CheckpointVersionError, ConfigError, ParseError
from .net import PARAM_NAMES, AdamState, DenoiserNet, NetConfig
from .schedule import ScheduleConfig

MAGIC = b"SDMC"
FORMAT_VERSION = 1
KIND_JSON = 1
KIND_F64 = 2


@dataclass(eq=False)
class Checkpoint:
    schedule_config: ScheduleConfig
    net_config: NetConfig
    params: dict[str, np.ndarray]
    optimizers: dict[str, AdamState]
    train_config: object  # TrainConfig
    epoch: int
    rng_state: dict
    format_version: int = FORMAT_VERSION

    @classmethod
    def capture(cls, sch_cfg, net: DenoiserNet, optimizers: dict[str, AdamState], train_cfg,
                epoch: int, rng_state: dict):
        params = {k: np.array(v, dtype=np.float64) for k, v in net.params.items()}
        return cls(sch_cfg, net.config, params, {n: o.copy() for n, o in optimizers.items()},
                   train_cfg, epoch, json.loads(json.dumps(rng_state)))

    def restore_net(self) -> DenoiserNet:
        return DenoiserNet(self.net_config, {k: v.copy() for k, v in self.params.items()})

    def restore_optimizers(self) -> dict[str, AdamState]:
        return {n: o.copy() for n, o in self.optimizers.items()}

    def meta(self) -> dict:
        return {
            "schedule_config": asdict(self.schedule_config),
            "net_config": asdict(self.net_config),
            "train_config": asdict(self.train_config),
            "epoch": self.epoch,
            "optimizers": {n: {"step": o.step, "lr": o.lr, "beta1": o.beta1, "beta2": o.beta2, "eps": o.eps}
                           for n, o in self.optimizers.items()},
            "rng_state": self.rng_state,
        }

    def to_bytes(self) -> bytes:
        sections = [("meta", KIND_JSON, _json_bytes(self.meta()))]
        groups = [("param", self.params)]
        for n in sorted(self.optimizers):
            groups += [(f"adam_m:{n}", self.optimizers[n].m), (f"adam_v:{n}", self.optimizers[n].v)]
        for prefix, arrays in groups:
            for k in PARAM_NAMES:
                sections.append((f"{prefix}:{k}", KIND_F64, _array_bytes(arrays[k])))
        out = [MAGIC, struct.pack("<II", self.format_version, len(sections))]
        for name, kind, payload in sections:
            nb = name.encode()
            out.append(struct.pack("<H", len(nb)) + nb + struct.pack("<BQ", kind, len(payload)))
            out.append(payload)
        return b"".join(out)

    @classmethod
    def from_bytes(cls, buf: bytes, path=None) -> "Checkpoint":
        from .train import TrainConfig

        if buf[:4] != MAGIC:
            raise ParseError("not a checkpoint (bad magic)", path)
        if len(buf) < 12:
            raise ParseError("truncated checkpoint header", path)
        version, n_sections = struct.unpack_from("<II", buf, 4)
        if version != FORMAT_VERSION:
            raise CheckpointVersionError(
                f"unsupported checkpoint version {version} (this build reads {FORMAT_VERSION})", path)
        pos, sections = 12, {}
        try:
            for _ in range(n_sections):
                (nlen,) = struct.unpack_from("<H", buf, pos)
                name = buf[pos + 2:pos + 2 + nlen].decode()
                pos += 2 + nlen
                kind, plen = struct.unpack_from("<BQ", buf, pos)
                pos += 9
                payload = buf[pos:pos + plen]
                if len(payload) != plen:
                    raise ParseError(f"section {name!r} truncated", path)
                pos += plen
                if kind == KIND_JSON:
                    sections[name] = json.loads(payload.decode())
                elif kind == KIND_F64:
                    sections[name] = _array_from(payload)
                else:
                    raise ParseError(f"section {name!r} has unknown kind {kind}", path)
        except struct.error as exc:
            raise ParseError(f"truncated checkpoint: {exc}", path) from None
        if pos != len(buf):
            raise ParseError("trailing bytes after last section", path)
        try:
            meta = sections["meta"]
            prefixes = ["param"] + [f"adam_{mv}:{n}" for n in sorted(meta["optimizers"]) for mv in "mv"]
            arrays = {p: {k: sections[f"{p}:{k}"] for k in PARAM_NAMES} for p in prefixes}
        except KeyError as exc:
            raise ParseError(f"missing checkpoint section {exc}", path) from None
        net_cfg = NetConfig(**meta["net_config"])
        for p, arrs in arrays.items():
            for k, shape in DenoiserNet.param_shapes(net_cfg).items():
                if arrs[k].shape != shape:
                    raise ConfigError(f"{p}:{k} has shape {arrs[k].shape}, net config implies {shape}")
        optimizers = {n: AdamState(arrays[f"adam_m:{n}"], arrays[f"adam_v:{n}"], **h)
                      for n, h in meta["optimizers"].items()}
        return cls(ScheduleConfig(**meta["schedule_config"]), net_cfg, arrays["param"], optimizers,
                   TrainConfig(**meta["train_config"]), meta["epoch"], meta["rng_state"], version)

    def save(self, path) -> None:
        Path(path).write_bytes(self.to_bytes())

    @classmethod
    def load(cls, path) -> "Checkpoint":
        return cls.from_bytes(Path(path).read_bytes(), path)


def _json_bytes(obj) -> bytes:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=False).encode()


def _array_bytes(a: np.ndarray) -> bytes:
    a = np.ascontiguousarray(a, dtype="<f8")
    return struct.pack(f"<B{a.ndim}Q", a.ndim, *a.shape) + a.tobytes()


def _array_from(payload: bytes) -> np.ndarray:
    ndim = payload[0]
    shape = struct.unpack_from(f"<{ndim}Q", payload, 1)
    data = payload[1 + 8 * ndim:]
    if len(data) != 8 * int(np.prod(shape, dtype=np.int64)):
        raise ParseError(f"array payload size does not match shape {shape}")
    return np.frombuffer(data, dtype="<f8").reshape(shape).astype(np.float64)
