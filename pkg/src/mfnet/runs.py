"""Run directories: lock file, atomic writes, manifests, net checkpoints.

Checkpoint formats
------------------
JSON (default): one object with "kind", "extras" (tau, k, seed, ...) and a
"nets" list; each net records m, d, radius, signs, weights and init_weights
(row-major nested lists).

Binary (.bin): little-endian throughout. Layout:
  magic b"MFNETCK1"
  uint32 n_nets
  per net: uint32 m, uint32 d, float64 radius,
           float64[m*d] weights (row-major),
           float64[m*d] init_weights (row-major),
           int8[m] signs
  followed by the UTF-8 JSON of {"kind": ..., "extras": ...}.
"""

from __future__ import annotations

import hashlib
import json
import os
import struct
import time
from contextlib import contextmanager
from pathlib import Path
from typing import Iterable, Optional

import numpy as np

from .errors import MfnetError
from .nets import TwoLayerNet

_MAGIC = b"MFNETCK1"


def sha256_of(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def atomic_write_text(path: Path, text: str) -> None:
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text)
    os.replace(tmp, path)


def atomic_write_bytes(path: Path, data: bytes) -> None:
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(data)
    os.replace(tmp, path)


def write_json(path: Path, obj) -> None:
    atomic_write_text(path, json.dumps(obj, indent=1, sort_keys=True) + "\n")


@contextmanager
def run_lock(run_dir: Path):
    """Exclusive ownership of a run directory via an O_EXCL lock file."""
    run_dir.mkdir(parents=True, exist_ok=True)
    lock = run_dir / ".lock"
    try:
        fd = os.open(lock, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
    except FileExistsError:
        raise MfnetError(
            f"run directory {run_dir} is locked by another process "
            f"(remove {lock} if that process is gone)"
        ) from None
    try:
        os.write(fd, str(os.getpid()).encode())
        os.close(fd)
        yield run_dir
    finally:
        lock.unlink(missing_ok=True)


class ManifestBuilder:
    """Collects resolved config, sizes, timings, and output digests; the
    manifest is the one artifact allowed to differ between identical reruns
    (it holds wall-clock timings)."""

    def __init__(self, run_dir: Path, config: dict, command: str):
        from . import __version__

        self.run_dir = Path(run_dir)
        self.data = {
            "command": command,
            "code_version": __version__,
            "resolved_config": config,
            "sizes": {},
            "timings": {},
            "outputs": [],
        }
        self._t0 = time.perf_counter()

    def add_size(self, name: str, value) -> None:
        self.data["sizes"][name] = value

    def add_timing(self, name: str, seconds: float) -> None:
        self.data["timings"][name] = seconds

    def add_output(self, path: Path) -> None:
        path = Path(path)
        self.data["outputs"].append(
            {
                "path": str(path.relative_to(self.run_dir)),
                "sha256": sha256_of(path),
                "bytes": path.stat().st_size,
            }
        )

    def write(self) -> Path:
        self.data["timings"]["total"] = time.perf_counter() - self._t0
        out = self.run_dir / "manifest.json"
        write_json(out, self.data)
        return out


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------


def _net_to_dict(net: TwoLayerNet) -> dict:
    return {
        "m": net.width,
        "d": net.in_dim,
        "radius": net.radius,
        "signs": [int(b) for b in net.signs],
        "weights": net.weights.tolist(),
        "init_weights": net.init_weights.tolist(),
    }


def _net_from_dict(obj: dict) -> TwoLayerNet:
    return TwoLayerNet(
        weights=np.asarray(obj["weights"], dtype=float),
        signs=np.asarray(obj["signs"], dtype=float),
        init_weights=np.asarray(obj["init_weights"], dtype=float),
        radius=float(obj["radius"]),
    )


def save_checkpoint(
    path: Path, nets: Iterable[TwoLayerNet], kind: str, extras: Optional[dict] = None
) -> None:
    nets = list(nets)
    payload = {
        "format": "mfnet-checkpoint-json",
        "kind": kind,
        "extras": extras or {},
        "nets": [_net_to_dict(n) for n in nets],
    }
    path = Path(path)
    if path.suffix == ".bin":
        blob = bytearray()
        blob += _MAGIC
        blob += struct.pack("<I", len(nets))
        for net in nets:
            m, d = net.width, net.in_dim
            blob += struct.pack("<IId", m, d, net.radius)
            blob += net.weights.astype("<f8").tobytes(order="C")
            blob += net.init_weights.astype("<f8").tobytes(order="C")
            blob += net.signs.astype("<i1").tobytes()
        blob += json.dumps({"kind": kind, "extras": extras or {}}, sort_keys=True).encode()
        atomic_write_bytes(path, bytes(blob))
    else:
        write_json(path, payload)


def load_checkpoint(path: str | Path) -> dict:
    """Returns {"kind": ..., "extras": ..., "nets": tuple[TwoLayerNet, ...]}."""
    path = Path(path)
    if path.suffix == ".bin":
        blob = path.read_bytes()
        if blob[: len(_MAGIC)] != _MAGIC:
            raise MfnetError(f"{path} is not an mfnet binary checkpoint")
        off = len(_MAGIC)
        (n_nets,) = struct.unpack_from("<I", blob, off)
        off += 4
        nets = []
        for _ in range(n_nets):
            m, d, radius = struct.unpack_from("<IId", blob, off)
            off += 16
            w = np.frombuffer(blob, dtype="<f8", count=m * d, offset=off).reshape(m, d)
            off += 8 * m * d
            w0 = np.frombuffer(blob, dtype="<f8", count=m * d, offset=off).reshape(m, d)
            off += 8 * m * d
            signs = np.frombuffer(blob, dtype="<i1", count=m, offset=off).astype(float)
            off += m
            nets.append(
                TwoLayerNet(
                    weights=w.copy(), signs=signs, init_weights=w0.copy(), radius=radius
                )
            )
        meta = json.loads(blob[off:].decode())
        return {"kind": meta["kind"], "extras": meta["extras"], "nets": tuple(nets)}
    obj = json.loads(path.read_text())
    return {
        "kind": obj["kind"],
        "extras": obj["extras"],
        "nets": tuple(_net_from_dict(n) for n in obj["nets"]),
    }
