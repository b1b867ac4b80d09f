"""Binary checkpoint format.

Layout (all integers little-endian)::

    offset  size  field
    0       8     magic  b"ADCKPT\\x00\\x00"
    8       2     format version (uint16, currently 1)
    10      4     header length H in bytes (uint32)
    14      H     UTF-8 JSON header: {"network": {...}, "layout": [...], "global_step": int}
    14+H    8     parameter count N (uint64)
    22+H    8*N   parameters as float64 little-endian, in layout order
"""
from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .network import ActorCriticNet, NetworkSpec

MAGIC = b"ADCKPT\x00\x00"
VERSION = 1


def save_checkpoint(path, net: ActorCriticNet, params: np.ndarray, global_step: int = 0) -> Path:
    path = Path(path)
    params = np.asarray(params, dtype="<f8")
    if params.shape != (net.n_params,):
        raise ValueError("parameter vector does not match the network layout")
    header = json.dumps({"network": net.spec.to_dict(), "layout": net.layout.describe(),
                         "global_step": int(global_step)}, sort_keys=True).encode()
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<HI", VERSION, len(header)))
        f.write(header)
        f.write(struct.pack("<Q", len(params)))
        f.write(params.tobytes())
    return path


def load_checkpoint(path):
    """Return ``(net, params, header)``."""
    data = Path(path).read_bytes()
    if data[:8] != MAGIC:
        raise ValueError(f"{path} is not a checkpoint file")
    version, hlen = struct.unpack_from("<HI", data, 8)
    if version != VERSION:
        raise ValueError(f"unsupported checkpoint version {version}")
    header = json.loads(data[14:14 + hlen])
    (count,) = struct.unpack_from("<Q", data, 14 + hlen)
    start = 22 + hlen
    params = np.frombuffer(data[start:start + 8 * count], dtype="<f8").astype(np.float64)
    net = ActorCriticNet(NetworkSpec(**header["network"]))
    if count != net.n_params or net.layout.describe() != header["layout"]:
        raise ValueError("checkpoint layout does not match its network description")
    return net, params, header
