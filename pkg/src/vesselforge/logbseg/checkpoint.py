"""Versioned little-endian checkpoint container.

Layout: ``LOGB1`` magic, u32 config length, UTF-8 JSON network config, u32
tensor count, then per tensor: u16 name length, name, u8 ndim, u32 dims,
float64 payload in C order.
"""

from __future__ import annotations

import json
import struct

import numpy as np
import torch

from .network import NetConfig, SegNetwork

MAGIC = b"LOGB1"


class CheckpointError(ValueError):
    pass


def save_checkpoint(net: SegNetwork, path) -> None:
    cfg = json.dumps(net.cfg.to_dict(), sort_keys=True).encode("utf-8")
    state = net.state_dict()
    parts = [MAGIC, struct.pack("<I", len(cfg)), cfg, struct.pack("<I", len(state))]
    for name, t in state.items():
        arr = t.detach().cpu().numpy().astype("<f8")
        key = name.encode("utf-8")
        parts += [struct.pack("<H", len(key)), key, struct.pack("<B", arr.ndim)]
        parts += [struct.pack("<I", d) for d in arr.shape]
        parts.append(arr.tobytes(order="C"))
    with open(path, "wb") as fh:
        fh.write(b"".join(parts))


def load_checkpoint(path, dtype=torch.float32) -> SegNetwork:
    with open(path, "rb") as fh:
        raw = fh.read()
    if not raw.startswith(MAGIC):
        raise CheckpointError("not a LOGB1 checkpoint")
    pos = len(MAGIC)

    def take(fmt):
        nonlocal pos
        vals = struct.unpack_from(fmt, raw, pos)
        pos += struct.calcsize(fmt)
        return vals

    try:
        (n,) = take("<I")
        cfg = NetConfig.from_dict(json.loads(raw[pos:pos + n].decode("utf-8")))
        pos += n
        (count,) = take("<I")
        state = {}
        for _ in range(count):
            (klen,) = take("<H")
            name = raw[pos:pos + klen].decode("utf-8")
            pos += klen
            (ndim,) = take("<B")
            shape = take("<" + "I" * ndim) if ndim else ()
            size = int(np.prod(shape)) if ndim else 1
            arr = np.frombuffer(raw, dtype="<f8", count=size, offset=pos).reshape(shape)
            pos += 8 * size
            state[name] = torch.tensor(arr)
    except (struct.error, ValueError, KeyError) as exc:
        raise CheckpointError(f"corrupt checkpoint: {exc}") from exc
    if pos != len(raw):
        raise CheckpointError("trailing bytes after checkpoint payload")
    net = SegNetwork(cfg).to(dtype)
    net.load_state_dict({k: v.to(dtype) for k, v in state.items()})
    net.eval()
    return net
