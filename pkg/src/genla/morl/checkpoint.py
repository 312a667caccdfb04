"""Checkpoint container (format version 1).

Little-endian layout::

    magic      8 bytes   b"GENLACKP"
    version    u32       container format version (1)
    hlen       u32       length of the JSON header in bytes
    header     hlen      UTF-8 JSON: {"architecture": {...}, "state_schema_version": int,
                         "model_version": int, "optimizer": {"lr", "beta1", "beta2", "eps",
                         "t"}, "n_params": int, "metadata": {...}}
    params     f64[n]    flat network parameters
    adam_m     f64[n]    first-moment estimate
    adam_v     f64[n]    second-moment estimate
    target     f64[n]    target-network parameters
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .network import Adam, QNetwork

MAGIC = b"GENLACKP"
FORMAT_VERSION = 1
_PREFIX = struct.Struct("<8sII")


class CheckpointError(ValueError):
    pass


def save_checkpoint(path, net, optimizer=None, target_net=None, state_schema_version=1,
                    metadata=None):
    n = net.n_params
    opt = optimizer.state_dict() if optimizer is not None else {
        "lr": 0.0, "beta1": 0.9, "beta2": 0.999, "eps": 1e-8, "t": 0,
        "m": np.zeros(n), "v": np.zeros(n)}
    header = {
        "architecture": net.architecture,
        "state_schema_version": int(state_schema_version),
        "model_version": int(net.version),
        "optimizer": {k: opt[k] for k in ("lr", "beta1", "beta2", "eps", "t")},
        "n_params": n,
        "metadata": metadata or {},
    }
    hbytes = json.dumps(header, sort_keys=True).encode()
    target = (target_net if target_net is not None else net).params
    path = Path(path)
    tmp = path.with_suffix(path.suffix + ".tmp")
    with open(tmp, "wb") as f:
        f.write(_PREFIX.pack(MAGIC, FORMAT_VERSION, len(hbytes)))
        f.write(hbytes)
        for arr in (net.params, opt["m"], opt["v"], target):
            f.write(np.asarray(arr, dtype="<f8").tobytes())
    tmp.replace(path)
    return path


def load_checkpoint(path, expect_schema=None):
    """Returns ``(net, optimizer, target_net, header)``."""
    data = Path(path).read_bytes()
    if len(data) < _PREFIX.size:
        raise CheckpointError("truncated checkpoint")
    magic, version, hlen = _PREFIX.unpack_from(data, 0)
    if magic != MAGIC:
        raise CheckpointError(f"not a checkpoint (magic {magic!r})")
    if version != FORMAT_VERSION:
        raise CheckpointError(f"unsupported checkpoint format version {version}")
    pos = _PREFIX.size
    try:
        header = json.loads(data[pos:pos + hlen])
    except ValueError as e:
        raise CheckpointError(f"corrupt checkpoint header: {e}") from None
    pos += hlen
    if expect_schema is not None and header["state_schema_version"] != expect_schema:
        raise CheckpointError(
            f"checkpoint state schema {header['state_schema_version']} != build schema {expect_schema}")
    n = header["n_params"]
    if pos + 32 * n != len(data):
        raise CheckpointError("checkpoint payload size mismatch")
    arrays = np.frombuffer(data, dtype="<f8", count=4 * n, offset=pos)
    params, m, v, target = (arrays[k * n:(k + 1) * n].astype(np.float64) for k in range(4))
    net = QNetwork.from_architecture(header["architecture"], params)
    net.version = header["model_version"]
    target_net = QNetwork.from_architecture(header["architecture"], target)
    o = header["optimizer"]
    opt = Adam(n, o["lr"], o["beta1"], o["beta2"], o["eps"])
    opt.load_state_dict({**o, "m": m, "v": v})
    return net, opt, target_net, header
