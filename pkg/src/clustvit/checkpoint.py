"""Flat binary checkpoint files.

Layout: magic ``CVT1``, then one record per parameter:
    u32 name length | name bytes (utf-8) | u32 rank | u64 extents | f64 payload
All integers and floats are little-endian. Round trips are bit-exact.
"""

import struct

import numpy as np

MAGIC = b"CVT1"


def save_checkpoint(path, params):
    """Write parameters (an iterable of Parameter, or name->array dict)."""
    if isinstance(params, dict):
        items = list(params.items())
    else:
        items = [(p.name, p.tensor.data) for p in params]
    with open(path, "wb") as f:
        f.write(MAGIC)
        for name, arr in items:
            arr = np.asarray(arr, dtype="<f8")  # keep 0-d shapes intact
            name_b = name.encode("utf-8")
            f.write(struct.pack("<I", len(name_b)))
            f.write(name_b)
            f.write(struct.pack("<I", arr.ndim))
            f.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
            f.write(arr.tobytes())


def load_checkpoint(path):
    """Read a checkpoint back into an ordered name -> float64 array dict."""
    with open(path, "rb") as f:
        blob = f.read()
    if blob[:4] != MAGIC:
        raise ValueError(f"not a checkpoint file (bad magic {blob[:4]!r})")
    out = {}
    off = 4
    try:
        while off < len(blob):
            (nlen,) = struct.unpack_from("<I", blob, off)
            off += 4
            name = blob[off:off + nlen].decode("utf-8")
            off += nlen
            (rank,) = struct.unpack_from("<I", blob, off)
            off += 4
            shape = struct.unpack_from(f"<{rank}Q", blob, off)
            off += 8 * rank
            count = int(np.prod(shape)) if rank else 1
            arr = np.frombuffer(blob, dtype="<f8", count=count, offset=off).reshape(shape)
            off += 8 * count
            out[name] = arr.astype(np.float64)
    except (struct.error, ValueError) as exc:
        raise ValueError(f"truncated checkpoint at byte {off}: {exc}") from exc
    return out


def restore_params(params, state):
    """Load arrays from ``state`` into matching parameters in place."""
    missing = [p.name for p in params if p.name not in state]
    if missing:
        raise ValueError(f"checkpoint missing parameters: {missing}")
    mismatched = [
        (p.name, p.tensor.data.shape, state[p.name].shape)
        for p in params
        if state[p.name].shape != p.tensor.data.shape
    ]
    if mismatched:
        detail = "; ".join(f"{n}: model {a} vs checkpoint {b}" for n, a, b in mismatched)
        raise ValueError(f"checkpoint/model shape mismatch: {detail}")
    for p in params:
        p.tensor.data = state[p.name].copy()
        p.velocity = np.zeros_like(p.tensor.data)
        p.tensor.zero_grad()
