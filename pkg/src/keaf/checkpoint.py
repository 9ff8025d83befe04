"""Binary parameter checkpoints.

Layout (little-endian)::

    b"KEAFP" | u32 version=1 | u32 dim_in | u32 dim_out | u32 dim_att
    | f64 eta | u8 distance (0 sqeuclidean, 1 cosine) | f64 logit scale
    | f64 tau* (NaN when unset) | u8 component bits (anchor, attention,
    category, threshold from bit 0) | u32 table rows (0: no encoder table)
    | u32 table dim
    then f32 blocks: W (dim_out x dim_in), b (dim_out), L (dim_att x dim_out),
    encoder table (rows x dim) when present.
"""
from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .embedder import HashEncoder
from .errors import DataError
from .head import DISTANCES, Ablation, HeadParams

MAGIC = b"KEAFP"
VERSION = 1
_HEADER = struct.Struct("<5sIIIIdBddBII")


@dataclass
class Checkpoint:
    params: HeadParams
    tau: float | None
    flags: Ablation
    encoder: HashEncoder | None = None


def quantize(a: np.ndarray) -> np.ndarray:
    """Round to the nearest float32, kept as float64."""
    return np.asarray(a, dtype=np.float32).astype(np.float64)


def save_checkpoint(
    path: str | Path,
    params: HeadParams,
    tau: float | None,
    flags: Ablation = Ablation(),
    encoder: HashEncoder | None = None,
) -> None:
    bits = sum(1 << i for i, name in enumerate(Ablation.AXES) if getattr(flags, name))
    rows, tdim = (encoder.n_buckets, encoder.dim) if encoder is not None else (0, 0)
    header = _HEADER.pack(
        MAGIC, VERSION, params.dim_in, params.dim_out, params.dim_att,
        params.eta, DISTANCES.index(params.distance), params.scale,
        math.nan if tau is None else tau, bits, rows, tdim,
    )
    with open(path, "wb") as f:
        f.write(header)
        for arr in (params.W, params.b, params.L):
            f.write(np.asarray(arr, dtype="<f4").tobytes())
        if encoder is not None:
            f.write(np.asarray(encoder.table, dtype="<f4").tobytes())


def load_checkpoint(path: str | Path) -> Checkpoint:
    data = Path(path).read_bytes()
    if len(data) < _HEADER.size:
        raise DataError(f"{path}: truncated checkpoint header")
    magic, version, din, dout, datt, eta, kind, scale, tau, bits, rows, tdim = _HEADER.unpack_from(data)
    if magic != MAGIC:
        raise DataError(f"{path}: bad checkpoint magic {magic!r}")
    if version != VERSION:
        raise DataError(f"{path}: unsupported checkpoint version {version}")
    if kind >= len(DISTANCES):
        raise DataError(f"{path}: unknown distance code {kind}")

    offset = _HEADER.size
    blocks = []
    for shape in ((dout, din), (dout,), (datt, dout), (rows, tdim)):
        n = int(np.prod(shape))
        if offset + 4 * n > len(data):
            raise DataError(f"{path}: truncated block at offset {offset}")
        blocks.append(
            np.frombuffer(data, dtype="<f4", count=n, offset=offset).astype(np.float64).reshape(shape)
        )
        offset += 4 * n
    if offset != len(data):
        raise DataError(f"{path}: trailing bytes at offset {offset}")

    W, b, L, table = blocks
    params = HeadParams(W=W, b=b, L=L, eta=eta, distance=DISTANCES[kind], scale=scale)
    flags = Ablation(*[bool(bits >> i & 1) for i in range(len(Ablation.AXES))])
    encoder = HashEncoder(tdim, rows, table=table) if rows else None
    return Checkpoint(params, None if math.isnan(tau) else tau, flags, encoder)
