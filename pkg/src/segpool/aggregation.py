"""Second-order pooling into a fixed-size global descriptor.

Descriptor files hold a 20-byte little-endian header followed by the rows::

    magic   8 bytes  b"SEGPDSC1"
    d       uint32   side of the pooled matrix (descriptor length is d*d)
    count   uint64   number of descriptors
    values  count * d*d float64, each descriptor a row-major flattened matrix
"""

from __future__ import annotations

import struct
import tempfile

import numpy as np

from .errors import DegenerateDescriptorError, EmptyFrameError, FormatError, NumericalError

MAGIC = b"SEGPDSC1"
_HEADER = struct.Struct("<8sIQ")
SINGULAR_FLOOR = 1e-12


def o2p(f_a: np.ndarray, f_b: np.ndarray) -> np.ndarray:
    """Elementwise max over segments of the outer products ``f_a f_b^T``."""
    f_a = np.asarray(f_a, dtype=np.float64)
    f_b = np.asarray(f_b, dtype=np.float64)
    if f_a.shape != f_b.shape:
        raise ValueError(f"feature sets differ in shape: {f_a.shape} vs {f_b.shape}")
    if len(f_a) == 0:
        raise EmptyFrameError("cannot pool an empty segment set")
    return np.max(f_a[:, :, None] * f_b[:, None, :], axis=0)


def power_euclidean(m: np.ndarray, alpha: float = 0.5) -> np.ndarray:
    """``U diag(s**alpha) V^T`` from the SVD ``m = U diag(s) V^T``."""
    try:
        u, s, vt = np.linalg.svd(m)
    except np.linalg.LinAlgError as exc:
        with tempfile.NamedTemporaryFile(prefix="segpool-svd-", suffix=".npy", delete=False) as fh:
            np.save(fh, m)
        raise NumericalError(f"SVD did not converge ({exc}); matrix saved to {fh.name}") from exc
    s_alpha = np.where(s < SINGULAR_FLOOR, 0.0, s) ** alpha
    return (u * s_alpha) @ vt


def finalize(m: np.ndarray) -> np.ndarray:
    """Row-major flatten and scale to unit length."""
    g = np.asarray(m, dtype=np.float64).ravel()
    norm = np.linalg.norm(g)
    if norm == 0 or not np.isfinite(norm):
        raise DegenerateDescriptorError("pooled matrix is all zeros or non-finite")
    return g / norm


def global_descriptor(f_a: np.ndarray, f_b: np.ndarray, alpha: float = 0.5) -> np.ndarray:
    return finalize(power_euclidean(o2p(f_a, f_b), alpha))


def write_descriptors(path, descriptors: np.ndarray, d: int) -> None:
    arr = np.asarray(descriptors, dtype="<f8").reshape(-1, d * d)
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, d, len(arr)))
        fh.write(arr.tobytes())


def read_descriptors(path) -> np.ndarray:
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < _HEADER.size:
        raise FormatError(f"{path}: truncated header")
    magic, d, count = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}")
    body = raw[_HEADER.size:]
    if len(body) != count * d * d * 8:
        raise FormatError(f"{path}: expected {count} descriptors of {d * d} values")
    return np.frombuffer(body, dtype="<f8").reshape(count, d * d).astype(np.float64)
