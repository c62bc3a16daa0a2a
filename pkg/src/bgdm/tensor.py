"""Array helpers: unitary 2-D FFT, shape checks and the NTSR tensor file format.

Tensors are plain numpy arrays (``float64`` or ``complex128``). The file format
is little-endian::

    b"NTSR" | u8 dtype (0 real64, 1 complex128) | u8 rank | rank x u32 dims | payload

with the payload stored row-major as float64 values, complex numbers
interleaved as (re, im).
"""
import io
import os
import struct

import numpy as np

from .errors import ShapeError, TensorFormatError

MAGIC = b"NTSR"
REAL64 = 0
COMPLEX128 = 1
_HEADER = struct.Struct("<4sBB")


def fft2(x):
    """Orthonormal 2-D FFT over the last two axes."""
    x = np.asarray(x)
    if x.ndim < 2:
        raise ShapeError(f"fft2 needs at least 2 dimensions, got shape {x.shape}")
    return np.fft.fft2(x, norm="ortho")


def ifft2(w):
    """Inverse of :func:`fft2`."""
    w = np.asarray(w)
    if w.ndim < 2:
        raise ShapeError(f"ifft2 needs at least 2 dimensions, got shape {w.shape}")
    return np.fft.ifft2(w, norm="ortho")


def check_same_shape(a, b, what="tensors"):
    if np.shape(a) != np.shape(b):
        raise ShapeError(f"{what} have mismatched shapes {np.shape(a)} and {np.shape(b)}")


def to_numeric(x):
    """Coerce to float64, or complex128 when the input is complex."""
    x = np.asarray(x)
    if np.iscomplexobj(x):
        return x.astype(np.complex128, copy=False)
    return x.astype(np.float64, copy=False)


def real_if_real(x, like):
    """Drop the imaginary part of ``x`` when ``like`` is real-valued."""
    if np.iscomplexobj(x) and not np.iscomplexobj(like):
        return np.ascontiguousarray(x.real)
    return x


def inner(a, b):
    """Real part of the standard inner product <a, b> = sum(conj(a) * b)."""
    return float(np.real(np.vdot(a, b)))


def write_tensor(stream, t):
    """Serialize ``t`` to a binary stream."""
    t = to_numeric(t)
    if not np.all(np.isfinite(t)):
        raise TensorFormatError("refusing to export a tensor with non-finite values")
    if t.ndim > 255:
        raise TensorFormatError(f"rank {t.ndim} exceeds the format limit of 255")
    tag = COMPLEX128 if np.iscomplexobj(t) else REAL64
    stream.write(_HEADER.pack(MAGIC, tag, t.ndim))
    stream.write(struct.pack(f"<{t.ndim}I", *t.shape))
    if tag == COMPLEX128:
        payload = np.ascontiguousarray(t).view(np.float64)
    else:
        payload = np.ascontiguousarray(t)
    stream.write(payload.astype("<f8", copy=False).tobytes())


def tensor_to_bytes(t):
    buf = io.BytesIO()
    write_tensor(buf, t)
    return buf.getvalue()


def _read_exact(stream, n, offset, what):
    data = stream.read(n)
    if data is None:
        data = b""
    if len(data) != n:
        raise TensorFormatError(
            f"truncated {what}: expected {n} bytes, got {len(data)}", offset=offset + len(data))
    return data


def read_tensor(stream):
    """Read one tensor from a binary stream, consuming exactly its bytes."""
    offset = 0
    magic, tag, rank = _HEADER.unpack(_read_exact(stream, _HEADER.size, offset, "header"))
    if magic != MAGIC:
        raise TensorFormatError(f"bad magic {magic!r}", offset=0)
    if tag not in (REAL64, COMPLEX128):
        raise TensorFormatError(f"unknown dtype tag {tag}", offset=4)
    offset += _HEADER.size
    dims = struct.unpack(f"<{rank}I", _read_exact(stream, 4 * rank, offset, "dimensions"))
    offset += 4 * rank
    count = int(np.prod(dims, dtype=np.int64)) * (2 if tag == COMPLEX128 else 1)
    raw = _read_exact(stream, 8 * count, offset, "payload")
    values = np.frombuffer(raw, dtype="<f8").astype(np.float64)
    if not np.all(np.isfinite(values)):
        bad = int(np.flatnonzero(~np.isfinite(values))[0])
        raise TensorFormatError("non-finite value in payload", offset=offset + 8 * bad)
    if tag == COMPLEX128:
        values = values.view(np.complex128)
    return values.reshape(dims)


def tensor_from_bytes(data):
    buf = io.BytesIO(data)
    t = read_tensor(buf)
    if buf.tell() != len(data):
        raise TensorFormatError(
            f"{len(data) - buf.tell()} trailing bytes after tensor", offset=buf.tell())
    return t


def save_tensor(t, path):
    with open(path, "wb") as fh:
        write_tensor(fh, t)


def load_tensor(path):
    with open(os.fspath(path), "rb") as fh:
        data = fh.read()
    return tensor_from_bytes(data)
