"""On-disk formats: binary tensor/matrix files and the CSV import path.

Tensor file layout:
    ASCII header line  b"DTENSOR 1 <I1> <I2> <I3>\\n"
    followed by I1*I2*I3 little-endian float64 values in column-major order
    (index i1 fastest).

Matrix files use the analogous header b"DMATRIX 1 <rows> <cols>\\n" with
column-major float64 payload.
"""

from __future__ import annotations

import numpy as np

from .tensor import DenseTensor3

TENSOR_MAGIC = b"DTENSOR 1"
MATRIX_MAGIC = b"DMATRIX 1"


class FormatError(ValueError):
    """Malformed file; `offset` is the byte position of the problem."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at byte offset {offset})")
        self.offset = offset


def _read_header(raw: bytes, magic: bytes, n_dims: int, path: str) -> tuple[tuple[int, ...], int]:
    nl = raw.find(b"\n")
    if nl < 0:
        raise FormatError(f"{path}: missing header newline", len(raw))
    header = raw[:nl]
    parts = header.split(b" ")
    if parts[:2] != magic.split(b" "):
        raise FormatError(f"{path}: bad magic {header[:len(magic)]!r}", 0)
    if len(parts) != 2 + n_dims:
        raise FormatError(f"{path}: expected {n_dims} dimensions in header", len(magic))
    dims = []
    for p in parts[2:]:
        try:
            d = int(p)
        except ValueError:
            raise FormatError(f"{path}: non-integer dimension {p!r}", header.find(p)) from None
        if d <= 0:
            raise FormatError(f"{path}: nonpositive dimension {d}", header.find(p))
        dims.append(d)
    return tuple(dims), nl + 1


def _read_payload(raw: bytes, start: int, count: int, path: str) -> np.ndarray:
    expected = 8 * count
    if len(raw) - start != expected:
        raise FormatError(
            f"{path}: payload has {len(raw) - start} bytes, expected {expected}", start
        )
    return np.frombuffer(raw[start:], dtype="<f8").astype(np.float64)


def write_tensor(path, t: DenseTensor3) -> None:
    i1, i2, i3 = t.dims
    with open(path, "wb") as fh:
        fh.write(f"DTENSOR 1 {i1} {i2} {i3}\n".encode())
        fh.write(t.flat.astype("<f8").tobytes())


def read_tensor(path) -> DenseTensor3:
    with open(path, "rb") as fh:
        raw = fh.read()
    dims, start = _read_header(raw, TENSOR_MAGIC, 3, str(path))
    flat = _read_payload(raw, start, dims[0] * dims[1] * dims[2], str(path))
    return DenseTensor3.from_flat(flat, dims)


def write_matrix(path, m: np.ndarray) -> None:
    m = np.asarray(m, dtype=np.float64)
    rows, cols = m.shape
    with open(path, "wb") as fh:
        fh.write(f"DMATRIX 1 {rows} {cols}\n".encode())
        fh.write(m.ravel(order="F").astype("<f8").tobytes())


def read_matrix(path) -> np.ndarray:
    with open(path, "rb") as fh:
        raw = fh.read()
    (rows, cols), start = _read_header(raw, MATRIX_MAGIC, 2, str(path))
    flat = _read_payload(raw, start, rows * cols, str(path))
    return flat.reshape((rows, cols), order="F")


def read_tensor_csv(path) -> DenseTensor3:
    """Interop import: lines "i1,i2,i3,value" with 1-based indices."""
    data = np.loadtxt(path, delimiter=",", ndmin=2)
    if data.shape[1] != 4:
        raise ValueError(f"{path}: expected 4 columns (i1,i2,i3,value)")
    idx = data[:, :3].astype(np.intp) - 1
    dims = tuple(int(d) for d in idx.max(axis=0) + 1)
    if data.shape[0] != dims[0] * dims[1] * dims[2]:
        raise ValueError(f"{path}: expected one row per entry of a {dims} tensor")
    cube = np.zeros(dims)
    cube[idx[:, 0], idx[:, 1], idx[:, 2]] = data[:, 3]
    return DenseTensor3(cube)
