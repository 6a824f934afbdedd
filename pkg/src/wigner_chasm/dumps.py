"""Binary dumps and delimiter-separated text exports.

Binary layout, little-endian::

    magic     4s   b"CHSM" for fields, b"TKMT" for convolution tensors
    version   u32
    dim       u32
    nx        u32
    nk        u32
    itemsize  u32  4 or 8
    x_min     f64
    x_max     f64
    l_k       f64
    time      f64
    values    row-major float32/float64
"""

import logging
import os
import struct
from dataclasses import dataclass
from typing import Iterable, Sequence, Tuple

import numpy as np

from .errors import DumpFormatError
from .phase_space import PhaseSpaceGrid, WignerField

log = logging.getLogger(__name__)

HEADER = struct.Struct("<4sIIIII4d")
FORMAT_VERSION = 1
FIELD_MAGIC = b"CHSM"
TENSOR_MAGIC = b"TKMT"


@dataclass(frozen=True)
class DumpHeader:
    magic: bytes
    version: int
    dim: int
    nx: int
    nk: int
    itemsize: int
    x_min: float
    x_max: float
    l_k: float
    time: float

    def pack(self) -> bytes:
        return HEADER.pack(
            self.magic,
            self.version,
            self.dim,
            self.nx,
            self.nk,
            self.itemsize,
            self.x_min,
            self.x_max,
            self.l_k,
            self.time,
        )


def write_blob(path: str, header: DumpHeader, values: np.ndarray) -> None:
    """Writes a header and a tensor in the binary dump layout."""
    dtype = "<f4" if header.itemsize == 4 else "<f8"
    directory = os.path.dirname(path)
    if directory:
        os.makedirs(directory, exist_ok=True)
    with open(path, "wb") as f:
        f.write(header.pack())
        f.write(np.ascontiguousarray(values, dtype=dtype).tobytes(order="C"))


def read_blob(path: str, magic: bytes) -> Tuple[DumpHeader, np.ndarray]:
    """Reads a binary dump and returns its header and flat values.

    Raises:
        DumpFormatError: If the magic, version or payload size is wrong.
    """
    with open(path, "rb") as f:
        raw = f.read()
    if len(raw) < HEADER.size:
        raise DumpFormatError(f"{path}: truncated header")
    header = DumpHeader(*HEADER.unpack_from(raw))
    if header.magic != magic:
        raise DumpFormatError(
            f"{path}: bad magic {header.magic!r}, expected {magic!r}"
        )
    if header.version != FORMAT_VERSION:
        raise DumpFormatError(f"{path}: unsupported version {header.version}")
    if header.itemsize not in (4, 8):
        raise DumpFormatError(f"{path}: unsupported item size {header.itemsize}")
    payload = raw[HEADER.size :]
    if len(payload) % header.itemsize:
        raise DumpFormatError(f"{path}: payload is not a whole number of items")
    dtype = "<f4" if header.itemsize == 4 else "<f8"
    values = np.frombuffer(payload, dtype=dtype)
    return header, values.astype(values.dtype.newbyteorder("="))


def dump_field(field: WignerField, path: str) -> None:
    grid = field.grid
    header = DumpHeader(
        FIELD_MAGIC,
        FORMAT_VERSION,
        grid.dim,
        grid.nx,
        grid.nk,
        field.values.dtype.itemsize,
        grid.x_min,
        grid.x_max,
        grid.l_k,
        float(field.time),
    )
    write_blob(path, header, field.values)
    log.debug("Wrote field t=%s to %s", field.time, path)


def load_field(path: str) -> WignerField:
    """Loads a field dump written by dump_field.

    Raises:
        DumpFormatError: If the file is not a valid field dump.
    """
    header, values = read_blob(path, FIELD_MAGIC)
    grid = PhaseSpaceGrid(
        dim=header.dim,
        x_min=header.x_min,
        x_max=header.x_max,
        nx=header.nx,
        l_k=header.l_k,
        nk=header.nk,
    )
    if values.size != int(np.prod(grid.shape)):
        raise DumpFormatError(
            f"{path}: {values.size} values do not fill grid shape {grid.shape}"
        )
    return WignerField(grid, values.reshape(grid.shape), header.time)


def write_table(
    path: str, columns: Sequence[str], rows: Iterable[Sequence[float]]
) -> None:
    """Writes rows as comma-separated text with a ``#`` header line."""
    data = np.atleast_2d(np.asarray(list(rows), dtype=np.float64))
    if data.size == 0:
        data = np.empty((0, len(columns)))
    np.savetxt(path, data, delimiter=",", header=",".join(columns), fmt="%.17g")


def write_matrix(path: str, matrix: np.ndarray, comment: str = "") -> None:
    """Writes a 2-D tensor (reduced Wigner function, marginal) as text."""
    np.savetxt(path, np.asarray(matrix), delimiter=",", header=comment, fmt="%.17g")
