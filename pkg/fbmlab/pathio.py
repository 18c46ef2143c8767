"""CSV and binary layouts shared by fBm paths, SDE solutions and local-time fields.

Binary layout: ``b"FBML"``, little-endian uint32 header length, UTF-8 JSON header, then the payload as
little-endian float64 in C order. The header always carries ``shape``.
"""
import json
import struct
from pathlib import Path
from typing import Any, Dict, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from fbmlab.errors import CorruptReportError
from fbmlab.storable import plain

MAGIC = b"FBML"
PathLike = Union[str, Path]


def write_binary(path: PathLike, header: Dict[str, Any], values: np.ndarray):
    values = np.ascontiguousarray(values, dtype="<f8")
    encoded = json.dumps(plain({**header, "shape": list(values.shape)})).encode("utf-8")
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<I", len(encoded)))
        f.write(encoded)
        f.write(values.tobytes(order="C"))


def read_binary(path: PathLike) -> Tuple[Dict[str, Any], np.ndarray]:
    raw = Path(path).read_bytes()
    if raw[:4] != MAGIC or len(raw) < 8:
        raise CorruptReportError(f"{path}: not an fbmlab binary file")
    (header_length,) = struct.unpack("<I", raw[4:8])
    try:
        header = json.loads(raw[8 : 8 + header_length].decode("utf-8"))
        shape = tuple(header["shape"])
        values = np.frombuffer(raw[8 + header_length :], dtype="<f8").reshape(shape)
    except (ValueError, KeyError) as e:
        raise CorruptReportError(f"{path}: {e}") from e
    return header, values.astype(np.float64)


def write_path_csv(path: PathLike, times: np.ndarray, values: np.ndarray):
    """Columns ``t, component_0, component_1, ...``."""
    frame = pd.DataFrame({"t": times})
    for i, component in enumerate(values):
        frame[f"component_{i}"] = component
    frame.to_csv(path, index=False, float_format="%.17g")


def write_field_csv(path: PathLike, t_grid: np.ndarray, x_grid: np.ndarray, values: np.ndarray):
    """Long format ``t, x, value``."""
    t, x = np.meshgrid(t_grid, x_grid, indexing="ij")
    frame = pd.DataFrame({"t": t.ravel(), "x": x.ravel(), "value": values.ravel()})
    frame.to_csv(path, index=False, float_format="%.17g")


def write_table_csv(path: PathLike, rows: Sequence[Dict[str, Any]]):
    pd.DataFrame([plain(row) for row in rows]).to_csv(path, index=False)


def append_table_csv(path: PathLike, rows: Sequence[Dict[str, Any]], columns: Optional[Sequence[str]] = None):
    """Appends rows to a CSV table, writing the header only when the file is new."""
    path = Path(path)
    frame = pd.DataFrame([plain(row) for row in rows])
    if columns is not None:
        frame = frame.reindex(columns=list(columns))
    frame.to_csv(path, mode="a", header=not path.exists(), index=False)
