"""
On-disk formats.

FeatureFile: 8-byte magic ``MERFEAT1``, u64 LE rows, u64 LE cols, then
rows*cols f64 LE values, row-major. LabelFile: one non-negative integer per
line. CSV: ``,`` separator, ``\\n`` line endings, ``repr`` floats.
"""
import csv
import io
import struct
from pathlib import Path
from typing import Any, Iterable, List, Sequence, Tuple, Union

import numpy as np
import yaml

from .validators import FormatError, as_matrix

MAGIC = b"MERFEAT1"
HEADER = struct.Struct("<8sQQ")
PathLike = Union[str, Path]


def encode_features(z) -> bytes:
    z = as_matrix(z, "features")
    rows, cols = z.shape
    return HEADER.pack(MAGIC, rows, cols) + z.astype("<f8", copy=False).tobytes(order="C")


def decode_features(data: bytes, path: str = None) -> np.ndarray:
    if len(data) < len(MAGIC):
        raise FormatError("file shorter than the magic", path, len(data))
    if data[: len(MAGIC)] != MAGIC:
        raise FormatError("bad magic, expected MERFEAT1", path, 0)
    if len(data) < HEADER.size:
        raise FormatError("truncated header", path, len(data))
    _, rows, cols = HEADER.unpack_from(data)
    expected = HEADER.size + 8 * rows * cols
    if len(data) < expected:
        raise FormatError(f"truncated payload: {rows}x{cols} needs {expected} bytes", path, len(data))
    if len(data) > expected:
        raise FormatError(f"{len(data) - expected} trailing bytes after payload", path, expected)
    values = np.frombuffer(data, dtype="<f8", count=rows * cols, offset=HEADER.size)
    return values.astype(np.float64).reshape(rows, cols)


def write_features(path: PathLike, z) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(encode_features(z))
    return path


def read_features(path: PathLike) -> np.ndarray:
    path = Path(path)
    if not path.is_file():
        raise FormatError("feature file not found", str(path))
    return decode_features(path.read_bytes(), str(path))


def write_labels(path: PathLike, labels: Iterable[int]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("".join(f"{int(label)}\n" for label in labels), encoding="ascii")
    return path


def read_labels(path: PathLike, rows: int = None) -> np.ndarray:
    path = Path(path)
    if not path.is_file():
        raise FormatError("label file not found", str(path))
    data = path.read_bytes()
    labels: List[int] = []
    offset = 0
    for line in data.split(b"\n"):
        text = line.strip()
        if text:
            if not text.isdigit():
                raise FormatError(f"label line {len(labels) + 1} is not a non-negative integer", str(path), offset)
            labels.append(int(text))
        offset += len(line) + 1
    if rows is not None and len(labels) != rows:
        raise FormatError(f"{len(labels)} labels for {rows} feature rows", str(path))
    return np.asarray(labels, dtype=np.int64)


def format_value(value: Any) -> str:
    if isinstance(value, (bool, np.bool_)):
        return str(bool(value)).lower()
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return str(value)


def csv_text(header: Sequence[str], rows: Iterable[Sequence[Any]]) -> str:
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([format_value(v) for v in row])
    return buffer.getvalue()


def write_csv(path: PathLike, header: Sequence[str], rows: Iterable[Sequence[Any]]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as f:
        f.write(csv_text(header, rows))
    return path


def read_csv(path: PathLike) -> Tuple[List[str], List[List[str]]]:
    """Strict reader: every row must have as many fields as the header."""
    path = Path(path)
    if not path.is_file():
        raise FormatError("csv file not found", str(path))
    with open(path, "r", encoding="utf-8", newline="") as f:
        reader = csv.reader(f, strict=True)
        rows = list(reader)
    if not rows:
        raise FormatError("empty csv", str(path))
    header, body = rows[0], rows[1:]
    for i, row in enumerate(body, start=2):
        if len(row) != len(header):
            raise FormatError(f"line {i} has {len(row)} fields, header has {len(header)}", str(path))
    return header, body


def dump_yaml(data: Any) -> str:
    return yaml.safe_dump(data, sort_keys=False, default_flow_style=False)


def write_yaml(path: PathLike, data: Any) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(dump_yaml(data), encoding="utf-8")
    return path


def read_yaml(path: PathLike) -> Any:
    path = Path(path)
    if not path.is_file():
        raise FormatError("yaml file not found", str(path))
    try:
        with open(path, "r", encoding="utf-8") as f:
            return yaml.safe_load(f)
    except yaml.YAMLError as e:
        raise FormatError(f"invalid YAML: {e}", str(path))
