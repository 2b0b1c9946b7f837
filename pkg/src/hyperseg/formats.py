"""Readers and writers for images, label maps, transformations and meshes.

2D images and labels are binary PGM (P5). 3D volumes use a MetaImage text
header (``.mhd``) with a raw little-endian payload. Arrays follow the package
convention: axis 0 is the first coordinate; PGM rows map to axis 0 and
MetaImage data is stored with axis 0 fastest.
"""
from __future__ import annotations

import csv
import json
import os
from pathlib import Path

import numpy as np

from .grid import GridSpec

_MET_TYPES = {
    "MET_UCHAR": np.dtype("<u1"),
    "MET_USHORT": np.dtype("<u2"),
    "MET_FLOAT": np.dtype("<f4"),
    "MET_DOUBLE": np.dtype("<f8"),
}


class FormatError(ValueError):
    """Malformed or inconsistent file contents."""


# -- PGM ----------------------------------------------------------------------


def _pgm_tokens(data: bytes, count: int):
    tokens, pos = [], 0
    while len(tokens) < count:
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        if data[pos : pos + 1] == b"#":
            while pos < len(data) and data[pos : pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace():
            pos += 1
        if start == pos:
            raise FormatError("truncated PGM header")
        tokens.append(data[start:pos])
    return tokens, pos + 1


def read_pgm(path) -> np.ndarray:
    """Binary PGM as an integer array of shape ``(height, width)``."""
    data = Path(path).read_bytes()
    (magic, w, hgt, maxval), pos = _pgm_tokens(data, 4)
    if magic != b"P5":
        raise FormatError(f"{path}: not a binary PGM (magic {magic!r})")
    try:
        w, hgt, maxval = int(w), int(hgt), int(maxval)
    except ValueError as exc:
        raise FormatError(f"{path}: bad PGM header") from exc
    dtype = np.dtype("u1") if maxval < 256 else np.dtype(">u2")
    payload = data[pos:]
    expected = w * hgt * dtype.itemsize
    if len(payload) != expected:
        raise FormatError(f"{path}: payload has {len(payload)} bytes, expected {expected}")
    return np.frombuffer(payload, dtype=dtype).reshape(hgt, w).astype(dtype.newbyteorder("="))


def write_pgm(path, array) -> None:
    a = np.asarray(array)
    if a.ndim != 2:
        raise ValueError("PGM needs a 2D array")
    if a.min() < 0 or a.max() > 65535:
        raise ValueError("PGM values must lie in [0, 65535]")
    maxval = 255 if a.max() < 256 else 65535
    dtype = np.dtype("u1") if maxval == 255 else np.dtype(">u2")
    header = f"P5\n{a.shape[1]} {a.shape[0]}\n{maxval}\n".encode()
    Path(path).write_bytes(header + np.ascontiguousarray(a.astype(dtype)).tobytes())


# -- MetaImage ----------------------------------------------------------------


def read_mhd(path) -> np.ndarray:
    path = Path(path)
    fields = {}
    for line in path.read_text().splitlines():
        if "=" in line:
            k, v = line.split("=", 1)
            fields[k.strip()] = v.strip()
    try:
        ndims = int(fields["NDims"])
        dims = [int(x) for x in fields["DimSize"].split()]
        etype = fields["ElementType"]
        datafile = fields["ElementDataFile"]
    except (KeyError, ValueError) as exc:
        raise FormatError(f"{path}: malformed MetaImage header") from exc
    if len(dims) != ndims:
        raise FormatError(f"{path}: DimSize has {len(dims)} entries, NDims is {ndims}")
    if etype not in _MET_TYPES:
        raise FormatError(f"{path}: unsupported ElementType {etype}")
    if fields.get("BinaryDataByteOrderMSB", "False").lower() == "true":
        raise FormatError(f"{path}: big-endian payloads are not supported")
    dtype = _MET_TYPES[etype]
    raw = (path.parent / datafile).read_bytes()
    expected = int(np.prod(dims)) * dtype.itemsize
    if len(raw) != expected:
        raise FormatError(f"{path}: payload has {len(raw)} bytes, expected {expected}")
    return np.frombuffer(raw, dtype=dtype).reshape(dims, order="F").astype(dtype.newbyteorder("="))


def write_mhd(path, array, element_type: str | None = None) -> None:
    path = Path(path)
    a = np.asarray(array)
    if element_type is None:
        element_type = {np.dtype("u1"): "MET_UCHAR", np.dtype("u2"): "MET_USHORT",
                        np.dtype("f4"): "MET_FLOAT"}.get(a.dtype, "MET_DOUBLE")
    dtype = _MET_TYPES[element_type]
    raw = path.with_suffix(".raw")
    header = (
        f"ObjectType = Image\nNDims = {a.ndim}\n"
        f"DimSize = {' '.join(str(s) for s in a.shape)}\n"
        f"ElementType = {element_type}\nBinaryDataByteOrderMSB = False\n"
        f"ElementDataFile = {raw.name}\n"
    )
    raw.write_bytes(a.astype(dtype).tobytes(order="F"))
    path.write_text(header)


# -- images and labels --------------------------------------------------------


def rescale(a) -> np.ndarray:
    """Affinely map intensities onto ``[0, 255]`` (constant images become 0)."""
    a = np.asarray(a, dtype=float)
    lo, hi = float(a.min()), float(a.max())
    if hi == lo:
        return np.zeros_like(a)
    return (a - lo) * (255.0 / (hi - lo))


def _read_any(path):
    suffix = Path(path).suffix.lower()
    if suffix == ".pgm":
        return read_pgm(path)
    if suffix == ".mhd":
        return read_mhd(path)
    raise FormatError(f"{path}: unsupported file type {suffix!r} (use .pgm or .mhd)")


def load_image(path, rescale_intensities: bool = True) -> np.ndarray:
    a = _read_any(path).astype(float)
    if not np.all(np.isfinite(a)):
        raise FormatError(f"{path}: non-finite intensities")
    return rescale(a) if rescale_intensities else a


def load_labels(path) -> np.ndarray:
    a = _read_any(path)
    if not np.issubdtype(a.dtype, np.integer):
        raise FormatError(f"{path}: labels must be stored as integers")
    ids = np.unique(a)
    if ids.min() < 1 or len(ids) != ids.max():
        raise FormatError(f"{path}: label ids must be 1..m without gaps, found {ids.tolist()}")
    return a.astype(np.uint8)


def write_labels(path, labels) -> None:
    lab = np.asarray(labels)
    if lab.max() > 255:
        raise ValueError("at most 255 labels are supported")
    if lab.ndim == 2:
        write_pgm(path, lab.astype(np.uint8))
    else:
        write_mhd(path, lab.astype(np.uint8), "MET_UCHAR")


# -- transformation -----------------------------------------------------------


def write_transform(path, grid: GridSpec, Y) -> None:
    """Header ``path`` plus ``<stem>.raw`` with float64 little-endian values."""
    path = Path(path)
    Y = np.asarray(Y, dtype="<f8")
    if Y.size != grid.size:
        raise ValueError("transformation does not match grid")
    raw = path.with_suffix(".raw")
    path.write_text(
        "# nodal transformation on [0,1]^dim\n"
        f"dim = {grid.dim}\nn = {grid.n}\n"
        "ordering = component-major; nodes lexicographic with x1 fastest\n"
        "dtype = float64 little-endian\n"
        f"data = {raw.name}\n"
    )
    raw.write_bytes(Y.tobytes())


def read_transform(path) -> tuple[GridSpec, np.ndarray]:
    path = Path(path)
    fields = {}
    for line in path.read_text().splitlines():
        if "=" in line and not line.startswith("#"):
            k, v = line.split("=", 1)
            fields[k.strip()] = v.strip()
    try:
        grid = GridSpec(int(fields["dim"]), int(fields["n"]))
        raw = (path.parent / fields["data"]).read_bytes()
    except (KeyError, ValueError) as exc:
        raise FormatError(f"{path}: malformed transformation header") from exc
    if len(raw) != 8 * grid.size:
        raise FormatError(f"{path}: payload has {len(raw)} bytes, expected {8 * grid.size}")
    return grid, np.frombuffer(raw, dtype="<f8").astype(float)


# -- meshes -------------------------------------------------------------------


def write_geometry(path, geometries: dict) -> None:
    """Plain-text indexed geometry: per region, vertex lines then index lines."""
    lines = ["# hyperseg boundary geometry"]
    for label, g in sorted(geometries.items()):
        kind = "segments" if g.elements.shape[1] == 2 else "triangles"
        lines.append(f"region {label} vertices {len(g.vertices)} {kind} {len(g.elements)}")
        lines += [" ".join(repr(float(x)) for x in v) for v in g.vertices]
        lines += [" ".join(str(int(i)) for i in e) for e in g.elements]
    Path(path).write_text("\n".join(lines) + "\n")


def read_geometry(path) -> dict:
    from .segmenter import Geometry

    lines = [l for l in Path(path).read_text().splitlines() if l and not l.startswith("#")]
    out, pos = {}, 0
    while pos < len(lines):
        head = lines[pos].split()
        if head[0] != "region":
            raise FormatError(f"{path}: expected region header, got {lines[pos]!r}")
        label, nv, ne = int(head[1]), int(head[3]), int(head[5])
        pos += 1
        V = np.array([[float(x) for x in l.split()] for l in lines[pos : pos + nv]])
        pos += nv
        E = np.array([[int(x) for x in l.split()] for l in lines[pos : pos + ne]], dtype=np.int64)
        pos += ne
        width = 2 if head[4] == "segments" else 3
        out[label] = Geometry(V.reshape(nv, -1), E.reshape(ne, width))
    return out


# -- logs and summaries -------------------------------------------------------


def write_energy_log(path, records, columns) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(columns))
        writer.writeheader()
        for rec in records:
            writer.writerow({k: rec[k] for k in columns})


def read_energy_log(path) -> list[dict]:
    with open(path, newline="") as fh:
        return [{k: float(v) for k, v in row.items()} for row in csv.DictReader(fh)]


def write_summary(path, summary: dict) -> None:
    Path(path).write_text(json.dumps(summary, indent=2, sort_keys=True, default=_jsonable) + "\n")


def _jsonable(x):
    if isinstance(x, np.generic):
        return x.item()
    if isinstance(x, np.ndarray):
        return x.tolist()
    raise TypeError(f"cannot serialize {type(x)}")


def ensure_dir(path) -> Path:
    p = Path(path)
    p.mkdir(parents=True, exist_ok=True)
    if not os.access(p, os.W_OK):
        raise PermissionError(f"{p} is not writable")
    return p
