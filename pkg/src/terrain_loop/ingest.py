"""Point-cloud parsing, serialization and preprocessing.

Clouds are held as ``(N, 3)`` float64 arrays wrapped in :class:`PointCloud`.
Three on-disk formats are understood: whitespace separated ``xyz`` text,
``csv`` with an optional ``x,y,z`` header, and ``ply`` (ascii or
binary little-endian, x/y/z float or double vertex properties).
"""
from __future__ import annotations

import csv
import io
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import BinaryIO, Optional, Union

import numpy as np

from .errors import EmptyCloud, NonFiniteValue, ParseError
from .geometry import WorldPose

FORMATS = ("xyz", "ply", "csv")


@dataclass(frozen=True, eq=False)
class PointCloud:
    points: np.ndarray

    def __post_init__(self):
        pts = np.ascontiguousarray(self.points, dtype=np.float64)
        if pts.ndim != 2 or pts.shape[1] != 3:
            raise ValueError(f"expected an (N, 3) array, got shape {pts.shape}")
        if not np.all(np.isfinite(pts)):
            raise NonFiniteValue("point cloud contains non-finite coordinates")
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)

    @property
    def count(self) -> int:
        return self.points.shape[0]

    def __len__(self):
        return self.count

    @property
    def xy(self) -> np.ndarray:
        return self.points[:, :2]

    @property
    def z(self) -> np.ndarray:
        return self.points[:, 2]

    def __eq__(self, other):
        if not isinstance(other, PointCloud):
            return NotImplemented
        return np.array_equal(self.points, other.points)

    def translated(self, dx=0.0, dy=0.0, dz=0.0) -> "PointCloud":
        return PointCloud(self.points + np.array([dx, dy, dz]))


@dataclass(frozen=True)
class Submap:
    id: int
    cloud: PointCloud
    world_pose: Optional[WorldPose] = None
    name: str = field(default="", compare=False)


# --------------------------------------------------------------------------- parsing

def _as_bytes(source: Union[bytes, bytearray, BinaryIO, str]) -> bytes:
    if isinstance(source, (bytes, bytearray)):
        return bytes(source)
    if isinstance(source, str):
        return source.encode()
    return source.read()


def _finish(rows, where) -> PointCloud:
    if len(rows) == 0:
        raise EmptyCloud("no valid points in input")
    pts = np.asarray(rows, dtype=np.float64).reshape(-1, 3)
    bad = ~np.all(np.isfinite(pts), axis=1)
    if bad.any():
        i = int(np.argmax(bad))
        raise NonFiniteValue("non-finite coordinate", offset=where(i))
    return PointCloud(pts)


def _parse_float(token, line_no):
    try:
        return float(token)
    except ValueError:
        raise ParseError(f"not a number: {token!r}", offset=f"line {line_no}") from None


def _parse_xyz(data: bytes) -> PointCloud:
    rows, lines = [], []
    for line_no, raw in enumerate(data.decode("utf-8", errors="strict").splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        tokens = line.split()
        if len(tokens) != 3:
            raise ParseError(f"expected 3 fields, got {len(tokens)}", offset=f"line {line_no}")
        rows.append([_parse_float(t, line_no) for t in tokens])
        lines.append(line_no)
    return _finish(rows, lambda i: f"line {lines[i]}")


def _parse_csv(data: bytes) -> PointCloud:
    reader = csv.reader(io.StringIO(data.decode("utf-8")))
    rows, lines = [], []
    cols = (0, 1, 2)
    first = True
    for line_no, rec in enumerate(reader, start=1):
        rec = [c.strip() for c in rec]
        if not rec or all(c == "" for c in rec):
            continue
        if first:
            first = False
            lowered = [c.lower() for c in rec]
            if {"x", "y", "z"} <= set(lowered):
                cols = tuple(lowered.index(k) for k in ("x", "y", "z"))
                continue
        if len(rec) <= max(cols):
            raise ParseError(f"expected at least {max(cols) + 1} columns", offset=f"line {line_no}")
        rows.append([_parse_float(rec[c], line_no) for c in cols])
        lines.append(line_no)
    return _finish(rows, lambda i: f"line {lines[i]}")


_PLY_TYPES = {
    "char": "i1", "int8": "i1", "uchar": "u1", "uint8": "u1",
    "short": "i2", "int16": "i2", "ushort": "u2", "uint16": "u2",
    "int": "i4", "int32": "i4", "uint": "u4", "uint32": "u4",
    "float": "f4", "float32": "f4", "double": "f8", "float64": "f8",
}


def _parse_ply(data: bytes) -> PointCloud:
    m = re.search(rb"end_header\r?\n", data)
    if not data.startswith(b"ply") or m is None:
        raise ParseError("missing ply magic or end_header", offset="byte 0")
    header = data[: m.start()].decode("ascii").splitlines()
    body_start = m.end()
    fmt = None
    elements = []  # (name, count, [(prop_name, type)] or None for list props)
    for line_no, line in enumerate(header, start=1):
        tok = line.split()
        if not tok or tok[0] in ("ply", "comment", "obj_info"):
            continue
        if tok[0] == "format":
            fmt = tok[1]
        elif tok[0] == "element":
            elements.append((tok[1], int(tok[2]), []))
        elif tok[0] == "property":
            if not elements:
                raise ParseError("property before element", offset=f"line {line_no}")
            if tok[1] == "list":
                elements[-1][2].append((tok[4], None))
            else:
                if tok[1] not in _PLY_TYPES:
                    raise ParseError(f"unknown property type {tok[1]}", offset=f"line {line_no}")
                elements[-1][2].append((tok[2], _PLY_TYPES[tok[1]]))
        else:
            raise ParseError(f"unexpected header keyword {tok[0]!r}", offset=f"line {line_no}")
    if fmt not in ("ascii", "binary_little_endian"):
        raise ParseError(f"unsupported ply format {fmt!r}", offset="header")
    names = [e[0] for e in elements]
    if "vertex" not in names:
        raise EmptyCloud("ply has no vertex element")
    vi = names.index("vertex")
    _, count, props = elements[vi]
    pnames = [p[0] for p in props]
    for k in ("x", "y", "z"):
        if k not in pnames:
            raise ParseError(f"vertex element lacks property {k}", offset="header")
        if dict(props)[k] not in ("f4", "f8"):
            raise ParseError(f"vertex property {k} must be float or double", offset="header")
    if any(t is None for _, t in props):
        raise ParseError("list properties on vertices are not supported", offset="header")
    if count == 0:
        raise EmptyCloud("ply declares zero vertices")

    if fmt == "ascii":
        lines = data[body_start:].decode("ascii").splitlines()
        skip = 0
        for name, n, eprops in elements[:vi]:
            skip += n
        rows = []
        idx = [pnames.index(k) for k in ("x", "y", "z")]
        body_line0 = len(header) + 2
        for j in range(count):
            li = skip + j
            if li >= len(lines):
                raise ParseError("truncated vertex data", offset=f"line {body_line0 + li}")
            tok = lines[li].split()
            if len(tok) != len(props):
                raise ParseError(f"expected {len(props)} values, got {len(tok)}", offset=f"line {body_line0 + li}")
            rows.append([_parse_float(tok[i], body_line0 + li) for i in idx])
        return _finish(rows, lambda i: f"line {body_line0 + skip + i}")

    offset = body_start
    for name, n, eprops in elements[:vi]:
        if any(t is None for _, t in eprops):
            raise ParseError(f"cannot skip list-valued element {name!r} preceding vertices", offset=f"byte {offset}")
        offset += n * np.dtype([(p, "<" + t) for p, t in eprops]).itemsize
    dtype = np.dtype([(p, "<" + t) for p, t in props])
    need = offset + count * dtype.itemsize
    if len(data) < need:
        raise ParseError("truncated binary vertex data", offset=f"byte {len(data)}")
    rec = np.frombuffer(data, dtype=dtype, count=count, offset=offset)
    pts = np.column_stack([rec["x"], rec["y"], rec["z"]]).astype(np.float64)
    return _finish(pts, lambda i: f"byte {offset + i * dtype.itemsize}")


def parse_pointcloud(source, format: str) -> PointCloud:
    """Parse ``source`` (bytes or binary stream) in one of :data:`FORMATS`."""
    fmt = {"xyz-ascii": "xyz", "txt": "xyz"}.get(format, format)
    if fmt not in FORMATS:
        raise ValueError(f"unsupported format {format!r}")
    data = _as_bytes(source)
    try:
        return {"xyz": _parse_xyz, "csv": _parse_csv, "ply": _parse_ply}[fmt](data)
    except UnicodeDecodeError as exc:
        raise ParseError("input is not valid text", offset=f"byte {exc.start}") from None


def format_from_path(path) -> str:
    ext = Path(path).suffix.lower().lstrip(".")
    return {"txt": "xyz", "asc": "xyz"}.get(ext, ext)


def read_pointcloud(path, format: Optional[str] = None) -> PointCloud:
    with open(path, "rb") as fh:
        return parse_pointcloud(fh, format or format_from_path(path))


# --------------------------------------------------------------------------- writing

def serialize(cloud: PointCloud, format: str, binary: bool = True) -> bytes:
    """Encode a cloud; the text formats use round-trip float repr."""
    fmt = {"xyz-ascii": "xyz"}.get(format, format)
    pts = cloud.points
    if fmt == "xyz":
        return "".join(f"{x!r} {y!r} {z!r}\n" for x, y, z in pts.tolist()).encode()
    if fmt == "csv":
        return ("x,y,z\n" + "".join(f"{x!r},{y!r},{z!r}\n" for x, y, z in pts.tolist())).encode()
    if fmt == "ply":
        kind = "binary_little_endian" if binary else "ascii"
        header = (
            f"ply\nformat {kind} 1.0\nelement vertex {cloud.count}\n"
            "property double x\nproperty double y\nproperty double z\nend_header\n"
        ).encode()
        if binary:
            return header + pts.astype("<f8").tobytes()
        return header + "".join(f"{x!r} {y!r} {z!r}\n" for x, y, z in pts.tolist()).encode()
    raise ValueError(f"unsupported format {format!r}")


def write_pointcloud(cloud: PointCloud, path, format: Optional[str] = None) -> None:
    Path(path).write_bytes(serialize(cloud, format or format_from_path(path)))


# --------------------------------------------------------------------------- preprocessing

def downsample(cloud: PointCloud, target: int, seed: int = 0) -> PointCloud:
    """Uniform random subset of ``target`` points, in original order.

    Clouds with at most ``target`` points are returned unchanged.
    """
    if target < 1:
        raise ValueError("target must be >= 1")
    if cloud.count <= target:
        return cloud
    rng = np.random.default_rng(seed)
    idx = np.sort(rng.choice(cloud.count, size=target, replace=False))
    return PointCloud(cloud.points[idx])


def bounding_box(cloud: PointCloud) -> tuple[float, float, float, float]:
    """Tight ``(x_min, x_max, y_min, y_max)`` of the cloud in its local frame."""
    if cloud.count == 0:
        raise EmptyCloud("bounding box of an empty cloud")
    lo = cloud.xy.min(axis=0)
    hi = cloud.xy.max(axis=0)
    return float(lo[0]), float(hi[0]), float(lo[1]), float(hi[1])
