"""Image, field and metrics files.

Volumes use a small text header next to a raw data file::

    dim = 2
    sizes = 256 256
    spacing = 1 1
    dtype = u8
    byteorder = little
    datafile = image.raw

``sizes`` follow array axis order (first axis slowest, C order). Binary
PGM (P5) files are accepted wherever a 2D volume is read.
"""
from __future__ import annotations

import csv
from pathlib import Path

import numpy as np

from .bspline import BSplineField
from .image import FuzzyImage

DTYPES = {"u8": np.dtype("<u1"), "u16": np.dtype("<u2"), "f32": np.dtype("<f4")}
FIELD_DTYPE = np.dtype("<f8")
METRIC_COLUMNS = ("level", "iteration", "J", "amd_forward", "amd_backward", "iic_mean", "wall_ms")


class ParseError(ValueError):
    pass


def _parse_header(path: Path, required: tuple[str, ...]) -> tuple[dict, dict]:
    """Key/value pairs plus the line each key was found on."""
    try:
        text = path.read_text()
    except UnicodeDecodeError:
        raise ParseError(f"{path}: header is not text") from None
    values, lines = {}, {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ParseError(f"{path}:{lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        if key in values:
            raise ParseError(f"{path}:{lineno}: duplicate key {key!r}")
        values[key] = value
        lines[key] = lineno
    for key in required:
        if key not in values:
            raise ParseError(f"{path}: missing key {key!r}")
    return values, lines


def _numbers(path, lines, values, key, kind, count):
    try:
        out = [kind(v) for v in values[key].split()]
    except ValueError:
        raise ParseError(f"{path}:{lines[key]}: {key}: not a list of numbers") from None
    if len(out) != count:
        raise ParseError(f"{path}:{lines[key]}: {key}: expected {count} values, got {len(out)}")
    return out


def _read_raw(path: Path, datafile: str, dtype, count: int, lineno: int) -> np.ndarray:
    data_path = path.parent / datafile
    if not data_path.exists():
        raise ParseError(f"{path}:{lineno}: datafile {datafile!r} not found")
    raw = data_path.read_bytes()
    if len(raw) != count * dtype.itemsize:
        raise ParseError(f"{path}:{lineno}: datafile holds {len(raw)} bytes, expected {count * dtype.itemsize}")
    return np.frombuffer(raw, dtype=dtype)


def is_pgm(path) -> bool:
    with open(path, "rb") as fh:
        return fh.read(2) == b"P5"


def read_pgm(path) -> tuple[np.ndarray, int]:
    """Binary PGM; returns the raw integer array shaped (height, width) and maxval."""
    path = Path(path)
    data = path.read_bytes()
    tokens = []
    pos = 0
    # magic, width, height, maxval separated by whitespace, with '#' comments
    while len(tokens) < 4:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if pos >= len(data):
            raise ParseError(f"{path}: truncated PGM header")
        if data[pos:pos + 1] == b"#":
            while pos < len(data) and data[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace():
            pos += 1
        tokens.append(data[start:pos])
    pos += 1  # single whitespace before the raster
    if tokens[0] != b"P5":
        raise ParseError(f"{path}: not a binary PGM (magic {tokens[0]!r})")
    try:
        width, height, maxval = (int(t) for t in tokens[1:])
    except ValueError:
        raise ParseError(f"{path}: bad PGM header fields") from None
    if not 0 < maxval < 65536:
        raise ParseError(f"{path}: maxval {maxval} out of range")
    dtype = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
    need = width * height * dtype.itemsize
    if len(data) - pos != need:
        raise ParseError(f"{path}: raster holds {len(data) - pos} bytes, expected {need}")
    arr = np.frombuffer(data, dtype=dtype, count=width * height, offset=pos).reshape(height, width)
    return arr, maxval


def write_pgm(path, mu, maxval: int = 255) -> None:
    mu = np.asarray(mu, dtype=np.float64)
    if mu.ndim != 2:
        raise ValueError("PGM holds 2D images only")
    dtype = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
    q = np.round(np.clip(mu, 0, 1) * maxval).astype(dtype)
    with open(path, "wb") as fh:
        fh.write(f"P5\n{mu.shape[1]} {mu.shape[0]}\n{maxval}\n".encode())
        fh.write(q.tobytes())


def read_volume(path) -> FuzzyImage:
    """Read a header+raw volume (or a P5 PGM) as a membership image in [0, 1]."""
    path = Path(path)
    if not path.exists():
        raise ParseError(f"{path}: no such file")
    if is_pgm(path):
        arr, maxval = read_pgm(path)
        return FuzzyImage.from_array(arr.astype(np.float64) / maxval)
    values, lines = _parse_header(path, ("dim", "sizes", "dtype", "datafile"))
    try:
        dim = int(values["dim"])
    except ValueError:
        raise ParseError(f"{path}:{lines['dim']}: dim is not an integer") from None
    if dim not in (2, 3):
        raise ParseError(f"{path}:{lines['dim']}: dim must be 2 or 3")
    sizes = _numbers(path, lines, values, "sizes", int, dim)
    if min(sizes) < 1:
        raise ParseError(f"{path}:{lines['sizes']}: sizes must be positive")
    spacing = _numbers(path, lines, values, "spacing", float, dim) if "spacing" in values else [1.0] * dim
    if min(spacing) <= 0:
        raise ParseError(f"{path}:{lines['spacing']}: spacing must be positive")
    dt = values["dtype"]
    if dt not in DTYPES:
        raise ParseError(f"{path}:{lines['dtype']}: unsupported dtype {dt!r} (expected u8, u16 or f32)")
    if values.get("byteorder", "little") != "little":
        raise ParseError(f"{path}:{lines['byteorder']}: only little-endian data is supported")
    flat = _read_raw(path, values["datafile"], DTYPES[dt], int(np.prod(sizes)), lines["datafile"])
    arr = flat.reshape(sizes)
    if dt == "f32":
        mu = np.clip(arr.astype(np.float64), 0.0, 1.0)
    else:
        mu = arr.astype(np.float64) / np.iinfo(DTYPES[dt]).max
    return FuzzyImage.from_array(mu, spacing)


def write_volume(path, img: FuzzyImage, dtype: str = "f32") -> None:
    """Header at ``path``, data next to it as ``<stem>.raw``."""
    path = Path(path)
    if dtype not in DTYPES:
        raise ValueError(f"unsupported dtype {dtype!r}")
    mu = img.membership
    if dtype == "f32":
        data = mu.astype(DTYPES[dtype])
    else:
        top = np.iinfo(DTYPES[dtype]).max
        data = np.round(mu * top).astype(DTYPES[dtype])
    datafile = path.with_suffix(".raw").name
    (path.parent / datafile).write_bytes(data.tobytes())
    path.write_text(
        f"dim = {img.ndim}\n"
        f"sizes = {' '.join(str(int(s)) for s in img.domain.sizes)}\n"
        f"spacing = {' '.join(repr(float(s)) for s in img.domain.spacing)}\n"
        f"dtype = {dtype}\n"
        "byteorder = little\n"
        f"datafile = {datafile}\n"
    )


def write_field(path, field: BSplineField) -> None:
    """Header plus raw little-endian f64 coefficients (C order, shape counts+3 x dim)."""
    path = Path(path)
    datafile = path.with_suffix(".raw").name
    (path.parent / datafile).write_bytes(field.coeffs.astype(FIELD_DTYPE).tobytes())
    fmt = lambda a: " ".join(repr(float(v)) for v in a)  # noqa: E731
    path.write_text(
        "kind = bspline\n"
        f"dim = {field.ndim}\n"
        f"counts = {' '.join(str(c) for c in field.counts)}\n"
        f"origin = {fmt(field.origin)}\n"
        f"extent = {fmt(field.extent)}\n"
        f"spacing = {fmt(field.spacing)}\n"
        "dtype = f64\n"
        "byteorder = little\n"
        f"datafile = {datafile}\n"
    )


def read_field(path) -> BSplineField:
    path = Path(path)
    if not path.exists():
        raise ParseError(f"{path}: no such file")
    values, lines = _parse_header(path, ("dim", "counts", "origin", "extent", "datafile"))
    if values.get("kind", "bspline") != "bspline":
        raise ParseError(f"{path}:{lines['kind']}: unknown field kind {values['kind']!r}")
    try:
        dim = int(values["dim"])
    except ValueError:
        raise ParseError(f"{path}:{lines['dim']}: dim is not an integer") from None
    counts = _numbers(path, lines, values, "counts", int, dim)
    origin = _numbers(path, lines, values, "origin", float, dim)
    extent = _numbers(path, lines, values, "extent", float, dim)
    if values.get("dtype", "f64") != "f64":
        raise ParseError(f"{path}:{lines['dtype']}: field data must be f64")
    shape = tuple(c + 3 for c in counts) + (dim,)
    flat = _read_raw(path, values["datafile"], FIELD_DTYPE, int(np.prod(shape)), lines["datafile"])
    try:
        return BSplineField(tuple(counts), np.array(origin), np.array(extent), flat.reshape(shape).copy())
    except ValueError as exc:
        raise ParseError(f"{path}: {exc}") from None


def write_metrics(path, records) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(METRIC_COLUMNS)
        for r in records:
            w.writerow([r.level, r.iteration, repr(float(r.J)), repr(float(r.amd_forward)),
                        repr(float(r.amd_backward)), repr(float(r.iic_mean)), f"{r.wall_ms:.3f}"])


def read_metrics(path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))
