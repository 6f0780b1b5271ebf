"""Binary tensor files, patch-bundle directories and CSV tables.

Tensor file layout (all integers little-endian)::

    bytes 0-3   magic b"TSR1"
    byte  4     dtype code (1=f32, 2=f64, 3=i32, 4=u8)
    byte  5     ndim (>= 1)
    8*ndim      u64 extents
    ...         row-major data, exactly prod(shape) values

A patch bundle is one directory per field sample holding ``manifest.json``
and six tensor files (``s2_bands.tsr`` ... ``s1_doys.tsr``).
"""
from __future__ import annotations

import csv
import io
import json
import os
import struct
import tempfile
from dataclasses import dataclass
from pathlib import Path

import numpy as np

MAGIC = b"TSR1"
FORMAT_VERSION = 1

DTYPE_CODES = {
    1: np.dtype("<f4"),
    2: np.dtype("<f8"),
    3: np.dtype("<i4"),
    4: np.dtype("u1"),
}

S2_BANDS = 10
S1_BANDS = 2
BUNDLE_FILES = ("s2_bands", "s2_mask", "s2_doys", "s1_bands", "s1_mask", "s1_doys")


class FormatError(ValueError):
    """Malformed tensor file or byte buffer."""


class ValidationError(ValueError):
    """Input that parses but violates a data invariant.

    ``field`` names the offending entry so callers can report it.
    """

    def __init__(self, message: str, field: str | None = None):
        super().__init__(message)
        self.field = field


def _dtype_code(arr: np.ndarray) -> int:
    key = (arr.dtype.kind, arr.dtype.itemsize)
    codes = {("f", 4): 1, ("f", 8): 2, ("i", 4): 3, ("u", 1): 4}
    if key not in codes:
        raise FormatError(f"unsupported dtype {arr.dtype}")
    return codes[key]


def encode_tensor(tensor) -> bytes:
    arr = np.asarray(tensor)
    if arr.ndim == 0:
        arr = arr.reshape(1)
    if arr.ndim > 255:
        raise FormatError("too many dimensions")
    if any(s <= 0 for s in arr.shape):
        raise FormatError(f"shape extents must be positive, got {arr.shape}")
    code = _dtype_code(arr)
    data = np.ascontiguousarray(arr, dtype=DTYPE_CODES[code])
    header = MAGIC + struct.pack("<BB", code, arr.ndim) + struct.pack(f"<{arr.ndim}Q", *arr.shape)
    return header + data.tobytes(order="C")


def decode_tensor(buf: bytes, offset: int = 0) -> tuple[np.ndarray, int]:
    """Decode one tensor starting at ``offset``; return it and the end offset."""
    mv = memoryview(buf)
    if len(mv) - offset < 6:
        raise FormatError("truncated header")
    if bytes(mv[offset:offset + 4]) != MAGIC:
        raise FormatError("bad magic")
    code, ndim = struct.unpack_from("<BB", buf, offset + 4)
    if code not in DTYPE_CODES:
        raise FormatError(f"unknown dtype code {code}")
    if ndim < 1:
        raise FormatError("ndim must be >= 1")
    pos = offset + 6
    if len(mv) - pos < 8 * ndim:
        raise FormatError("truncated shape")
    shape = struct.unpack_from(f"<{ndim}Q", buf, pos)
    pos += 8 * ndim
    if any(s == 0 for s in shape):
        raise FormatError("zero extent in shape")
    dtype = DTYPE_CODES[code]
    count = int(np.prod(shape, dtype=np.uint64))
    nbytes = count * dtype.itemsize
    if len(mv) - pos < nbytes:
        raise FormatError(f"truncated data: need {nbytes} bytes, have {len(mv) - pos}")
    arr = np.frombuffer(buf, dtype=dtype, count=count, offset=pos).reshape(shape).copy()
    return arr, pos + nbytes


def write_tensor(path, tensor) -> None:
    atomic_write_bytes(path, encode_tensor(tensor))


def read_tensor(path) -> np.ndarray:
    buf = Path(path).read_bytes()
    arr, end = decode_tensor(buf)
    if end != len(buf):
        raise FormatError(f"{path}: {len(buf) - end} trailing bytes after declared shape")
    return arr


def atomic_write_bytes(path, data: bytes) -> None:
    """Write via a sibling temp file and rename, so readers never see a partial file."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))


def dump_json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


# --------------------------------------------------------------------- CSV

def write_csv(path, header, rows) -> None:
    """RFC-4180 CSV (CRLF line ends, minimal quoting), written atomically."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\r\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow(row)
    atomic_write_text(path, buf.getvalue())


def read_csv(path) -> tuple[list[str], list[list[str]]]:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ValidationError(f"{path}: missing header row") from None
        rows = [r for r in reader if r]
    for i, r in enumerate(rows):
        if len(r) != len(header):
            raise ValidationError(f"{path}: row {i + 2} has {len(r)} fields, header has {len(header)}")
    return header, rows


def fmt_float(x: float) -> str:
    """Shortest round-tripping repr; stable across platforms."""
    return repr(float(x))


# ----------------------------------------------------------- patch bundles

@dataclass
class PatchBundle:
    sample_id: str
    lat: float
    lon: float
    year: int
    s2_bands: np.ndarray  # [T2, 3, 3, 10]
    s2_mask: np.ndarray   # [T2, 3, 3]
    s2_doys: np.ndarray   # [T2]
    s1_bands: np.ndarray  # [T1, 3, 3, 2]
    s1_mask: np.ndarray   # [T1, 3, 3]
    s1_doys: np.ndarray   # [T1]

    def validate(self) -> None:
        for prefix, nb in (("s2", S2_BANDS), ("s1", S1_BANDS)):
            bands = getattr(self, f"{prefix}_bands")
            mask = getattr(self, f"{prefix}_mask")
            doys = getattr(self, f"{prefix}_doys")
            if bands.ndim != 4 or bands.shape[-1] != nb:
                raise ValidationError(f"{prefix}_bands must be [T x H x W x {nb}], got {bands.shape}",
                                      f"{prefix}_bands")
            if mask.shape != bands.shape[:3]:
                raise ValidationError(f"{prefix}_mask shape {mask.shape} != {bands.shape[:3]}",
                                      f"{prefix}_mask")
            if not np.isin(mask, (0, 1)).all():
                raise ValidationError(f"{prefix}_mask must be binary", f"{prefix}_mask")
            if doys.shape != (bands.shape[0],):
                raise ValidationError(f"{prefix}_doys length {doys.shape} != T={bands.shape[0]}",
                                      f"{prefix}_doys")
            if doys.min() < 1 or doys.max() > 366:
                raise ValidationError(f"{prefix}_doys outside [1, 366]", f"{prefix}_doys")
            if np.any(np.diff(doys) <= 0):
                raise ValidationError(f"{prefix}_doys not strictly increasing", f"{prefix}_doys")

    @property
    def T2(self) -> int:
        return self.s2_bands.shape[0]

    @property
    def T1(self) -> int:
        return self.s1_bands.shape[0]


def save_bundle(bundle: PatchBundle, directory) -> None:
    bundle.validate()
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    dtypes = {"bands": np.float32, "mask": np.uint8, "doys": np.int32}
    for name in BUNDLE_FILES:
        write_tensor(d / f"{name}.tsr", np.asarray(getattr(bundle, name), dtype=dtypes[name.split("_")[1]]))
    manifest = {
        "sample_id": bundle.sample_id,
        "lat": float(bundle.lat),
        "lon": float(bundle.lon),
        "year": int(bundle.year),
        "files": {name: f"{name}.tsr" for name in BUNDLE_FILES},
    }
    atomic_write_text(d / "manifest.json", dump_json(manifest))


def load_bundle(directory) -> PatchBundle:
    d = Path(directory)
    mpath = d / "manifest.json"
    if not mpath.is_file():
        raise FileNotFoundError(f"{mpath}: manifest missing")
    manifest = json.loads(mpath.read_text(encoding="utf-8"))
    for key in ("sample_id", "lat", "lon", "year"):
        if key not in manifest:
            raise ValidationError(f"manifest missing key {key!r}", key)
    files = manifest.get("files", {})
    arrays = {}
    for name in BUNDLE_FILES:
        path = d / files.get(name, f"{name}.tsr")
        if not path.is_file():
            raise ValidationError(f"{d}: missing tensor file for {name}", name)
        arrays[name] = read_tensor(path)
    bundle = PatchBundle(
        sample_id=str(manifest["sample_id"]),
        lat=float(manifest["lat"]),
        lon=float(manifest["lon"]),
        year=int(manifest["year"]),
        **arrays,
    )
    bundle.validate()
    return bundle


def find_bundles(root) -> list[Path]:
    """Bundle directories under ``root`` (``root`` itself if it is one), sorted by name."""
    root = Path(root)
    if (root / "manifest.json").is_file():
        return [root]
    if not root.is_dir():
        raise FileNotFoundError(f"{root}: not a directory")
    return sorted(p for p in root.iterdir() if (p / "manifest.json").is_file())
