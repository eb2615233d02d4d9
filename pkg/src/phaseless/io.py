"""Binary artifact files and plot-ready CSV dumps.

Every binary file has the layout::

    offset 0   4 bytes   magic (b"PKSC", b"PKSN", b"PKMD" or b"PKVL")
    offset 4   uint32    format version
    offset 8   uint32    n, length of the JSON header in bytes
    offset 12  n bytes   UTF-8 JSON header (keys sorted, compact)
    offset 12+n          payload, little-endian float64, row-major

The header always carries ``shape``; the payload must hold exactly
``prod(shape)`` values.  Complex payloads (``.pkmode``) interleave real
and imaginary parts along a trailing axis of length 2.

Headers are written deterministically, so reading a file and writing the
result back reproduces it byte for byte.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import FormatError, VersionError
from .forward import KGrid
from .geometry import BallConfig

FORMAT_VERSION = 1
MAGIC = {
    "scan": b"PKSC",
    "sino": b"PKSN",
    "mode": b"PKMD",
    "vol": b"PKVL",
}
EXTENSIONS = {"scan": ".pkscan", "sino": ".pksino", "mode": ".pkmode", "vol": ".pkvol"}
_PREFIX = struct.Struct("<4sII")
_LE_F8 = np.dtype("<f8")


def _jsonable(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, np.generic):
        return obj.item()
    raise TypeError(f"cannot store {type(obj).__name__} in a file header")


def _dump_header(header):
    return json.dumps(header, sort_keys=True, separators=(",", ":"),
                      default=_jsonable, allow_nan=True).encode("utf-8")


# -- container -------------------------------------------------------------

def pack(kind, header, payload):
    """Serialize ``header`` and ``payload`` into the container bytes."""
    data = np.ascontiguousarray(payload, dtype=_LE_F8)
    header = dict(header, shape=list(data.shape))
    blob = _dump_header(header)
    return _PREFIX.pack(MAGIC[kind], FORMAT_VERSION, len(blob)) + blob + data.tobytes()


def unpack(raw, kind=None, source="<bytes>"):
    """Parse container bytes.

    Returns
    -------
    kind : str
    header : dict
    payload : ndarray

    Raises
    ------
    FormatError
        Bad magic, malformed header or wrong payload length; the message
        names the byte offset of the problem.
    VersionError
        The file was written by a newer format version.
    """
    if len(raw) < _PREFIX.size:
        raise FormatError(f"{source}: truncated file ({len(raw)} bytes) at byte offset 0; "
                          f"need at least {_PREFIX.size}")
    magic, version, n = _PREFIX.unpack_from(raw, 0)
    found = {v: k for k, v in MAGIC.items()}.get(magic)
    if found is None:
        raise FormatError(f"{source}: unknown magic {magic!r} at byte offset 0")
    if kind is not None and found != kind:
        raise FormatError(f"{source}: expected a {EXTENSIONS[kind]} file, found "
                          f"{EXTENSIONS[found]} magic at byte offset 0")
    if version > FORMAT_VERSION:
        raise VersionError(f"{source}: format version {version} (byte offset 4) is newer than "
                           f"the supported version {FORMAT_VERSION}; upgrade phaseless to "
                           f"read this file")
    if version < 1:
        raise FormatError(f"{source}: invalid format version {version} at byte offset 4")
    start, stop = _PREFIX.size, _PREFIX.size + n
    if stop > len(raw):
        raise FormatError(f"{source}: header length {n} at byte offset 8 runs past the end "
                          f"of the file ({len(raw)} bytes)")
    try:
        header = json.loads(raw[start:stop].decode("utf-8"))
    except UnicodeDecodeError as exc:
        raise FormatError(f"{source}: header is not UTF-8 at byte offset "
                          f"{start + exc.start}") from exc
    except json.JSONDecodeError as exc:
        raise FormatError(f"{source}: malformed JSON header at byte offset "
                          f"{start + exc.pos}: {exc.msg}") from exc
    if not isinstance(header, dict) or "shape" not in header:
        raise FormatError(f"{source}: header at byte offset {start} lacks 'shape'")
    try:
        shape = tuple(int(v) for v in header["shape"])
    except (TypeError, ValueError) as exc:
        raise FormatError(f"{source}: bad 'shape' in header at byte offset {start}") from exc
    if any(v < 0 for v in shape):
        raise FormatError(f"{source}: negative dimension in header at byte offset {start}")
    expected = int(np.prod(shape, dtype=np.int64)) * 8
    have = len(raw) - stop
    if have != expected:
        what = "truncated" if have < expected else "has trailing bytes"
        raise FormatError(f"{source}: payload {what}: expected {expected} bytes at byte offset "
                          f"{stop}, found {have}")
    payload = np.frombuffer(raw, dtype=_LE_F8, count=expected // 8, offset=stop)
    return found, header, payload.reshape(shape).astype(float)


def write_file(path, kind, header, payload):
    with open(path, "wb") as fh:
        fh.write(pack(kind, header, payload))


def read_file(path, kind=None):
    with open(path, "rb") as fh:
        raw = fh.read()
    return unpack(raw, kind, source=str(path))


def detect_kind(path):
    """Container kind from the magic bytes (``None`` for other files)."""
    with open(path, "rb") as fh:
        head = fh.read(4)
    return {v: k for k, v in MAGIC.items()}.get(head)


def _require(header, keys, source):
    missing = [k for k in keys if k not in header]
    if missing:
        raise FormatError(f"{source}: header at byte offset {_PREFIX.size} lacks {missing}")


# -- scans -----------------------------------------------------------------

@dataclass
class ScanData:
    """Frequency sweeps of one intensity kind, one row per chord.

    ``chords`` names the chord-set file that fixes row order; ``dist`` may
    be stored alongside so extraction can run without it.
    """

    grid: KGrid
    values: np.ndarray
    kind: str = "F1"
    cfg: BallConfig = field(default_factory=BallConfig)
    chords: str = ""
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.ndim != 2 or self.values.shape[1] != self.grid.n_k:
            raise FormatError(f"scan values of shape {self.values.shape} do not match "
                              f"n_k={self.grid.n_k}")


def write_scan(path, scan):
    header = {"kind": scan.kind, "kgrid": scan.grid.to_dict(), "ball": scan.cfg.to_dict(),
              "chords": scan.chords, "meta": scan.meta}
    write_file(path, "scan", header, scan.values)


def read_scan(path):
    _, h, data = read_file(path, "scan")
    _require(h, ("kind", "kgrid", "ball"), path)
    return ScanData(KGrid.from_dict(h["kgrid"]), data, h["kind"], BallConfig.from_dict(h["ball"]),
                    h.get("chords", ""), h.get("meta", {}))


class ScanWriter:
    """Stream a ``.pkscan`` file chunk by chunk (rows of one scan)."""

    def __init__(self, path, n_rows, grid, kind="F1", cfg=None, chords="", meta=None):
        self.path = path
        self.n_rows = int(n_rows)
        self.grid = grid
        header = {"kind": kind, "kgrid": grid.to_dict(),
                  "ball": (cfg or BallConfig()).to_dict(), "chords": chords,
                  "meta": meta or {}, "shape": [self.n_rows, grid.n_k]}
        blob = _dump_header(header)
        self._fh = open(path, "wb")
        self._fh.write(_PREFIX.pack(MAGIC["scan"], FORMAT_VERSION, len(blob)) + blob)
        self.written = 0

    def write(self, rows):
        rows = np.ascontiguousarray(rows, dtype=_LE_F8)
        if rows.ndim != 2 or rows.shape[1] != self.grid.n_k:
            raise FormatError("scan chunk has the wrong width")
        if self.written + rows.shape[0] > self.n_rows:
            raise FormatError("more scan rows than declared")
        self._fh.write(rows.tobytes())
        self.written += rows.shape[0]

    def close(self):
        self._fh.close()
        if self.written != self.n_rows:
            raise FormatError(f"{self.path}: wrote {self.written} of {self.n_rows} rows")

    def __enter__(self):
        return self

    def __exit__(self, exc_type, exc, tb):
        if exc_type is None:
            self.close()
        else:
            self._fh.close()
        return False


# -- sinograms, mode tables, volumes ---------------------------------------

def write_sinogram(path, sg):
    header = {"z": sg.z, "kind": sg.kind, "alphas": sg.alphas, "s_values": sg.s_values,
              "meta": sg.meta}
    write_file(path, "sino", header, sg.data)


def read_sinogram(path):
    from .radon import Sinogram
    _, h, data = read_file(path, "sino")
    _require(h, ("z", "alphas", "s_values"), path)
    return Sinogram(h["z"], h["alphas"], h["s_values"], data, h.get("kind", "h"),
                    h.get("meta", {}))


def write_modes(path, table):
    header = {"z": table.z, "n_modes": table.n_modes, "rho": table.rho, "rho0": table.rho0,
              "kind": table.kind, "meta": table.meta}
    payload = np.stack([table.coeffs.real, table.coeffs.imag], axis=-1)
    write_file(path, "mode", header, payload)


def read_modes(path):
    from .abelgeo import ModeTable
    _, h, data = read_file(path, "mode")
    _require(h, ("z", "n_modes", "rho", "rho0"), path)
    if data.ndim != 3 or data.shape[-1] != 2:
        raise FormatError(f"{path}: mode payload must have a trailing real/imag axis")
    return ModeTable(h["z"], int(h["n_modes"]), h["rho"], data[..., 0] + 1j * data[..., 1],
                     h["rho0"], h.get("kind", "G"), h.get("meta", {}))


def write_volume(path, vol):
    """Write a :class:`VolumeGrid` or a :class:`SliceImage`."""
    from .radon import SliceImage
    if isinstance(vol, SliceImage):
        header = {"kind": "slice", "z": vol.z, "coords": vol.coords}
    else:
        header = {"kind": "volume", "spacing": vol.spacing, "origin": list(vol.origin),
                  "meta": vol.meta}
    write_file(path, "vol", header, vol.values)


def read_volume(path):
    from .elliptic import VolumeGrid
    from .radon import SliceImage
    _, h, data = read_file(path, "vol")
    if h.get("kind") == "slice":
        _require(h, ("z", "coords"), path)
        return SliceImage(h["z"], h["coords"], data)
    _require(h, ("spacing", "origin"), path)
    if data.ndim != 3:
        raise FormatError(f"{path}: volume payload must be 3-D, got shape {data.shape}")
    return VolumeGrid(data, h["spacing"], tuple(h["origin"]), h.get("meta", {}))


# -- CSV dumps ---------------------------------------------------------------

def dump_volume_csv(path, vol, reference=None):
    """Central x-profile and per-slice norms of a volume, as CSV.

    Columns ``x, value[, reference]`` for the line ``y = z = 0`` (nearest
    voxel row), followed by a blank line and ``z, l2[, reference_l2]``.
    """
    n = vol.shape[0]
    mid = n // 2
    xs = vol.axis(0)
    cols = [xs, vol.values[:, mid, mid]]
    names = ["x", "value"]
    if reference is not None:
        cols.append(reference.values[:, mid, mid])
        names.append("reference")
    lines = [",".join(names)]
    lines += [",".join(repr(float(c[i])) for c in cols) for i in range(n)]
    lines.append("")
    zs = vol.axis(2)
    norms = [np.linalg.norm(vol.values[:, :, k]) for k in range(n)]
    head = ["z", "l2"] + (["reference_l2"] if reference is not None else [])
    lines.append(",".join(head))
    for k in range(n):
        row = [zs[k], norms[k]]
        if reference is not None:
            row.append(np.linalg.norm(reference.values[:, :, k]))
        lines.append(",".join(repr(float(v)) for v in row))
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def dump_sinogram_csv(path, sg):
    """Long-format ``alpha, s, value`` rows."""
    a, s = np.meshgrid(sg.alphas, sg.s_values, indexing="ij")
    rows = np.column_stack([a.ravel(), s.ravel(), sg.data.ravel()])
    with open(path, "w") as fh:
        fh.write("alpha,s,value\n")
        np.savetxt(fh, rows, delimiter=",", fmt="%.17g")
