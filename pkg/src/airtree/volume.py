"""Dense 3D scalar volumes with MetaImage (.mha/.mhd) I/O.

The voxel grid is indexed [ix, iy, iz] and linearized x-fastest (the
MetaImage convention). Spacing and origin are in millimetres.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np

from .errors import MhaParseError, MhaSizeError, UnsupportedTypeError, ValidationError

# MetaImage ElementType <-> numpy dtype (little-endian on disk)
ELEMENT_TYPES = {
    "MET_UCHAR": np.dtype(np.uint8),
    "MET_SHORT": np.dtype(np.int16),
    "MET_FLOAT": np.dtype(np.float32),
    "MET_DOUBLE": np.dtype(np.float64),
}
DTYPE_TO_ELEMENT = {v: k for k, v in ELEMENT_TYPES.items()}

SUPPORTED_DTYPES = tuple(ELEMENT_TYPES.values())


@dataclass(frozen=True)
class Volume3:
    """Immutable 3D scalar grid with physical spacing.

    data is indexed [ix, iy, iz]; dims is (nx, ny, nz).
    """

    data: np.ndarray
    spacing: tuple[float, float, float] = (1.0, 1.0, 1.0)
    origin: tuple[float, float, float] = (0.0, 0.0, 0.0)

    def __post_init__(self):
        arr = np.asarray(self.data)
        if arr.ndim != 3:
            raise ValidationError(f"Volume3 data must be 3-D, got ndim={arr.ndim}")
        if arr.dtype not in SUPPORTED_DTYPES:
            raise ValidationError(
                f"unsupported element kind {arr.dtype}; expected one of "
                f"{[d.name for d in SUPPORTED_DTYPES]}"
            )
        if len(self.spacing) != 3 or any(s <= 0 for s in self.spacing):
            raise ValidationError(f"spacing must be three positive values, got {self.spacing}")
        if len(self.origin) != 3:
            raise ValidationError(f"origin must have three components, got {self.origin}")
        arr = arr.copy()
        arr.flags.writeable = False
        object.__setattr__(self, "data", arr)
        object.__setattr__(self, "spacing", tuple(float(s) for s in self.spacing))
        object.__setattr__(self, "origin", tuple(float(o) for o in self.origin))

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.data.shape

    def with_data(self, data: np.ndarray) -> "Volume3":
        """Same geometry, new voxel data."""
        return Volume3(data, self.spacing, self.origin)

    def same_grid(self, other: "Volume3") -> bool:
        return self.dims == other.dims and self.spacing == other.spacing

    def is_binary(self) -> bool:
        vals = np.unique(self.data)
        return bool(np.isin(vals, (0, 1)).all())


def _parse_header(fh, path: str) -> dict:
    """Read text header lines up to and including ElementDataFile."""
    header = {}
    while True:
        raw = fh.readline()
        if not raw:
            raise MhaParseError(f"{path}: header ended before ElementDataFile")
        line = raw.decode("ascii", errors="replace").strip()
        if not line:
            continue
        if "=" not in line:
            raise MhaParseError(f"{path}: malformed header line: {line!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        header[key] = value
        if key == "ElementDataFile":
            return header


def read_mha(path: str) -> Volume3:
    """Read a MetaImage volume (.mha inline payload or .mhd + sibling raw)."""
    with open(path, "rb") as fh:
        header = _parse_header(fh, path)
        payload_inline = header["ElementDataFile"] == "LOCAL"
        payload = fh.read() if payload_inline else b""

    def require(key):
        if key not in header:
            raise MhaParseError(f"{path}: missing required header key {key}")
        return header[key]

    if require("ObjectType") != "Image":
        raise MhaParseError(f"{path}: ObjectType = {header['ObjectType']}, expected Image")
    if require("NDims") != "3":
        raise MhaParseError(f"{path}: NDims = {header['NDims']}, expected 3")
    if header.get("ElementByteOrderMSB", "False") not in ("False", "false"):
        raise MhaParseError(f"{path}: big-endian payloads are not supported")

    try:
        dims = tuple(int(v) for v in require("DimSize").split())
        spacing = tuple(float(v) for v in require("ElementSpacing").split())
        origin = tuple(float(v) for v in header.get("Offset", "0 0 0").split())
    except ValueError as exc:
        raise MhaParseError(f"{path}: unparseable numeric header field: {exc}") from exc
    if len(dims) != 3 or len(spacing) != 3 or len(origin) != 3:
        raise MhaParseError(f"{path}: DimSize/ElementSpacing/Offset must have 3 entries")

    elem = require("ElementType")
    if elem not in ELEMENT_TYPES:
        raise UnsupportedTypeError(
            f"{path}: unsupported ElementType {elem}; supported: {sorted(ELEMENT_TYPES)}"
        )
    dtype = ELEMENT_TYPES[elem].newbyteorder("<")

    if not payload_inline:
        raw_path = os.path.join(os.path.dirname(path) or ".", header["ElementDataFile"])
        try:
            with open(raw_path, "rb") as raw_fh:
                payload = raw_fh.read()
        except OSError as exc:
            raise OSError(f"cannot read raw payload {raw_path} for {path}: {exc}") from exc

    expected = dims[0] * dims[1] * dims[2] * dtype.itemsize
    if len(payload) != expected:
        raise MhaSizeError(
            f"{path}: payload is {len(payload)} bytes, expected {expected} "
            f"({dims[0]}x{dims[1]}x{dims[2]} of {elem})"
        )

    data = np.frombuffer(payload, dtype=dtype).astype(ELEMENT_TYPES[elem])
    data = data.reshape(dims, order="F")
    return Volume3(data, spacing, origin)


def write_mha(vol: Volume3, path: str) -> None:
    """Write a MetaImage volume; .mhd paths get a sibling .raw payload."""
    elem = DTYPE_TO_ELEMENT[vol.data.dtype]
    as_mhd = path.endswith(".mhd")
    payload = np.ascontiguousarray(
        vol.data.ravel(order="F"), dtype=vol.data.dtype.newbyteorder("<")
    ).tobytes()

    raw_name = os.path.basename(path)[: -len(".mhd")] + ".raw" if as_mhd else None
    lines = [
        "ObjectType = Image",
        "NDims = 3",
        "BinaryData = True",
        "ElementByteOrderMSB = False",
        f"DimSize = {vol.dims[0]} {vol.dims[1]} {vol.dims[2]}",
        f"ElementSpacing = {vol.spacing[0]:.17g} {vol.spacing[1]:.17g} {vol.spacing[2]:.17g}",
        f"Offset = {vol.origin[0]:.17g} {vol.origin[1]:.17g} {vol.origin[2]:.17g}",
        f"ElementType = {elem}",
        f"ElementDataFile = {raw_name if as_mhd else 'LOCAL'}",
    ]
    header = ("\n".join(lines) + "\n").encode("ascii")

    try:
        with open(path, "wb") as fh:
            fh.write(header)
            if not as_mhd:
                fh.write(payload)
        if as_mhd:
            raw_path = os.path.join(os.path.dirname(path) or ".", raw_name)
            with open(raw_path, "wb") as fh:
                fh.write(payload)
    except OSError as exc:
        raise OSError(f"cannot write volume to {path}: {exc}") from exc


def normalize_ct(vol: Volume3, lo: float = -1000.0, hi: float = 600.0) -> Volume3:
    """Clip intensities to [lo, hi] and map affinely onto [0, 1]."""
    if lo >= hi:
        raise ValidationError(f"normalization window requires lo < hi, got [{lo}, {hi}]")
    data = np.clip(vol.data.astype(np.float64), lo, hi)
    data = (data - lo) / (hi - lo)
    return vol.with_data(data.astype(np.float32))
