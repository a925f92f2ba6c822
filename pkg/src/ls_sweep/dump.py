"""Field dumps, PGM images and JSON reports."""

import json
import struct
from pathlib import Path
from typing import Any

import numpy as np

from .problem import ComplexField

MAGIC = b"LSF1"
_LENGTH = struct.Struct("<I")
_PAYLOAD_DTYPE = np.dtype("<c16")


def write_field(path: Path, field: ComplexField, omega: float, h: float) -> None:
    """LSF1 layout: magic, u32 header length, UTF-8 JSON header, row-major <c16 payload."""
    ny, nx = field.data.shape[1], field.data.shape[0]
    header = {
        "nx": nx,
        "ny": ny,
        "index_set": field.index_set.kind,
        "dtype": "c128",
        "order": "row-major",
        "omega": omega,
        "h": h,
    }
    encoded = json.dumps(header, ensure_ascii=False).encode("utf-8")
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(_LENGTH.pack(len(encoded)))
        f.write(encoded)
        f.write(np.ascontiguousarray(field.data, dtype=_PAYLOAD_DTYPE).tobytes())


def read_field(path: Path) -> tuple[dict[str, Any], np.ndarray]:
    raw = Path(path).read_bytes()
    if raw[:4] != MAGIC:
        raise ValueError(f"{path}: not an LSF1 file (magic {raw[:4]!r})")
    (length,) = _LENGTH.unpack_from(raw, 4)
    header = json.loads(raw[8 : 8 + length].decode("utf-8"))
    payload = raw[8 + length :]
    expected = header["nx"] * header["ny"] * _PAYLOAD_DTYPE.itemsize
    if len(payload) != expected:
        raise ValueError(f"{path}: payload has {len(payload)} bytes, header promises {expected}")
    data = np.frombuffer(payload, dtype=_PAYLOAD_DTYPE).reshape(header["nx"], header["ny"])
    return header, data.astype(np.complex128)


def write_pgm(path: Path, values: np.ndarray, quantity: str) -> None:
    """8-bit binary PGM, linear from min to max; NaNs render black.

    Axis 2 runs up the image. The sidecar `<name>.json` records min/max.
    """
    finite = values[np.isfinite(values)]
    lo = float(finite.min()) if finite.size else 0.0
    hi = float(finite.max()) if finite.size else 0.0
    span = hi - lo if hi > lo else 1.0
    scaled = np.nan_to_num((values - lo) / span, nan=0.0)
    pixels = np.clip(np.rint(scaled * 255), 0, 255).astype(np.uint8).T[::-1]
    rows, cols = pixels.shape
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as f:
        f.write(f"P5\n{cols} {rows}\n255\n".encode("ascii"))
        f.write(pixels.tobytes())
    write_json(path.with_suffix(".json"), {"quantity": quantity, "min": lo, "max": hi})


def write_field_images(directory: Path, stem: str, field: ComplexField) -> None:
    write_pgm(directory / f"{stem}_abs.pgm", np.abs(field.data), f"|{stem}|")
    write_pgm(directory / f"{stem}_re.pgm", field.data.real, f"Re {stem}")


def write_json(path: Path, data: Any) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(data, ensure_ascii=False, indent=2) + "\n", encoding="utf-8")
