"""
Self-describing binary grid files and CSV export.

Layout of a grid file::

    8 bytes   magic  b"CPIGRID\\0"
    2 bytes   format version, uint16 little-endian
    4 bytes   header length H, uint32 little-endian
    H bytes   UTF-8 JSON header (dims, axes, scenario echo, payload sha256, ...)
    ...       payload, float64 little-endian, C order

Floats in the header are written with ``repr`` precision, so grids and the
scenario round-trip exactly, as does the payload.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import os
import struct
from pathlib import Path

import numpy as np

from .core import SampledGrid, ScenarioConfig
from .engine import CorrelationTensor, ImageProfile
from .errors import ConfigError, FormatError

__all__ = ["MAGIC", "VERSION", "save_tensor", "load_tensor", "save_profile", "load_profile",
           "read_grid", "profile_csv", "write_text", "sha256_file"]

MAGIC = b"CPIGRID\0"
VERSION = 1
_PREFIX = struct.Struct("<8sHI")


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def _atomic_write(path, data: bytes):
    path = Path(path)
    tmp = path.with_name(path.name + ".part")
    with open(tmp, "wb") as fh:
        fh.write(data)
    os.replace(tmp, path)


def write_text(path, text: str):
    """Write ``text`` atomically (temporary file, then rename)."""
    _atomic_write(path, text.encode("utf-8"))


def _encode(values: np.ndarray, header: dict) -> bytes:
    payload = np.ascontiguousarray(values, dtype="<f8").tobytes()
    header = dict(header, dims=list(values.shape), dtype="<f8",
                  sha256=hashlib.sha256(payload).hexdigest())
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    return _PREFIX.pack(MAGIC, VERSION, len(blob)) + blob + payload


def read_grid(path) -> tuple[dict, np.ndarray]:
    """Header and payload of a grid file, after all integrity checks."""
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise FormatError(f"{path}: cannot read ({exc.strerror})") from exc
    if len(data) < _PREFIX.size:
        raise FormatError(f"{path}: truncated file")
    magic, version, hlen = _PREFIX.unpack_from(data)
    if magic != MAGIC:
        raise FormatError(f"{path}: not a grid file (bad magic)")
    if version != VERSION:
        raise FormatError(f"{path}: unsupported format version {version} (expected {VERSION})")
    start = _PREFIX.size + hlen
    try:
        header = json.loads(data[_PREFIX.size:start].decode("utf-8"))
        dims = tuple(int(d) for d in header["dims"])
    except (ValueError, KeyError, TypeError) as exc:
        raise FormatError(f"{path}: corrupt header") from exc
    payload = data[start:]
    if len(payload) != 8 * int(np.prod(dims)):
        raise FormatError(f"{path}: payload has {len(payload)} bytes, expected {8 * int(np.prod(dims))}")
    if hashlib.sha256(payload).hexdigest() != header.get("sha256"):
        raise FormatError(f"{path}: checksum mismatch, file is corrupt")
    return header, np.frombuffer(payload, dtype="<f8").reshape(dims).astype(float)


def _grid(d) -> SampledGrid:
    return SampledGrid(int(d["n"]), float(d["spacing"]), float(d["origin"]))


def _scenario(d) -> ScenarioConfig:
    try:
        return ScenarioConfig(**d)
    except (TypeError, ConfigError) as exc:
        raise FormatError(f"scenario echo is invalid: {exc}") from exc


def save_tensor(path, tensor: CorrelationTensor):
    header = {"kind": "correlation", "provenance": tensor.provenance,
              "axes": [tensor.grid_a.as_dict(), tensor.grid_b.as_dict()],
              "scenario": tensor.scenario.as_dict()}
    _atomic_write(path, _encode(np.asarray(tensor.values), header))


def load_tensor(path) -> CorrelationTensor:
    header, values = read_grid(path)
    if header.get("kind") != "correlation" or values.ndim != 2:
        raise FormatError(f"{path}: not a correlation tensor")
    ga, gb = (_grid(a) for a in header["axes"])
    return CorrelationTensor(values, ga, gb, _scenario(header["scenario"]), header["provenance"])


def save_profile(path, profile: ImageProfile, scenario: ScenarioConfig | None = None):
    header = {"kind": "profile", "profile_kind": profile.kind, "axes": [profile.grid.as_dict()],
              "magnification": profile.magnification, "pixel_rescale": profile.pixel_rescale,
              "note": profile.note,
              "scenario": scenario.as_dict() if scenario is not None else None}
    _atomic_write(path, _encode(np.asarray(profile.values), header))


def load_profile(path) -> ImageProfile:
    header, values = read_grid(path)
    if header.get("kind") != "profile" or values.ndim != 1:
        raise FormatError(f"{path}: not an image profile")
    return ImageProfile(values, _grid(header["axes"][0]), header["profile_kind"],
                        header["magnification"], header["pixel_rescale"], header["note"])


def profile_csv(profile: ImageProfile, *, normalized: bool = False) -> str:
    """Two-column CSV (``x_m``, ``value``) with full float precision."""
    p = profile.normalized() if normalized else profile
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["x_m", "value"])
    for x, v in zip(p.x, p.values):
        w.writerow([repr(float(x)), repr(float(v))])
    return buf.getvalue()
