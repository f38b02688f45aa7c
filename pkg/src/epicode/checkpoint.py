"""Bit-exact storage and structural validation of model parameter sets.

A :class:`TensorMap` is a named collection of dense float32 tensors: the
in-memory representation of every model checkpoint handled by this package.

File layout (binary, little-endian):

* 8-byte unsigned integer ``H`` = byte length of the JSON header,
* ``H`` bytes of UTF-8 JSON mapping each tensor name to
  ``{"dtype": "F32", "shape": [...], "data_offsets": [begin, end]}`` where
  offsets are relative to the data region that immediately follows the header,
* the data region: concatenated row-major little-endian float32 payloads.

This is the "safetensors" container layout, so files written here can be
inspected with third-party tools. Writing is canonical: tensors are laid out
in lexicographic name order and the header is space-padded so the data region
starts on an 8-byte boundary, which makes saving byte-deterministic.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Mapping

import numpy as np

from .errors import ValidationError

_HEADER_LEN_BYTES = 8
_DTYPE_TAG = "F32"
_ELEMENT_SIZE = 4


class TensorMap:
    """Immutable mapping of non-empty names to finite float32 tensors."""

    def __init__(self, tensors: Mapping[str, np.ndarray]) -> None:
        if not tensors:
            raise ValidationError("empty tensor map")
        entries: dict[str, np.ndarray] = {}
        for name in sorted(tensors):
            if not isinstance(name, str) or not name:
                raise ValidationError(f"tensor name must be a non-empty string, got {name!r}")
            arr = np.array(tensors[name], dtype=np.float32, order="C")
            if not np.all(np.isfinite(arr)):
                raise ValidationError(f"non-finite tensor {name!r}")
            arr.flags.writeable = False
            entries[name] = arr
        self._entries = entries

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(self._entries)

    def __getitem__(self, name: str) -> np.ndarray:
        return self._entries[name]

    def __contains__(self, name: str) -> bool:
        return name in self._entries

    def __iter__(self) -> Iterator[str]:
        return iter(self._entries)

    def __len__(self) -> int:
        return len(self._entries)

    def items(self):
        return self._entries.items()

    def num_elements(self) -> int:
        return sum(arr.size for arr in self._entries.values())

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, TensorMap):
            return NotImplemented
        if self.names != other.names:
            return False
        return all(
            a.shape == other[name].shape and np.array_equal(a, other[name])
            for name, a in self.items()
        )

    def __repr__(self) -> str:
        return f"TensorMap({len(self)} tensors, {self.num_elements()} elements)"


@dataclass
class CompatReport:
    """Structural differences that block elementwise arithmetic on two maps."""

    missing_in_a: list[str] = field(default_factory=list)
    missing_in_b: list[str] = field(default_factory=list)
    shape_mismatches: list[tuple[str, tuple[int, ...], tuple[int, ...]]] = field(default_factory=list)

    @property
    def empty(self) -> bool:
        return not (self.missing_in_a or self.missing_in_b or self.shape_mismatches)

    def describe(self) -> str:
        if self.empty:
            return "compatible"
        parts = []
        if self.missing_in_a:
            parts.append(f"missing in a: {', '.join(self.missing_in_a)}")
        if self.missing_in_b:
            parts.append(f"missing in b: {', '.join(self.missing_in_b)}")
        for name, sa, sb in self.shape_mismatches:
            parts.append(f"shape mismatch on {name!r}: {list(sa)} vs {list(sb)}")
        return "; ".join(parts)


def check_compat(a: TensorMap, b: TensorMap) -> CompatReport:
    """Compare name sets and per-name shapes; an empty report means compatible."""
    report = CompatReport()
    names_a, names_b = set(a.names), set(b.names)
    report.missing_in_a = sorted(names_b - names_a)
    report.missing_in_b = sorted(names_a - names_b)
    for name in sorted(names_a & names_b):
        if a[name].shape != b[name].shape:
            report.shape_mismatches.append((name, a[name].shape, b[name].shape))
    return report


def save(tensor_map: TensorMap, path: str | Path) -> None:
    """Write the map in the canonical layout; refuses non-finite data."""
    header: dict[str, dict] = {}
    offset = 0
    payloads: list[bytes] = []
    for name, arr in tensor_map.items():
        if not np.all(np.isfinite(arr)):
            raise ValidationError(f"non-finite tensor {name!r}")
        data = arr.astype("<f4", copy=False).tobytes(order="C")
        end = offset + len(data)
        header[name] = {
            "dtype": _DTYPE_TAG,
            "shape": list(arr.shape),
            "data_offsets": [offset, end],
        }
        payloads.append(data)
        offset = end

    header_bytes = json.dumps(header, separators=(",", ":")).encode("utf-8")
    pad = (-(_HEADER_LEN_BYTES + len(header_bytes))) % 8
    header_bytes += b" " * pad
    with open(path, "wb") as fh:
        fh.write(struct.pack("<Q", len(header_bytes)))
        fh.write(header_bytes)
        for data in payloads:
            fh.write(data)


def _parse_header(raw: bytes) -> dict[str, dict]:
    def reject_duplicates(pairs):
        seen = set()
        for key, _ in pairs:
            if key in seen:
                raise ValidationError(f"duplicate tensor name {key!r}")
            seen.add(key)
        return dict(pairs)

    try:
        header = json.loads(raw.decode("utf-8"), object_pairs_hook=reject_duplicates)
    except ValidationError:
        raise
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ValidationError(f"bad header: {exc}") from exc
    if not isinstance(header, dict):
        raise ValidationError("bad header: expected a JSON object")
    return header


def load(path: str | Path) -> TensorMap:
    """Read a checkpoint file, validating header metadata against the payload."""
    blob = Path(path).read_bytes()
    if len(blob) < _HEADER_LEN_BYTES:
        raise ValidationError("truncated file: missing header length")
    (header_len,) = struct.unpack("<Q", blob[:_HEADER_LEN_BYTES])
    if _HEADER_LEN_BYTES + header_len > len(blob):
        raise ValidationError("truncated file: header length exceeds file size")
    header = _parse_header(blob[_HEADER_LEN_BYTES : _HEADER_LEN_BYTES + header_len])

    data = blob[_HEADER_LEN_BYTES + header_len :]
    tensors: dict[str, np.ndarray] = {}
    for name, meta in header.items():
        if name == "__metadata__":
            continue
        try:
            dtype = meta["dtype"]
            shape = tuple(int(d) for d in meta["shape"])
            begin, end = (int(v) for v in meta["data_offsets"])
        except (KeyError, TypeError, ValueError) as exc:
            raise ValidationError(f"bad header entry for {name!r}: {exc}") from exc
        if dtype != _DTYPE_TAG:
            raise ValidationError(f"unsupported element type {dtype!r} for {name!r}")
        if any(d <= 0 for d in shape) and shape != ():
            raise ValidationError(f"non-positive dimension in shape {list(shape)} for {name!r}")
        expected = int(np.prod(shape, dtype=np.int64)) * _ELEMENT_SIZE if shape else _ELEMENT_SIZE
        if begin < 0 or end > len(data) or begin > end:
            raise ValidationError(f"truncated data region for {name!r}")
        if end - begin != expected:
            raise ValidationError(
                f"size mismatch for {name!r}: shape {list(shape)} needs "
                f"{expected} bytes, payload has {end - begin}"
            )
        arr = np.frombuffer(data[begin:end], dtype="<f4").reshape(shape)
        if not np.all(np.isfinite(arr)):
            raise ValidationError(f"non-finite tensor {name!r}")
        tensors[name] = arr
    if not tensors:
        raise ValidationError("empty tensor map")
    return TensorMap(tensors)
