"""
Binary container shared by datasets and checkpoints.

Layout: 5-byte magic ``MCDS1``, newline, 8-byte little-endian unsigned header
length, UTF-8 JSON header, then ``count * record_size`` little-endian float64
values in header order.
"""

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from ..utilities.constants import CONTAINER_FORMAT_VERSION, CONTAINER_MAGIC
from ..utilities.errors import (
    BadMagicError,
    ContainerError,
    TruncatedPayloadError,
    VersionMismatchError,
)
from ..utilities.logging import get_logger

logger = get_logger(__name__)

_PREFIX_LEN = len(CONTAINER_MAGIC) + 1
_LENGTH = struct.Struct("<Q")


@dataclass
class DatasetContainer:
    """Header plus a (count x record_size) float64 payload."""
    header: dict[str, Any]
    payload: np.ndarray = field(repr=False)

    @property
    def count(self) -> int:
        return int(self.header["count"])

    @property
    def record_size(self) -> int:
        return int(self.header["record_size"])

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, DatasetContainer):
            return NotImplemented
        return self.header == other.header and self.payload.tobytes() == other.payload.tobytes()


def write_container(path: str | Path, header: dict[str, Any], payload: np.ndarray) -> None:
    values = np.ascontiguousarray(payload, dtype="<f8").reshape(-1)
    header = {**header, "format_version": CONTAINER_FORMAT_VERSION}
    declared = int(header["count"]) * int(header["record_size"])
    if declared != values.size:
        raise ContainerError(f"header declares {declared} values, payload has {values.size}")
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as f:
        f.write(CONTAINER_MAGIC + b"\n")
        f.write(_LENGTH.pack(len(blob)))
        f.write(blob)
        f.write(values.tobytes())
    logger.debug(f"Wrote container {path}: {header['count']} x {header['record_size']}")


def read_container(path: str | Path) -> tuple[dict[str, Any], np.ndarray]:
    raw = Path(path).read_bytes()
    if raw[:_PREFIX_LEN] != CONTAINER_MAGIC + b"\n":
        logger.error(f"{path}: bad magic {raw[:_PREFIX_LEN]!r}")
        raise BadMagicError(f"{path}: not a {CONTAINER_MAGIC.decode()} container")
    body = _PREFIX_LEN + _LENGTH.size
    if len(raw) < body:
        raise TruncatedPayloadError(f"{path}: truncated before header length")
    (header_len,) = _LENGTH.unpack(raw[_PREFIX_LEN:body])
    if len(raw) < body + header_len:
        raise TruncatedPayloadError(f"{path}: truncated header")
    try:
        header = json.loads(raw[body:body + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise ContainerError(f"{path}: unreadable header ({e})") from e

    version = header.get("format_version")
    if version != CONTAINER_FORMAT_VERSION:
        logger.error(f"{path}: format version {version}, expected {CONTAINER_FORMAT_VERSION}")
        raise VersionMismatchError(
            f"{path}: format version {version} is not {CONTAINER_FORMAT_VERSION}"
        )

    expected = int(header["count"]) * int(header["record_size"]) * 8
    payload = raw[body + header_len:]
    if len(payload) < expected:
        logger.error(f"{path}: payload has {len(payload)} bytes, header declares {expected}")
        raise TruncatedPayloadError(
            f"{path}: payload shorter than declared ({len(payload)} < {expected})"
        )
    if len(payload) > expected:
        raise ContainerError(f"{path}: {len(payload) - expected} trailing bytes after payload")
    return header, np.frombuffer(payload, dtype="<f8").astype(np.float64)


def save(container: DatasetContainer, path: str | Path) -> None:
    write_container(path, container.header, container.payload)


def load(path: str | Path) -> DatasetContainer:
    header, values = read_container(path)
    shape = (int(header["count"]), int(header["record_size"]))
    return DatasetContainer(header, values.reshape(shape))
