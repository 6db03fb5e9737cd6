"""Binary container shared by dataset and checkpoint files.

Layout (all integers little-endian)::

    magic          8 bytes   b"TRMC0001" (dataset) or b"TRNN0001" (checkpoint)
    header_len     u64       byte length of the JSON header
    header         UTF-8 JSON, keys sorted; always has "payload_bytes"
    payload        exactly header["payload_bytes"] bytes
"""

from __future__ import annotations

import json
import struct


class FormatError(ValueError):
    """Base class for unreadable container files."""


class BadMagicError(FormatError):
    pass


class TruncatedFileError(FormatError):
    pass


class LengthMismatchError(FormatError):
    """Header fields, declared payload size and actual payload disagree."""


def write_container(path, magic: bytes, header: dict, payload: bytes) -> None:
    header = dict(header, payload_bytes=len(payload))
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(magic)
        fh.write(struct.pack("<Q", len(blob)))
        fh.write(blob)
        fh.write(payload)


def read_container(path, magic: bytes) -> tuple[dict, bytes]:
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) < len(magic):
        raise TruncatedFileError(f"{path}: file ends inside the magic string")
    if data[: len(magic)] != magic:
        raise BadMagicError(f"{path}: bad magic {data[:len(magic)]!r}, expected {magic!r}")
    start = len(magic) + 8
    if len(data) < start:
        raise TruncatedFileError(f"{path}: file ends inside the header length")
    (hlen,) = struct.unpack("<Q", data[len(magic) : start])
    if len(data) < start + hlen:
        raise TruncatedFileError(f"{path}: file ends inside the header")
    try:
        header = json.loads(data[start : start + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"{path}: unreadable header ({exc})") from None
    payload = data[start + hlen :]
    declared = header.get("payload_bytes")
    if not isinstance(declared, int):
        raise FormatError(f"{path}: header lacks payload_bytes")
    if len(payload) < declared:
        raise TruncatedFileError(f"{path}: payload has {len(payload)} of {declared} bytes")
    if len(payload) > declared:
        raise LengthMismatchError(
            f"{path}: {len(payload) - declared} trailing bytes after the declared payload"
        )
    return header, payload
