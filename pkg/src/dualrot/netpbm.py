"""Binary NetPBM (P5 greyscale / P6 colour, maxval 255) reading and writing."""

from __future__ import annotations

from pathlib import Path

import numpy as np


class NetpbmError(ValueError):
    def __init__(self, message: str, offset: int):
        super().__init__(message)
        self.offset = offset


_WS = b" \t\r\n\x0b\x0c"


def _tokens(buf: bytes, count: int):
    """Read ``count`` header tokens; returns (tokens, offset of payload)."""
    pos = 0
    out = []
    n = len(buf)
    while len(out) < count:
        while pos < n and (buf[pos] in _WS or buf[pos] == ord("#")):
            if buf[pos] == ord("#"):
                while pos < n and buf[pos] not in b"\r\n":
                    pos += 1
            else:
                pos += 1
        if pos >= n:
            raise NetpbmError(f"malformed header: unexpected end of file at byte {pos}", pos)
        start = pos
        while pos < n and buf[pos] not in _WS and buf[pos] != ord("#"):
            pos += 1
        out.append((buf[start:pos], start))
    if pos >= n or buf[pos] not in _WS:
        raise NetpbmError(f"malformed header: expected whitespace at byte {pos}", pos)
    return out, pos + 1


def decode(buf: bytes) -> np.ndarray:
    """Decode P5/P6 bytes into uint8 ``[H,W]`` or ``[H,W,3]``."""
    if len(buf) < 2 or buf[:2] not in (b"P5", b"P6"):
        raise NetpbmError("malformed header: magic must be P5 or P6 at byte 0", 0)
    channels = 3 if buf[:2] == b"P6" else 1
    toks, start = _tokens(buf[2:], 3)
    start += 2
    vals = []
    for tok, off in toks:
        if not tok.isdigit():
            raise NetpbmError(f"malformed header: expected integer at byte {off + 2}, got {tok!r}", off + 2)
        vals.append(int(tok))
    w, h, maxval = vals
    if w < 1 or h < 1:
        raise NetpbmError(f"malformed header: non-positive size {w}x{h} at byte {toks[0][1] + 2}", toks[0][1] + 2)
    if maxval != 255:
        raise NetpbmError(f"unsupported maxval {maxval} at byte {toks[2][1] + 2} (only 255)", toks[2][1] + 2)
    need = w * h * channels
    have = len(buf) - start
    if have < need:
        raise NetpbmError(
            f"truncated payload at byte {start + need} (expected {need} payload bytes, got {have})", start + need
        )
    arr = np.frombuffer(buf, dtype=np.uint8, count=need, offset=start)
    return arr.reshape(h, w, 3) if channels == 3 else arr.reshape(h, w)


def encode(arr: np.ndarray) -> bytes:
    a = np.asarray(arr)
    if a.dtype != np.uint8:
        raise TypeError("encode expects uint8 pixels")
    if a.ndim == 3 and a.shape[2] == 3:
        magic = b"P6"
    elif a.ndim == 2:
        magic = b"P5"
    else:
        raise ValueError(f"cannot encode array of shape {a.shape}")
    h, w = a.shape[:2]
    return magic + f"\n{w} {h}\n255\n".encode("ascii") + np.ascontiguousarray(a).tobytes()


def read(path) -> np.ndarray:
    return decode(Path(path).read_bytes())


def write(path, arr: np.ndarray) -> None:
    Path(path).write_bytes(encode(arr))
