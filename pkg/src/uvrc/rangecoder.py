"""Carry-less range coder over 16-bit quantized cumulative-frequency tables.

Payload layout (bit-exact, for alternate decoders)::

    body  : coder bytes, most significant byte first
    tail  : u32 little-endian = crc32(u32le(len(body)) || body)

Coder state is a 64-bit ``low`` and a 64-bit ``range`` (Subbotin style):

* encode symbol with cumulative start ``c`` and frequency ``f``:
  ``r = range >> 16; low += c * r; range = f * r``
* renormalize while the top byte of ``low`` and ``low + range`` agree, or while
  ``range < 2**48`` (in which case ``range = (-low) mod 2**48`` first): emit
  ``low >> 56`` and shift ``low`` and ``range`` left by 8 (mod 2**64).
* flush: emit the top two bytes of ``(low + 2**48 - 1)`` rounded down to a
  multiple of ``2**48``. The decoder reads zero bytes past the end of the body.

A table with the escape flag set has one extra slot after ``max_sym``. An
out-of-range symbol is coded as that slot followed by its zigzag-mapped value
as two uniform 16-bit digits (high digit first). Values need to fit in 32 bits.

An empty symbol sequence produces an empty body, i.e. a 4-byte payload.
"""

from __future__ import annotations

import struct
import zlib
from bisect import bisect_right
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import CorruptStreamError

PRECISION = 16
TOTAL = 1 << PRECISION
_MASK = (1 << 64) - 1
_TOP = 1 << 56
_BOT = 1 << 48


@dataclass(frozen=True, eq=False)
class QuantizedCDF:
    """Cumulative frequency table over ``[min_sym, max_sym]`` (+ escape slot)."""

    min_sym: int
    max_sym: int
    cum_freq: tuple
    escape: bool = False

    def __post_init__(self):
        n = self.max_sym - self.min_sym + 1 + int(self.escape)
        cf = self.cum_freq
        if len(cf) != n + 1:
            raise ValueError(f"cum_freq needs {n + 1} entries, got {len(cf)}")
        if cf[0] != 0 or cf[-1] != TOTAL:
            raise ValueError("cum_freq must start at 0 and end at 65536")
        if any(b <= a for a, b in zip(cf, cf[1:])):
            raise ValueError("every slot needs frequency >= 1")

    @property
    def n_slots(self) -> int:
        return len(self.cum_freq) - 1

    @property
    def frequencies(self) -> np.ndarray:
        return np.diff(np.asarray(self.cum_freq, dtype=np.int64))

    def slot_of(self, symbol: int) -> int:
        """Slot index for ``symbol``; the escape slot for out-of-range values."""
        if self.min_sym <= symbol <= self.max_sym:
            return symbol - self.min_sym
        if self.escape:
            return self.n_slots - 1
        raise ValueError(
            f"symbol {symbol} outside [{self.min_sym}, {self.max_sym}] and escapes disabled"
        )

    def code_length(self, symbol: int) -> float:
        """Ideal code length in bits of ``symbol`` under this table."""
        i = self.slot_of(symbol)
        bits = PRECISION - np.log2(self.cum_freq[i + 1] - self.cum_freq[i])
        if self.escape and i == self.n_slots - 1:
            bits += 2 * PRECISION
        return float(bits)


def build_cdf_table(pmf, min_sym: int = 0, escape: bool = False) -> QuantizedCDF:
    """Quantize a PMF over ``min_sym, min_sym+1, ...`` to a 16-bit table.

    With ``escape`` the mass missing from ``pmf`` goes to the escape slot.
    Every slot gets frequency >= 1; the total is exactly 65536.
    """
    pmf = np.asarray(pmf, dtype=np.float64).ravel()
    if pmf.size == 0:
        raise ValueError("empty support")
    if np.any(~np.isfinite(pmf)) or np.any(pmf < 0):
        raise ValueError("pmf entries must be finite and non-negative")
    total_mass = pmf.sum()
    if total_mass > 1 + 1e-6:
        raise ValueError(f"pmf sums to {total_mass} > 1")
    if escape:
        pmf = np.append(pmf, max(1.0 - total_mass, 0.0))
    if pmf.size > TOTAL:
        raise ValueError("support too large for 16-bit table")
    mass = pmf.sum()
    if mass <= 0:
        pmf = np.ones_like(pmf)
        mass = pmf.size
    freq = np.maximum(1, np.floor(pmf / mass * TOTAL + 0.5)).astype(np.int64)
    diff = TOTAL - int(freq.sum())
    # hand the rounding residue to the largest slots, never taking a slot below 1
    order = np.argsort(-freq, kind="stable")
    i = 0
    while diff != 0:
        j = order[i % freq.size]
        if diff > 0:
            step = diff
        else:
            step = -min(-diff, int(freq[j]) - 1)
        freq[j] += step
        diff -= step
        i += 1
    cum = np.concatenate([[0], np.cumsum(freq)])
    return QuantizedCDF(
        min_sym=int(min_sym),
        max_sym=int(min_sym) + len(pmf) - 1 - int(escape),
        cum_freq=tuple(int(v) for v in cum),
        escape=escape,
    )


def _zigzag(v: int) -> int:
    return (v << 1) if v >= 0 else ((-v << 1) - 1)


def _unzigzag(u: int) -> int:
    return (u >> 1) if not (u & 1) else -((u + 1) >> 1)


def _tail(body: bytes) -> bytes:
    return struct.pack("<I", zlib.crc32(struct.pack("<I", len(body)) + body))


def range_encode(symbols: Sequence[int], tables: Sequence[QuantizedCDF]) -> bytes:
    """Encode ``symbols[i]`` under ``tables[i]``; see module docstring for the format."""
    symbols = [int(v) for v in np.asarray(symbols).ravel()]
    if len(tables) != len(symbols):
        raise ValueError(f"{len(symbols)} symbols but {len(tables)} tables")
    if not symbols:
        return _tail(b"")

    out = bytearray()
    low = 0
    rng = _MASK

    def put(c, f):
        nonlocal low, rng
        r = rng >> PRECISION
        low += c * r
        rng = f * r
        while True:
            if (low ^ (low + rng)) >= _TOP:
                if rng >= _BOT:
                    break
                rng = -low & (_BOT - 1)
            out.append(low >> 56)
            low = (low << 8) & _MASK
            rng = (rng << 8) & _MASK

    for sym, t in zip(symbols, tables):
        cf = t.cum_freq
        if t.min_sym <= sym <= t.max_sym:
            k = sym - t.min_sym
            put(cf[k], cf[k + 1] - cf[k])
            continue
        if not t.escape:
            raise ValueError(
                f"symbol {sym} outside [{t.min_sym}, {t.max_sym}] and escapes disabled"
            )
        k = len(cf) - 2
        put(cf[k], cf[k + 1] - cf[k])
        u = _zigzag(sym)
        if u >= 1 << 32:
            raise ValueError(f"escaped symbol {sym} does not fit in 32 bits")
        put(u >> 16, 1)
        put(u & 0xFFFF, 1)

    v = (low + _BOT - 1) & ~(_BOT - 1) & _MASK
    out.append(v >> 56)
    out.append((v >> 48) & 0xFF)
    body = bytes(out)
    return body + _tail(body)


def range_decode(payload: bytes, tables: Sequence[QuantizedCDF], n: int) -> list[int]:
    """Inverse of :func:`range_encode`; raises :class:`CorruptStreamError` on damage."""
    payload = bytes(payload)
    if len(payload) < 4:
        raise CorruptStreamError("payload shorter than its 4-byte tail")
    body, tail = payload[:-4], payload[-4:]
    if _tail(body) != tail:
        raise CorruptStreamError("payload checksum mismatch")
    if len(tables) < n:
        raise ValueError(f"need {n} tables, got {len(tables)}")
    if n == 0:
        if body:
            raise CorruptStreamError("non-empty body for zero symbols")
        return []
    if not body:
        raise CorruptStreamError("empty body for non-empty symbol sequence")

    pos = 0
    nbody = len(body)

    def nextbyte():
        nonlocal pos
        b = body[pos] if pos < nbody else 0
        pos += 1
        return b

    code = 0
    for _ in range(8):
        code = (code << 8) | nextbyte()
    low = 0
    rng = _MASK

    def take(c, f, r):
        nonlocal low, rng, code
        low += c * r
        rng = f * r
        while True:
            if (low ^ (low + rng)) >= _TOP:
                if rng >= _BOT:
                    break
                rng = -low & (_BOT - 1)
            code = ((code << 8) & _MASK) | nextbyte()
            low = (low << 8) & _MASK
            rng = (rng << 8) & _MASK

    def get_uniform():
        r = rng >> PRECISION
        v = (code - low) // r
        if v >= TOTAL or v < 0:
            raise CorruptStreamError("decoder state out of range")
        take(v, 1, r)
        return v

    out = []
    for i in range(n):
        t = tables[i]
        cf = t.cum_freq
        r = rng >> PRECISION
        v = (code - low) // r
        if v >= TOTAL or v < 0:
            raise CorruptStreamError("decoder state out of range")
        k = bisect_right(cf, v) - 1
        take(cf[k], cf[k + 1] - cf[k], r)
        if t.escape and k == len(cf) - 2:
            hi = get_uniform()
            lo = get_uniform()
            out.append(_unzigzag(hi << 16 | lo))
        else:
            out.append(t.min_sym + k)
    # the decoder window trails the encoder by 8 bytes, of which 2 were flushed
    if pos != nbody + 6:
        raise CorruptStreamError("payload length does not match the decoded symbols")
    return out
