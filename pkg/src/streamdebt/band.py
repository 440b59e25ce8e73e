"""Tagged band kernels and the nested hidden-state chain.

A band kernel of size ``m`` with shift ``i`` and delivery probability ``q``
moves every row to column 0 with probability ``q`` (deliver band) and row
``r`` to column ``min(r + i, m - 1)`` with probability ``1 - q`` (erasure
band). The two bands are never merged, even when they land on the same cell.

Nesting one band kernel per hop yields a kernel over the product of the
per-hop residual ranges. Every entry remembers which band it came from at
each hop, encoded as an integer whose most significant of ``L`` bits is the
first hop; bit value 1 means delivered.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .model import NetworkConfig

DEFAULT_ENTRY_BUDGET = 50_000_000


class ShiftOutOfRange(ValueError):
    pass


class ProductSpaceTooLarge(MemoryError):
    pass


@dataclass(frozen=True)
class BandMatrix:
    m: int
    shift: int
    q: float

    @property
    def deliver_cols(self) -> np.ndarray:
        return np.zeros(self.m, dtype=np.int64)

    @property
    def erase_cols(self) -> np.ndarray:
        return np.minimum(np.arange(self.m) + self.shift, self.m - 1)

    def entries(self) -> list[tuple[int, int, str, float]]:
        """``(row, col, band, value)`` with band ``'D'`` or ``'E'``."""
        out = []
        for r in range(self.m):
            out.append((r, 0, "D", self.q))
            out.append((r, int(self.erase_cols[r]), "E", 1.0 - self.q))
        return out

    def dense(self) -> np.ndarray:
        a = np.zeros((self.m, self.m))
        rows = np.arange(self.m)
        np.add.at(a, (rows, self.deliver_cols), self.q)
        np.add.at(a, (rows, self.erase_cols), 1.0 - self.q)
        return a


def make_band_matrix(i: int, q: float, m: int) -> BandMatrix:
    if m < 1:
        raise ShiftOutOfRange(f"size m={m} must be >= 1")
    if not 0 <= i <= m:
        raise ShiftOutOfRange(f"shift {i} outside [0, {m}]")
    if not 0.0 <= q <= 1.0:
        raise ValueError(f"q={q} outside [0, 1]")
    return BandMatrix(m=m, shift=i, q=float(q))


def last_zero_position(bits: str) -> int:
    """1-based position of the rightmost ``'0'`` in ``bits``; 0 if none."""
    if not bits or set(bits) - {"0", "1"}:
        raise ValueError(f"not a nonempty bit string: {bits!r}")
    return bits.rfind("0") + 1


def band_bits(band: int, length: int) -> str:
    return format(band, f"0{length}b") if length else ""


@dataclass(frozen=True)
class LabeledKernel:
    """Tagged entries of the nested kernel, sorted by row.

    ``digits[e]`` holds the source row's per-hop residuals, so
    ``rows[e] == flat_index(digits[e], m)``.
    """

    m: tuple[int, ...]
    rows: np.ndarray
    cols: np.ndarray
    vals: np.ndarray
    bands: np.ndarray
    digits: np.ndarray

    @property
    def hops(self) -> int:
        return len(self.m)

    @property
    def size(self) -> int:
        return math.prod(self.m)

    def dense(self) -> np.ndarray:
        a = np.zeros((self.size, self.size))
        np.add.at(a, (self.rows, self.cols), self.vals)
        return a

    def row_sums(self) -> np.ndarray:
        return np.bincount(self.rows, weights=self.vals, minlength=self.size)

    def dump(self) -> str:
        """One line per tagged entry: ``row-tuple | col-tuple | band-bits | value``."""
        lines = []
        col_digits = _unflat_many(self.cols, self.m)
        for e in range(len(self.rows)):
            r = ",".join(map(str, self.digits[e]))
            c = ",".join(map(str, col_digits[e]))
            lines.append(f"({r}) | ({c}) | {band_bits(int(self.bands[e]), self.hops)} | {float(self.vals[e])!r}")
        return "\n".join(lines) + "\n"


def _unflat_many(idx: np.ndarray, m: tuple[int, ...]) -> np.ndarray:
    out = np.empty((len(idx), len(m)), dtype=np.int64)
    rest = np.asarray(idx, dtype=np.int64).copy()
    for h in range(len(m) - 1, -1, -1):
        rest, out[:, h] = np.divmod(rest, m[h])
    return out


def forwarded_count(bands: np.ndarray, digits: np.ndarray, length: int) -> np.ndarray:
    """Unknowns leaving hop ``length - 1`` given the band bits of hops ``0..length-1``.

    If every hop delivered this is ``1 + sum(d)``. Otherwise it is the sum of
    the residuals at the hops after the last erasure, which is 0 when the last
    of these hops itself erased.
    """
    bands = np.asarray(bands, dtype=np.int64)
    digits = np.asarray(digits, dtype=np.int64)[:, :length]
    all_ones = (1 << length) - 1
    # hop w counts iff hops w..length-1 all delivered
    counts = np.zeros(len(bands), dtype=np.int64)
    tail_ok = np.ones(len(bands), dtype=bool)
    for w in range(length - 1, -1, -1):
        tail_ok &= ((bands >> (length - 1 - w)) & 1).astype(bool)
        counts += np.where(tail_ok, digits[:, w], 0)
    return counts + (bands == all_ones)


def nest_hidden_chain(cfg: NetworkConfig, entry_budget: int = DEFAULT_ENTRY_BUDGET) -> LabeledKernel:
    """Build the labeled hidden-state kernel hop by hop.

    Each existing entry is expanded with a band kernel for the next hop whose
    shift is the number of unknowns forwarded into that hop. Shifts larger
    than the hop's cap are clamped to the cap, which leaves the kernel
    unchanged because the erasure band already saturates at the last column.
    """
    m = tuple(cfg.m)
    hops = len(m)
    total = math.prod(m) * (1 << hops)
    if total > entry_budget:
        raise ProductSpaceTooLarge(f"{total} tagged entries exceed budget {entry_budget}")

    m0, q0 = m[0], cfg.q[0]
    r = np.arange(m0, dtype=np.int64)
    rows = np.repeat(r, 2)
    cols = np.empty(2 * m0, dtype=np.int64)
    cols[0::2] = 0
    cols[1::2] = np.minimum(r + 1, m0 - 1)
    vals = np.tile([q0, 1.0 - q0], m0)
    bands = np.tile(np.array([1, 0], dtype=np.int64), m0)
    digits = rows[:, None].copy()

    for h in range(1, hops):
        mh, qh = m[h], cfg.q[h]
        shift = np.minimum(forwarded_count(bands, digits, h), mh)
        n = len(rows)
        d = np.arange(mh, dtype=np.int64)
        # parent e, digit d_h, child (deliver, erase) in that order
        p_rows = np.repeat(rows, mh) * mh + np.tile(d, n)
        p_cols = np.repeat(cols, mh) * mh
        p_vals = np.repeat(vals, mh)
        p_bands = np.repeat(bands, mh) << 1
        p_shift = np.repeat(shift, mh)
        p_dig = np.hstack([np.repeat(digits, mh, axis=0), np.tile(d, n)[:, None]])
        e_cols = p_cols + np.minimum(np.tile(d, n) + p_shift, mh - 1)

        k = len(p_rows)
        rows = np.repeat(p_rows, 2)
        cols = np.empty(2 * k, dtype=np.int64)
        cols[0::2] = p_cols
        cols[1::2] = e_cols
        vals = np.empty(2 * k)
        vals[0::2] = p_vals * qh
        vals[1::2] = p_vals * (1.0 - qh)
        bands = np.empty(2 * k, dtype=np.int64)
        bands[0::2] = p_bands | 1
        bands[1::2] = p_bands
        digits = np.repeat(p_dig, 2, axis=0)

    order = np.argsort(rows, kind="stable")
    return LabeledKernel(
        m=m,
        rows=rows[order],
        cols=cols[order],
        vals=vals[order],
        bands=bands[order],
        digits=digits[order],
    )
