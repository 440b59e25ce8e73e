"""Exact finite-field simulation of random linear streaming over relays.

Arithmetic is over GF(p) with the Mersenne prime ``p = 2**61 - 1``. Each
node stores everything it has received (the source stores the raw symbols)
and every packet is a fresh random combination of the current storage with
coefficients drawn uniformly from ``[1, p-1]``. Relays never decode. The
destination's observations are ``H @ s`` with ``H`` the product of the
per-hop generator matrices restricted to delivered slots.

Intermediate packets default to ``K * horizon`` symbols, enough for a relay
to pass on its whole storage in one packet. Smaller sizes can be passed to
probe relay bottlenecks. The last hop always uses ``n_dest``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numba as nb
import numpy as np

from .debt import classify_slots
from .model import NetworkConfig

PRIME = (1 << 61) - 1
_P = np.uint64(PRIME)
_M32 = np.uint64(0xFFFFFFFF)
_M29 = np.uint64((1 << 29) - 1)


@nb.njit(cache=True, inline="always")
def _reduce(x):
    x = (x & _P) + (x >> np.uint64(61))
    return x - _P if x >= _P else x


@nb.njit(cache=True)
def mulmod(a, b):
    a0 = a & _M32
    a1 = a >> np.uint64(32)
    b0 = b & _M32
    b1 = b >> np.uint64(32)
    hi = _reduce(a1 * b1 * np.uint64(8))  # 2**64 = 8 (mod p)
    mid = a1 * b0 + a0 * b1
    # mid * 2**32 = (mid >> 29) * 2**61 + (mid & (2**29-1)) * 2**32
    mid_r = _reduce((mid >> np.uint64(29)) + ((mid & _M29) << np.uint64(32)))
    lo = _reduce(a0 * b0)
    return _reduce(hi + mid_r + lo)


@nb.njit(cache=True)
def _powmod(a, e):
    r = np.uint64(1)
    while e > 0:
        if e & 1:
            r = mulmod(r, a)
        a = mulmod(a, a)
        e >>= 1
    return r


@nb.njit(cache=True)
def _inv(a):
    return _powmod(a, PRIME - 2)


@nb.njit(cache=True)
def _matmul(a, b):
    n, k = a.shape
    m = b.shape[1]
    out = np.zeros((n, m), dtype=np.uint64)
    for i in range(n):
        for t in range(k):
            x = a[i, t]
            if x == 0:
                continue
            for j in range(m):
                y = b[t, j]
                if y != 0:
                    out[i, j] = _reduce(out[i, j] + mulmod(x, y))
    return out


@nb.njit(cache=True)
def _rank(a):
    a = a.copy()
    n, m = a.shape
    r = 0
    for c in range(m):
        piv = -1
        for i in range(r, n):
            if a[i, c] != 0:
                piv = i
                break
        if piv < 0:
            continue
        if piv != r:
            for j in range(m):
                tmp = a[r, j]
                a[r, j] = a[piv, j]
                a[piv, j] = tmp
        inv = _inv(a[r, c])
        for j in range(c, m):
            a[r, j] = mulmod(a[r, j], inv)
        for i in range(r + 1, n):
            f = a[i, c]
            if f != 0:
                for j in range(c, m):
                    if a[r, j] != 0:
                        a[i, j] = _reduce(a[i, j] + _P - mulmod(f, a[r, j]))
        r += 1
        if r == n:
            break
    return r


@nb.njit(cache=True)
def _decoding_times(h, row_slot, horizon):
    """First slot at which each unit vector enters the row space.

    Rows are added in order while a fully reduced echelon form is kept, so a
    unit vector is in the span exactly when some reduced row equals it.
    Columns never decoded get ``horizon + 1``.
    """
    n, m = h.shape
    basis = np.zeros((m, m), dtype=np.uint64)  # basis[c] has pivot at column c
    has = np.zeros(m, dtype=np.bool_)
    first = np.full(m, horizon + 1, dtype=np.int64)
    row = np.zeros(m, dtype=np.uint64)
    i = 0
    while i < n:
        slot = row_slot[i]
        while i < n and row_slot[i] == slot:
            for j in range(m):
                row[j] = h[i, j]
            for c in range(m):
                if row[c] != 0 and has[c]:
                    f = row[c]
                    for j in range(c, m):
                        if basis[c, j] != 0:
                            row[j] = _reduce(row[j] + _P - mulmod(f, basis[c, j]))
            piv = -1
            for c in range(m):
                if row[c] != 0:
                    piv = c
                    break
            if piv >= 0:
                inv = _inv(row[piv])
                for j in range(piv, m):
                    row[j] = mulmod(row[j], inv)
                # clear the new pivot column from older basis rows
                for c in range(m):
                    if has[c] and basis[c, piv] != 0:
                        f = basis[c, piv]
                        for j in range(piv, m):
                            if row[j] != 0:
                                basis[c, j] = _reduce(basis[c, j] + _P - mulmod(f, row[j]))
                for j in range(m):
                    basis[piv, j] = row[j]
                has[piv] = True
            i += 1
        for c in range(m):
            if has[c] and first[c] > horizon:
                unit = True
                for j in range(c + 1, m):
                    if basis[c, j] != 0:
                        unit = False
                        break
                if unit:
                    first[c] = slot
    return first


@dataclass
class FieldMatrix:
    """Dense matrix over GF(p), row-major ``uint64`` storage.

    ``row_slot`` optionally labels each row with the slot it was received in.
    """

    data: np.ndarray
    row_slot: np.ndarray | None = None

    def __post_init__(self):
        self.data = np.ascontiguousarray(self.data, dtype=np.uint64)
        if self.data.ndim != 2:
            raise ValueError("FieldMatrix needs a 2-D array")
        if self.data.size and int(self.data.max()) >= PRIME:
            raise ValueError("entries must lie in [0, p-1]")

    @classmethod
    def from_rows(cls, rows: Sequence[Sequence[int]], cols: int | None = None) -> "FieldMatrix":
        arr = np.array([[int(x) % PRIME for x in r] for r in rows], dtype=np.uint64)
        if arr.size == 0:
            arr = np.zeros((len(rows), cols or 0), dtype=np.uint64)
        return cls(arr)

    @property
    def rows(self) -> int:
        return self.data.shape[0]

    @property
    def cols(self) -> int:
        return self.data.shape[1]

    def __matmul__(self, other: "FieldMatrix") -> "FieldMatrix":
        if self.cols != other.rows:
            raise ValueError(f"shape mismatch {self.data.shape} @ {other.data.shape}")
        if self.rows == 0 or other.cols == 0 or self.cols == 0:
            return FieldMatrix(np.zeros((self.rows, other.cols), dtype=np.uint64), self.row_slot)
        return FieldMatrix(_matmul(self.data, other.data), self.row_slot)

    def rank(self) -> int:
        if self.rows == 0 or self.cols == 0:
            return 0
        return int(_rank(self.data))

    def take_rows(self, idx) -> "FieldMatrix":
        idx = np.asarray(idx, dtype=np.int64)
        labels = None if self.row_slot is None else self.row_slot[idx]
        return FieldMatrix(self.data[idx], labels)

    def rows_until(self, slot: int) -> "FieldMatrix":
        if self.row_slot is None:
            raise ValueError("matrix has no slot labels")
        return self.take_rows(np.flatnonzero(self.row_slot <= slot))

    def with_row(self, row: Sequence[int]) -> "FieldMatrix":
        r = np.asarray(row, dtype=np.uint64).reshape(1, -1)
        return FieldMatrix(np.vstack([self.data, r]))


def random_nonzero(rng: np.random.Generator, size) -> np.ndarray:
    return rng.integers(1, PRIME, size=size, dtype=np.uint64)


def build_cumulative_generator(
    rng: np.random.Generator, t: int, rows_per_slot: int, col_schedule: Sequence[int]
) -> FieldMatrix:
    """Staircase generator for slots ``1..t``.

    Rows of slot ``tau`` are random nonzero on the first
    ``col_schedule[tau-1]`` columns and zero elsewhere.
    """
    widths = np.asarray(col_schedule, dtype=np.int64)[:t]
    if len(widths) != t:
        raise ValueError("col_schedule shorter than t")
    if np.any(np.diff(widths) < 0) or (t and widths[0] < 0):
        raise ValueError("col_schedule must be nondecreasing and nonnegative")
    cols = int(widths[-1]) if t else 0
    data = random_nonzero(rng, (t * rows_per_slot, cols))
    mask = np.arange(cols)[None, :] < np.repeat(widths, rows_per_slot)[:, None]
    data[~mask] = 0
    return FieldMatrix(data, np.repeat(np.arange(1, t + 1), rows_per_slot))


def overall_receiver(
    cfg: NetworkConfig,
    erasures: np.ndarray,
    rng: np.random.Generator,
    relay_packet_size: int | Sequence[int] | None = None,
) -> FieldMatrix:
    """Destination observation matrix for a ``slots x hops`` erasure pattern.

    Rows are labelled with the slot of the last-hop delivery that carried
    them; columns are the source symbols in arrival order.
    """
    e = np.asarray(erasures, dtype=np.int64)
    if e.ndim != 2 or e.shape[1] != cfg.hops:
        raise ValueError(f"erasures must be slots x {cfg.hops}")
    T = e.shape[0]
    K = cfg.k_per_slot
    if relay_packet_size is None:
        sizes = [K * T] * (cfg.hops - 1)
    elif isinstance(relay_packet_size, int):
        sizes = [relay_packet_size] * (cfg.hops - 1)
    else:
        sizes = list(relay_packet_size)
    sizes.append(cfg.n_dest)

    widths = K * np.arange(1, T + 1)
    composed: FieldMatrix | None = None
    for l in range(cfg.hops):
        g = build_cumulative_generator(rng, T, sizes[l], widths)
        delivered = np.flatnonzero(np.repeat(e[:, l] == 0, sizes[l]))
        h = g.take_rows(delivered)
        composed = h if composed is None else FieldMatrix((h @ composed).data, h.row_slot)
        # next node's storage grows by one packet per delivered slot
        widths = sizes[l] * np.cumsum(e[:, l] == 0)
    return composed


def is_delta_decodable(h: FieldMatrix, slot: int, symbol: int, k_per_slot: int) -> bool:
    """Whether source symbol ``symbol`` (1-based) of ``slot`` lies in the row space of ``h``."""
    col = (slot - 1) * k_per_slot + (symbol - 1)
    if not 0 <= col < h.cols:
        raise IndexError("symbol outside matrix columns")
    unit = np.zeros(h.cols, dtype=np.uint64)
    unit[col] = 1
    return h.with_row(unit).rank() == h.rank()


def slot_decoding_times(h: FieldMatrix, k_per_slot: int, horizon: int) -> np.ndarray:
    """Entry ``t - 1`` is the first slot by which every symbol of slot ``t`` is decodable."""
    if h.row_slot is None:
        raise ValueError("matrix has no slot labels")
    if h.rows == 0:
        return np.full(horizon, horizon + 1, dtype=np.int64)
    first = _decoding_times(h.data, h.row_slot.astype(np.int64), horizon)
    return first.reshape(horizon, k_per_slot).max(axis=1)


@dataclass
class InstanceResult:
    erasures: np.ndarray
    debt_in_time: set[int]
    rank_in_time: set[int]
    compared: set[int]

    @property
    def mismatches(self) -> set[int]:
        return (self.debt_in_time ^ self.rank_in_time) & self.compared

    @property
    def gmds_suspect(self) -> bool:
        # rank below what the debt model promises points at an unlucky draw
        return bool((self.debt_in_time - self.rank_in_time) & self.compared)


def compare_instance(
    cfg: NetworkConfig,
    erasures: np.ndarray,
    rng: np.random.Generator,
    relay_packet_size=None,
) -> InstanceResult:
    e = np.asarray(erasures, dtype=np.int64)
    T = e.shape[0]
    in_time, late = classify_slots(e.tolist(), cfg.k_per_slot, cfg.n_dest, cfg.delta)
    compared = in_time | late
    h = overall_receiver(cfg, e, rng, relay_packet_size)
    times = slot_decoding_times(h, cfg.k_per_slot, T)
    rank_in_time = {t for t in range(1, T + 1) if times[t - 1] <= t + cfg.delta}
    return InstanceResult(erasures=e, debt_in_time=in_time, rank_in_time=rank_in_time & compared, compared=compared)


def cross_validate(
    cfg: NetworkConfig,
    horizon: int,
    n_seeds: int,
    seed: int | None = None,
    *,
    patterns: Sequence[np.ndarray] = (),
    relay_packet_size=None,
) -> dict:
    """Compare debt-based and rank-based deadline classification.

    Runs ``n_seeds`` random instances plus any scripted ``patterns``. Only
    slots decoded within the horizon are compared.
    """
    seed = cfg.seed if seed is None else seed
    root = np.random.SeedSequence(seed)
    children = root.spawn(n_seeds + len(patterns))
    results = []
    for i in range(n_seeds):
        erase_ss, field_ss = children[i].spawn(2)
        gens = [np.random.default_rng(s) for s in erase_ss.spawn(cfg.hops)]
        e = np.stack([g.random(horizon) >= cfg.q[l] for l, g in enumerate(gens)], axis=1).astype(np.int64)
        results.append(compare_instance(cfg, e, np.random.default_rng(field_ss), relay_packet_size))
    for j, pat in enumerate(patterns):
        rng = np.random.default_rng(children[n_seeds + j])
        results.append(compare_instance(cfg, np.asarray(pat), rng, relay_packet_size))

    mismatched = [r for r in results if r.mismatches]
    return {
        "instances": len(results),
        "compared_slots": int(sum(len(r.compared) for r in results)),
        "mismatched_slots": int(sum(len(r.mismatches) for r in results)),
        "gmds_suspects": int(sum(r.gmds_suspect for r in results)),
        "mismatch_patterns": [
            {"erasures": r.erasures.tolist(), "slots": sorted(r.mismatches)} for r in mismatched
        ],
        "seed": seed,
        "horizon": horizon,
    }
