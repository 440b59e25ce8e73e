"""Per-slot information-debt recursion, hitting times and decodable windows.

All detained counts are kept in slot units (symbol counts divided by K).
Only the destination debt is expressed in symbols.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Iterator, Sequence


@dataclass(frozen=True)
class DebtState:
    d_raw: tuple[int, ...]
    d_res: tuple[int, ...]
    d_dest: int
    w: int
    debt: int
    e_prev: tuple[int, ...]
    t: int

    @classmethod
    def zero(cls, hops: int) -> "DebtState":
        z = (0,) * hops
        return cls(d_raw=z, d_res=z, d_dest=0, w=0, debt=0, e_prev=z, t=0)

    @property
    def residual_sum(self) -> int:
        return sum(self.d_res)


@dataclass(frozen=True)
class RoundRecord:
    start_hit: int
    end_hit: int
    alpha: int
    beta: int
    decoded_slots: int
    first_pending_slot: int

    @property
    def length(self) -> int:
        return self.end_hit - self.start_hit


def step_debt(state: DebtState, e_now: Sequence[int], k_per_slot: int, n_dest: int) -> DebtState:
    """Advance the recursion by one slot.

    ``e_now[l] = 1`` means link ``l`` erased its packet in this slot. The
    destination counters restart whenever the previous slot ended at zero
    debt.
    """
    hops = len(state.d_res)
    if len(e_now) != hops:
        raise ValueError(f"expected {hops} erasure bits, got {len(e_now)}")
    raw = [0] * hops
    raw[0] = state.d_res[0] + 1
    for l in range(1, hops):
        raw[l] = state.d_res[l] + (raw[l - 1] if not e_now[l - 1] else 0)

    d_dest, w = (0, 0) if state.debt == 0 else (state.d_dest, state.w)
    if not e_now[-1]:
        d_dest += raw[-1]
        w += n_dest
    debt = max(k_per_slot * d_dest - w, 0)
    res = tuple(r if e else 0 for r, e in zip(raw, e_now))
    return DebtState(
        d_raw=tuple(raw),
        d_res=res,
        d_dest=d_dest,
        w=w,
        debt=debt,
        e_prev=tuple(int(bool(e)) for e in e_now),
        t=state.t + 1,
    )


def run_trace(
    erasures: Iterable[Sequence[int]], k_per_slot: int, n_dest: int, hops: int | None = None
) -> list[DebtState]:
    """Return the state after every slot of a scripted or sampled trace."""
    out: list[DebtState] = []
    state = None
    for e in erasures:
        if state is None:
            state = DebtState.zero(hops or len(e))
        state = step_debt(state, e, k_per_slot, n_dest)
        out.append(state)
    return out


def find_hitting_times(
    erasures: Iterable[Sequence[int]], k_per_slot: int, n_dest: int, hops: int | None = None
) -> Iterator[RoundRecord]:
    """Yield one record per zero-debt slot, trivial hits included.

    The first round starts at the conventional hit ``t = 0`` with empty
    residuals.
    """
    state = None
    start, alpha, next_pending = 0, 0, 1
    for e in erasures:
        if state is None:
            state = DebtState.zero(hops or len(e))
        state = step_debt(state, e, k_per_slot, n_dest)
        if state.debt == 0:
            beta = state.residual_sum
            yield RoundRecord(
                start_hit=start,
                end_hit=state.t,
                alpha=alpha,
                beta=beta,
                decoded_slots=state.d_dest,
                first_pending_slot=next_pending,
            )
            next_pending += state.d_dest
            start, alpha = state.t, beta


def decodable_window(rnd: RoundRecord, delta: int) -> range:
    """Slots decoded by ``rnd`` that also meet the deadline ``delta``."""
    first = rnd.start_hit - rnd.alpha + 1
    last = rnd.start_hit - rnd.alpha + rnd.decoded_slots
    lo = max(first, rnd.end_hit - delta)
    hi = min(last, rnd.end_hit)
    return range(lo, hi + 1) if lo <= hi else range(0)


def decoded_slots(rnd: RoundRecord) -> range:
    first = rnd.start_hit - rnd.alpha + 1
    return range(first, first + rnd.decoded_slots)


def classify_slots(
    erasures: Iterable[Sequence[int]], k_per_slot: int, n_dest: int, delta: int
) -> tuple[set[int], set[int]]:
    """Classify slots with a FIFO pending queue.

    Returns ``(in_time, late)``. Slots still pending when the trace ends are
    in neither set.
    """
    in_time: set[int] = set()
    late: set[int] = set()
    pending = 1
    state = None
    for e in erasures:
        if state is None:
            state = DebtState.zero(len(e))
        state = step_debt(state, e, k_per_slot, n_dest)
        if state.debt == 0:
            for s in range(pending, pending + state.d_dest):
                (in_time if state.t <= s + delta else late).add(s)
            pending += state.d_dest
    return in_time, late


def parse_pattern(text: str, hops: int | None = None) -> list[tuple[int, ...]]:
    """Parse a scripted erasure pattern: one line per slot, one bit per link.

    Blank lines and ``#`` comments are ignored.
    """
    rows: list[tuple[int, ...]] = []
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        bits = line.split()
        if any(b not in ("0", "1") for b in bits):
            raise ValueError(f"line {lineno}: expected 0/1 bits, got {line!r}")
        if hops is not None and len(bits) != hops:
            raise ValueError(f"line {lineno}: expected {hops} bits, got {len(bits)}")
        if rows and len(bits) != len(rows[0]):
            raise ValueError(f"line {lineno}: inconsistent bit count")
        rows.append(tuple(int(b) for b in bits))
    return rows


def load_pattern(path: str | Path, hops: int | None = None) -> list[tuple[int, ...]]:
    return parse_pattern(Path(path).read_text(), hops)


def format_pattern(erasures: Iterable[Sequence[int]]) -> str:
    return "".join(" ".join(str(int(b)) for b in e) + "\n" for e in erasures)


__all__ = [
    "DebtState",
    "RoundRecord",
    "step_debt",
    "run_trace",
    "find_hitting_times",
    "decodable_window",
    "decoded_slots",
    "classify_slots",
    "parse_pattern",
    "load_pattern",
    "format_pattern",
]
