"""Monte-Carlo slot-error estimation on the exact debt recursion.

Erasures are drawn independently per link and slot. Each shard owns one
``numpy.random.Generator`` per link, derived as
``SeedSequence(seed).spawn(shards)[s].spawn(hops)[l]``, so changing the hop
count never perturbs the stream of an existing link. Shards simulate
independent traces that each start from the empty state, and their counts
are added.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numba as nb
import numpy as np

from .model import NetworkConfig

CHUNK = 1 << 20

# carry layout: residuals occupy the first `hops` cells
_D_DEST, _W, _DEBT, _T, _PENDING, _ERR, _DEC, _ROUNDS, _ALPHA, _START = range(10)


@nb.njit(cache=True, nogil=True)
def _advance(erased, res, carry, k, n, delta):
    hops = erased.shape[0]
    for i in range(erased.shape[1]):
        fwd = res[0] + 1
        res[0] = fwd if erased[0, i] else 0
        for l in range(1, hops):
            raw = res[l] + (fwd if not erased[l - 1, i] else 0)
            res[l] = raw if erased[l, i] else 0
            fwd = raw
        if carry[_DEBT] == 0:
            carry[_D_DEST] = 0
            carry[_W] = 0
        if not erased[hops - 1, i]:
            carry[_D_DEST] += fwd
            carry[_W] += n
        carry[_T] += 1
        debt = k * carry[_D_DEST] - carry[_W]
        carry[_DEBT] = debt if debt > 0 else 0
        if carry[_DEBT] == 0:
            dec = carry[_D_DEST]
            late = carry[_T] - delta - carry[_PENDING]
            if late > dec:
                late = dec
            if late > 0:
                carry[_ERR] += late
            carry[_DEC] += dec
            carry[_PENDING] += dec
            carry[_ROUNDS] += 1


@nb.njit(cache=True, nogil=True)
def _record(erased, res, carry, k, n, out, n_out, max_out):
    """Like ``_advance`` but stores one row per hit.

    Row layout: start, end, alpha, beta, decoded, then the end residuals.
    """
    hops = erased.shape[0]
    for i in range(erased.shape[1]):
        fwd = res[0] + 1
        res[0] = fwd if erased[0, i] else 0
        for l in range(1, hops):
            raw = res[l] + (fwd if not erased[l - 1, i] else 0)
            res[l] = raw if erased[l, i] else 0
            fwd = raw
        if carry[_DEBT] == 0:
            carry[_D_DEST] = 0
            carry[_W] = 0
        if not erased[hops - 1, i]:
            carry[_D_DEST] += fwd
            carry[_W] += n
        carry[_T] += 1
        debt = k * carry[_D_DEST] - carry[_W]
        carry[_DEBT] = debt if debt > 0 else 0
        if carry[_DEBT] == 0:
            if n_out >= max_out:
                return n_out
            beta = 0
            for l in range(hops):
                beta += res[l]
                out[n_out, 5 + l] = res[l]
            out[n_out, 0] = carry[_START]
            out[n_out, 1] = carry[_T]
            out[n_out, 2] = carry[_ALPHA]
            out[n_out, 3] = beta
            out[n_out, 4] = carry[_D_DEST]
            n_out += 1
            carry[_START] = carry[_T]
            carry[_ALPHA] = beta
    return n_out


def link_generators(seed: int, hops: int, shards: int = 1) -> list[list[np.random.Generator]]:
    root = np.random.SeedSequence(seed)
    return [[np.random.default_rng(s) for s in shard.spawn(hops)] for shard in root.spawn(shards)]


def _draw(gens: list[np.random.Generator], q: tuple[float, ...], size: int) -> np.ndarray:
    out = np.empty((len(gens), size), dtype=np.bool_)
    for l, g in enumerate(gens):
        out[l] = g.random(size) >= q[l]
    return out


def _run_shard(cfg: NetworkConfig, gens, slots: int) -> np.ndarray:
    res = np.zeros(cfg.hops, dtype=np.int64)
    carry = np.zeros(10, dtype=np.int64)
    carry[_PENDING] = 1
    done = 0
    while done < slots:
        size = min(CHUNK, slots - done)
        _advance(_draw(gens, cfg.q, size), res, carry, cfg.k_per_slot, cfg.n_dest, cfg.delta)
        done += size
    return carry


def worker_count(requested: int) -> int:
    cap = os.environ.get("STREAMDEBT_THREADS")
    n = requested
    if cap:
        n = min(n, max(1, int(cap)))
    return max(1, min(n, os.cpu_count() or 1))


@dataclass(frozen=True)
class McResult:
    p_e_hat: float
    errors: int
    decodes: int
    rounds: int
    seed: int
    slots: int
    shards: int = 1

    def to_dict(self) -> dict:
        return {
            "p_e_hat": self.p_e_hat,
            "errors": self.errors,
            "decodes": self.decodes,
            "rounds": self.rounds,
            "seed": self.seed,
            "slots": self.slots,
            "shards": self.shards,
        }


def estimate_error_probability_mc(
    cfg: NetworkConfig, slots: int | None = None, seed: int | None = None, shards: int = 1
) -> McResult:
    """Fraction of decoded slots that missed the deadline.

    ``decodes`` counts every slot decoded within the simulated horizon, late
    or not; slots still pending at the end are left out of both counts.
    """
    slots = cfg.slots if slots is None else slots
    seed = cfg.seed if seed is None else seed
    if slots < 1 or shards < 1:
        raise ValueError("slots and shards must be positive")
    gens = link_generators(seed, cfg.hops, shards)
    per = [slots // shards + (1 if s < slots % shards else 0) for s in range(shards)]
    with ThreadPoolExecutor(max_workers=worker_count(shards)) as pool:
        carries = list(pool.map(lambda s: _run_shard(cfg, gens[s], per[s]), range(shards)))
    errors = int(sum(int(c[_ERR]) for c in carries))
    decodes = int(sum(int(c[_DEC]) for c in carries))
    rounds = int(sum(int(c[_ROUNDS]) for c in carries))
    p = errors / decodes if decodes else 0.0
    return McResult(p_e_hat=p, errors=errors, decodes=decodes, rounds=rounds, seed=seed, slots=slots, shards=shards)


def record_rounds(cfg: NetworkConfig, rounds: int, seed: int, max_slots: int | None = None) -> np.ndarray:
    """Simulate until ``rounds`` hits are recorded (or ``max_slots`` elapse).

    Returns an int64 array with one row per hit: start, end, alpha, beta,
    decoded, followed by the residual vector at the end hit.
    """
    gens = link_generators(seed, cfg.hops)[0]
    out = np.zeros((rounds, 5 + cfg.hops), dtype=np.int64)
    res = np.zeros(cfg.hops, dtype=np.int64)
    carry = np.zeros(10, dtype=np.int64)
    carry[_PENDING] = 1
    n_out = 0
    limit = max_slots if max_slots is not None else 1000 * rounds + CHUNK
    while n_out < rounds and carry[_T] < limit:
        n_out = _record(_draw(gens, cfg.q, CHUNK), res, carry, cfg.k_per_slot, cfg.n_dest, out, n_out, rounds)
    return out[:n_out]


def sample_erasures(cfg: NetworkConfig, slots: int, seed: int) -> np.ndarray:
    """``slots x hops`` 0/1 erasure pattern from the same streams as the estimator."""
    gens = link_generators(seed, cfg.hops)[0]
    return _draw(gens, cfg.q, slots).T.astype(np.int8)
