"""Network configuration, validation and hidden-state indexing."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Mapping, Sequence

OVERFLOW_MODES = ("drop", "clamp")
CONFIG_KEYS = (
    "hops",
    "k_per_slot",
    "n_dest",
    "q",
    "delta",
    "m",
    "debt_cap",
    "overflow_mode",
    "seed",
    "slots",
)

DEFAULT_HIDDEN_CAP = 7


class ConfigError(ValueError):
    """Raised when a configuration violates one or more rules.

    ``violations`` is a list of ``(code, message)`` pairs, one per broken rule.
    """

    def __init__(self, violations: list[tuple[str, str]]):
        self.violations = violations
        super().__init__("; ".join(f"{code}: {msg}" for code, msg in violations))

    def to_dict(self) -> dict[str, Any]:
        return {
            "error": "ConfigRejected",
            "violations": [{"code": c, "message": m} for c, m in self.violations],
        }


class IndexOutOfRange(IndexError):
    pass


@dataclass(frozen=True)
class NetworkConfig:
    hops: int
    k_per_slot: int
    n_dest: int
    q: tuple[float, ...]
    delta: int
    m: tuple[int, ...]
    debt_cap: int
    overflow_mode: str = "drop"
    seed: int = 0
    slots: int = 1_000_000
    allow_unstable: bool = field(default=False, compare=False)

    @property
    def n_hidden(self) -> int:
        return math.prod(self.m)

    @property
    def n_phi(self) -> int:
        return self.n_hidden * (self.debt_cap - 1)

    @property
    def sum_size(self) -> int:
        """Number of distinct values of the residual sum, ``1 + sum(m_l - 1)``."""
        return 1 + sum(c - 1 for c in self.m)

    def to_dict(self) -> dict[str, Any]:
        d = asdict(self)
        d.pop("allow_unstable")
        d["q"] = list(self.q)
        d["m"] = list(self.m)
        return d

    def replace(self, **changes: Any) -> "NetworkConfig":
        raw = self.to_dict()
        raw.update(changes)
        return validate_config(raw, allow_unstable=self.allow_unstable)


def default_caps(hops: int, n_dest: int) -> tuple[list[int], int]:
    """Helper truncation caps: ``m_l = 7`` and ``debt_cap = max(25, 8 * n_dest)``."""
    return [DEFAULT_HIDDEN_CAP] * hops, max(25, 8 * n_dest)


def _is_int(x: Any) -> bool:
    return isinstance(x, int) and not isinstance(x, bool)


def validate_config(raw: Mapping[str, Any], *, allow_unstable: bool = False) -> NetworkConfig:
    """Validate a key/value mapping and build a :class:`NetworkConfig`.

    Every violated rule is collected before raising, so the caller gets the
    full list in one :class:`ConfigError`. Missing ``m``/``debt_cap`` fall back
    to :func:`default_caps`.
    """
    v: list[tuple[str, str]] = []
    unknown = sorted(set(raw) - set(CONFIG_KEYS))
    if unknown:
        v.append(("UnknownKey", f"unknown keys: {unknown}"))
    missing = [key for key in ("hops", "k_per_slot", "n_dest", "q", "delta") if key not in raw]
    for key in missing:
        v.append(("MissingKey", f"missing required key {key!r}"))
    if missing:
        raise ConfigError(v)

    hops = raw["hops"]
    if not _is_int(hops):
        raise ConfigError(v + [("InvalidField", "hops must be an integer")])
    if hops < 2:
        v.append(("HopCountTooSmall", f"hops={hops} < 2"))

    k, n, delta = raw["k_per_slot"], raw["n_dest"], raw["delta"]
    for name, val, lo in (("k_per_slot", k, 1), ("n_dest", n, 1), ("delta", delta, 0)):
        if not _is_int(val) or val < lo:
            v.append(("InvalidField", f"{name} must be an integer >= {lo}, got {val!r}"))

    q = raw["q"]
    if not isinstance(q, Sequence) or isinstance(q, str):
        v.append(("InvalidField", "q must be a list of probabilities"))
        q = []
    q = list(q)
    if hops >= 1 and len(q) != hops:
        v.append(("InvalidField", f"q has {len(q)} entries, expected {hops}"))
    for i, ql in enumerate(q):
        if not isinstance(ql, (int, float)) or isinstance(ql, bool) or not (0.0 < ql <= 1.0):
            v.append(("NonPositiveProbability", f"q[{i}]={ql!r} not in (0, 1]"))

    dm, dcap = default_caps(max(hops, 1), n if _is_int(n) else 1)
    m = list(raw.get("m", dm))
    debt_cap = raw.get("debt_cap", dcap)
    if len(m) != hops:
        v.append(("InvalidField", f"m has {len(m)} entries, expected {hops}"))
    for i, ml in enumerate(m):
        if not _is_int(ml) or ml < 2:
            v.append(("CapTooSmall", f"m[{i}]={ml!r} < 2"))
    if not _is_int(debt_cap) or debt_cap < 2:
        v.append(("CapTooSmall", f"debt_cap={debt_cap!r} < 2"))

    mode = raw.get("overflow_mode", "drop")
    if mode not in OVERFLOW_MODES:
        v.append(("InvalidField", f"overflow_mode must be one of {OVERFLOW_MODES}"))
    seed = raw.get("seed", 0)
    slots = raw.get("slots", 1_000_000)
    if not _is_int(seed) or seed < 0:
        v.append(("InvalidField", "seed must be a non-negative integer"))
    if not _is_int(slots) or slots < 1:
        v.append(("InvalidField", "slots must be a positive integer"))

    numeric_ok = _is_int(k) and _is_int(n) and len(q) == hops and all(
        isinstance(x, (int, float)) and not isinstance(x, bool) for x in q
    )
    if numeric_ok and not allow_unstable and k >= n * q[-1]:
        v.append(
            (
                "RateExceedsCapacity",
                f"k_per_slot={k} >= n_dest*q_last={n * q[-1]:g}; pass allow_unstable to override",
            )
        )
    if v:
        raise ConfigError(v)

    return NetworkConfig(
        hops=hops,
        k_per_slot=k,
        n_dest=n,
        q=tuple(float(x) for x in q),
        delta=delta,
        m=tuple(m),
        debt_cap=debt_cap,
        overflow_mode=mode,
        seed=seed,
        slots=slots,
        allow_unstable=allow_unstable,
    )


def load_config(path: str | Path, *, allow_unstable: bool = False) -> NetworkConfig:
    with open(path) as fh:
        raw = json.load(fh)
    if not isinstance(raw, dict):
        raise ConfigError([("InvalidField", "config file must hold a JSON object")])
    return validate_config(raw, allow_unstable=allow_unstable)


def flat_index(d: Sequence[int], m: Sequence[int]) -> int:
    """Lexicographic flat index of residual vector ``d`` in the product space ``m``."""
    if len(d) != len(m):
        raise IndexOutOfRange(f"vector length {len(d)} != {len(m)}")
    idx = 0
    for dl, ml in zip(d, m):
        if not 0 <= dl < ml:
            raise IndexOutOfRange(f"component {dl} outside [0, {ml - 1}]")
        idx = idx * ml + dl
    return idx


def unflat(i: int, m: Sequence[int]) -> tuple[int, ...]:
    """Inverse of :func:`flat_index`."""
    total = math.prod(m)
    if not 0 <= i < total:
        raise IndexOutOfRange(f"flat index {i} outside [0, {total - 1}]")
    out = []
    for ml in reversed(m):
        i, r = divmod(i, ml)
        out.append(r)
    return tuple(reversed(out))
