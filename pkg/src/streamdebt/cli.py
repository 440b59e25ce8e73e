"""Command-line driver: ``streamdebt {theory,mc,oracle,validate,sweep}``.

Exit codes: 0 success, 1 failed invariant, 2 rejected configuration,
3 solver failure.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import sys
from concurrent.futures import ThreadPoolExecutor
from fractions import Fraction
from typing import Any, Sequence

import numpy as np

from .band import ProductSpaceTooLarge
from .debt import decodable_window, find_hitting_times, load_pattern
from .error_prob import build_model, error_probability
from .field_oracle import cross_validate
from .invariants import run_all
from .model import ConfigError, NetworkConfig, load_config, validate_config
from .montecarlo import estimate_error_probability_mc, worker_count
from .stationary import IllConditioned, SingularSystem

EXIT_OK, EXIT_INVARIANT, EXIT_CONFIG, EXIT_SOLVER = 0, 1, 2, 3
CSV_COLUMNS = ("sweep_value", "p_e", "p_e_hat", "rel_err", "tail_mass", "pi_residual", "seed", "slots")
SWEEP_PARAMS = ("delta", "epsilon", "q_l", "hops", "rate", "slots")


class UsageError(ValueError):
    pass


def fmt_float(x: float | None) -> str:
    if x is None:
        return ""
    return format(float(x), ".17g")


def parse_values(spec: str, param: str) -> list:
    """``a..b`` (inclusive integers), ``start:stop:step`` (inclusive) or a comma list."""
    spec = spec.strip()
    if ".." in spec:
        lo, hi = spec.split("..", 1)
        return list(range(int(lo), int(hi) + 1))
    if ":" in spec:
        parts = spec.split(":")
        if len(parts) != 3:
            raise UsageError(f"bad range {spec!r}; expected start:stop:step")
        start, stop, step = (Fraction(p) for p in parts)
        if step <= 0:
            raise UsageError("step must be positive")
        n = int((stop - start) / step) + 1
        return [float(start + i * step) for i in range(n)]
    out = []
    for tok in spec.split(","):
        tok = tok.strip()
        if not tok:
            continue
        if param == "rate" and "/" in tok:
            out.append(tok)
        elif param in ("delta", "hops", "slots"):
            out.append(int(tok))
        else:
            out.append(float(tok))
    if not out:
        raise UsageError("empty value list")
    return out


def apply_sweep(cfg: NetworkConfig, param: str, value, link: int | None = None) -> NetworkConfig:
    raw = cfg.to_dict()
    if param == "delta":
        raw["delta"] = int(value)
    elif param == "epsilon":
        raw["q"] = [1.0 - float(value)] * cfg.hops
    elif param == "q_l" or param.startswith("q_"):
        idx = cfg.hops - 1 if param == "q_l" and link is None else (link if link is not None else int(param[2:]))
        if not 0 <= idx < cfg.hops:
            raise UsageError(f"link index {idx} outside 0..{cfg.hops - 1}")
        q = list(cfg.q)
        q[idx] = float(value)
        raw["q"] = q
    elif param == "hops":
        h = int(value)
        raw["hops"] = h
        raw["q"] = [cfg.q[min(i, cfg.hops - 1)] for i in range(h)]
        raw["m"] = [cfg.m[min(i, cfg.hops - 1)] for i in range(h)]
    elif param == "rate":
        if isinstance(value, str) and "/" in value:
            k, n = (int(x) for x in value.split("/"))
            raw["k_per_slot"], raw["n_dest"] = k, n
        else:
            k = Fraction(value).limit_denominator(10_000) * cfg.n_dest
            if k.denominator != 1:
                raise UsageError(f"rate {value} times n_dest={cfg.n_dest} is not an integer")
            raw["k_per_slot"] = int(k)
    elif param == "slots":
        raw["slots"] = int(value)
    else:
        raise UsageError(f"unknown sweep parameter {param!r}")
    return validate_config(raw, allow_unstable=cfg.allow_unstable)


def _emit(obj: Any, out: str | None) -> None:
    text = json.dumps(obj, indent=2, sort_keys=True) + "\n"
    if out:
        with open(out, "w", newline="") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def _mc_mean(cfg: NetworkConfig, slots: int, seed: int, seeds: int, shards: int) -> float:
    vals = [estimate_error_probability_mc(cfg, slots, seed + i, shards).p_e_hat for i in range(seeds)]
    return float(np.mean(vals))


def cmd_theory(args, cfg: NetworkConfig) -> int:
    res = error_probability(cfg, zero_fix=not args.literal_zero_rule)
    _emit(res.to_dict(), args.out)
    return EXIT_OK


def cmd_mc(args, cfg: NetworkConfig) -> int:
    slots = args.slots if args.slots is not None else cfg.slots
    seed = args.seed if args.seed is not None else cfg.seed
    res = estimate_error_probability_mc(cfg, slots, seed, args.shards)
    out = res.to_dict()
    out["config"] = cfg.to_dict()
    _emit(out, args.out)
    return EXIT_OK


def cmd_oracle(args, cfg: NetworkConfig) -> int:
    seed = args.seed if args.seed is not None else cfg.seed
    patterns = []
    windows = []
    if args.pattern:
        pat = load_pattern(args.pattern, cfg.hops)
        patterns.append(np.array(pat))
        for rnd in find_hitting_times(pat, cfg.k_per_slot, cfg.n_dest):
            win = decodable_window(rnd, cfg.delta)
            if rnd.decoded_slots:
                windows.append({"end_hit": rnd.end_hit, "decoded": rnd.decoded_slots, "window": [win.start, win.stop - 1] if win else []})
    seeds = args.seeds if args.seeds is not None else (0 if args.pattern else 20)
    horizon = args.horizon if args.horizon is not None else (len(patterns[0]) if patterns else 40)
    rep = cross_validate(cfg, horizon, seeds, seed, patterns=patterns, relay_packet_size=args.relay_packet_size)
    rep["windows"] = windows
    rep["config"] = cfg.to_dict()
    _emit(rep, args.out)
    return EXIT_OK if rep["mismatched_slots"] == 0 else EXIT_INVARIANT


def cmd_validate(args, cfg: NetworkConfig) -> int:
    model = build_model(cfg, pi_limit=1.0)
    seed = args.seed if args.seed is not None else cfg.seed
    checks = run_all(cfg, model, mc_rounds=args.rounds, seed=seed)
    ok = all(v["ok"] for v in checks.values())
    _emit({"checks": checks, "ok": ok, "config": cfg.to_dict()}, args.out)
    return EXIT_OK if ok else EXIT_INVARIANT


def _sweep_row(cfg: NetworkConfig, param: str, value, args) -> dict:
    point = apply_sweep(cfg, param, value, args.link)
    seed = args.seed if args.seed is not None else cfg.seed
    if param == "slots":
        slots = int(value)
    else:
        slots = args.slots
    res = error_probability(point)
    p_hat = rel = None
    if slots:
        p_hat = _mc_mean(point, slots, seed, args.seeds or 1, args.shards)
        rel = abs(res.p_e - p_hat) / p_hat if p_hat > 0 else None
    return {
        "sweep_value": value,
        "p_e": res.p_e,
        "p_e_hat": p_hat,
        "rel_err": rel,
        "tail_mass": res.tail_mass,
        "pi_residual": res.pi_residual,
        "seed": seed if slots else None,
        "slots": slots if slots else None,
    }


def cmd_sweep(args, cfg: NetworkConfig) -> int:
    if args.param is None or args.values is None:
        raise UsageError("sweep needs --param and --values")
    if args.param not in SWEEP_PARAMS and not args.param.startswith("q_"):
        raise UsageError(f"--param must be one of {SWEEP_PARAMS}")
    values = parse_values(args.values, args.param)
    # validate every point before any work starts
    for v in values:
        apply_sweep(cfg, args.param, v, args.link)
    with ThreadPoolExecutor(max_workers=worker_count(len(values))) as pool:
        rows = list(pool.map(lambda v: _sweep_row(cfg, args.param, v, args), values))
    if args.format == "json":
        _emit({"param": args.param, "rows": rows, "config": cfg.to_dict()}, args.out)
        return EXIT_OK
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_COLUMNS)
    for r in rows:
        cells = []
        for col in CSV_COLUMNS:
            v = r[col]
            if v is None:
                cells.append("")
            elif isinstance(v, float):
                cells.append(fmt_float(v))
            else:
                cells.append(str(v))
        writer.writerow(cells)
    if args.out:
        with open(args.out, "w", newline="") as fh:
            fh.write(buf.getvalue())
    else:
        sys.stdout.write(buf.getvalue())
    return EXIT_OK


COMMANDS = {
    "theory": cmd_theory,
    "mc": cmd_mc,
    "oracle": cmd_oracle,
    "validate": cmd_validate,
    "sweep": cmd_sweep,
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="streamdebt", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", required=True, help="JSON config file")
    common.add_argument("--out", help="write output here instead of stdout")
    common.add_argument("--seed", type=int)
    common.add_argument("--allow-unstable", action="store_true", help="accept K >= n_dest * q_last")

    t = sub.add_parser("theory", parents=[common], help="analytic slot error probability")
    t.add_argument("--literal-zero-rule", action="store_true", help="drop zero-unknown deliveries from debt 0")

    m = sub.add_parser("mc", parents=[common], help="Monte-Carlo estimate")
    m.add_argument("--slots", type=int)
    m.add_argument("--shards", type=int, default=1)

    o = sub.add_parser("oracle", parents=[common], help="finite-field cross-validation")
    o.add_argument("--pattern", help="scripted erasure pattern file")
    o.add_argument("--horizon", type=int)
    o.add_argument("--seeds", type=int)
    o.add_argument("--relay-packet-size", type=int, help="intermediate packet size (default K * horizon)")

    v = sub.add_parser("validate", parents=[common], help="run the invariant checks")
    v.add_argument("--rounds", type=int, default=1_000_000, help="MC rounds for the round identity (0 to skip)")

    s = sub.add_parser("sweep", parents=[common], help="parameter sweep table")
    s.add_argument("--param", help="delta | epsilon | q_l | q_<i> | hops | rate | slots")
    s.add_argument("--values", help="a..b, start:stop:step or comma list")
    s.add_argument("--format", choices=("csv", "json"), default="csv")
    s.add_argument("--slots", type=int, help="also run MC with this many slots per point")
    s.add_argument("--seeds", type=int, help="MC repetitions averaged per point")
    s.add_argument("--shards", type=int, default=1)
    s.add_argument("--link", type=int, help="link index for --param q_l (default last)")
    return p


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config, allow_unstable=args.allow_unstable)
        return COMMANDS[args.command](args, cfg)
    except ConfigError as exc:
        _emit(exc.to_dict(), None)
        return EXIT_CONFIG
    except UsageError as exc:
        _emit({"error": "UsageError", "message": str(exc)}, None)
        return EXIT_CONFIG
    except (SingularSystem, IllConditioned, ProductSpaceTooLarge) as exc:
        _emit({"error": type(exc).__name__, "message": str(exc)}, None)
        return EXIT_SOLVER
    except (OSError, json.JSONDecodeError, ValueError) as exc:
        _emit({"error": type(exc).__name__, "message": str(exc)}, None)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
