"""Numerical consistency checks on a built model."""

from __future__ import annotations

import itertools
import math

import numpy as np

from .debt import DebtState, step_debt
from .error_prob import build_sum_projectors, expected_decoded_per_round
from .model import NetworkConfig, flat_index, unflat
from .stationary import RenewalModel, round_length_pmf
from .transitions import TransitionSet

ENUMERATION_STATE_LIMIT = 20_000


def row_sum_deviation(ts: TransitionSet) -> dict[str, float]:
    return {
        "zero_rows_max_dev": float(np.abs(1.0 - ts.zero_row_sums()).max()),
        "phi_rows_max_dev": float(np.abs(1.0 - ts.phi_row_sums()).max()) if ts.tphiphi.shape[0] else 0.0,
        "zero_rows_max": float(ts.zero_row_sums().max()),
        "phi_rows_max": float(ts.phi_row_sums().max()) if ts.tphiphi.shape[0] else 0.0,
    }


def renewal_gap(model: RenewalModel) -> tuple[float, float]:
    """``|mean decoded - sum k Pr(k)|`` and the pmf tail mass."""
    pmf, tail = round_length_pmf(model.pi, model.ts, solver=model.solver)
    mean = float(np.arange(1, len(pmf) + 1) @ pmf)
    return abs(expected_decoded_per_round(model) - mean), tail


def drift(model: RenewalModel, cfg: NetworkConfig) -> float:
    """Stationary mean change of the residual sum over one round."""
    proj = build_sum_projectors(model.pi, cfg)
    rho = model.pi @ proj.Q
    t_sum = proj.P @ model.t_rr @ proj.Q
    return float(abs((rho @ t_sum - rho) @ proj.ramp))


def one_step_rows(ts: TransitionSet, cfg: NetworkConfig) -> float:
    """Largest gap between the kernels and the exact recursion over one slot.

    Every (hidden state, debt) row is compared with the distribution obtained
    by applying the recursion to all erasure outcomes, then clamping the
    residuals and handling debt overflow per the config.
    """
    L, K, N = cfg.hops, cfg.k_per_slot, cfg.n_dest
    G1 = cfg.debt_cap - 1
    H = cfg.n_hidden
    outcomes = list(itertools.product((0, 1), repeat=L))
    weights = [math.prod(1 - cfg.q[l] if e[l] else cfg.q[l] for l in range(L)) for e in outcomes]
    top = cfg.overflow_mode == "clamp"
    a_zero = np.hstack([ts.t00.toarray(), ts.t0phi.toarray()])
    a_phi = np.hstack([ts.tphi0.toarray(), ts.tphiphi.toarray()]) if G1 else np.zeros((0, H))
    worst = 0.0
    for g in range(0, G1 + 1):
        for h in range(H):
            d = unflat(h, cfg.m)
            state = DebtState(d_raw=d, d_res=d, d_dest=g, w=(K - 1) * g, debt=g, e_prev=(1,) * L, t=0)
            row = np.zeros(H + H * G1)
            for e, wgt in zip(outcomes, weights):
                nxt = step_debt(state, e, K, N)
                res = tuple(min(x, c - 1) for x, c in zip(nxt.d_res, cfg.m))
                col = flat_index(res, cfg.m)
                if nxt.debt == 0:
                    row[col] += wgt
                elif nxt.debt <= G1 or top:
                    row[H + col * G1 + min(nxt.debt, G1) - 1] += wgt
            ref = a_zero[h] if g == 0 else a_phi[h * G1 + g - 1]
            worst = max(worst, float(np.abs(ref - row).max()))
    return worst


def round_identity_violations(rounds: np.ndarray) -> int:
    start, end, alpha, beta, dec = (rounds[:, i] for i in range(5))
    return int(np.count_nonzero(dec != (end - start) - (beta - alpha)))


def run_all(cfg: NetworkConfig, model: RenewalModel, *, mc_rounds: int = 0, seed: int = 0) -> dict:
    """Evaluate every check; each entry holds ``value``, ``limit`` and ``ok``."""
    out: dict[str, dict] = {}
    dev = row_sum_deviation(model.ts)
    exact_rows = model.ts.zero_fix_applied and cfg.overflow_mode == "clamp"
    limit = 1e-12
    out["row_sums_zero"] = {
        "value": dev["zero_rows_max_dev"] if exact_rows else dev["zero_rows_max"] - 1.0,
        "limit": limit,
        "mode": "stochastic" if exact_rows else "substochastic",
    }
    out["row_sums_phi"] = {
        "value": dev["phi_rows_max_dev"] if exact_rows else dev["phi_rows_max"] - 1.0,
        "limit": limit,
        "mode": "stochastic" if exact_rows else "substochastic",
    }
    out["pi_residual"] = {"value": model.pi_residual, "limit": 1e-8}
    gap, tail = renewal_gap(model)
    out["renewal_identity"] = {"value": gap, "limit": tail + 1e-8}
    out["drift"] = {"value": drift(model, cfg), "limit": 1e-8}
    if cfg.n_hidden * cfg.debt_cap <= ENUMERATION_STATE_LIMIT:
        out["one_step_rows"] = {"value": one_step_rows(model.ts, cfg), "limit": 1e-12}
    if mc_rounds:
        from .montecarlo import record_rounds

        rounds = record_rounds(cfg, mc_rounds, seed)
        out["round_identity"] = {"value": round_identity_violations(rounds), "limit": 0, "rounds": int(len(rounds))}
    for v in out.values():
        v["ok"] = bool(v["value"] <= v["limit"])
    return out
