"""Expected decoded and late slots per round, and their ratio.

A round runs between consecutive zero-debt slots. With ``alpha`` and
``beta`` the residual sums at its start and end and ``k`` its length, the
round decodes ``k - (beta - alpha)`` slots, of which
``min((k + alpha - delta - 1)^+, k + alpha - beta)`` miss the deadline.
The slot error probability is the ratio of the stationary means.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any

import numpy as np

from .band import nest_hidden_chain
from .model import NetworkConfig
from .stationary import RenewalModel, round_length_pmf
from .transitions import build_transition_set


@dataclass(frozen=True)
class SumProjectors:
    """Aggregation onto residual-sum classes.

    ``Q`` (states x classes) marks each state's class. ``P`` (classes x
    states) spreads class mass back over states proportionally to ``pi``,
    uniformly where the class has no stationary mass.
    """

    Q: np.ndarray
    P: np.ndarray
    gamma: np.ndarray
    ramp: np.ndarray
    sums: np.ndarray

    @property
    def B(self) -> np.ndarray:
        return np.diag(self.ramp)


def state_sums(m: tuple[int, ...]) -> np.ndarray:
    grids = np.meshgrid(*[np.arange(c) for c in m], indexing="ij")
    return sum(g for g in grids).ravel()


def build_sum_projectors(pi: np.ndarray, cfg: NetworkConfig) -> SumProjectors:
    sums = state_sums(cfg.m)
    S = cfg.sum_size
    H = len(sums)
    Q = np.zeros((H, S))
    Q[np.arange(H), sums] = 1.0
    class_mass = pi @ Q
    P = np.zeros((S, H))
    for j in range(S):
        members = sums == j
        if class_mass[j] > 0:
            P[j, members] = pi[members] / class_mass[j]
        else:
            P[j, members] = 1.0 / members.sum()
    j = np.arange(S)
    gamma = np.minimum(1, cfg.delta + 2 - j).astype(float)
    return SumProjectors(Q=Q, P=P, gamma=gamma, ramp=j.astype(float), sums=sums)


def expected_decoded_per_round(model: RenewalModel) -> float:
    """Mean slots decoded per round, equal to the mean round length."""
    ts, pi = model.ts, model.pi
    r = np.asarray(ts.tphi0.sum(axis=1)).ravel()
    a_r = model.solver.right(r)
    a2_r = model.solver.right(a_r)
    first = float(pi @ np.asarray(ts.t00.sum(axis=1)).ravel())
    return first + float((ts.t0phi.T @ pi) @ (a_r + a2_r))


def expected_errors_per_round(
    model: RenewalModel, proj: SumProjectors, delta: int, *, return_terms: bool = False
) -> float | tuple[float, ...]:
    """Mean number of slots per round decoded after their deadline.

    Evaluated as five matrix terms built from the sum projectors; with
    ``return_terms`` the individual terms are returned instead of their sum.
    """
    ts = model.ts
    rho = model.pi @ proj.Q
    P, Q, gamma = proj.P, proj.Q, proj.gamma
    S = len(rho)
    ones_s = np.ones(S)
    j = proj.ramp
    Qg = Q @ gamma
    r = ts.tphi0 @ (Q @ ones_s)

    def advance(row: np.ndarray, steps: int) -> np.ndarray:
        for _ in range(steps):
            row = ts.tphiphi.T @ row
        return row

    w = rho @ P
    t1 = float(w @ (model.t_rr @ Qg))

    tail_row = advance(ts.t0phi.T @ w, delta + 1)
    a_r = model.solver.right(r)
    t2 = float(tail_row @ model.solver.right(a_r))

    t3_row = advance(ts.t0phi.T @ ((rho * j) @ P), delta + 1)
    t3 = float(t3_row @ a_r)

    # T^{(k)} applied on the right, k = 1..delta+2
    ones_h = Q @ ones_s
    rights_1 = [ts.t00 @ ones_h]
    rights_g = [ts.t00 @ Qg]
    v1 = r.copy()
    vg = ts.tphi0 @ Qg
    for _ in range(2, delta + 3):
        rights_1.append(ts.t0phi @ v1)
        rights_g.append(ts.t0phi @ vg)
        v1 = ts.tphiphi @ v1
        vg = ts.tphiphi @ vg

    t4 = 0.0
    for k in range(1, delta + 3):
        c = np.maximum(0.0, j - (delta + 2 - k))
        t4 += float(((rho * c) @ P) @ rights_1[k - 1])

    t5 = 0.0
    for k in range(1, delta + 2):
        mask = (j <= delta + 1 - k).astype(float)
        t5 -= float(((rho * mask) @ P) @ rights_g[k - 1])

    terms = (t1, t2, t3, t4, t5)
    if return_terms:
        return terms
    return sum(terms)


def expected_errors_nonnegative(model: RenewalModel, proj: SumProjectors, delta: int) -> float:
    """Same expectation as :func:`expected_errors_per_round` summed without cancellation.

    Rounds of length ``k <= delta + 1`` are summed explicitly per start class.
    For longer rounds the late count is ``k + alpha - max(delta + 1, beta)``,
    whose sum over the geometric tail has a closed form in ``A``. No large
    terms of opposite sign are subtracted, so the result stays accurate far
    below the rounding floor of the five-term form.
    """
    ts = model.ts
    rho = model.pi @ proj.Q
    S = len(rho)
    beta = proj.ramp
    r = np.asarray(ts.tphi0.sum(axis=1)).ravel()
    k1 = delta + 2
    total = 0.0
    for a in range(S):
        if rho[a] <= 0:
            continue
        w = rho[a] * proj.P[a]
        late1 = np.minimum(np.maximum(a - delta, 0), 1 + a - beta)
        total += float((ts.t00.T @ w) @ (proj.Q @ late1))
        v = ts.t0phi.T @ w
        for k in range(2, k1):
            late = np.minimum(np.maximum(k + a - delta - 1, 0), k + a - beta)
            total += float((ts.tphi0.T @ v) @ (proj.Q @ late))
            v = ts.tphiphi.T @ v
        # v now holds mass still open after k1 - 1 slots
        if not v.any():
            continue
        y = model.solver.left(v)
        z = model.solver.left(ts.tphiphi.T @ y)
        c = k1 + a - np.maximum(delta + 1, beta)
        total += float((ts.tphi0.T @ y) @ (proj.Q @ c)) + float(z @ r)
    return total


def round_functionals_by_length(
    model: RenewalModel, proj: SumProjectors, delta: int, k_max: int, pi: np.ndarray | None = None
) -> dict[str, np.ndarray]:
    """Per-length contributions of rounds lasting ``k = 1..k_max`` slots.

    Uses the sum-projected slices ``P T^{(k)} Q`` with start weights
    ``pi Q``. Returns arrays ``pmf``, ``decoded`` and ``late`` whose entry
    ``k - 1`` is the probability of length ``k`` and the expected decoded and
    late slot counts restricted to that length.
    """
    ts = model.ts
    pi = model.pi if pi is None else pi
    rho = pi @ proj.Q
    S = len(rho)
    a = np.arange(S)[:, None]
    b = np.arange(S)[None, :]
    # rows of P weighted by rho are exactly pi restricted to each class
    start = rho[:, None] * proj.P
    pmf = np.zeros(k_max)
    dec = np.zeros(k_max)
    late = np.zeros(k_max)
    x = None
    for k in range(1, k_max + 1):
        if k == 1:
            sliced = (ts.t00.T @ start.T).T
            x = (ts.t0phi.T @ start.T).T
        else:
            sliced = (ts.tphi0.T @ x.T).T
            x = (ts.tphiphi.T @ x.T).T
        m = sliced @ proj.Q
        pmf[k - 1] = m.sum()
        dec[k - 1] = float((m * (k - (b - a))).sum())
        late[k - 1] = float((m * np.minimum(np.maximum(k + a - delta - 1, 0), k + a - b)).sum())
    return {"pmf": pmf, "decoded": dec, "late": late}


@dataclass
class ErrorProbabilityResult:
    p_e: float
    numerator: float
    denominator: float
    tail_mass: float
    pi_residual: float
    config: dict[str, Any]
    diagnostics: dict[str, Any] = field(default_factory=dict)

    def to_dict(self) -> dict[str, Any]:
        return {
            "p_e": self.p_e,
            "numerator": self.numerator,
            "denominator": self.denominator,
            "tail_mass": self.tail_mass,
            "pi_residual": self.pi_residual,
            "config": self.config,
            "diagnostics": self.diagnostics,
        }


def build_model(cfg: NetworkConfig, *, zero_fix: bool = True, pi_limit: float | None = None) -> RenewalModel:
    ts = build_transition_set(nest_hidden_chain(cfg), cfg, zero_fix=zero_fix)
    kw = {} if pi_limit is None else {"pi_limit": pi_limit}
    return RenewalModel.from_transitions(ts, **kw)


CANCELLATION_TOL = 1e-6


def error_probability(
    cfg: NetworkConfig,
    *,
    zero_fix: bool = True,
    model: RenewalModel | None = None,
    pi_limit: float | None = None,
) -> ErrorProbabilityResult:
    """Slot error probability with solver diagnostics.

    The numerator comes from the five-term form unless its terms cancel so
    far that rounding dominates, in which case the nonnegative summation is
    used. The method is recorded in ``diagnostics``.
    """
    model = model or build_model(cfg, zero_fix=zero_fix, pi_limit=pi_limit)
    proj = build_sum_projectors(model.pi, cfg)
    den = expected_decoded_per_round(model)
    terms = expected_errors_per_round(model, proj, cfg.delta, return_terms=True)
    num = float(sum(terms))
    scale = float(sum(abs(t) for t in terms))
    method = "five_term"
    if scale > 0 and np.finfo(float).eps * scale * 8 > CANCELLATION_TOL * abs(num):
        num = expected_errors_nonnegative(model, proj, cfg.delta)
        method = "nonnegative"
    pmf, tail = round_length_pmf(model.pi, model.ts, solver=model.solver)
    p_e = min(max(num / den, 0.0), 1.0) if den > 0 and math.isfinite(num) else float("nan")
    diag = dict(model.diagnostics)
    diag["numerator_method"] = method
    diag["pmf_terms"] = int(len(pmf))
    diag["mean_round_length_truncated"] = float(np.arange(1, len(pmf) + 1) @ pmf)
    return ErrorProbabilityResult(
        p_e=p_e,
        numerator=num,
        denominator=den,
        tail_mass=tail,
        pi_residual=model.pi_residual,
        config=cfg.to_dict(),
        diagnostics=diag,
    )
