"""Renewal quantities of the debt chain observed at zero-debt slots."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from .transitions import TransitionSet, contraction_surrogate

PI_RESIDUAL_LIMIT = 1e-6
PMF_STEP_TOL = 1e-14
PMF_MAX_STEPS = 100_000


class SingularSystem(ArithmeticError):
    pass


class IllConditioned(ArithmeticError):
    pass


class FundamentalSolver:
    """Factorization of ``I - T_phiphi`` with left and right solves."""

    def __init__(self, tphiphi: sp.spmatrix, *, check: bool = True):
        n = tphiphi.shape[0]
        self.n = n
        self._tphiphi = sp.csr_matrix(tphiphi)
        if n == 0:
            self._lu = None
            return
        if check:
            v = np.ones(n)
            for _ in range(256):
                v = self._tphiphi @ v
            if v.max() >= 1.0:
                raise SingularSystem("debt block does not contract; configuration at or over capacity")
        try:
            self._lu = splu(sp.csc_matrix(sp.identity(n) - self._tphiphi))
        except RuntimeError as exc:
            raise SingularSystem(str(exc)) from exc

    def right(self, v: np.ndarray) -> np.ndarray:
        """``A @ v`` with ``A = (I - T_phiphi)^{-1}``."""
        if self._lu is None:
            return np.asarray(v, dtype=float).copy()
        return self._lu.solve(np.asarray(v, dtype=float))

    def left(self, v: np.ndarray) -> np.ndarray:
        """``v @ A``."""
        if self._lu is None:
            return np.asarray(v, dtype=float).copy()
        v = np.asarray(v, dtype=float)
        if v.ndim == 2:
            return self._lu.solve(np.ascontiguousarray(v.T), trans="T").T
        return self._lu.solve(v, trans="T")

    def residual(self, v: np.ndarray, side: str = "right") -> float:
        """Relative residual of a solve against ``v``."""
        v = np.asarray(v, dtype=float)
        if side == "right":
            x = self.right(v)
            r = x - self._tphiphi @ x - v
        else:
            x = self.left(v)
            r = x - self._tphiphi.T @ x - v
        scale = max(np.abs(v).max(), 1e-300)
        return float(np.abs(r).max() / scale)


def apply_fundamental(ts: TransitionSet, v: np.ndarray, side: str = "right") -> np.ndarray:
    solver = FundamentalSolver(ts.tphiphi)
    return solver.right(v) if side == "right" else solver.left(v)


def one_round_kernel(ts: TransitionSet, solver: FundamentalSolver | None = None, chunk: int = 256) -> np.ndarray:
    """Dense ``T00 + T0phi A Tphi0`` between consecutive zero-debt slots."""
    solver = solver or FundamentalSolver(ts.tphiphi)
    H = ts.n_hidden
    out = ts.t00.toarray()
    tphi0 = sp.csc_matrix(ts.tphi0)
    for c0 in range(0, H, chunk):
        block = tphi0[:, c0 : c0 + chunk].toarray()
        if not block.any():
            continue
        out[:, c0 : c0 + chunk] += ts.t0phi @ solver.right(block)
    return out


def stationary_initial_distribution(t_rr: np.ndarray, limit: float = PI_RESIDUAL_LIMIT) -> tuple[np.ndarray, float]:
    """Stationary vector of the one-round kernel and its fixed-point residual.

    Solved by least squares on the transposed balance equations stacked with
    the normalization row, then clipped to nonnegative and renormalized.
    """
    n = t_rr.shape[0]
    a = np.vstack([(t_rr - np.eye(n)).T, np.ones((1, n))])
    b = np.zeros(n + 1)
    b[-1] = 1.0
    pi, *_ = np.linalg.lstsq(a, b, rcond=None)
    pi[pi < 0] = 0.0
    pi /= pi.sum()
    resid = float(np.abs(pi @ t_rr - pi).max())
    if resid > limit:
        raise IllConditioned(f"stationary residual {resid:.3e} exceeds {limit:.0e}")
    return pi, resid


def round_length_pmf(
    pi: np.ndarray,
    ts: TransitionSet,
    k_max: int | None = None,
    solver: FundamentalSolver | None = None,
    *,
    step_tol: float = PMF_STEP_TOL,
    max_steps: int = PMF_MAX_STEPS,
) -> tuple[np.ndarray, float]:
    """``Pr(round length = k)`` for ``k = 1..len(pmf)`` and the exact remaining mass.

    With ``k_max=None`` the pmf is extended until the mass still in progress
    drops below ``step_tol``, or ``max_steps``.
    Index 0 of the returned array corresponds to ``k = 1``.
    """
    r = np.asarray(ts.tphi0.sum(axis=1)).ravel()
    out = [float(pi @ np.asarray(ts.t00.sum(axis=1)).ravel())]
    # v: mass still at positive debt after len(out) slots
    v = ts.t0phi.T @ pi
    limit = max_steps if k_max is None else k_max
    while len(out) < limit:
        if k_max is None and v.sum() < step_tol:
            break
        out.append(float(v @ r))
        v = ts.tphiphi.T @ v
    solver = solver or FundamentalSolver(ts.tphiphi, check=False)
    tail = float(solver.left(v) @ r) if v.size else 0.0
    return np.array(out), max(tail, 0.0)


@dataclass
class RenewalModel:
    ts: TransitionSet
    solver: FundamentalSolver
    t_rr: np.ndarray
    pi: np.ndarray
    pi_residual: float
    diagnostics: dict = field(default_factory=dict)

    @classmethod
    def from_transitions(cls, ts: TransitionSet, *, pi_limit: float = PI_RESIDUAL_LIMIT) -> "RenewalModel":
        solver = FundamentalSolver(ts.tphiphi)
        t_rr = one_round_kernel(ts, solver)
        pi, resid = stationary_initial_distribution(t_rr, pi_limit)
        diag = {
            "contraction": contraction_surrogate(ts),
            "round_kernel_row_deficit": float(np.abs(1.0 - t_rr.sum(axis=1)).max()),
        }
        return cls(ts=ts, solver=solver, t_rr=t_rr, pi=pi, pi_residual=resid, diagnostics=diag)

    def step_slices(self, k: int) -> np.ndarray:
        """Dense ``T^{(k)}``: start hidden state to end hidden state in exactly ``k`` slots."""
        if k == 1:
            return self.ts.t00.toarray()
        x = self.ts.t0phi.toarray()
        for _ in range(k - 2):
            x = (self.ts.tphiphi.T @ x.T).T
        return (self.ts.tphi0.T @ x.T).T
