"""Joint (hidden state, debt level) transition kernels.

Rows and columns of the zero-debt block are indexed by the flat hidden
state. The positive-debt block uses ``hidden * (debt_cap - 1) + (g - 1)`` for
debt ``g`` in ``1..debt_cap-1``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .band import LabeledKernel, forwarded_count, nest_hidden_chain
from .model import NetworkConfig


class DimensionMismatch(ValueError):
    pass


def shifted_identity(k: int, n: int) -> np.ndarray:
    """``n x n`` matrix with ones on the ``+k`` diagonal."""
    return np.eye(n, k=k)


@dataclass(frozen=True)
class TransitionSet:
    t00: sp.csr_matrix
    t0phi: sp.csr_matrix
    tphiphi: sp.csr_matrix
    tphi0: sp.csr_matrix
    zero_fix_applied: bool
    n_hidden: int
    n_levels: int

    def phi_index(self, hidden: int, g: int) -> int:
        return hidden * self.n_levels + (g - 1)

    def zero_row_sums(self) -> np.ndarray:
        return np.asarray(self.t00.sum(axis=1)).ravel() + np.asarray(self.t0phi.sum(axis=1)).ravel()

    def phi_row_sums(self) -> np.ndarray:
        return np.asarray(self.tphi0.sum(axis=1)).ravel() + np.asarray(self.tphiphi.sum(axis=1)).ravel()


def build_transition_set(
    kernel: LabeledKernel | None,
    cfg: NetworkConfig,
    *,
    zero_fix: bool = True,
) -> TransitionSet:
    """Expand every tagged hidden-state entry over the debt levels.

    An entry whose last hop erased leaves the debt unchanged. Otherwise the
    destination gains ``K*u`` unknowns and ``N`` equations, where ``u`` is the
    number of slots forwarded over the last hop, and the debt moves by
    ``K*u - N``. From zero debt the counters restart, so only a positive
    excess creates debt. When ``u = 0`` the debt stays at zero; with
    ``zero_fix=False`` that mass is discarded instead.
    """
    if kernel is None:
        kernel = nest_hidden_chain(cfg)
    if tuple(kernel.m) != tuple(cfg.m):
        raise DimensionMismatch(f"kernel caps {kernel.m} != config caps {cfg.m}")

    L = cfg.hops
    H = cfg.n_hidden
    G1 = cfg.debt_cap - 1
    clamp = cfg.overflow_mode == "clamp"

    rows, cols, vals = kernel.rows, kernel.cols, kernel.vals
    last_delivered = (kernel.bands & 1).astype(bool)
    u = forwarded_count(kernel.bands, kernel.digits, L)
    x = cfg.k_per_slot * u - cfg.n_dest

    # rows at debt 0
    er = ~last_delivered
    to_zero = last_delivered & (x <= 0) & ((u > 0) | zero_fix)
    to_phi = last_delivered & (x > 0)
    lvl = x[to_phi]
    keep = lvl <= G1 if not clamp else np.ones(len(lvl), dtype=bool)
    lvl = np.minimum(lvl, G1)

    sel00 = er | to_zero
    t00 = sp.coo_matrix((vals[sel00], (rows[sel00], cols[sel00])), shape=(H, H)).tocsr()
    t0phi = sp.coo_matrix(
        (
            vals[to_phi][keep],
            (rows[to_phi][keep], cols[to_phi][keep] * G1 + lvl[keep] - 1),
        ),
        shape=(H, H * G1),
    ).tocsr()

    # rows at debt g = 1..G1, one copy of every entry per level
    g = np.arange(1, G1 + 1, dtype=np.int64)
    E = len(rows)
    rr = (np.repeat(rows, G1) * G1 + np.tile(g - 1, E))
    cc = np.repeat(cols, G1)
    vv = np.repeat(vals, G1)
    gg = np.tile(g, E)
    y = gg + np.where(np.repeat(last_delivered, G1), np.repeat(x, G1), 0)

    down = y <= 0
    stay = (y >= 1) & (y <= G1)
    over = y > G1
    tphi0 = sp.coo_matrix((vv[down], (rr[down], cc[down])), shape=(H * G1, H)).tocsr()
    if clamp:
        stay = stay | over
        y = np.minimum(y, G1)
    tphiphi = sp.coo_matrix(
        (vv[stay], (rr[stay], cc[stay] * G1 + y[stay] - 1)), shape=(H * G1, H * G1)
    ).tocsr()

    for mtx in (t00, t0phi, tphiphi, tphi0):
        mtx.sum_duplicates()
        mtx.eliminate_zeros()
    return TransitionSet(
        t00=t00,
        t0phi=t0phi,
        tphiphi=tphiphi,
        tphi0=tphi0,
        zero_fix_applied=zero_fix,
        n_hidden=H,
        n_levels=G1,
    )


def contraction_surrogate(ts: TransitionSet, power: int = 256) -> float:
    """``max(T_phiphi^power @ 1)``; below 1 means the debt block is transient."""
    v = np.ones(ts.tphiphi.shape[0])
    for _ in range(power):
        v = ts.tphiphi @ v
    return float(v.max()) if v.size else 0.0


def zero_forward_reachable(kernel: LabeledKernel, cfg: NetworkConfig) -> bool:
    """Whether a last-hop delivery carrying no unknowns has positive probability."""
    u = forwarded_count(kernel.bands, kernel.digits, cfg.hops)
    hit = (kernel.bands & 1).astype(bool) & (u == 0) & (kernel.vals > 0)
    return bool(hit.any())
