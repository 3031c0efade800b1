"""Average peak age of information via an update-tracking Markov chain.

A tagged user's freshness is governed by the chain over (CP duration, update
delivered?).  Its stationary law gives the age value at the last reset; the
expected inter-update time comes from a first-step analysis with the delivery
states absorbing and each state costing its duration in slots.
"""

from dataclasses import dataclass

import numpy as np

from .core import SystemConfig, check_prob_vector
from .markov import _activation_matrix, cp_chain, stationary
from .sic import ConditionalTables

FIRST_STEP_TOL = 1e-9


@dataclass(frozen=True)
class ZChain:
    """Joint chain of CP duration and tagged-user delivery success.

    success[j, d] -- P(next CP lasts d slots and delivers | previous lasted j)
    fail[j, d]    -- P(next CP lasts d slots and does not deliver | ...)
    pi[d, s]      -- stationary mass of (duration d, delivered s)

    Transition rows do not depend on the success bit of the origin state, so
    both components are indexed by the duration alone.
    """

    config: SystemConfig
    success: np.ndarray
    fail: np.ndarray
    pi: np.ndarray

    def full_matrix(self) -> np.ndarray:
        """The chain over the 2*d_max states (d, s), s-major within d."""
        d_max = self.config.max_cp_len
        P = np.zeros((2 * d_max, 2 * d_max))
        for s in (0, 1):
            P[s::2, 0::2] = self.fail
            P[s::2, 1::2] = self.success
        return P


@dataclass(frozen=True)
class AoiResult:
    """Average peak age of information and its two components."""

    config: SystemConfig
    delta0_pmf: np.ndarray   # reset value = duration of the delivering CP
    e_delta0: float
    e_y: float               # expected inter-update time, slots
    peak_aoi: float          # e_delta0 + e_y


def update_prob(n: int, d: int, cfg: SystemConfig, tables: ConditionalTables) -> float:
    """P(tagged user delivers | n contenders, CP lasted d slots).

    A CP ending before the maximum duration decoded everyone, so the tagged
    user succeeded iff it contended.  A truncated CP decodes a random subset,
    whose law is the truncation-conditioned decoded-count distribution.
    """
    U, d_max = cfg.num_users, cfg.max_cp_len
    if not (0 <= n <= U) or not (1 <= d <= d_max):
        raise ValueError(f"update_prob: out of range n={n}, d={d}")
    if d < d_max:
        return n / U
    m = np.arange(U + 1)
    return float((m / U) @ tables.beta[:, n])


def build_z_chain(cfg: SystemConfig, tables: ConditionalTables) -> ZChain:
    """Assemble the delivery chain and its stationary distribution."""
    if cfg.gen_prob <= 0.0:
        raise ValueError("gen_prob = 0: no updates are ever delivered, peak age undefined")
    U, d_max = cfg.num_users, cfg.max_cp_len
    act = _activation_matrix(cfg)                     # (d_max, U+1)
    nu = np.empty((U + 1, d_max))
    for n in range(U + 1):
        nu[n, : d_max - 1] = n / U
        nu[n, d_max - 1] = update_prob(n, d_max, cfg, tables)
    # success[j, d] = sum_n nu(n,d) P(D=d|n) P(N=n|j)
    success = act @ (tables.cp_len.T * nu)            # (d_max, d_max)
    fail = act @ (tables.cp_len.T * (1.0 - nu))
    pi_d = stationary(success + fail, name="cp duration chain (delivery split)")
    pi = np.stack([pi_d @ fail, pi_d @ success], axis=1)
    # cross-check the 2*d_max-state chain solve against the marginal identity
    z = ZChain(cfg, success, fail, pi)
    full = z.full_matrix()
    pi_full = stationary(full, name="delivery chain")
    merged = np.stack([pi_full[0::2], pi_full[1::2]], axis=1)
    if np.abs(merged - pi).max() > 1e-9:
        raise ValueError("delivery chain stationary distribution inconsistent")
    return z


def delta0_pmf(z: ZChain) -> np.ndarray:
    """PMF of the age reset value: duration of a CP that delivers."""
    win = z.pi[:, 1]
    total = win.sum()
    if total <= 0.0:
        raise ValueError("no stationary delivery mass: reset-value law undefined")
    return check_prob_vector(win / total, 1e-9, what="reset-value pmf")


def first_step_costs(cfg: SystemConfig, z: ZChain) -> np.ndarray:
    """Expected slots to the next delivery, starting after a failed CP.

    Solves (I - fail) y = d_vec + success @ d_vec with one round of
    iterative refinement; the refined absolute residual stays below
    FIRST_STEP_TOL even when the costs reach 1e6 slots.
    """
    d_max = cfg.max_cp_len
    dvec = np.arange(1, d_max + 1, dtype=float)
    A = np.eye(d_max) - z.fail
    b = dvec + z.success @ dvec
    try:
        y = np.linalg.solve(A, b)
        y += np.linalg.solve(A, b - A @ y)
    except np.linalg.LinAlgError as e:
        raise ValueError(f"first-step system singular: {e}") from e
    resid = np.abs(A @ y - b).max()
    # costs blow up when deliveries become vanishingly rare (heavily congested
    # access); an absolute residual below 1e-9 is then not representable in
    # doubles, so the guard widens to machine precision relative to the costs
    tol = max(FIRST_STEP_TOL, 64 * np.finfo(float).eps * np.abs(y).max())
    if resid > tol:
        raise ValueError(f"first-step residual {resid:.3e} exceeds {tol:.3e}")
    return y


def expected_inter_update(cfg: SystemConfig, z: ZChain, delta0: np.ndarray) -> float:
    """Expected slots between consecutive deliveries of the tagged user.

    First-step analysis on the delivery chain: delivery states absorb, every
    state costs its duration.  The expectation conditioned on the reset value
    chains one transition from the delivering CP before averaging over the
    reset-value law.
    """
    dvec = np.arange(1, cfg.max_cp_len + 1, dtype=float)
    y = first_step_costs(cfg, z)
    e_y_given_reset = z.success @ dvec + z.fail @ y
    return float(delta0 @ e_y_given_reset)


def avg_peak_aoi(cfg: SystemConfig, tables: ConditionalTables | None = None) -> AoiResult:
    """Average peak age of information for one configuration."""
    if tables is None:
        from .sic import build_conditional_tables

        tables = build_conditional_tables(cfg)
    z = build_z_chain(cfg, tables)
    pmf = delta0_pmf(z)
    e_delta0 = float(pmf @ np.arange(1, cfg.max_cp_len + 1))
    assert e_delta0 >= 1.0  # an empty contention still occupies one slot
    e_y = expected_inter_update(cfg, z, pmf)
    return AoiResult(
        config=cfg,
        delta0_pmf=pmf,
        e_delta0=e_delta0,
        e_y=e_y,
        peak_aoi=e_delta0 + e_y,
    )
