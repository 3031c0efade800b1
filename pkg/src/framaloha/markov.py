"""Coupled Markov chains for contention duration and contender count.

The duration of a contention period drives how many users activate for the
next one, and the contender count drives the next duration.  Composing the
two conditional laws gives finite ergodic chains whose stationary
distributions yield the long-run throughput.
"""

from dataclasses import dataclass

import numpy as np
from scipy import stats

from .core import SystemConfig, check_prob_vector, check_stochastic_matrix
from .sic import ConditionalTables

STATIONARY_TOL = 1e-10


@dataclass(frozen=True)
class StationaryResult:
    """Stationary behaviour of one configuration."""

    config: SystemConfig
    pi_d: np.ndarray        # CP duration, support 1..d_max
    pi_n: np.ndarray        # contenders per CP, support 0..U
    pi_m: np.ndarray        # decoded users per CP, support 0..U
    throughput: float       # decoded packets per slot
    mean_active: float      # E[contenders per CP]
    mean_cp_len: float      # E[CP duration]


def activity_prob(gamma: float, d: int) -> float:
    """Probability that a user holds a packet after a d-slot contention."""
    if d < 1:
        raise ValueError("d must be >= 1")
    return 1.0 - (1.0 - gamma) ** d


def active_users_pmf(num_users: int, gamma: float, d: int) -> np.ndarray:
    """PMF of the number of users activating after a d-slot contention."""
    gd = activity_prob(gamma, d)
    pmf = stats.binom.pmf(np.arange(num_users + 1), num_users, gd)
    # binom.pmf can stray by ~1e-15; exact unit sum keeps the chains stochastic
    return pmf / pmf.sum()


def _activation_matrix(cfg: SystemConfig) -> np.ndarray:
    """Rows: previous duration d = 1..d_max; columns: next contender count."""
    return np.vstack([active_users_pmf(cfg.num_users, cfg.gen_prob, d) for d in range(1, cfg.max_cp_len + 1)])


def cp_chain(cfg: SystemConfig, tables: ConditionalTables) -> np.ndarray:
    """One-step transition matrix of the contention-duration chain."""
    act = _activation_matrix(cfg)            # (d_max, U+1)
    P = act @ tables.cp_len.T                 # (d_max, d_max)
    return check_stochastic_matrix(P, what="cp duration chain")


def users_chain(cfg: SystemConfig, tables: ConditionalTables) -> np.ndarray:
    """One-step transition matrix of the contender-count chain."""
    act = _activation_matrix(cfg)
    P = tables.cp_len.T @ act                 # (U+1, U+1)
    return check_stochastic_matrix(P, what="contender count chain")


def stationary(P: np.ndarray, tol: float = STATIONARY_TOL, name: str = "chain") -> np.ndarray:
    """Unique stationary distribution of an ergodic stochastic matrix.

    Solves the balance equations directly, with the normalization constraint
    replacing one redundant equation.
    """
    P = np.asarray(P, dtype=float)
    dim = P.shape[0]
    A = P.T - np.eye(dim)
    A[-1, :] = 1.0
    b = np.zeros(dim)
    b[-1] = 1.0
    try:
        pi = np.linalg.solve(A, b)
    except np.linalg.LinAlgError as e:
        raise ValueError(f"stationary({name}): singular balance equations: {e}") from e
    pi = np.where(np.abs(pi) < 1e-300, 0.0, pi)
    if np.any(pi < -1e-9):
        raise ValueError(f"stationary({name}): negative stationary mass")
    pi = np.clip(pi, 0.0, None)
    pi /= pi.sum()
    resid = np.abs(pi @ P - pi).max()
    if resid > tol:
        raise ValueError(f"stationary({name}): residual {resid:.3e} exceeds {tol:g}")
    return check_prob_vector(pi, 1e-9, what=f"stationary({name})")


def throughput(cfg: SystemConfig, tables: ConditionalTables, pi_n: np.ndarray, pi_d: np.ndarray):
    """Stationary decoded packets per slot, plus the decoded-count PMF.

    The ratio of the stationary mean decoded count to the stationary mean
    duration; both expectations exist because the chains are ergodic.
    """
    U, d_max = cfg.num_users, cfg.max_cp_len
    pi_m = tables.decoded @ pi_n
    pi_m = pi_m / pi_m.sum()
    mean_m = pi_m @ np.arange(U + 1)
    mean_d = pi_d @ np.arange(1, d_max + 1)
    return mean_m / mean_d, pi_m


def solve_stationary(cfg: SystemConfig, tables: ConditionalTables | None = None) -> StationaryResult:
    """Full stationary analysis of one configuration."""
    if tables is None:
        from .sic import build_conditional_tables

        tables = build_conditional_tables(cfg)
    pi_d = stationary(cp_chain(cfg, tables), name="cp duration chain")
    pi_n = stationary(users_chain(cfg, tables), name="contender count chain")
    S, pi_m = throughput(cfg, tables, pi_n, pi_d)
    return StationaryResult(
        config=cfg,
        pi_d=pi_d,
        pi_n=pi_n,
        pi_m=pi_m,
        throughput=float(S),
        mean_active=float(pi_n @ np.arange(cfg.num_users + 1)),
        mean_cp_len=float(pi_d @ np.arange(1, cfg.max_cp_len + 1)),
    )
