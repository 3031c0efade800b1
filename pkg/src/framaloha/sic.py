"""Finite-state-machine analysis of SIC decoding within one contention period.

The decoder state is the triple (unresolved, collided, singletons):

* ``unresolved`` -- active users not yet decoded,
* ``collided``   -- slots currently holding >= 2 undecoded packets, the forced
  first slot excluded,
* ``singletons`` -- slots currently holding exactly one undecoded packet.

Evolving the state distribution slot by slot, alternating "add one slot" and
"run SIC to a stall", yields the conditional laws of the contention-period
duration D and of the decoded count M given the number n of contending users.

This module is the exact reference implementation over sparse state maps; it
is the semantic ground truth for the numba-accelerated path in
:mod:`framaloha.fastsic`, which produces identical tables orders of magnitude
faster at population scale.
"""

import math
from dataclasses import dataclass
from functools import lru_cache
from typing import NamedTuple

import numpy as np

from .core import SystemConfig, check_prob_vector

# Tolerance for state-distribution mass checks (looser than vector checks:
# masses are accumulated over many transitions).
MASS_TOL = 1e-10


class DecoderState(NamedTuple):
    unresolved: int
    collided: int
    singletons: int


# A StateDistribution is a dict mapping DecoderState (or plain 3-tuples) to
# probability mass.


def check_state_distribution(dist: dict, tol: float = MASS_TOL) -> dict:
    total = 0.0
    for (s, c, r), mass in dist.items():
        if s < 0 or c < 0 or r < 0:
            raise ValueError(f"negative state component in {(s, c, r)}")
        if mass < -tol:
            raise ValueError(f"negative mass {mass} at {(s, c, r)}")
        total += mass
    if abs(total - 1.0) > tol:
        raise ValueError(f"state distribution mass {total} != 1 (tol {tol:g})")
    return dist


def init_state(n: int, num_users: int) -> DecoderState:
    """Decoder state right after the forced first slot with n active users."""
    if n < 0 or n > num_users:
        raise ValueError(f"active count {n} outside 0..{num_users}")
    if n == 0:
        return DecoderState(0, 0, 0)
    if n == 1:
        # the forced slot itself is the singleton
        return DecoderState(1, 0, 1)
    return DecoderState(n, 0, 0)


def release_prob(s: int, n: int, q: float) -> float:
    """Probability that a collided slot turns into a singleton when one user
    is resolved.

    Conditioned on a slot being collided (>= 2 undecoded packets), this is the
    probability that its residual degree is exactly two and that one of the
    two packets belongs to the user currently being resolved.  Slot degrees
    are binomial over the n contenders with per-slot access probability q.
    """
    if not (1 <= s <= n):
        raise ValueError(f"need 1 <= s <= n, got s={s}, n={n}")
    if s == 2:
        # residual degree >= 2 then means exactly the two remaining users,
        # so numerator and denominator coincide; return the exact value
        # rather than a ratio off by float noise
        return 1.0
    lam = [math.comb(n, k) * q**k * (1 - q) ** (n - k) for k in range(n + 1)]
    num = 0.0
    for k in range(2, min(n - s + 2, n) + 1):
        num += (
            lam[k]
            * k * (k - 1) / n * (s - 1) / (n - 1)
            * math.comb(n - s, k - 2) / math.comb(n - 2, k - 2)
        )
    if num <= 0.0:
        # no slot of residual degree two can involve this user (s=1, or q=1
        # with more than two users left): a collided slot never opens up
        return 0.0
    den = 1.0
    for k in range(1, min(n - s + 1, n) + 1):
        den -= lam[k] * s * math.comb(n - s, k - 1) / math.comb(n, k)
    for k in range(0, min(n - s, n) + 1):
        den -= lam[k] * math.comb(n - s, k) / math.comb(n, k)
    if den <= 1e-14:
        raise ValueError(
            f"release_prob: no collided slots can exist for s={s}, n={n}, q={q} "
            "(unreachable state combination)"
        )
    h = num / den
    if h > 1.0:
        if h > 1.0 + 1e-12:
            raise ValueError(f"release_prob {h} exceeds 1 beyond tolerance")
        h = 1.0
    return h


def resolve_one_user(state, n: int, q: float) -> dict:
    """One SIC iteration: distribution of the state after resolving exactly
    one user from a singleton slot.

    Decoding consumes the singleton used plus every other singleton holding a
    replica of the same user (each of the remaining r-1 independently with
    probability 1/s).  Each collided slot opens into a new singleton
    independently with probability ``release_prob``.  When exactly two users
    were unresolved, cancelling one leaves the forced first slot with a single
    undecoded packet, adding one more singleton.
    """
    s, c, r = state
    if s < 1 or r < 1:
        raise ValueError(f"no resolvable user in state {(s, c, r)}")
    a = 1 if s == 2 else 0
    h = release_prob(s, n, q) if c > 0 else 0.0
    out: dict = {}
    for j in range(c + 1):
        pj = math.comb(c, j) * h**j * (1 - h) ** (c - j)
        if pj == 0.0:
            continue
        for i in range(1, r + 1):
            if s == 1:
                # every singleton holds the last user's replica
                pi = 1.0 if i == r else 0.0
            else:
                pi = math.comb(r - 1, i - 1) * (1 / s) ** (i - 1) * (1 - 1 / s) ** (r - i)
            p = pj * pi
            if p == 0.0:
                continue
            if i - j - a > r:  # redundant under 1 <= i <= r; kept as a guard
                raise AssertionError(f"constraint i-j-a<=r binding at {(s, c, r)}")
            nxt = (s - 1, c - j, r - i + j + a)
            if nxt[0] == 0:
                nxt = (0, 0, 0)
            out[nxt] = out.get(nxt, 0.0) + p
    return out


def decode_until_stall(dist: dict, n: int, q: float, safety_factor: int = 64) -> dict:
    """Run SIC iterations on a state distribution until no singletons remain.

    States with no singleton slots (or no unresolved users) pass through
    unchanged; every other state has one user resolved per step, processed in
    decreasing order of unresolved count so each reachable state is expanded
    at most once.
    """
    cur = dict(dist)
    smax = max((st[0] for st in cur), default=0)
    span = max((st[1] + st[2] for st in cur), default=0) + 2
    budget = safety_factor * (smax + 1) * span * span
    steps = 0
    while True:
        pending = [st for st in cur if st[0] >= 1 and st[2] >= 1]
        if not pending:
            break
        st = max(pending, key=lambda x: x[0])
        mass = cur.pop(st)
        for nxt, p in resolve_one_user(st, n, q).items():
            cur[nxt] = cur.get(nxt, 0.0) + mass * p
        steps += 1
        if steps > budget:
            raise RuntimeError(
                f"decode_until_stall exceeded {budget} iterations; "
                "state distribution is not normalizing"
            )
    return {st: m for st, m in cur.items() if m != 0.0}


def add_slot(state, q: float) -> dict:
    """Distribution of the pre-decoding state after one more slot is observed.

    From a stalled state the new slot is empty of undecoded packets, holds
    exactly one, or collides, so the state stays, gains a singleton, or gains
    a collided slot.
    """
    s, c, r = state
    if r != 0:
        raise ValueError(f"add_slot requires a post-decoding state (r=0), got {(s, c, r)}")
    if s < 1:
        raise ValueError("add_slot: contention already resolved")
    stay = (1 - q) ** s
    single = s * q * (1 - q) ** (s - 1)
    collide = 1.0 - stay - single
    if collide < 0.0:  # float noise at q ~ 0 or s = 1
        collide = 0.0
    out = {}
    if stay > 0.0:
        out[(s, c, 0)] = stay
    if single > 0.0:
        out[(s, c, 1)] = single
    if collide > 0.0:
        out[(s, c + 1, 0)] = collide
    return out


@dataclass(frozen=True)
class ConditionalTables:
    """Conditional laws of one contention period given the contender count.

    cp_len[d-1, n]  -- P(CP lasts exactly d slots | n contenders), d in 1..d_max
    decoded[m, n]   -- P(m users decoded | n contenders)
    beta[m, n]      -- P(m users decoded | n contenders, CP truncated at d_max);
                       a column is all zero when truncation has probability 0.
    """

    config: SystemConfig
    cp_len: np.ndarray
    decoded: np.ndarray
    beta: np.ndarray

    def validate(self, tol: float = MASS_TOL) -> "ConditionalTables":
        U = self.config.num_users
        d_max = self.config.max_cp_len
        assert self.cp_len.shape == (d_max, U + 1)
        assert self.decoded.shape == (U + 1, U + 1)
        assert self.beta.shape == (U + 1, U + 1)
        for n in range(U + 1):
            check_prob_vector(self.cp_len[:, n], tol, what=f"cp_len column n={n}")
            check_prob_vector(self.decoded[:, n], tol, what=f"decoded column n={n}")
            if np.any(self.decoded[n + 1:, n] > tol):
                raise ValueError(f"decoded column n={n} has mass above m=n")
            bsum = self.beta[:, n].sum()
            if bsum > tol and abs(bsum - 1.0) > tol:
                raise ValueError(f"beta column n={n} sums to {bsum}")
        if d_max >= 2:
            assert self.cp_len[0, 0] == 1.0 and self.cp_len[0, 1] == 1.0
            if np.any(self.cp_len[0, 2:] != 0.0):
                raise ValueError("cp_len: duration-1 mass with >= 2 contenders")
        return self

    def write_csv(self, cp_len_path, decoded_path) -> None:
        """Dump both tables for debugging / downstream plotting."""
        U = self.config.num_users
        d_max = self.config.max_cp_len
        with open(cp_len_path, "w") as f:
            f.write("n,d,p_d_given_n\n")
            for n in range(U + 1):
                for d in range(1, d_max + 1):
                    f.write(f"{n},{d},{float(self.cp_len[d - 1, n])!r}\n")
        with open(decoded_path, "w") as f:
            f.write("n,m,p_m_given_n,beta\n")
            for n in range(U + 1):
                for m in range(U + 1):
                    f.write(f"{n},{m},{float(self.decoded[m, n])!r},{float(self.beta[m, n])!r}\n")


def _tables_reference_column(n: int, q: float, d_max: int):
    """Exact sparse evolution for one contender count; returns (p_d, p_m, beta_col)."""
    p_d = np.zeros(d_max)
    p_m = np.zeros(n + 1)
    beta_col = np.zeros(n + 1)
    dist = decode_until_stall({init_state(n, max(n, 1)): 1.0}, n, q)
    for d in range(1, d_max + 1):
        if d > 1:
            grown: dict = {}
            for st, mass in dist.items():
                for nxt, p in add_slot(st, q).items():
                    grown[nxt] = grown.get(nxt, 0.0) + mass * p
            dist = decode_until_stall(grown, n, q)
        if d < d_max:
            # contention ends now only with everyone decoded; harvest that
            # mass so it does not leak into later slots
            done = dist.pop((0, 0, 0), 0.0)
            p_d[d - 1] += done
            p_m[n] += done
            if not dist:
                break
        else:
            residual = sum(dist.values())
            p_d[d_max - 1] += residual
            for (s, c, r), mass in dist.items():
                p_m[n - s] += mass
            if residual > 0.0:
                for (s, c, r), mass in dist.items():
                    beta_col[n - s] += mass / residual
    return p_d, p_m, beta_col


def build_tables_reference(cfg: SystemConfig) -> ConditionalTables:
    """Exact (no pruning) table construction; practical for small populations."""
    U, q, d_max = cfg.num_users, cfg.tx_prob, cfg.max_cp_len
    cp_len = np.zeros((d_max, U + 1))
    decoded = np.zeros((U + 1, U + 1))
    beta = np.zeros((U + 1, U + 1))
    for n in range(U + 1):
        p_d, p_m, beta_col = _tables_reference_column(n, q, d_max)
        cp_len[:, n] = p_d
        decoded[: n + 1, n] = p_m
        beta[: n + 1, n] = beta_col
    return ConditionalTables(cfg, cp_len, decoded, beta)


def build_conditional_tables(cfg: SystemConfig, method: str = "auto") -> ConditionalTables:
    """Build the conditional tables for one configuration.

    method: "auto" picks the accelerated path for large instances, "reference"
    forces the exact sparse-map evolution, "fast" forces the accelerated path.
    """
    if method == "reference":
        return build_tables_reference(cfg)
    if method not in ("auto", "fast"):
        raise ValueError(f"unknown method {method!r}")
    if method == "auto" and cfg.num_users <= 8 and cfg.max_cp_len <= 12:
        return build_tables_reference(cfg)
    from . import fastsic

    return fastsic.build_tables_fast(cfg)


@lru_cache(maxsize=128)
def cached_tables(cfg: SystemConfig) -> ConditionalTables:
    """Memoized table construction; treat the result as read-only."""
    return build_conditional_tables(cfg)
