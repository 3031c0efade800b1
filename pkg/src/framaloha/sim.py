"""Slot-accurate Monte Carlo simulation of the frameless ALOHA protocol.

One contention period (CP): every user holding a packet transmits in the
forced first slot and with probability q in each later slot; after every slot
the receiver peels singleton slots, cancelling all replicas of each decoded
user (their positions are known once the payload is read, including replicas
still to come, which are cancelled on arrival).  The CP ends when the first
slot has been emptied by cancellations (everyone decoded; immediately for an
idle population) or when the maximum duration is reached.  Packets undelivered
by then are discarded.

Per-user state across CPs is held in arrays: a buffered flag (packet awaiting
the next CP), and the time stamp of the last delivered update.  Packets take
the start slot of the CP they are sent in as their time stamp.  Arrivals are
per-slot Bernoulli draws per user with replacement in the waiting buffer; only
"at least one arrival during the d-slot CP" is observable, so activation for
the next CP is drawn directly as Bernoulli(1-(1-gamma)^d) per user, which is
distributionally identical and pins the end-of-CP arrival boundary convention.

The age of a user's information resets at the end of the CP in which an
update is decoded; peak values are sampled just before those resets.
"""

from dataclasses import dataclass

import numpy as np
from numba import njit
from scipy import stats

from .core import SystemConfig
from .markov import activity_prob

NUM_BATCHES = 30


@dataclass
class UserState:
    """Per-user bookkeeping between contention periods.

    At most one packet is ever waiting (newer arrivals replace it); while a
    user contends, pending_timestamp equals the start slot of that CP.
    """

    buffered: bool = False
    pending_timestamp: int | None = None
    last_delivered_timestamp: int | None = None
    generated_during_cp: bool = False


@dataclass(frozen=True)
class CpRecord:
    """Outcome of one contention period."""

    length: int
    active: int
    decoded: int
    decoded_user_ids: frozenset
    truncated: bool

    def __post_init__(self):
        assert self.decoded <= self.active
        assert self.truncated or self.decoded == self.active
        assert self.active >= 2 or self.length == 1 or self.truncated


@dataclass(frozen=True)
class SimMetrics:
    """Point estimates with batch-means confidence half-widths (95%)."""

    config: SystemConfig
    seed: int
    cp_count: int
    throughput: float
    throughput_ci: float
    peak_aoi: float
    peak_aoi_ci: float
    mean_active: float
    pi_d: np.ndarray
    pi_n: np.ndarray
    pi_m: np.ndarray
    peak_samples: int


def peel_schedule(pattern) -> tuple[int, frozenset]:
    """Run the receiver's slot-by-slot decoding on a full replica schedule.

    pattern[t][u] is True when active user u transmits in slot t+1; the first
    row must be all True (forced slot).  Returns the CP length and the set of
    decoded user indices at termination.  Independent of the analytical
    state-machine modules by construction; used by the enumeration oracle.
    """
    pattern = [list(row) for row in pattern]
    if not pattern:
        raise ValueError("empty schedule")
    n = len(pattern[0])
    if n == 0:
        return 1, frozenset()
    if not all(pattern[0]):
        raise ValueError("first slot must contain every active user")
    decoded = [False] * n
    for d in range(1, len(pattern) + 1):
        # peel to a stall over slots 1..d
        while True:
            progress = False
            for row in pattern[:d]:
                live = [u for u in range(n) if row[u] and not decoded[u]]
                if len(live) == 1:
                    decoded[live[0]] = True
                    progress = True
            if not progress:
                break
        if all(decoded):
            return d, frozenset(range(n))
    return len(pattern), frozenset(u for u in range(n) if decoded[u])


@njit(cache=True)
def _cp_kernel(rng, n, q, d_max, tx, decoded, deg, stack):
    """Simulate one CP with n contenders; fills decoded[:n], returns length."""
    for u in range(n):
        decoded[u] = False
    if n == 0:
        return 1
    undec = n
    d = 0
    while True:
        d += 1
        live = 0
        if d == 1:
            for u in range(n):
                tx[1, u] = True
            live = n
        else:
            for u in range(n):
                t = rng.random() < q
                tx[d, u] = t
                # replicas of already-decoded users are cancelled on arrival
                if t and not decoded[u]:
                    live += 1
        deg[d] = live
        sp = 0
        if live == 1:
            stack[0] = d
            sp = 1
        while sp > 0:
            sp -= 1
            t = stack[sp]
            if deg[t] != 1:
                continue
            u = -1
            for v in range(n):
                if tx[t, v] and not decoded[v]:
                    u = v
                    break
            decoded[u] = True
            undec -= 1
            for t2 in range(1, d + 1):
                if tx[t2, u]:
                    deg[t2] -= 1
                    if deg[t2] == 1:
                        stack[sp] = t2
                        sp += 1
        if undec == 0 or d == d_max:
            # cancellation must have emptied the forced slot iff all decoded
            assert (deg[1] == 0) == (undec == 0)
            for t in range(1, d + 1):
                for u in range(n):
                    tx[t, u] = False
            return d


def simulate_cp(active, start_slot: int, cfg: SystemConfig, rng=None, pattern=None) -> CpRecord:
    """Run a single contention period for the given active user set.

    Transmissions after the first slot are drawn from rng, or replayed from an
    explicit schedule (rows = slots, columns = the active users in order).
    """
    active = sorted(active)
    n = len(active)
    if pattern is not None:
        d, dec = peel_schedule(pattern)
        decoded_ids = frozenset(active[i] for i in dec)
    else:
        if rng is None:
            raise ValueError("need rng or pattern")
        tx = np.zeros((cfg.max_cp_len + 1, max(n, 1)), dtype=np.bool_)
        decoded = np.zeros(max(n, 1), dtype=np.bool_)
        deg = np.zeros(cfg.max_cp_len + 1, dtype=np.int64)
        stack = np.zeros(cfg.max_cp_len + 2, dtype=np.int64)
        d = _cp_kernel(rng, n, cfg.tx_prob, cfg.max_cp_len, tx, decoded, deg, stack)
        decoded_ids = frozenset(active[i] for i in range(n) if decoded[i])
    return CpRecord(
        length=d,
        active=n,
        decoded=len(decoded_ids),
        decoded_user_ids=decoded_ids,
        truncated=(d == cfg.max_cp_len and len(decoded_ids) < n),
    )


def simulate(cfg: SystemConfig, seed: int, num_cps: int, warmup_cps: int = 0) -> SimMetrics:
    """Simulate num_cps back-to-back contention periods and report metrics.

    Deterministic for a given (cfg, seed): the stream is a PCG64 generator
    seeded through SeedSequence(seed).  The first warmup_cps CPs update
    protocol state but are excluded from every metric; peak-age samples
    additionally require a previously delivered update, which removes the
    undefined-age transient.
    """
    if num_cps < 1:
        raise ValueError("num_cps must be >= 1")
    if warmup_cps >= num_cps:
        raise ValueError("warmup_cps must be < num_cps")
    U, q, gamma, d_max = cfg.num_users, cfg.tx_prob, cfg.gen_prob, cfg.max_cp_len
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed)))

    buffered = np.zeros(U, dtype=np.bool_)
    sigma = np.full(U, -1, dtype=np.int64)      # last delivered time stamp
    tx = np.zeros((d_max + 1, U), dtype=np.bool_)
    decoded = np.zeros(U, dtype=np.bool_)
    deg = np.zeros(d_max + 1, dtype=np.int64)
    stack = np.zeros(d_max + 2, dtype=np.int64)

    measured = num_cps - warmup_cps
    nb = min(NUM_BATCHES, measured)
    hist_d = np.zeros(d_max, dtype=np.int64)
    hist_n = np.zeros(U + 1, dtype=np.int64)
    hist_m = np.zeros(U + 1, dtype=np.int64)
    batch_m = np.zeros(nb)
    batch_d = np.zeros(nb)
    batch_peak_sum = np.zeros(nb)
    batch_peak_cnt = np.zeros(nb, dtype=np.int64)
    sum_n = 0

    now = 0  # global slot clock; CPs are back to back, beacons take no time
    for cp in range(num_cps):
        active_ids = np.flatnonzero(buffered)
        n = active_ids.size
        d = _cp_kernel(rng, n, q, d_max, tx, decoded, deg, stack)
        start, end = now, now + d
        now = end
        dec_ids = active_ids[decoded[:n]] if n else active_ids[:0]
        m = dec_ids.size
        assert 1 <= d <= d_max and m <= n and (m == n or d == d_max)
        assert n >= 2 or d == 1
        if cp >= warmup_cps:
            b = (cp - warmup_cps) * nb // measured
            hist_d[d - 1] += 1
            hist_n[n] += 1
            hist_m[m] += 1
            sum_n += n
            batch_m[b] += m
            batch_d[b] += d
            for u in dec_ids:
                if sigma[u] >= 0:
                    batch_peak_sum[b] += end - sigma[u]
                    batch_peak_cnt[b] += 1
        else:
            # ages still evolve during warmup; only sampling is suppressed
            pass
        sigma[dec_ids] = start
        buffered = rng.random(U) < activity_prob(gamma, d)

    tput = batch_m.sum() / batch_d.sum()
    tput_batches = batch_m / batch_d
    tput_ci = _half_width(tput_batches)
    nsamples = int(batch_peak_cnt.sum())
    if nsamples > 0:
        peak = batch_peak_sum.sum() / nsamples
        good = batch_peak_cnt > 0
        peak_ci = _half_width(batch_peak_sum[good] / batch_peak_cnt[good])
    else:
        peak = float("nan")
        peak_ci = float("nan")
    return SimMetrics(
        config=cfg,
        seed=seed,
        cp_count=measured,
        throughput=float(tput),
        throughput_ci=tput_ci,
        peak_aoi=float(peak),
        peak_aoi_ci=peak_ci,
        mean_active=float(sum_n / measured),
        pi_d=hist_d / hist_d.sum(),
        pi_n=hist_n / hist_n.sum(),
        pi_m=hist_m / hist_m.sum(),
        peak_samples=nsamples,
    )


def _half_width(batch_means: np.ndarray) -> float:
    """95% confidence half-width from batch means."""
    k = len(batch_means)
    if k < 2:
        return float("nan")
    s = batch_means.std(ddof=1)
    return float(stats.t.ppf(0.975, k - 1) * s / np.sqrt(k))


def oracle_enumerate(n: int, q: float, d_max: int, limit: int = 2**22):
    """Exact CP-length and decoded-count laws by enumerating every schedule.

    Walks all 2^(n*(d_max-1)) transmission patterns (the first slot is
    forced), runs the receiver logic on each, and accumulates the pattern
    probabilities q^(#tx) (1-q)^(#silent).  Returns (p_d, p_m).
    """
    if n < 0 or d_max < 1:
        raise ValueError("need n >= 0 and d_max >= 1")
    nbits = n * (d_max - 1)
    if 2**nbits > limit:
        raise ValueError(f"instance too large to enumerate: 2^{nbits} patterns")
    p_d = np.zeros(d_max)
    p_m = np.zeros(n + 1)
    first = [True] * n
    for code in range(2**nbits):
        bits = [(code >> i) & 1 for i in range(nbits)]
        w = q ** sum(bits) * (1 - q) ** (nbits - sum(bits))
        pattern = [first] + [
            [bool(bits[t * n + u]) for u in range(n)] for t in range(d_max - 1)
        ]
        d, dec = peel_schedule(pattern)
        p_d[d - 1] += w
        p_m[len(dec)] += w
    return p_d, p_m
