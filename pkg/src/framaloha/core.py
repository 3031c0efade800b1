"""Shared domain types, configuration validation and probability-vector utilities."""

from dataclasses import dataclass, replace

import numpy as np

# Unit-sum tolerance for probability vectors / stochastic matrix rows.
PROB_TOL = 1e-12


class ConfigError(ValueError):
    """Raised when a protocol/traffic parameter is out of range."""


@dataclass(frozen=True)
class SystemConfig:
    """Protocol and traffic parameters of one frameless-ALOHA deployment.

    num_users   -- terminal population size (>= 1)
    tx_prob     -- per-slot access probability after the forced first slot, in (0, 1]
    gen_prob    -- per-slot per-user packet generation probability, in [0, 1]
    max_cp_len  -- maximum contention-period duration in slots (>= 1)
    """

    num_users: int
    tx_prob: float
    gen_prob: float
    max_cp_len: int

    def __post_init__(self):
        if not isinstance(self.num_users, (int, np.integer)) or self.num_users < 1:
            raise ConfigError(f"num_users must be a positive integer, got {self.num_users!r}")
        if not isinstance(self.max_cp_len, (int, np.integer)) or self.max_cp_len < 1:
            raise ConfigError(f"max_cp_len must be a positive integer, got {self.max_cp_len!r}")
        # tx_prob = 0 would stall every contention with >= 2 users and break
        # irreducibility of the stationary analysis, so it is rejected outright.
        if not (0.0 < self.tx_prob <= 1.0):
            raise ConfigError(f"tx_prob must be in (0, 1], got {self.tx_prob!r}")
        if not (0.0 <= self.gen_prob <= 1.0):
            raise ConfigError(f"gen_prob must be in [0, 1], got {self.gen_prob!r}")

    @property
    def load(self) -> float:
        """Mean packets generated per slot across the population."""
        return self.gen_prob * self.num_users

    def with_tx_prob(self, q: float) -> "SystemConfig":
        return replace(self, tx_prob=float(q))

    def with_max_cp_len(self, d_max: int) -> "SystemConfig":
        return replace(self, max_cp_len=int(d_max))


def validate_config(raw: dict) -> SystemConfig:
    """Build a SystemConfig from a parameter mapping.

    The generation probability may be given directly (``gen_prob``) or as the
    aggregate load ``load`` = gen_prob * num_users, in which case gen_prob is
    recovered as load / num_users exactly.
    """
    if isinstance(raw, SystemConfig):
        return raw
    known = {"num_users", "tx_prob", "gen_prob", "load", "max_cp_len"}
    unknown = set(raw) - known
    if unknown:
        raise ConfigError(f"unknown parameter(s): {sorted(unknown)}")
    missing = {"num_users", "tx_prob", "max_cp_len"} - set(raw)
    if missing:
        raise ConfigError(f"missing parameter(s): {sorted(missing)}")
    if "gen_prob" in raw and "load" in raw:
        raise ConfigError("give gen_prob or load, not both")
    num_users = raw["num_users"]
    if not isinstance(num_users, (int, np.integer)) or isinstance(num_users, bool) or num_users < 1:
        raise ConfigError(f"num_users must be a positive integer, got {num_users!r}")
    if "gen_prob" in raw:
        gen_prob = float(raw["gen_prob"])
    elif "load" in raw:
        gen_prob = float(raw["load"]) / num_users
    else:
        raise ConfigError("missing parameter(s): ['gen_prob' (or 'load')]")
    return SystemConfig(
        num_users=int(num_users),
        tx_prob=float(raw["tx_prob"]),
        gen_prob=gen_prob,
        max_cp_len=int(raw["max_cp_len"]),
    )


def normalize(v) -> np.ndarray:
    """Scale a nonnegative vector to unit sum."""
    v = np.asarray(v, dtype=float)
    if v.ndim != 1:
        raise ValueError("expected a 1-D vector")
    if np.any(v < 0):
        raise ValueError("entries must be nonnegative")
    total = v.sum()
    if total <= 0.0:
        raise ValueError("cannot normalize an all-zero vector")
    return v / total


def check_prob_vector(v, tol: float = PROB_TOL, what: str = "probability vector") -> np.ndarray:
    """Validate that v is a PMF: entries in [0, 1], unit sum within tol."""
    v = np.asarray(v, dtype=float)
    if np.any(v < -tol) or np.any(v > 1 + tol):
        raise ValueError(f"{what}: entries outside [0, 1]")
    err = abs(v.sum() - 1.0)
    if err > tol:
        raise ValueError(f"{what}: sums to 1 within {tol:g} violated (off by {err:.3e})")
    return v


def check_stochastic_matrix(P, tol: float = PROB_TOL, what: str = "stochastic matrix") -> np.ndarray:
    """Validate that P is square and row-stochastic within tol."""
    P = np.asarray(P, dtype=float)
    if P.ndim != 2 or P.shape[0] != P.shape[1]:
        raise ValueError(f"{what}: expected a square matrix, got shape {P.shape}")
    if np.any(P < -tol):
        raise ValueError(f"{what}: negative entries")
    err = np.abs(P.sum(axis=1) - 1.0).max()
    if err > tol:
        raise ValueError(f"{what}: row sums off by {err:.3e} (> {tol:g})")
    return P
