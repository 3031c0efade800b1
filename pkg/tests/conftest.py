import numpy as np
import pytest

from framaloha import SystemConfig, cached_tables
from framaloha.aoi import avg_peak_aoi
from framaloha.markov import solve_stationary

REF_U = 100
REF_DMAX = 100
REF_LOAD = 0.6


def reference_config(q, d_max=REF_DMAX):
    return SystemConfig(REF_U, q, REF_LOAD / REF_U, d_max)


@pytest.fixture(scope="session")
def reference_points():
    """Analysis results at the reference operating points, computed once."""
    out = {}
    for q in (0.01, 0.05, 0.1, 0.15):
        cfg = reference_config(q)
        tables = cached_tables(cfg)
        out[q] = {
            "cfg": cfg,
            "tables": tables,
            "stat": solve_stationary(cfg, tables),
            "aoi": avg_peak_aoi(cfg, tables),
        }
    return out


def rng(seed=0):
    return np.random.Generator(np.random.PCG64(seed))
