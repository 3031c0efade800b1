import math
from fractions import Fraction

import numpy as np
import pytest

from framaloha import SystemConfig
from framaloha.sic import (
    DecoderState,
    add_slot,
    build_conditional_tables,
    build_tables_reference,
    check_state_distribution,
    decode_until_stall,
    init_state,
    release_prob,
    resolve_one_user,
)


def release_prob_rational(s, n, q):
    """Independent re-evaluation of the release probability over exact rationals."""
    q = Fraction(q).limit_denominator(10**6)
    lam = [math.comb(n, k) * q**k * (1 - q) ** (n - k) for k in range(n + 1)]
    num = Fraction(0)
    for k in range(2, min(n - s + 2, n) + 1):
        num += (lam[k] * k * (k - 1) * Fraction(1, n) * Fraction(s - 1, n - 1)
                * Fraction(math.comb(n - s, k - 2), math.comb(n - 2, k - 2)))
    if num == 0:
        return 0.0
    den = Fraction(1)
    for k in range(1, min(n - s + 1, n) + 1):
        den -= lam[k] * s * Fraction(math.comb(n - s, k - 1), math.comb(n, k))
    for k in range(0, min(n - s, n) + 1):
        den -= lam[k] * Fraction(math.comb(n - s, k), math.comb(n, k))
    return float(num / den)


def test_init_state():
    assert init_state(0, 10) == DecoderState(0, 0, 0)
    assert init_state(1, 10) == DecoderState(1, 0, 1)
    assert init_state(5, 10) == DecoderState(5, 0, 0)
    with pytest.raises(ValueError):
        init_state(11, 10)


def test_release_prob_two_of_two():
    # hand evaluation: numerator 2*Lam2/n = 0.25, denominator
    # 1 - Lam1*2*(1/2) - Lam0 = 1 - 0.5 - 0.25 = 0.25
    assert release_prob(2, 2, 0.5) == pytest.approx(1.0, abs=1e-15)


def test_release_prob_single_user():
    # with one user no slot of degree >= 2 exists: empty numerator
    assert release_prob(1, 1, 0.7) == 0.0


def test_release_prob_matches_rational():
    for (s, n, q) in [(3, 5, 0.2), (2, 7, 0.35), (4, 4, 0.6), (5, 9, 0.11), (3, 3, 0.8)]:
        h = release_prob(s, n, q)
        assert 0.0 <= h <= 1.0
        assert h == pytest.approx(release_prob_rational(s, n, q), abs=1e-12)


def test_release_prob_certain_when_two_left():
    for n in (2, 5, 30):
        for q in (0.1, 0.5, 0.9):
            assert release_prob(2, n, q) == 1.0


def test_resolve_one_user_last_user():
    assert resolve_one_user((1, 0, 1), 1, 0.4) == {(0, 0, 0): pytest.approx(1.0)}


def test_resolve_one_user_reopens_first_slot():
    # resolving one of two users leaves the forced slot singleton
    assert resolve_one_user((2, 0, 1), 2, 0.5) == {(1, 0, 1): pytest.approx(1.0)}


def test_resolve_one_user_collided_slot_split():
    # direct expansion: the decoding singleton is consumed (i=1), the lone
    # collided slot opens with probability h
    h = release_prob(3, 3, 0.35)
    out = resolve_one_user((3, 1, 1), 3, 0.35)
    assert set(out) == {(2, 1, 0), (2, 0, 1)}
    assert out[(2, 1, 0)] == pytest.approx(1 - h, abs=1e-14)
    assert out[(2, 0, 1)] == pytest.approx(h, abs=1e-14)
    assert sum(out.values()) == pytest.approx(1.0, abs=1e-14)


def test_resolve_one_user_decrements_and_conserves():
    rng = np.random.default_rng(3)
    for _ in range(40):
        n = int(rng.integers(2, 9))
        s = int(rng.integers(1, n + 1))
        c = int(rng.integers(0, 5))
        r = int(rng.integers(1, 5))
        q = float(rng.uniform(0.05, 0.95))
        out = resolve_one_user((s, c, r), n, q)
        assert sum(out.values()) == pytest.approx(1.0, abs=1e-12)
        for (s2, c2, r2) in out:
            assert s2 == s - 1 or (s2 == 0 and s == 1)
            assert c2 <= c and c2 >= 0 and r2 >= 0


def test_resolve_one_user_rejects():
    with pytest.raises(ValueError):
        resolve_one_user((0, 1, 1), 3, 0.5)
    with pytest.raises(ValueError):
        resolve_one_user((2, 1, 0), 3, 0.5)


def test_decode_until_stall_no_singletons():
    assert decode_until_stall({(4, 2, 0): 1.0}, 6, 0.3) == {(4, 2, 0): 1.0}


def test_decode_until_stall_full_cascade():
    out = decode_until_stall({(2, 0, 1): 1.0}, 2, 0.5)
    assert out == {(0, 0, 0): pytest.approx(1.0)}


def test_decode_until_stall_mixture():
    out = decode_until_stall({(1, 0, 1): 0.5, (3, 1, 0): 0.5}, 3, 0.4)
    assert out[(0, 0, 0)] == pytest.approx(0.5)
    assert out[(3, 1, 0)] == pytest.approx(0.5)


def test_decode_until_stall_linear():
    rng = np.random.default_rng(11)
    n, q = 5, 0.45
    for _ in range(10):
        w = float(rng.uniform(0.1, 0.9))
        s1 = (int(rng.integers(1, 6)), int(rng.integers(0, 3)), int(rng.integers(0, 3)))
        s2 = (int(rng.integers(1, 6)), int(rng.integers(0, 3)), int(rng.integers(0, 3)))
        mixed = decode_until_stall({s1: w, s2: 1 - w} if s1 != s2 else {s1: 1.0}, n, q)
        a = decode_until_stall({s1: 1.0}, n, q)
        b = decode_until_stall({s2: 1.0}, n, q)
        expect = {}
        for dist, weight in ((a, w), (b, 1 - w)) if s1 != s2 else ((a, 1.0),):
            for st, m in dist.items():
                expect[st] = expect.get(st, 0.0) + weight * m
        assert set(mixed) == set(expect)
        for st in expect:
            assert mixed[st] == pytest.approx(expect[st], abs=1e-12)


def test_add_slot_one_user():
    assert add_slot((1, 0, 0), 0.5) == {(1, 0, 0): 0.5, (1, 0, 1): pytest.approx(0.5)}


def test_add_slot_two_users():
    out = add_slot((2, 0, 0), 0.5)
    assert out[(2, 0, 0)] == pytest.approx(0.25)
    assert out[(2, 0, 1)] == pytest.approx(0.5)
    assert out[(2, 1, 0)] == pytest.approx(0.25)


def test_add_slot_certain_collision():
    assert add_slot((3, 2, 0), 1.0) == {(3, 3, 0): pytest.approx(1.0)}


def test_add_slot_rejects_pre_decoding():
    with pytest.raises(ValueError):
        add_slot((2, 0, 1), 0.5)


def test_tables_trivial_columns():
    cfg = SystemConfig(3, 0.5, 0.1, 4)
    t = build_conditional_tables(cfg).validate()
    assert t.cp_len[0, 0] == 1.0
    assert t.decoded[0, 0] == 1.0
    assert t.cp_len[0, 1] == 1.0
    assert t.decoded[1, 1] == 1.0


def test_tables_all_collisions():
    cfg = SystemConfig(2, 1.0, 0.1, 3)
    t = build_conditional_tables(cfg).validate()
    assert t.cp_len[2, 2] == pytest.approx(1.0)
    assert t.decoded[0, 2] == pytest.approx(1.0)


def test_tables_two_user_truncated():
    # four equally likely second-slot patterns: both silent / both send ->
    # nothing decoded; exactly one sends -> everything unravels
    cfg = SystemConfig(2, 0.5, 0.1, 2)
    t = build_conditional_tables(cfg).validate()
    assert t.cp_len[1, 2] == pytest.approx(1.0)
    assert t.decoded[2, 2] == pytest.approx(0.5)
    assert t.decoded[0, 2] == pytest.approx(0.5)
    assert t.beta[2, 2] == pytest.approx(0.5)
    assert t.beta[0, 2] == pytest.approx(0.5)


def test_tables_column_sums_and_mean_bound():
    cfg = SystemConfig(6, 0.35, 0.05, 7)
    t = build_conditional_tables(cfg).validate()
    for n in range(7):
        assert t.cp_len[:, n].sum() == pytest.approx(1.0, abs=1e-10)
        assert t.decoded[:, n].sum() == pytest.approx(1.0, abs=1e-10)
        assert (np.arange(7) * t.decoded[:, n]).sum() <= n + 1e-12
        if n >= 2:
            assert t.cp_len[0, n] == 0.0


def test_state_distribution_check():
    check_state_distribution({(1, 0, 1): 0.5, (0, 0, 0): 0.5})
    with pytest.raises(ValueError):
        check_state_distribution({(1, 0, 1): 0.7})
    with pytest.raises(ValueError):
        check_state_distribution({(-1, 0, 0): 1.0})


def test_reference_method_flag():
    cfg = SystemConfig(4, 0.4, 0.1, 5)
    a = build_conditional_tables(cfg, method="reference")
    b = build_conditional_tables(cfg, method="fast")
    assert np.abs(a.cp_len - b.cp_len).max() < 1e-12
    with pytest.raises(ValueError):
        build_conditional_tables(cfg, method="bogus")


def test_tables_csv_dump(tmp_path):
    cfg = SystemConfig(3, 0.5, 0.1, 3)
    t = build_conditional_tables(cfg)
    t.write_csv(tmp_path / "cp.csv", tmp_path / "dec.csv")
    cp_lines = (tmp_path / "cp.csv").read_text().splitlines()
    assert cp_lines[0] == "n,d,p_d_given_n"
    assert len(cp_lines) == 1 + 4 * 3
    dec_lines = (tmp_path / "dec.csv").read_text().splitlines()
    assert dec_lines[0] == "n,m,p_m_given_n,beta"
    # rows parse back to the exact float values
    n, d, v = cp_lines[1].split(",")
    assert float(v) == t.cp_len[int(d) - 1, int(n)]
