import itertools
import time

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from chshmod3.bellgame import (StrategyTuple, bm_bound, build_p, classical_value, identity_strategy,
                               optimal_strategy, optimal_value, read_strategy, score, write_strategy)
from chshmod3.exactnum import Cyc3, FNum, KNum, mpq


def classical_oracle(d):
    """All pairs of deterministic strategies, win iff a + b = k l (mod d)."""
    qs = range(1, d + 1)
    best = 0
    for fa in itertools.product(range(d), repeat=d):
        for fb in itertools.product(range(d), repeat=d):
            wins = sum((fa[k - 1] + fb[l - 1]) % d == (k * l) % d for k in qs for l in qs)
            best = max(best, wins)
    return mpq(best, d * d)


def game_value(X, Y, psi):
    """Winning probability from spectral projectors (eigenvalue w^a <-> answer -a).

    X[k] and Y[l] are given as (Q, labels): U = Q diag(w^labels) Q^*.
    """
    def projectors(spec):
        Q, labels = spec
        return {(-a) % 3: sum((np.outer(Q[:, i], Q[:, i].conj()) for i in range(3) if labels[i] == a),
                              np.zeros((3, 3), complex)) for a in range(3)}
    psi = psi / np.linalg.norm(psi)
    tot = 0.0
    for k, l in itertools.product((1, 2, 3), repeat=2):
        P, Q = projectors(X[k]), projectors(Y[l])
        for a, b in itertools.product(range(3), repeat=2):
            if (a + b) % 3 == (k * l) % 3:
                tot += np.vdot(psi, np.kron(P[a], Q[b]) @ psi).real / 9
    return tot


def _spectral(rng):
    q, _ = np.linalg.qr(rng.normal(size=(3, 3)) + 1j * rng.normal(size=(3, 3)))
    return q, rng.integers(0, 3, 3)


def _unitary(spec):
    q, labels = spec
    return q @ np.diag(np.exp(2j * np.pi * labels / 3)) @ q.conj().T


@pytest.mark.parametrize("d,expected", [(2, mpq(3, 4)), (3, None)])
def test_classical_value(d, expected):
    t = time.time()
    v = classical_value(d)
    assert time.time() - t < 1
    assert v == (expected if expected is not None else classical_oracle(3))


def test_classical_d3_from_scalar_strategies():
    """Deterministic strategies as 1x1 'unitaries' give the same maximum through p."""
    best = 0
    w = [KNum.w(k) for k in range(3)]
    for fa in itertools.product(range(3), repeat=3):
        for fb in itertools.product(range(3), repeat=3):
            s = StrategyTuple(3, {k: [[w[fa[k - 1]]]] for k in (1, 2, 3)},
                              {l: [[w[fb[l - 1]]]] for l in (1, 2, 3)}, [KNum(1)])
            v, _ = score(s)
            best = max(best, v.c0)
    assert best == classical_value(3)


def test_optimal_tuple_scores_exactly():
    val, deficit = score(optimal_strategy(), certified_value=optimal_value())
    assert val == FNum(mpq(1, 9), mpq(2, 9), mpq(1, 9))
    assert deficit == 0
    with mpmath.workprec(256):
        closed = mpmath.mpf(1) / 3 + 2 * mpmath.cos(mpmath.pi / 18) / (3 * mpmath.sqrt(3))
        assert abs(val.to_mpf(256) - closed) < mpmath.mpf(10) ** -60


def test_bm_bound_formula():
    assert abs(bm_bound(2) - (0.5 + 1 / (2 * 2 ** 0.5))) < 1e-15
    assert abs(bm_bound(3) - 0.7182335128) < 1e-10


def test_p_is_selfadjoint_with_identity_coefficient():
    p = build_p(3)
    assert p.observable_form.is_selfadjoint()
    assert p.identity_coefficient == mpq(1, 3)


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 2 ** 32))
def test_p_matches_game_probability(seed):
    rng = np.random.default_rng(seed)
    Xs = {k: _spectral(rng) for k in (1, 2, 3)}
    Ys = {k: _spectral(rng) for k in (1, 2, 3)}
    psi = rng.normal(size=9) + 1j * rng.normal(size=9)
    s = StrategyTuple(3, {k: _unitary(v) for k, v in Xs.items()},
                      {k: _unitary(v) for k, v in Ys.items()}, psi, exact=False)
    v, _ = score(s)
    assert abs(v - game_value(Xs, Ys, psi)) < 1e-10


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 2 ** 32))
def test_random_strategies_below_optimum(seed):
    rng = np.random.default_rng(seed)

    def u3():
        q, _ = np.linalg.qr(rng.normal(size=(3, 3)) + 1j * rng.normal(size=(3, 3)))
        return q @ np.diag(np.exp(2j * np.pi * rng.integers(0, 3, 3) / 3)) @ q.conj().T
    s = StrategyTuple(3, {k: u3() for k in (1, 2, 3)}, {k: u3() for k in (1, 2, 3)},
                      rng.normal(size=9) + 0j, exact=False)
    assert score(s)[0] <= float(optimal_value()) + 1e-12


def test_strategy_round_trip(tmp_path):
    s = optimal_strategy()
    write_strategy(s, tmp_path / "o.bstrat")
    t = read_strategy(tmp_path / "o.bstrat")
    assert t.xs == s.xs and t.ys == s.ys and t.psi == s.psi
    assert t.psi_norm2 == s.psi_norm2
    assert score(t)[0] == optimal_value()


def test_identity_strategy_rejects_nothing_and_scores_rationally():
    v, _ = score(identity_strategy())
    assert v.is_rational()


def test_check_flags_non_unitary():
    s = optimal_strategy()
    s.xs[1] = [[KNum(2) if i == j else KNum(0) for j in range(3)] for i in range(3)]
    with pytest.raises(ValueError):
        s.check()
