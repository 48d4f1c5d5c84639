import itertools

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from chshmod3.bellgame import StrategyTuple, build_p, optimal_strategy, optimal_value, score
from chshmod3.exactnum import FNum, KNum, mpq
from chshmod3.extract import (IncreaseD, annihilated, canonical_side, closure, embeddings, fingerprint, flatness_check,
                              gns_extract, knum_mod, make_strategy, match_unitary, matrix_group_exact,
                              optimal_state, primes_1_mod_9, rational_reconstruct, strategy_moments,
                              verify_closure_rho, verify_strategy)
from chshmod3.ncalg import evaluate_matrix, kmat, mat_adj, mat_mul
from chshmod3.sdp import assemble_moment, border_vector

P = next(primes_1_mod_9())
EMB = embeddings(P)
small = st.integers(-20, 20)
knums = st.builds(lambda a, b, c, d: KNum(FNum(a, b, mpq(c, 7)), FNum(d, mpq(a, 3), 1)),
                  small, small, small, small)


# --- modular arithmetic -------------------------------------------------------------

def test_embeddings_are_distinct_roots():
    assert P % 9 == 1 and P < 2 ** 62
    assert len(set(EMB)) == 6
    for z0, w0 in EMB:
        assert (z0 ** 3 - 3 * z0 + 1) % P == 0
        assert (w0 * w0 + w0 + 1) % P == 0


@given(knums, knums)
def test_knum_mod_is_a_ring_map(a, b):
    for z0, w0 in EMB[:2]:
        m = lambda x: knum_mod(x, P, z0, w0)
        assert m(a * b) == m(a) * m(b) % P
        assert m(a + b) == (m(a) + m(b)) % P


@given(st.integers(-10 ** 8, 10 ** 8), st.integers(1, 10 ** 8))
def test_rational_reconstruct(a, b):
    q = mpq(a, b)
    r = int(q.numerator) * pow(int(q.denominator), -1, P) % P
    assert rational_reconstruct(r, P) == q


# --- strategies ---------------------------------------------------------------------

def permuted(s: StrategyTuple, perm):
    """Conjugate both sides by a permutation matrix (an exact unitary)."""
    Pm = kmat([[1 if perm[j] == i else 0 for j in range(3)] for i in range(3)])
    conj = lambda m: mat_mul(mat_adj(Pm), mat_mul(m, Pm))
    return {i: conj(m) for i, m in s.xs.items()}, {j: conj(m) for j, m in s.ys.items()}


def test_optimal_state_of_reference_is_proportional():
    ref = optimal_strategy()
    psi, k = optimal_state(ref.xs, ref.ys)
    assert k == 1
    ratio = [a / b for a, b in zip(psi, ref.psi) if not b.is_zero()]
    assert all(r == ratio[0] for r in ratio)


@pytest.mark.parametrize("perm", list(itertools.permutations(range(3)))[1:4])
def test_fingerprint_is_unitary_invariant(perm):
    ref = optimal_strategy()
    xs, ys = permuted(ref, perm)
    assert fingerprint(xs, ys) == fingerprint(ref.xs, ref.ys)


def _canonical(xs, ys):
    num = lambda mats: {k: np.array([[complex(v) for v in r] for r in m]) for k, m in mats.items()}
    return canonical_side(num(xs))[0], canonical_side(num(ys))[0]


def test_canonical_form_is_unitary_invariant():
    ref = optimal_strategy()
    assert _canonical(*permuted(ref, (1, 2, 0))) == _canonical(ref.xs, ref.ys)


def test_match_unitary_on_canonical_target():
    ref = optimal_strategy()
    target = make_strategy(*_canonical(*permuted(ref, (2, 0, 1))))
    V = match_unitary(ref, target)
    assert V is not None and np.allclose(V.conj().T @ V, np.eye(9))


def test_verify_strategy_on_reference():
    rep = verify_strategy(optimal_strategy())
    assert all(ok for ok, _ in rep.values()), rep


def test_verify_strategy_flags_wrong_value():
    ref = optimal_strategy()
    rep = verify_strategy(StrategyTuple(3, ref.xs, ref.ys, [KNum(1)] + [KNum(0)] * 8))
    assert not rep["value"][0]


def test_reference_group_has_order_27():
    elems, center = matrix_group_exact(list(optimal_strategy().xs.values()))
    assert len(elems) == 27 and len(center) == 3


# --- closure ---------------------------------------------------------------------

def _spinning_oracle():
    """Dimension of the module spanned by words applied to the direct sum of all
    optimal irreducible strategies reachable from the reference by relabellings.

    The orbit is generated numerically; only strategies whose top eigenvalue of
    p equals lambda are kept, each with its own top eigenvector.
    """
    w = np.exp(2j * np.pi / 3)
    idx = lambda i: (i - 1) % 3 + 1
    maps = [
        lambda X, Y: (Y, X),
        lambda X, Y: ({i: X[idx(-i)] for i in X}, {j: Y[idx(-j)] for j in Y}),
        lambda X, Y: ({i: X[idx(i + 1)] for i in X}, {j: w ** j * Y[j] for j in Y}),
        lambda X, Y: ({i: X[idx(i + 1)] for i in X}, {j: w ** (-j) * Y[j] for j in Y}),
        lambda X, Y: ({i: X[i].conj() for i in X}, {j: Y[idx(-j)].conj() for j in Y}),
        lambda X, Y: ({i: X[i].conj().T for i in X}, {j: Y[idx(-j)].conj().T for j in Y}),
    ]
    ref = optimal_strategy().to_float()
    lam = float(optimal_value())
    p = build_p(3).observable_form

    def inv(M):
        """Unitary invariants of one side: traces of words of length <= 3."""
        return tuple(np.round([np.trace(np.linalg.multi_dot([np.eye(3)] + [M[k] for k in ws]))
                               for L in (1, 2, 3) for ws in itertools.product((1, 2, 3), repeat=L)], 8))

    def key(X, Y):
        return tuple(np.round(np.concatenate([X[i].ravel() for i in (1, 2, 3)] +
                                             [Y[j].ravel() for j in (1, 2, 3)]), 8))
    seen, frontier, classes = {key(ref.xs, ref.ys)}, [(ref.xs, ref.ys)], {}
    while frontier:
        nxt = []
        for X, Y in frontier:
            ev, V = np.linalg.eigh(evaluate_matrix(p, X, Y, check=False))
            if abs(ev[-1] - lam) < 1e-9:
                classes.setdefault((inv(X), inv(Y)), (X, Y, V[:, -1]))
            for f in maps:
                X2, Y2 = f(X, Y)
                k = key(X2, Y2)
                if k not in seen:
                    seen.add(k)
                    nxt.append((X2, Y2))
        frontier = nxt
    reps = list(classes.values())
    n = 9 * len(reps)
    ops = []
    for side in (0, 1):
        for k in (1, 2, 3):
            M = np.zeros((n, n), complex)
            for b, r in enumerate(reps):
                op = np.kron(r[0][k], np.eye(3)) if side == 0 else np.kron(np.eye(3), r[1][k])
                M[9 * b:9 * b + 9, 9 * b:9 * b + 9] = op
            ops += [M, M.conj().T]
    psi = np.concatenate([r[2] for r in reps])
    span = psi[:, None] / np.linalg.norm(psi)
    while True:
        cand = np.hstack([span] + [M @ span for M in ops])
        u, s, _ = np.linalg.svd(cand, full_matrices=False)
        r = int(np.sum(s > 1e-9 * s[0]))
        if r == span.shape[1]:
            return r, len(reps)
        span = u[:, :r]


def test_closure_oracle_dimension():
    dim, n_classes = _spinning_oracle()
    assert n_classes == 4
    assert dim == 36


def test_closure_matches_oracle(pipeline):
    cm = pipeline.cm
    assert cm.stabilized and cm.dim == _spinning_oracle()[0]
    assert all(verify_closure_rho(cm.rho, cm.basis, pipeline.ann).values())


def test_small_cap_asks_for_more(pipeline):
    with pytest.raises(IncreaseD):
        closure(pipeline.ann, 2)


def test_reference_is_annihilated_exactly(pipeline):
    ref = optimal_strategy()
    assert annihilated(pipeline.ann, ref.xs, ref.ys, ref.psi) == []


def test_split_strategies(pipeline):
    ss = pipeline.strategies
    assert [s.label for s in ss] == ["s1", "s2", "s3", "s4"]
    assert len({s.fingerprint for s in ss}) == 4
    for s in ss:
        assert score(s.as_tuple())[0] == optimal_value()


# --- flatness -----------------------------------------------------------------------

@pytest.fixture(scope="module")
def reference_moments():
    ms = assemble_moment(3, 2)
    return ms, strategy_moments(optimal_strategy(), ms.words)


def test_reference_moments_are_flat(reference_moments):
    ms, M = reference_moments
    Mf = np.array(M.tolist(), dtype=complex)
    rep = flatness_check(Mf, ms.words, border_vector(3, 1).words)
    assert rep.flat and rep.rank_n == rep.rank_low == 3


def test_gns_extraction_recovers_value(reference_moments):
    ms, M = reference_moments
    val, ops, rank = gns_extract(M, ms.words, border_vector(3, 1).words)
    assert abs(val - optimal_value().to_mpf(256)) < mpmath.mpf(10) ** -20
