import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from chshmod3.ncalg import (A, B, Cyc3, NCPoly, Word, X, Y, evaluate, evaluate_matrix, format_word,
                            mat_to_complex, normal_form, parse_word)

letters = st.tuples(st.sampled_from([A, B]), st.integers(1, 3), st.integers(1, 2))
raw_words = st.lists(letters, max_size=7)
words = raw_words.map(normal_form)
coeffs = st.builds(Cyc3, st.integers(-3, 3), st.integers(-3, 3))
polys = st.lists(st.tuples(words, coeffs), max_size=4).map(lambda ts: NCPoly(dict_sum(ts)))


def dict_sum(ts):
    out = {}
    for w, c in ts:
        out[w] = out.get(w, Cyc3(0)) + c
    return out


def random_unitary_order3(rng, n=3):
    q, _ = np.linalg.qr(rng.normal(size=(n, n)) + 1j * rng.normal(size=(n, n)))
    phases = np.exp(2j * np.pi * rng.integers(0, 3, size=n) / 3)
    return q @ np.diag(phases) @ q.conj().T


def word_matrix(w: Word, xs, ys):
    """Naive oracle: multiply letter by letter as operators on C^n (x) C^m."""
    nA, nB = len(xs[1]), len(ys[1])
    M = np.eye(nA * nB, dtype=complex)
    for side, i, e in w.letters():
        op = np.kron(np.linalg.matrix_power(xs[i], e), np.eye(nB)) if side == A else \
            np.kron(np.eye(nA), np.linalg.matrix_power(ys[i], e))
        M = M @ op
    return M


def test_relations():
    assert X(1) * X(1) * X(1) == Word.identity()
    assert X(2) * Y(1) == Y(1) * X(2)
    assert X(1) * X(1, 2) == Word.identity()
    assert X(1) * X(2) != X(2) * X(1)


@given(words, words, words)
def test_word_monoid(u, v, w):
    assert (u * v) * w == u * (v * w)
    assert u * u.adjoint() == Word.identity()
    assert (u * v).adjoint() == v.adjoint() * u.adjoint()


@given(words)
def test_format_parse_round_trip(w):
    assert parse_word(format_word(w)) == w


@pytest.mark.parametrize("bad", ["x4", "x1^3", "z1", "x0"])
def test_parse_rejects(bad):
    with pytest.raises(ValueError):
        parse_word(bad)


@given(polys, polys)
def test_involution_is_antimultiplicative(p, q):
    assert (p * q).adjoint() == q.adjoint() * p.adjoint()
    assert p.adjoint().adjoint() == p


@settings(max_examples=30, deadline=None)
@given(raw_words, st.integers(0, 2 ** 32))
def test_normal_form_matches_matrix_product(raw, seed):
    rng = np.random.default_rng(seed)
    xs = {i: random_unitary_order3(rng) for i in (1, 2, 3)}
    ys = {i: random_unitary_order3(rng) for i in (1, 2, 3)}
    nA = 3
    M = np.eye(9, dtype=complex)
    for side, i, e in raw:
        op = np.kron(np.linalg.matrix_power(xs[i], e), np.eye(3)) if side == A else \
            np.kron(np.eye(nA), np.linalg.matrix_power(ys[i], e))
        M = M @ op
    assert np.allclose(word_matrix(normal_form(raw), xs, ys), M, atol=1e-9)


@settings(max_examples=20, deadline=None)
@given(polys, st.integers(0, 2 ** 32))
def test_evaluate_matches_oracle(p, seed):
    rng = np.random.default_rng(seed)
    xs = {i: random_unitary_order3(rng) for i in (1, 2, 3)}
    ys = {i: random_unitary_order3(rng) for i in (1, 2, 3)}
    psi = rng.normal(size=9) + 1j * rng.normal(size=9)
    ref = sum((complex(c) * word_matrix(w, xs, ys) for w, c in p.terms.items()),
              np.zeros((9, 9), complex))
    assert np.allclose(evaluate_matrix(p, xs, ys), ref, atol=1e-9)
    assert abs(evaluate(p, xs, ys, psi) - np.vdot(psi, ref @ psi)) < 1e-8


def test_exact_evaluation_of_clock_and_shift():
    from chshmod3.bellgame import clock_matrix, shift_matrix
    Xs, Zc = shift_matrix(), clock_matrix()
    p = NCPoly({X(1): 1, Y(1): Cyc3(0, 1)})
    M = evaluate_matrix(p, {1: Xs}, {1: Zc})
    ref = np.kron(mat_to_complex(Xs), np.eye(3)) + complex(Cyc3(0, 1)) * np.kron(np.eye(3), mat_to_complex(Zc))
    assert np.allclose(mat_to_complex(M), ref)


def test_evaluate_checks_unitarity():
    bad = {1: np.diag([1.0, 2.0, 1.0])}
    with pytest.raises(ValueError):
        evaluate(NCPoly({X(1): 1}), bad, {1: np.eye(3)}, np.ones(9))
