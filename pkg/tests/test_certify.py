import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import mutate

from chshmod3.bellgame import optimal_strategy, optimal_value
from chshmod3.certify import (RoundingError, ldl_pivoted, read_certificate, sos_residual,
                              verify_certificate, write_certificate, z_prime)
from chshmod3.exactnum import FNum, KNum, mpq

small = st.integers(-4, 4)


def test_certificate_passes(pipeline):
    assert pipeline.report.passed, pipeline.report.summary()
    assert pipeline.cert.lam == optimal_value()


def test_direct_expansion_agrees(pipeline):
    rep = verify_certificate(pipeline.cert, pipeline.prob, direct=True)
    assert rep.passed, rep.summary()


def test_file_round_trip(tmp_path, pipeline):
    path = tmp_path / "c.bcert"
    write_certificate(pipeline.cert, path)
    back = read_certificate(path)
    assert back.lam == pipeline.cert.lam
    assert back.blocks == pipeline.cert.blocks and back.T == pipeline.cert.T
    assert back.Zhat == pipeline.cert.Zhat and back.problem_hash == pipeline.prob.hash()


def test_a_few_mutations_fail(pipeline):
    rng = np.random.default_rng(2)
    for _ in range(3):
        bad, where = mutate(pipeline.cert, rng)
        assert not verify_certificate(bad, pipeline.prob).passed, where


def test_wrong_problem_is_rejected(pipeline, level1):
    assert not verify_certificate(pipeline.cert, level1).passed


def test_reference_strategy_is_annihilated(pipeline):
    assert sos_residual(pipeline.ann, optimal_strategy()) < 1e-12


def test_malformed_file(tmp_path):
    p = tmp_path / "bad.bcert"
    p.write_text("BCERT v1; d=3; n=2\nnot lambda\n")
    with pytest.raises(ValueError, match="line 2"):
        read_certificate(p)


@settings(max_examples=25, deadline=None)
@given(st.lists(st.lists(st.tuples(small, small, small), min_size=3, max_size=3), min_size=2, max_size=4))
def test_ldl_reconstructs_gram_matrices(rows):
    """Z = V V^T is PSD of rank <= 3; the pivoted LDL^T must reproduce it exactly."""
    V = [[FNum(*t) for t in r] for r in rows]
    n = len(V)
    Z = [[sum((V[i][k] * V[j][k] for k in range(3)), FNum(0)) for j in range(n)] for i in range(n)]
    T, D, rank = ldl_pivoted(Z)
    assert rank <= 3
    for i in range(n):
        for j in range(n):
            assert sum((T[i][c] * D[c] * T[j][c] for c in range(rank)), FNum(0)) == Z[i][j]


def test_ldl_rejects_indefinite():
    with pytest.raises(RoundingError):
        ldl_pivoted([[FNum(1), FNum(2)], [FNum(2), FNum(1)]])


@settings(max_examples=20, deadline=None)
@given(st.lists(st.tuples(small, small, small, small), min_size=4, max_size=4))
def test_z_prime_psd_iff_h_psd(entries):
    """z_prime of a 2x2 Hermitian H over K has the same definiteness as H."""
    a, b, c, d = entries
    h01 = KNum(FNum(c[0], c[1]), FNum(d[0], d[1]))
    H = [[KNum(FNum(abs(a[0]) + 1, a[1])), h01], [h01.conj(), KNum(FNum(abs(b[0]) + 1, b[1]))]]
    Hc = np.array([[complex(x) for x in r] for r in H])
    Zc = np.array([[float(x) for x in r] for r in z_prime(H)])
    assert np.allclose(Zc, Zc.T)
    assert (np.linalg.eigvalsh(Hc).min() > 1e-9) == (np.linalg.eigvalsh(Zc).min() > 1e-9)
