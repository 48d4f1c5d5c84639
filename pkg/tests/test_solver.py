import mpmath
import pytest
from flint import arb_mat

from chshmod3.bellgame import bm_bound, optimal_value
from chshmod3.solver import SolverConfig, cholesky, read_solution, residuals, solve, write_solution


@pytest.fixture(scope="module")
def level1_solution(level1):
    return solve(level1, SolverConfig(prec=256, gap_tol=1e-30, feas_tol=1e-30))


def test_level1_value(level1_solution):
    res = level1_solution
    assert res.status == "optimal"
    assert res.gap < 1e-30
    # the first level is a relaxation: it must sit above the quantum value;
    # for this game it coincides with 1/3 + 2/(3 sqrt 3)
    assert res.lam > optimal_value().to_mpf(256)
    assert abs(res.lam - bm_bound(3, 256)) < 1e-28


def test_level1_residuals_and_psd(level1, level1_solution):
    res = level1_solution
    blocks = [res.block_matrix(bi) for bi in range(len(res.X))]
    affine, eigs = residuals(level1, blocks, res.lam, prec=256)
    assert affine < 1e-20
    assert min(eigs) > -1e-20


def test_solution_round_trip(tmp_path, level1, level1_solution):
    path = tmp_path / "s.bsol"
    write_solution(path, level1_solution, level1)
    man, back = read_solution(path)
    assert man["problem_hash"] == level1.hash()
    assert back.status == level1_solution.status
    assert abs(back.lam - level1_solution.lam) < 1e-30
    assert len(back.X) == len(back.S) == len(level1_solution.X)
    for which in ("X", "S"):
        for bi in range(len(back.X)):
            A = back.block_matrix(bi, which)
            B = level1_solution.block_matrix(bi, which)
            assert max(abs(x - y) for ra, rb in zip(A, B) for x, y in zip(ra, rb)) < 1e-30


def test_config_validation():
    with pytest.raises(ValueError):
        SolverConfig(prec=64)
    with pytest.raises(ValueError):
        SolverConfig(gap_tol=0)


def test_cholesky_reconstructs():
    M = arb_mat([[4, 2, 0], [2, 5, 1], [0, 1, 3]])
    L = cholesky(M)
    R = L * L.transpose()
    for i in range(3):
        for j in range(3):
            assert abs(float((R[i, j] - M[i, j]).mid())) < 1e-12
    assert cholesky(arb_mat([[1, 2], [2, 1]])) is None
