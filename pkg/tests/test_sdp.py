import numpy as np
import pytest

from chshmod3.bellgame import build_p, optimal_strategy, optimal_value
from chshmod3.exactnum import FNum, KNum, mpq
from chshmod3.ncalg import NCPoly, Word, evaluate
from chshmod3.sdp import (assemble_moment, border_vector, export_problem, export_sdpa,
                          generator_alphabet, import_problem, reconstruct_poly, slater_point)


def products_oracle(level):
    alpha = generator_alphabet(3)
    seen = {Word.identity()}
    frontier = [Word.identity()]
    for _ in range(level):
        frontier = [w * g for w in frontier for g in alpha]
        seen.update(frontier)
    return seen


@pytest.mark.parametrize("level", [1, 2])
def test_border_vector_is_all_products(level):
    bv = border_vector(3, level)
    assert set(bv.words) == products_oracle(level)
    assert len(set(bv.words)) == len(bv)


def test_block_sizes_cover_border(level1, level2):
    for prob, n in ((level1, 1), (level2, 2)):
        dims = {pi.name: pi.dim for pi in prob.basis.irreps}
        total = sum(size // 2 * dims[name] for name, size in zip(prob.block_names, prob.block_sizes))
        assert total == len(border_vector(3, n))


def test_slater_point_is_feasible_and_interior(level1):
    sl = slater_point(level1)
    res = level1.residuals_exact(sl["lambda"], sl["blocks"])
    assert all(r == 0 for r in res)
    for Z in sl["blocks"]:
        M = np.array([[float(x) for x in row] for row in Z])
        assert np.linalg.eigvalsh(M).min() > 0


def test_rows_agree_with_direct_expansion(level1):
    """Row constraints and the C^pi expansion describe the same polynomial."""
    sl = slater_point(level1)
    sos = reconstruct_poly(level1, sl["blocks"])
    target = NCPoly.const(KNum(FNum(sl["lambda"])), 3) - build_p(3).observable_form
    assert sos == target


def test_problem_round_trip(tmp_path, level2):
    path = tmp_path / "p.bsdp"
    export_problem(level2, path)
    back = import_problem(path)
    assert back.same_problem(level2)
    assert back.hash() == level2.hash()


def test_import_reports_line_numbers(tmp_path, level1):
    path = tmp_path / "p.bsdp"
    export_problem(level1, path)
    lines = path.read_text().splitlines()
    k = next(i for i, ln in enumerate(lines) if ln.startswith("re ("))
    lines[k] = lines[k][:len(lines[k]) // 2] + " @@"
    path.write_text("\n".join(lines) + "\n")
    with pytest.raises(ValueError, match=f"line {k + 1}"):
        import_problem(path)
    path.write_text("\n".join(lines[:k]) + "\n")
    with pytest.raises(ValueError, match="line"):
        import_problem(path)


def read_sdpa(text):
    """Minimal independent reader for SDPA sparse files."""
    lines = [ln for ln in text.splitlines() if ln.strip() and ln[0] not in "*\""]
    m, nb = int(lines[0]), int(lines[1])
    sizes = [int(x) for x in lines[2].split()]
    b = [float(x) for x in lines[3].split()]
    entries = [ln.split() for ln in lines[4:]]
    return m, nb, sizes, b, entries


def test_sdpa_export_structure(level1):
    m, nb, sizes, b, entries = read_sdpa(export_sdpa(level1, digits=30))
    assert nb == len(level1.block_sizes) and sizes == level1.block_sizes
    assert len(b) == m == len([r for r in level1.nonzero_rows() if not r.lam])
    for k, blk, i, j, _ in entries:
        assert 0 <= int(k) <= m and 1 <= int(blk) <= nb
        assert 1 <= int(i) <= int(j) <= sizes[int(blk) - 1]


def test_moment_objective_of_optimal_strategy():
    ms = assemble_moment(3, 2)
    s = optimal_strategy()
    xs = {k: np.array([[complex(v) for v in r] for r in m]) for k, m in s.xs.items()}
    ys = {k: np.array([[complex(v) for v in r] for r in m]) for k, m in s.ys.items()}
    psi = np.array([complex(v) for v in s.psi])
    psi = psi / np.linalg.norm(psi)
    cache = {}

    def moment(w):
        if w not in cache:
            cache[w] = evaluate(NCPoly({w: 1}), xs, ys, psi, check=False)
        return cache[w]
    N = ms.size
    M = np.array([[moment(ms.class_of(a, b)) for b in range(N)] for a in range(N)])
    assert np.allclose(M, M.conj().T)
    assert np.linalg.eigvalsh(M).min() > -1e-10
    # <G_p, M> is the value only up to the normalization of G_p; compare to psi^* p psi
    assert abs(ms.objective(moment) - float(optimal_value())) < 1e-10
