"""End-to-end acceptance criteria, one test per criterion.

Each test records a single PASS/FAIL line, shown in the "acceptance criteria"
section of the terminal summary, and then asserts the criterion at its stated
tolerance.  The heavy products (level-2 solve, exact certificate, closure and
split strategies) come from the session ``pipeline`` fixture.
"""
import itertools
import time

import mpmath
import numpy as np
import pytest

from chshmod3 import cli
from chshmod3.bellgame import bm_bound, classical_value, optimal_strategy, optimal_value, score
from chshmod3.certify import verify_certificate
from chshmod3.exactnum import FNum, KNum, mpq
from chshmod3.extract import (equivalence_class, flatness_check, gns_extract, match_unitary, moment_from_dual,
                              rank_of_primal, strategy_moments, verify_strategy)
from chshmod3.robust import (check_group_table, eps_grid, group_table, h_relations, phi_images,
                             robust_experiment)
from chshmod3.sdp import assemble_moment, border_vector
from chshmod3.symmetry import Gamma, character_inner, check_irrep, irreps

from conftest import mutate, record
from test_bellgame import classical_oracle


def report(n, ok, detail):
    record(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
    return ok


def test_criterion_01_classical_values(capsys):
    assert cli.main(["classical", "--d", "2"]) == 0
    out2 = capsys.readouterr().out.split()[0]
    t = time.time()
    v3 = classical_value(3)
    dt = time.time() - t
    oracle = classical_oracle(3)
    ok = out2 == "3/4" and v3 == oracle and dt < 1
    assert report(1, ok, f"d=2 -> {out2}, d=3 -> {v3} (oracle {oracle}) in {dt:.3f}s")


def test_criterion_02_optimal_tuple_exact():
    val, _ = score(optimal_strategy())
    lam = optimal_value()
    with mpmath.workprec(400):
        closed = mpmath.mpf(1) / 3 + 2 * mpmath.cos(mpmath.pi / 18) / (3 * mpmath.sqrt(3))
        err = abs(lam.to_mpf(400) - closed)
        ok = val == lam and err < mpmath.mpf(10) ** -60
    assert report(2, ok, f"score = {val}, |lambda - closed form| = {mpmath.nstr(err, 3)}")


def test_criterion_03_level2_solve(pipeline):
    res = pipeline.res
    with mpmath.workprec(256):
        lam_err = abs(res.lam - optimal_value().to_mpf(256))
        ok = (res.status == "optimal" and res.gap <= mpmath.mpf("1e-30")
              and lam_err <= mpmath.mpf("1e-28") and pipeline.seconds["solve"] <= 1800)
    assert report(3, ok, f"status {res.status}, gap {mpmath.nstr(res.gap, 3)}, "
                         f"|lambda error| {mpmath.nstr(lam_err, 3)}, {pipeline.seconds['solve']:.0f}s")


def test_criterion_04_certificate_and_mutations(pipeline):
    rng = np.random.default_rng(2024)
    passed = pipeline.report.passed
    survivors = []
    for _ in range(20):
        bad, where = mutate(pipeline.cert, rng)
        if verify_certificate(bad, pipeline.prob).passed:
            survivors.append(where)
    ok = passed and not survivors
    assert report(4, ok, f"certificate {'PASS' if passed else 'FAIL'}, "
                         f"{20 - len(survivors)}/20 mutations rejected {survivors or ''}")


def test_criterion_05_irreps_of_gamma():
    G = Gamma(3)
    irr = irreps(3, G)
    total = sum(pi.dim ** 2 for pi in irr)
    hom = all(check_irrep(pi, G) for pi in irr)
    orth = all(character_inner(a, b, G) == (1 if a is b else 0) for a, b in itertools.product(irr, repeat=2))
    ok = total == 36 and hom and orth
    assert report(5, ok, f"sum d^2 = {total}, homomorphism/unitarity {hom}, orthogonality {orth}")


def test_criterion_06_extraction(pipeline):
    cm, ss = pipeline.cm, pipeline.strategies
    lam = optimal_value()
    values = all(score(s.as_tuple())[0] == lam for s in ss)
    ann_ok = all(verify_strategy(s, pipeline.ann)["annihilated"][0] for s in ss)
    prints = len({s.fingerprint for s in ss}) == len(ss)
    rel = all(equivalence_class(a, b) == "symmetry-related" for a, b in itertools.combinations(ss, 2))
    ref = optimal_strategy()
    matches = [s.label for s in ss if match_unitary(ref, s) is not None]
    ok = (cm.stabilized and cm.dim == 36 and len(ss) == 4 and values and ann_ok and prints and rel
          and len(matches) >= 1)
    assert report(6, ok, f"closure dim {cm.dim} stabilized {cm.stabilized}, {len(ss)} strategies, "
                         f"values exact {values}, annihilated {ann_ok}, inequivalent {prints}, "
                         f"symmetry-related {rel}, reference matches {matches}")


def test_criterion_07_maximally_mixed(pipeline):
    third = KNum(FNum(mpq(1, 3)))
    ok = True
    for s in pipeline.strategies:
        rho = s.as_tuple().reduced_state_A()
        ok &= all(rho[r][c] == (third if r == c else KNum(0)) for r in range(3) for c in range(3))
    assert report(7, ok, "Tr_B psi psi^* = I/3 exactly for every extracted state")


def test_criterion_08_flatness(pipeline):
    ms = assemble_moment(3, 2)
    low = border_vector(3, 1).words
    M = moment_from_dual(pipeline.prob, pipeline.res, ms)
    rep = flatness_check(M, ms.words, low, rank_Z=rank_of_primal(pipeline.prob, pipeline.res))
    Mref = strategy_moments(optimal_strategy(), ms.words)
    val, _, _ = gns_extract(Mref, ms.words, low)
    with mpmath.workprec(256):
        err = abs(val - optimal_value().to_mpf(256))
        ok = (not rep.flat) and err < mpmath.mpf("1e-20")
    assert report(8, ok, f"level-2 optimum flat = {rep.flat} (rank {rep.rank_n} vs {rep.rank_low}), "
                         f"synthetic flat instance value error {mpmath.nstr(err, 3)}")


def test_criterion_09_group_table(pipeline):
    G = group_table()
    checks = check_group_table(G)
    mats = [optimal_strategy().xs, optimal_strategy().ys]
    mats += [m for s in pipeline.strategies for m in (s.xs, s.ys)]
    rel = all(all(h_relations(phi_images(X)).values()) for X in mats)
    ok = len(G.elements) == 81 and all(checks.values()) and rel
    assert report(9, ok, f"|G| = {len(G.elements)}, checks {checks}, H-relations exact {rel}")


def test_criterion_10_robust_scaling(pipeline):
    res = robust_experiment(pipeline.strategies, pipeline.ann, eps_grid("1e-6:1e-2:log10", 50), seed=7)
    sl = res.slopes
    gh = all(r.gh_A <= r.defect_A and r.gh_B <= r.defect_B for r in res.rows)
    cert = max(r.cert_rel_error for r in res.rows)
    checks = {
        "defect_A": abs(sl["defect_A"] - 1.0) <= 0.15,
        "defect_B": abs(sl["defect_B"] - 1.0) <= 0.15,
        "relation_residual": abs(sl["relation_residual"] - 0.5) <= 0.1,
        "state_distance": abs(sl["state_distance"] - 0.5) <= 0.1,
        "gh<=defect": gh,
        "certificate": cert <= 1e-20,
    }
    ok = all(checks.values())
    slopes = ", ".join(f"{k} {v:.3f}" for k, v in sl.items())
    failed = [k for k, v in checks.items() if not v]
    assert report(10, ok, f"slopes {slopes}; max cert rel error {cert:.1e}; failed {failed}")


def test_criterion_11_ordering(capsys):
    assert cli.main(["bounds"]) == 0
    out = capsys.readouterr().out
    lines = {ln.split()[0]: ln for ln in out.splitlines() if ln.strip()}
    with mpmath.workprec(256):
        c = classical_value(3)
        lam = optimal_value().to_mpf(256)
        ok = (mpmath.mpf(int(c.numerator)) / int(c.denominator) < lam < bm_bound(3)
              and all(k in lines for k in ("classical", "quantum", "bm_bound"))
              and mpmath.nstr(lam, 50) in lines["quantum"] and str(c) in lines["classical"]
              and mpmath.nstr(bm_bound(3), 50) in lines["bm_bound"])
    assert report(11, ok, " | ".join(lines[k].strip() for k in ("classical", "quantum", "bm_bound")))
