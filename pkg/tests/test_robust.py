import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from chshmod3.bellgame import optimal_strategy, optimal_value
from chshmod3.robust import (GAMMA_WORDS, block_sum, certificate_residual, check_group_table, check_irreps_G,
                             defect, eps_grid, eps_representation, generator_coordinates, gh_isometry, gmul,
                             group_table, h_relations, irreps_G, isometry_error, loglog_slope, mp_strategy,
                             mp_value, perturb, phi_images, reduced_densities, relation_residuals, rep_map,
                             spectral_constants, to_numpy)

G = group_table()
elems = st.tuples(*[st.integers(0, 2)] * 4)


def test_group_table_checks():
    assert all(check_group_table(G).values())


@given(elems, elems, elems)
def test_product_law_is_associative(a, b, c):
    assert gmul(gmul(a, b), c) == gmul(a, gmul(b, c))


def test_phi_images_satisfy_relations_exactly():
    assert all(h_relations(phi_images(optimal_strategy().xs)).values())
    assert all(h_relations(phi_images(optimal_strategy().ys)).values())


def test_gamma_words_use_only_generators():
    assert set(GAMMA_WORDS) == {1, 2, 3, 4}
    assert all(i in (1, 2, 3) and e in (-1, 1, 2) for w in GAMMA_WORDS.values() for i, e in w)


def test_irreps_of_G():
    irr = irreps_G(G)
    assert len(irr) == 33
    assert sum(m[0].shape[0] ** 2 for _, m in irr) == 81
    assert check_irreps_G(G, irr)


def test_reference_gives_representation():
    f = eps_representation(optimal_strategy().to_float().xs, np.eye(3) / 3, G)
    assert defect(f, G) < 1e-24
    U, tau, close = gh_isometry(f, G)
    assert close < 1e-24 and isometry_error(U) < 1e-12


def test_reference_is_maximally_entangled_numerically():
    s = optimal_strategy().to_float()
    RA, RB = reduced_densities(s.psi, 3, 3)
    assert np.allclose(RA, np.eye(3) / 3) and np.allclose(RB, np.eye(3) / 3)


def test_relation_residuals_vanish_at_reference():
    s = optimal_strategy().to_float()
    for side in "AB":
        assert max(relation_residuals(s.xs, s.ys, s.psi, side).values()) < 1e-12


@settings(max_examples=8, deadline=None)
@given(st.integers(0, 2 ** 31), st.floats(1e-4, 1e-2))
def test_gh_closeness_below_defect(seed, t):
    ref = optimal_strategy()
    s = perturb(mp_strategy(ref.xs, ref.ys, ref.psi, 128), t, np.random.default_rng(seed))
    X, Y, psi = to_numpy(s)
    RA, _ = reduced_densities(psi, 3, 3)
    f = eps_representation(X, RA, G)
    assert gh_isometry(f, G)[2] <= defect(f, G)


@settings(max_examples=5, deadline=None)
@given(st.integers(0, 2 ** 31), st.sampled_from(["conjugate", "state"]))
def test_perturbation_lowers_value(seed, kind):
    ref = optimal_strategy()
    s = perturb(mp_strategy(ref.xs, ref.ys, ref.psi, 128), 1e-3, np.random.default_rng(seed), kind)
    assert mp_value(s) < optimal_value().to_mpf(128)


def test_loglog_slope_and_grid():
    x = eps_grid("1e-6:1e-2:log10", 9)
    assert math.isclose(x[0], 1e-6) and math.isclose(x[-1], 1e-2) and len(x) == 9
    assert abs(loglog_slope(x, [3 * v ** 0.5 for v in x]) - 0.5) < 1e-12
    assert math.isnan(loglog_slope(x[:2], x[:2]))
    with pytest.raises(ValueError):
        eps_grid("1e-6:1e-2:linear", 4)


def test_generator_coordinates_and_spectral_data(pipeline):
    faithful = {k: block_sum([s.xs[k] for s in pipeline.strategies]) for k in (1, 2, 3)}
    coords = generator_coordinates(faithful, G)
    fs = rep_map(phi_images(faithful), G)
    for k, j in coords.items():
        assert fs[G.index[j]] == faithful[k]
    sd = spectral_constants(G, coords)
    assert len(sd.optimal_pairs) == 4
    assert sd.margin_lam2 > 0 and sd.margin_beta > 0


def test_certificate_residual_equals_deficit(pipeline):
    s0 = pipeline.strategies[0]
    s = perturb(mp_strategy(s0.xs, s0.ys, s0.psi, 256), 1e-3, np.random.default_rng(5))
    with mpmath.workprec(256):
        eps = optimal_value().to_mpf(256) - mp_value(s)
        res = certificate_residual(s, pipeline.ann)
        assert abs(res - eps) / eps < mpmath.mpf(10) ** -20
