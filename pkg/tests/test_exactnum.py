import mpmath
import pytest
from hypothesis import given, settings, strategies as st

from chshmod3.exactnum import (FIELD, Cyc3, FNum, KNum, RatInterval, lll_reduce, mpq, parse_cyc3,
                               parse_fnum, parse_knum, recognize, refine_root, sign_of)

rats = st.fractions(min_value=-50, max_value=50, max_denominator=40).map(lambda f: mpq(f.numerator, f.denominator))
fnums = st.builds(FNum, rats, rats, rats)
cyc3s = st.builds(Cyc3, rats, rats)
knums = st.builds(KNum, fnums, fnums)

Z = mpmath.findroot(lambda t: t ** 3 - 3 * t + 1, 1.53)


def fval(x: FNum):
    return float(x.c0) + float(x.c1) * float(Z) + float(x.c2) * float(Z) ** 2


def kval(x: KNum):
    w = complex(-0.5, 3 ** 0.5 / 2)
    return fval(x.x0) + fval(x.x1) * w


def test_minpoly_vanishes():
    z = FNum.z()
    assert z * z * z - 3 * z + 1 == 0
    assert FIELD.interval.contains(mpq(153, 100))


def _q(x):
    return mpmath.mpf(int(x.numerator)) / int(x.denominator)


def test_root_enclosure_matches_mpmath():
    iv = refine_root(mpq(1, 2 ** 100))
    assert iv.width() <= mpq(1, 2 ** 100)
    with mpmath.workprec(300):
        z = mpmath.findroot(lambda t: t ** 3 - 3 * t + 1, mpmath.mpf("1.53"))
        assert _q(iv.lo) <= z <= _q(iv.hi)
        assert abs(FNum.z().to_mpf(300) - z) < mpmath.mpf(2) ** -250


def test_z_is_twice_cos_two_pi_over_9():
    with mpmath.workprec(256):
        assert abs(FNum.z().to_mpf(256) - 2 * mpmath.cos(2 * mpmath.pi / 9)) < mpmath.mpf(2) ** -240


@given(fnums, fnums, fnums)
def test_field_axioms(a, b, c):
    assert (a + b) * c == a * c + b * c
    assert (a * b) * c == a * (b * c)
    assert a * b == b * a


@given(fnums, fnums)
def test_mul_agrees_with_float(a, b):
    assert abs(fval(a * b) - fval(a) * fval(b)) <= 1e-9 * (1 + abs(fval(a) * fval(b)))


@given(fnums)
def test_inverse(a):
    if a.is_zero():
        with pytest.raises(ZeroDivisionError):
            a.inverse()
    else:
        assert a * a.inverse() == 1


@given(fnums)
def test_sign_matches_numeric(a):
    v = fval(a)
    if abs(v) > 1e-9:
        assert sign_of(a) == (1 if v > 0 else -1)


def test_sign_of_tiny_element():
    # z - 1.5320888862379... is far below double precision once scaled
    x = FNum(mpq(-1532088886237956070404785301110833, 10 ** 33), 1, 0)
    assert sign_of(x) == 1
    assert sign_of(-x) == -1
    assert sign_of(FNum(0)) == 0


@given(cyc3s)
def test_cyc3_w_relation_and_conj(a):
    w = Cyc3.w(1)
    assert w * w + w + 1 == 0
    assert (a * a.conj()).b == 0
    if not a.is_zero():
        assert a * a.inverse() == 1


@given(knums, knums)
def test_knum_multiplicative_conj(a, b):
    assert (a * b).conj() == a.conj() * b.conj()
    assert abs(kval(a * b) - kval(a) * kval(b)) <= 1e-8 * (1 + abs(kval(a) * kval(b)))


@given(knums)
def test_knum_inverse(a):
    if not (a.x0.is_zero() and a.x1.is_zero()):
        assert a * a.inverse() == 1


@given(fnums)
def test_fnum_text_round_trip(a):
    assert parse_fnum(str(a)) == a


@given(knums)
def test_knum_text_round_trip(a):
    assert parse_knum(str(a)) == a


@given(cyc3s)
def test_cyc3_text_round_trip(a):
    assert parse_cyc3(str(a)) == a


@settings(max_examples=25, deadline=None)
@given(st.builds(FNum, st.integers(-30, 30), st.integers(-30, 30), st.integers(-30, 30)),
       st.integers(1, 60))
def test_recognize_recovers_field_elements(a, den):
    x = a / den
    assert recognize(x.to_mpf(256), 256) == x


def test_recognize_rejects_transcendental():
    with mpmath.workprec(256):
        assert recognize(mpmath.pi, 256) is None


def test_lll_finds_short_vector():
    red = lll_reduce([[1, 0, 0, 1000003], [0, 1, 0, 2000006], [0, 0, 1, 17]])
    assert min(sum(v * v for v in row) for row in red) <= 6


def test_interval_arithmetic_contains_products():
    a, b = RatInterval(-1, 2), RatInterval(mpq(1, 3), 3)
    p = a * b
    for x in (-1, 0, 2):
        for y in (mpq(1, 3), 1, 3):
            assert p.contains(mpq(x) * y)
    with pytest.raises(ValueError):
        RatInterval(2, 1)
