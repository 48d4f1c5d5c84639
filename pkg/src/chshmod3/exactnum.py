"""Exact arithmetic over Q, the real cubic field F = Q(z), z^3 - 3z + 1 = 0,
the Eisenstein field Q(w) and their compositum K = F(w).

The real root z ~ 1.5320888862 (= 2 cos(2 pi / 9)) is pinned by the isolating
interval [3/2, 8/5]; signs are decided by interval refinement, zero tests are
purely algebraic.
"""
from __future__ import annotations

import re
from functools import lru_cache

import gmpy2
import mpmath
from gmpy2 import mpq, mpz

__all__ = [
    "mpq", "Rat", "FNum", "Cyc3", "KNum", "RatInterval", "RealCubicField", "FIELD",
    "refine_root", "sign_of", "recognize", "lll_reduce", "to_mpf",
    "knum_real_part", "knum_conj", "parse_fnum", "parse_knum", "parse_cyc3",
]

DEFAULT_DENOMINATOR_BOUND = 10**12


def Rat(x) -> mpq:
    """Coerce ints, strings ("p/q") and rationals to an exact rational."""
    if isinstance(x, str):
        return mpq(x.strip())
    return mpq(x)


class RatInterval:
    __slots__ = ("lo", "hi")

    def __init__(self, lo, hi=None):
        lo = Rat(lo)
        hi = lo if hi is None else Rat(hi)
        if lo > hi:
            raise ValueError("empty interval")
        self.lo, self.hi = lo, hi

    def width(self) -> mpq:
        return self.hi - self.lo

    def contains(self, x) -> bool:
        if isinstance(x, RatInterval):
            return self.lo <= x.lo and x.hi <= self.hi
        return self.lo <= x <= self.hi

    def __add__(self, o):
        if not isinstance(o, RatInterval):
            o = RatInterval(o)
        return RatInterval(self.lo + o.lo, self.hi + o.hi)

    __radd__ = __add__

    def __neg__(self):
        return RatInterval(-self.hi, -self.lo)

    def __sub__(self, o):
        if not isinstance(o, RatInterval):
            o = RatInterval(o)
        return self + (-o)

    def __mul__(self, o):
        if not isinstance(o, RatInterval):
            o = Rat(o)
            a, b = self.lo * o, self.hi * o
            return RatInterval(min(a, b), max(a, b))
        p = (self.lo * o.lo, self.lo * o.hi, self.hi * o.lo, self.hi * o.hi)
        return RatInterval(min(p), max(p))

    __rmul__ = __mul__

    def __repr__(self):
        return f"[{self.lo}, {self.hi}]"


class RealCubicField:
    """Q[t]/(m(t)) with a chosen real root isolated in a rational interval."""

    def __init__(self, coeffs=(1, -3, 0, 1), interval=("3/2", "8/5")):
        # coeffs constant -> leading, monic cubic
        self.coeffs = tuple(mpz(c) for c in coeffs)
        if len(self.coeffs) != 4 or self.coeffs[3] != 1:
            raise ValueError("only monic cubics are supported")
        self.interval = RatInterval(*interval)
        lo, hi = self.interval.lo, self.interval.hi
        if self.minpoly(lo) * self.minpoly(hi) >= 0:
            raise ValueError("isolating interval does not bracket a root")

    def minpoly(self, t):
        c0, c1, c2, c3 = self.coeffs
        return ((c3 * t + c2) * t + c1) * t + c0

    def __repr__(self):
        return f"z^3-3z+1 @ [{self.interval.lo},{self.interval.hi}]"


FIELD = RealCubicField()


@lru_cache(maxsize=None)
def _bisect(steps: int) -> RatInterval:
    if steps == 0:
        return FIELD.interval
    prev = _bisect(steps - 1)
    mid = (prev.lo + prev.hi) / 2
    f_lo, f_mid = FIELD.minpoly(prev.lo), FIELD.minpoly(mid)
    if f_mid == 0:
        return RatInterval(mid, mid)
    if (f_lo < 0) == (f_mid < 0):
        return RatInterval(mid, prev.hi)
    return RatInterval(prev.lo, mid)


def refine_root(width) -> RatInterval:
    """Nested bisection enclosure of z of width <= ``width``."""
    width = Rat(width)
    if width <= 0:
        raise ValueError("width must be positive")
    steps = 0
    while _bisect(steps).width() > width:
        steps += 1
    return _bisect(steps)


class FNum:
    """c0 + c1 z + c2 z^2 with rational coefficients; reduced by z^3 = 3z - 1."""

    __slots__ = ("c0", "c1", "c2")

    def __init__(self, c0=0, c1=0, c2=0):
        self.c0 = c0 if type(c0) is type(_Q0) else Rat(c0)
        self.c1 = c1 if type(c1) is type(_Q0) else Rat(c1)
        self.c2 = c2 if type(c2) is type(_Q0) else Rat(c2)

    @classmethod
    def z(cls) -> "FNum":
        return cls(0, 1, 0)

    def coeffs(self):
        return (self.c0, self.c1, self.c2)

    def is_zero(self) -> bool:
        return not (self.c0 or self.c1 or self.c2)

    def is_rational(self) -> bool:
        return not (self.c1 or self.c2)

    def __bool__(self):
        return not self.is_zero()

    def __eq__(self, o):
        if not isinstance(o, FNum):
            if isinstance(o, (KNum,)):
                return KNum(self) == o
            try:
                o = FNum(o)
            except (TypeError, ValueError):
                return NotImplemented
        return self.c0 == o.c0 and self.c1 == o.c1 and self.c2 == o.c2

    def __hash__(self):
        return hash(("F", self.c0, self.c1, self.c2))

    def __add__(self, o):
        if isinstance(o, FNum):
            return FNum(self.c0 + o.c0, self.c1 + o.c1, self.c2 + o.c2)
        if isinstance(o, (KNum, Cyc3)):
            return KNum(self) + o
        return FNum(self.c0 + o, self.c1, self.c2)

    __radd__ = __add__

    def __neg__(self):
        return FNum(-self.c0, -self.c1, -self.c2)

    def __sub__(self, o):
        if isinstance(o, FNum):
            return FNum(self.c0 - o.c0, self.c1 - o.c1, self.c2 - o.c2)
        if isinstance(o, (KNum, Cyc3)):
            return KNum(self) - o
        return FNum(self.c0 - o, self.c1, self.c2)

    def __rsub__(self, o):
        return (-self) + o

    def __mul__(self, o):
        if isinstance(o, FNum):
            a0, a1, a2 = self.c0, self.c1, self.c2
            b0, b1, b2 = o.c0, o.c1, o.c2
            c3 = a1 * b2 + a2 * b1
            c4 = a2 * b2
            return FNum(a0 * b0 - c3,
                        a0 * b1 + a1 * b0 + 3 * c3 - c4,
                        a0 * b2 + a1 * b1 + a2 * b0 + 3 * c4)
        if isinstance(o, (KNum, Cyc3)):
            return KNum(self) * o
        o = Rat(o)
        return FNum(self.c0 * o, self.c1 * o, self.c2 * o)

    __rmul__ = __mul__

    def mul_matrix(self):
        """Matrix of multiplication by self on the basis (1, z, z^2) (columns)."""
        cols = [self, self * FNum(0, 1), self * FNum(0, 0, 1)]
        return [[c.coeffs()[r] for c in cols] for r in range(3)]

    def norm(self) -> mpq:
        m = self.mul_matrix()
        return _det3(m)

    def inverse(self) -> "FNum":
        if self.is_zero():
            raise ZeroDivisionError("inverse of zero in F")
        m = self.mul_matrix()
        det = _det3(m)
        # first column of adj(m) / det solves m y = e0
        y0 = (m[1][1] * m[2][2] - m[1][2] * m[2][1]) / det
        y1 = -(m[1][0] * m[2][2] - m[1][2] * m[2][0]) / det
        y2 = (m[1][0] * m[2][1] - m[1][1] * m[2][0]) / det
        return FNum(y0, y1, y2)

    def __truediv__(self, o):
        if isinstance(o, FNum):
            return self * o.inverse()
        if isinstance(o, (KNum, Cyc3)):
            return KNum(self) / o
        o = Rat(o)
        return FNum(self.c0 / o, self.c1 / o, self.c2 / o)

    def __rtruediv__(self, o):
        return self.inverse() * o

    def __pow__(self, n: int):
        if n < 0:
            return self.inverse() ** (-n)
        out, base = FNum(1), self
        while n:
            if n & 1:
                out = out * base
            base = base * base
            n >>= 1
        return out

    def conj(self):
        return self

    def enclose(self, iv: RatInterval) -> RatInterval:
        t2 = iv * iv if iv.lo >= 0 else _sq_interval(iv)
        return (t2 * self.c2) + (iv * self.c1) + self.c0

    def to_mpf(self, prec: int = 256):
        with mpmath.workprec(prec + 20):
            z = _z_mpf(prec + 20)
            v = mpmath.mpf(_q2mpf(self.c0)) + _q2mpf(self.c1) * z + _q2mpf(self.c2) * z * z
        return v

    def __float__(self):
        return float(self.to_mpf(80))

    def height(self) -> int:
        """Max bit length among numerators and the common denominator."""
        den = _lcm_den(self.coeffs())
        nums = [abs(c * den) for c in self.coeffs()]
        return max(int(den).bit_length(), *(int(n).bit_length() for n in nums))

    def __str__(self):
        return f"{_qs(self.c0)} + {_qs(self.c1)}*z + {_qs(self.c2)}*z^2"

    def __repr__(self):
        return f"FNum({self})"


_Q0 = mpq(0)


def _qs(q: mpq) -> str:
    return str(q)


def _lcm_den(qs) -> mpz:
    den = mpz(1)
    for q in qs:
        den = gmpy2.lcm(den, q.denominator)
    return den


def _det3(m):
    return (m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
            - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0]))


def _sq_interval(iv: RatInterval) -> RatInterval:
    a, b = iv.lo * iv.lo, iv.hi * iv.hi
    if iv.lo <= 0 <= iv.hi:
        return RatInterval(0, max(a, b))
    return RatInterval(min(a, b), max(a, b))


def _q2mpf(q: mpq):
    return mpmath.mpf(int(q.numerator)) / int(q.denominator)


@lru_cache(maxsize=32)
def _z_mpf(prec: int):
    with mpmath.workprec(prec + 10):
        return 2 * mpmath.cos(2 * mpmath.pi / 9)


def to_mpf(x, prec: int = 256):
    if isinstance(x, FNum):
        return x.to_mpf(prec)
    with mpmath.workprec(prec):
        return _q2mpf(Rat(x))


def sign_of(x: FNum) -> int:
    """Sign of the real embedding of x (z ~ 1.532); 0 only for the zero element."""
    if not isinstance(x, FNum):
        x = FNum(x)
    if x.is_zero():
        return 0
    if x.is_rational():
        return 1 if x.c0 > 0 else -1
    steps = 64
    while True:
        iv = x.enclose(refine_root(mpq(1, 2) ** steps))
        if iv.lo > 0:
            return 1
        if iv.hi < 0:
            return -1
        steps *= 2


class Cyc3:
    """a + b w, w = exp(2 pi i / 3), rational a, b."""

    __slots__ = ("a", "b")

    def __init__(self, a=0, b=0):
        self.a = a if type(a) is type(_Q0) else Rat(a)
        self.b = b if type(b) is type(_Q0) else Rat(b)

    @classmethod
    def w(cls, k: int = 1) -> "Cyc3":
        k %= 3
        return (cls(1), cls(0, 1), cls(-1, -1))[k]

    def is_zero(self):
        return not (self.a or self.b)

    def __bool__(self):
        return not self.is_zero()

    def __eq__(self, o):
        if isinstance(o, Cyc3):
            return self.a == o.a and self.b == o.b
        if isinstance(o, (KNum, FNum)):
            return KNum.coerce(self) == o
        try:
            return self.b == 0 and self.a == Rat(o)
        except (TypeError, ValueError):
            return NotImplemented

    def __hash__(self):
        if self.b == 0:
            return hash(self.a)
        return hash(("C", self.a, self.b))

    def __add__(self, o):
        if isinstance(o, Cyc3):
            return Cyc3(self.a + o.a, self.b + o.b)
        if isinstance(o, (KNum, FNum)):
            return KNum.coerce(self) + o
        return Cyc3(self.a + o, self.b)

    __radd__ = __add__

    def __neg__(self):
        return Cyc3(-self.a, -self.b)

    def __sub__(self, o):
        if isinstance(o, Cyc3):
            return Cyc3(self.a - o.a, self.b - o.b)
        if isinstance(o, (KNum, FNum)):
            return KNum.coerce(self) - o
        return Cyc3(self.a - o, self.b)

    def __rsub__(self, o):
        return (-self) + o

    def __mul__(self, o):
        if isinstance(o, Cyc3):
            bd = self.b * o.b
            return Cyc3(self.a * o.a - bd, self.a * o.b + self.b * o.a - bd)
        if isinstance(o, (KNum, FNum)):
            return KNum.coerce(self) * o
        o = Rat(o)
        return Cyc3(self.a * o, self.b * o)

    __rmul__ = __mul__

    def conj(self) -> "Cyc3":
        return Cyc3(self.a - self.b, -self.b)

    def norm(self) -> mpq:
        # |a + b w|^2 = a^2 - ab + b^2
        return self.a * self.a - self.a * self.b + self.b * self.b

    def inverse(self) -> "Cyc3":
        n = self.norm()
        if n == 0:
            raise ZeroDivisionError("inverse of zero in Q(w)")
        c = self.conj()
        return Cyc3(c.a / n, c.b / n)

    def __truediv__(self, o):
        if isinstance(o, Cyc3):
            return self * o.inverse()
        if isinstance(o, (KNum, FNum)):
            return KNum.coerce(self) / o
        o = Rat(o)
        return Cyc3(self.a / o, self.b / o)

    def real(self) -> mpq:
        return self.a - self.b / 2

    def imag_over_s(self) -> mpq:
        """Imaginary part divided by sqrt(3/4)."""
        return self.b

    def to_complex(self) -> complex:
        return complex(float(self.real()), float(self.b) * 0.8660254037844386)

    def to_mpc(self, prec=256):
        with mpmath.workprec(prec):
            return mpmath.mpc(_q2mpf(self.real()), _q2mpf(self.b) * mpmath.sqrt(3) / 2)

    def __complex__(self):
        return self.to_complex()

    def __str__(self):
        return f"{self.a} + {self.b}*w"

    def __repr__(self):
        return f"Cyc3({self})"


class KNum:
    """re0 + re1 w with re0, re1 in F; the compositum K = F(w) of degree 6."""

    __slots__ = ("x0", "x1")

    def __init__(self, x0=None, x1=None):
        self.x0 = x0 if isinstance(x0, FNum) else FNum(0 if x0 is None else x0)
        self.x1 = x1 if isinstance(x1, FNum) else FNum(0 if x1 is None else x1)

    @classmethod
    def coerce(cls, v) -> "KNum":
        if isinstance(v, KNum):
            return v
        if isinstance(v, FNum):
            return cls(v)
        if isinstance(v, Cyc3):
            return cls(FNum(v.a), FNum(v.b))
        return cls(FNum(v))

    @classmethod
    def w(cls, k: int = 1) -> "KNum":
        return cls.coerce(Cyc3.w(k))

    def is_zero(self):
        return self.x0.is_zero() and self.x1.is_zero()

    def __bool__(self):
        return not self.is_zero()

    def is_real(self) -> bool:
        return self.x1.is_zero()

    def __eq__(self, o):
        try:
            o = KNum.coerce(o)
        except (TypeError, ValueError):
            return NotImplemented
        return self.x0 == o.x0 and self.x1 == o.x1

    def __hash__(self):
        if self.x1.is_zero():
            return hash(self.x0) if not self.x0.is_rational() else hash(self.x0.c0)
        return hash(("K", self.x0, self.x1))

    def __add__(self, o):
        o = KNum.coerce(o)
        return KNum(self.x0 + o.x0, self.x1 + o.x1)

    __radd__ = __add__

    def __neg__(self):
        return KNum(-self.x0, -self.x1)

    def __sub__(self, o):
        o = KNum.coerce(o)
        return KNum(self.x0 - o.x0, self.x1 - o.x1)

    def __rsub__(self, o):
        return KNum.coerce(o) - self

    def __mul__(self, o):
        if isinstance(o, (int, type(_Q0))):
            return KNum(self.x0 * o, self.x1 * o)
        if isinstance(o, Cyc3):
            b = o.b
            # (x0 + x1 w)(a + b w) with rational a, b
            bd = self.x1 * b
            return KNum(self.x0 * o.a - bd, self.x0 * b + self.x1 * o.a - bd)
        o = KNum.coerce(o)
        bd = self.x1 * o.x1
        return KNum(self.x0 * o.x0 - bd, self.x0 * o.x1 + self.x1 * o.x0 - bd)

    __rmul__ = __mul__

    def conj(self) -> "KNum":
        return KNum(self.x0 - self.x1, -self.x1)

    def norm_to_F(self) -> FNum:
        """x * conj(x), which lies in F."""
        a, b = self.x0, self.x1
        return a * a - a * b + b * b

    def inverse(self) -> "KNum":
        n = self.norm_to_F()
        if n.is_zero():
            raise ZeroDivisionError("inverse of zero in K")
        ninv = n.inverse()
        c = self.conj()
        return KNum(c.x0 * ninv, c.x1 * ninv)

    def __truediv__(self, o):
        if isinstance(o, (int, type(_Q0))):
            return KNum(self.x0 / o, self.x1 / o)
        return self * KNum.coerce(o).inverse()

    def __rtruediv__(self, o):
        return KNum.coerce(o) * self.inverse()

    def __pow__(self, n: int):
        if n < 0:
            return self.inverse() ** (-n)
        out, base = KNum(1), self
        while n:
            if n & 1:
                out = out * base
            base = base * base
            n >>= 1
        return out

    def real_part(self) -> FNum:
        return self.x0 - self.x1 / 2

    def imag_over_s(self) -> FNum:
        return self.x1

    def as_fnum(self) -> FNum:
        if not self.is_real():
            raise ValueError(f"{self} is not real")
        return self.x0

    def to_mpc(self, prec: int = 256):
        with mpmath.workprec(prec + 10):
            re = self.real_part().to_mpf(prec + 10)
            im = self.x1.to_mpf(prec + 10) * mpmath.sqrt(3) / 2
            return mpmath.mpc(re, im)

    def __complex__(self):
        v = self.to_mpc(64)
        return complex(float(v.real), float(v.imag))

    def __str__(self):
        return f"({self.x0}) + ({self.x1})*w"

    def __repr__(self):
        return f"KNum({self})"


def knum_conj(x: KNum) -> KNum:
    return KNum.coerce(x).conj()


def knum_real_part(x: KNum) -> FNum:
    x = KNum.coerce(x)
    return ((x + x.conj()) * mpq(1, 2)).as_fnum()


# --- text formats -----------------------------------------------------------

_RAT = r"[+-]?\d+(?:/\d+)?"


def _terms(s: str):
    """Split a whitespace-free sum into signed terms: "1-2*z+-3*z^2" -> ["1", "-2*z", "-3*z^2"]."""
    s = s.replace("+-", "-").replace("--", "+")
    out, cur = [], ""
    for i, ch in enumerate(s):
        if ch in "+-" and i > 0 and s[i - 1] not in "*/^(":
            out.append(cur)
            cur = "-" if ch == "-" else ""
        else:
            cur += ch
    out.append(cur)
    return [t for t in out if t]


def parse_fnum(text: str) -> FNum:
    s = "".join(text.split())
    while s.startswith("(") and s.endswith(")"):
        s = s[1:-1]
    c = [mpq(0)] * 3
    for t in _terms(s):
        m = re.fullmatch(rf"({_RAT})(?:\*z(\^2)?)?|([+-]?)z(\^2)?", t)
        if m is None:
            raise ValueError(f"malformed F element: {text!r}")
        if m.group(1) is not None:
            k = 0 if "*z" not in t else (2 if m.group(2) else 1)
            c[k] += mpq(m.group(1))
        else:
            k = 2 if m.group(4) else 1
            c[k] += -1 if m.group(3) == "-" else 1
    return FNum(*c)


def parse_knum(text: str) -> KNum:
    s = "".join(text.split())
    m = re.fullmatch(r"\((.*)\)\+\((.*)\)\*w", s)
    if m is None:
        return KNum(parse_fnum(s))
    return KNum(parse_fnum(m.group(1)), parse_fnum(m.group(2)))


def parse_cyc3(text: str) -> Cyc3:
    s = "".join(text.split())
    a = b = mpq(0)
    for t in _terms(s):
        m = re.fullmatch(rf"({_RAT})(\*w)?", t)
        if m is None:
            raise ValueError(f"malformed Q(w) element: {text!r}")
        if m.group(2):
            b += mpq(m.group(1))
        else:
            a += mpq(m.group(1))
    return Cyc3(a, b)


# --- lattice reduction and algebraic recognition ---------------------------

def lll_reduce(basis, delta=mpq(3, 4)):
    """Textbook LLL on integer row vectors (exact rational Gram-Schmidt)."""
    b = [[mpz(v) for v in row] for row in basis]
    n = len(b)

    def dot(u, v):
        return sum(x * y for x, y in zip(u, v))

    def gso():
        bstar, mu, bn = [], [[mpq(0)] * n for _ in range(n)], []
        for i in range(n):
            v = [mpq(x) for x in b[i]]
            for j in range(i):
                mu[i][j] = mpq(dot(b[i], bstar[j])) / bn[j] if bn[j] else mpq(0)
                v = [x - mu[i][j] * y for x, y in zip(v, bstar[j])]
            bstar.append(v)
            bn.append(dot(v, v))
        return mu, bn

    mu, bn = gso()
    k = 1
    while k < n:
        for j in range(k - 1, -1, -1):
            q = round(mu[k][j])
            if q:
                b[k] = [x - q * y for x, y in zip(b[k], b[j])]
                for l in range(j + 1):
                    mu[k][l] -= q * (mu[j][l] if l < j else 1)
        if bn[k] >= (delta - mu[k][k - 1] ** 2) * bn[k - 1]:
            k += 1
        else:
            b[k], b[k - 1] = b[k - 1], b[k]
            mu, bn = gso()
            k = max(k - 1, 1)
    return b


def recognize(x, precision_bits: int = 256,
              denominator_bound: int = DEFAULT_DENOMINATOR_BOUND):
    """Find (p + q z + r z^2)/s close to x, or None.

    A candidate is searched with half of the available bits and accepted only
    if it agrees with x to (almost) the full ``precision_bits``.
    """
    if precision_bits < 32:
        raise ValueError("need at least 32 bits")
    with mpmath.workprec(precision_bits + 64):
        x = mpmath.mpf(x) if not isinstance(x, mpmath.mpf) else +x
        z = _z_mpf(precision_bits + 64)
        xi = mpmath.nint(x)
        frac = x - xi  # recognize the fractional part, add the integer back later
        half = precision_bits // 2
        scale = mpmath.mpf(2) ** half
        vals = [mpmath.mpf(1), z, z * z, frac]
        rows = []
        for i, v in enumerate(vals):
            row = [0] * 4 + [int(mpmath.nint(v * scale))]
            row[i] = 1
            rows.append(row)
        red = lll_reduce(rows)
        tol = mpmath.mpf(2) ** (-(precision_bits - 12))
        best = None
        for vec in red:
            a0, a1, a2, a3 = (int(v) for v in vec[:4])
            if a3 == 0 or abs(a3) > denominator_bound:
                continue
            cand = FNum(mpq(-a0, a3), mpq(-a1, a3), mpq(-a2, a3))
            err = abs(cand.to_mpf(precision_bits + 64) - frac)
            if err <= tol * max(1, abs(x)) and (best is None or cand.height() < best.height()):
                best = cand
        if best is None:
            return None
        return best + int(xi)
