"""Group words in X_1..X_d, Y_1..Y_d modulo

    X_j Y_k = Y_k X_j,   X_j^d = Y_j^d = 1,

and noncommutative polynomials with coefficients in K (or any subfield).

A normal-form word is a reduced X-word followed by a reduced Y-word; each part
is a tuple of (index, exponent) pairs with exponent in 1..d-1 and no two
adjacent pairs sharing an index.
"""
from __future__ import annotations

import re
import threading
from typing import Iterable

import numpy as np

from .exactnum import Cyc3, FNum, KNum, mpq

A, B = "A", "B"


def _reduce_into(stack: list, letters, d: int) -> None:
    for i, e in letters:
        e %= d
        if not e:
            continue
        if stack and stack[-1][0] == i:
            ne = (stack[-1][1] + e) % d
            stack.pop()
            if ne:
                stack.append((i, ne))
        else:
            stack.append((i, e))


class Word:
    """Interned normal-form word; compare with ``is`` or ``==``."""

    __slots__ = ("x", "y", "d", "_h", "__weakref__")
    _table: dict = {}
    _lock = threading.Lock()

    def __new__(cls, x=(), y=(), d: int = 3):
        key = (d, x, y)
        w = cls._table.get(key)
        if w is not None:
            return w
        with cls._lock:
            w = cls._table.get(key)
            if w is None:
                w = object.__new__(cls)
                w.x, w.y, w.d = x, y, d
                w._h = hash(key)
                cls._table[key] = w
        return w

    def __reduce__(self):
        return (Word, (self.x, self.y, self.d))

    @classmethod
    def identity(cls, d: int = 3) -> "Word":
        return cls((), (), d)

    @classmethod
    def from_parts(cls, x, y, d: int = 3) -> "Word":
        sx, sy = [], []
        _reduce_into(sx, x, d)
        _reduce_into(sy, y, d)
        return cls(tuple(sx), tuple(sy), d)

    def __hash__(self):
        return self._h

    def __eq__(self, o):
        return self is o

    def __mul__(self, o: "Word") -> "Word":
        if not isinstance(o, Word):
            return NotImplemented
        if not o.x and not o.y:
            return self
        if not self.x and not self.y:
            return o
        sx, sy = list(self.x), list(self.y)
        _reduce_into(sx, o.x, self.d)
        _reduce_into(sy, o.y, self.d)
        return Word(tuple(sx), tuple(sy), self.d)

    def adjoint(self) -> "Word":
        d = self.d
        return Word(tuple((i, d - e) for i, e in reversed(self.x)),
                    tuple((i, d - e) for i, e in reversed(self.y)), d)

    inverse = adjoint

    def is_identity(self) -> bool:
        return not self.x and not self.y

    def degree(self) -> int:
        """Number of letters (exponent independent)."""
        return len(self.x) + len(self.y)

    def letters(self):
        return [(A, i, e) for i, e in self.x] + [(B, i, e) for i, e in self.y]

    def sort_key(self):
        return (self.degree(), self.x, self.y)

    def __lt__(self, o):
        return self.sort_key() < o.sort_key()

    def __str__(self):
        return format_word(self)

    def __repr__(self):
        return f"Word({format_word(self)})"


def normal_form(raw: Iterable, d: int = 3) -> Word:
    """Reduce a sequence of letters (side, index, exponent) to normal form."""
    sx, sy = [], []
    for side, i, e in raw:
        _reduce_into(sx if side == A else sy, ((i, e),), d)
    return Word(tuple(sx), tuple(sy), d)


def X(i: int, e: int = 1, d: int = 3) -> Word:
    return normal_form([(A, i, e)], d)


def Y(j: int, e: int = 1, d: int = 3) -> Word:
    return normal_form([(B, j, e)], d)


def format_word(w: Word) -> str:
    if w.is_identity():
        return "1"
    toks = [f"x{i}" + (f"^{e}" if e != 1 else "") for i, e in w.x]
    toks += [f"y{i}" + (f"^{e}" if e != 1 else "") for i, e in w.y]
    return " ".join(toks)


_TOK = re.compile(r"([xy])(\d+)(?:\^(\d+))?")


def parse_word(text: str, d: int = 3) -> Word:
    s = text.strip().lower()
    if s in ("", "1", "i", "id"):
        return Word.identity(d)
    letters = []
    for tok in s.replace("*", " ").split():
        m = _TOK.fullmatch(tok)
        if m is None:
            raise ValueError(f"bad word token {tok!r} in {text!r}")
        e = int(m.group(3) or 1)
        i = int(m.group(2))
        if not (1 <= e <= d - 1) or not (1 <= i <= d):
            raise ValueError(f"letter out of range in {text!r}")
        letters.append((A if m.group(1) == "x" else B, i, e))
    return normal_form(letters, d)


# --- polynomials -------------------------------------------------------------

def conj(c):
    return c.conj() if hasattr(c, "conj") else c


def _iszero(c) -> bool:
    return not c


class NCPoly:
    """Finite K-linear combination of normal-form words."""

    __slots__ = ("terms", "d")

    def __init__(self, terms=None, d: int = 3):
        self.d = d
        self.terms = {}
        if terms:
            for w, c in (terms.items() if isinstance(terms, dict) else terms):
                if isinstance(w, str):
                    w = parse_word(w, d)
                self._acc(w, c)

    def _acc(self, w, c):
        cur = self.terms.get(w)
        v = c if cur is None else cur + c
        if _iszero(v):
            self.terms.pop(w, None)
        else:
            self.terms[w] = v

    @classmethod
    def word(cls, w: Word, c=1) -> "NCPoly":
        return cls({w: c}, w.d)

    @classmethod
    def const(cls, c, d: int = 3) -> "NCPoly":
        return cls({Word.identity(d): c}, d)

    def copy(self):
        p = NCPoly(d=self.d)
        p.terms = dict(self.terms)
        return p

    def support(self):
        return sorted(self.terms, key=Word.sort_key)

    def coeff(self, w):
        if isinstance(w, str):
            w = parse_word(w, self.d)
        return self.terms.get(w, 0)

    def degree(self) -> int:
        return max((w.degree() for w in self.terms), default=0)

    def is_zero(self):
        return not self.terms

    def __bool__(self):
        return bool(self.terms)

    def __eq__(self, o):
        if not isinstance(o, NCPoly):
            return NotImplemented
        keys = set(self.terms) | set(o.terms)
        return all(_iszero(self.terms.get(k, 0) - o.terms.get(k, 0)) for k in keys)

    def __add__(self, o):
        p = self.copy()
        if isinstance(o, NCPoly):
            for w, c in o.terms.items():
                p._acc(w, c)
        else:
            p._acc(Word.identity(self.d), o)
        return p

    __radd__ = __add__

    def __neg__(self):
        return self * -1

    def __sub__(self, o):
        return self + (-o if isinstance(o, NCPoly) else o * -1)

    def __rsub__(self, o):
        return (-self) + o

    def __mul__(self, o):
        if isinstance(o, NCPoly):
            p = NCPoly(d=self.d)
            for w1, c1 in self.terms.items():
                for w2, c2 in o.terms.items():
                    p._acc(w1 * w2, c1 * c2)
            return p
        if isinstance(o, Word):
            return self * NCPoly.word(o)
        p = NCPoly(d=self.d)
        for w, c in self.terms.items():
            p._acc(w, c * o)
        return p

    def __rmul__(self, o):
        if isinstance(o, Word):
            return NCPoly.word(o) * self
        p = NCPoly(d=self.d)
        for w, c in self.terms.items():
            p._acc(w, o * c)
        return p

    def adjoint(self) -> "NCPoly":
        p = NCPoly(d=self.d)
        for w, c in self.terms.items():
            p._acc(w.adjoint(), conj(c))
        return p

    def is_selfadjoint(self) -> bool:
        return self == self.adjoint()

    def __str__(self):
        if not self.terms:
            return "0"
        return " + ".join(f"({c})*[{format_word(w)}]" for w, c in
                          ((w, self.terms[w]) for w in self.support()))

    __repr__ = __str__


def involution(p: NCPoly) -> NCPoly:
    return p.adjoint()


def mul(p: NCPoly, q: NCPoly) -> NCPoly:
    return p * q


# --- exact dense matrices over K ---------------------------------------------

def kmat(rows) -> list:
    return [[KNum.coerce(v) for v in r] for r in rows]


def mat_eye(n: int) -> list:
    return [[KNum(1) if i == j else KNum(0) for j in range(n)] for i in range(n)]


def mat_mul(a, b) -> list:
    n, k, m = len(a), len(b), len(b[0])
    out = []
    for i in range(n):
        ai = a[i]
        row = []
        for j in range(m):
            s = KNum(0)
            for t in range(k):
                if ai[t] and b[t][j]:
                    s = s + ai[t] * b[t][j]
            row.append(s)
        out.append(row)
    return out


def mat_adj(a) -> list:
    return [[a[i][j].conj() for i in range(len(a))] for j in range(len(a[0]))]


def mat_kron(a, b) -> list:
    return [[a[i][k] * b[j][l] for k in range(len(a[0])) for l in range(len(b[0]))]
            for i in range(len(a)) for j in range(len(b))]


def mat_pow(a, e: int) -> list:
    out = mat_eye(len(a))
    for _ in range(e):
        out = mat_mul(out, a)
    return out


def mat_add(a, b, cb=1):
    return [[x + y * cb for x, y in zip(ra, rb)] for ra, rb in zip(a, b)]


def mat_is_identity(a) -> bool:
    return all((a[i][j] == (1 if i == j else 0)) for i in range(len(a)) for j in range(len(a)))


def mat_to_complex(a, prec: int = 64) -> np.ndarray:
    return np.array([[complex(v) for v in r] for r in a], dtype=complex)


def vec_to_complex(v) -> np.ndarray:
    return np.array([complex(KNum.coerce(x)) for x in v], dtype=complex)


# --- evaluation --------------------------------------------------------------

def _is_exact(mats) -> bool:
    return not isinstance(next(iter(mats.values())), np.ndarray)


def _check_unitary(m, exact: bool, tol: float, d: int, name: str):
    if exact:
        if not mat_is_identity(mat_mul(mat_adj(m), m)):
            raise ValueError(f"{name} is not unitary")
    else:
        if np.linalg.norm(m.conj().T @ m - np.eye(len(m))) > tol:
            raise ValueError(f"{name} is not unitary to tolerance {tol}")


class _PartEval:
    """Caches matrices of partial words for one side."""

    def __init__(self, mats: dict, exact: bool, d: int):
        self.mats, self.exact, self.d = mats, exact, d
        n = len(next(iter(mats.values())))
        self.eye = mat_eye(n) if exact else np.eye(n, dtype=complex)
        self.cache = {(): self.eye}
        self.powers = {}

    def power(self, i, e):
        key = (i, e)
        if key not in self.powers:
            m = self.mats[i]
            self.powers[key] = mat_pow(m, e) if self.exact else np.linalg.matrix_power(m, e)
        return self.powers[key]

    def __call__(self, part):
        if part in self.cache:
            return self.cache[part]
        head = self(part[:-1])
        i, e = part[-1]
        m = self.power(i, e)
        out = mat_mul(head, m) if self.exact else head @ m
        self.cache[part] = out
        return out


def evaluate_matrix(p: NCPoly, xs: dict, ys: dict, check: bool = True, tol: float = 1e-9):
    """p(X (x) I, I (x) Y) as a dense matrix (exact list-of-lists or numpy)."""
    exact = _is_exact(xs)
    if check:
        for i, m in xs.items():
            _check_unitary(m, exact, tol, p.d, f"X{i}")
        for j, m in ys.items():
            _check_unitary(m, exact, tol, p.d, f"Y{j}")
    ex, ey = _PartEval(xs, exact, p.d), _PartEval(ys, exact, p.d)
    out = None
    for w, c in p.terms.items():
        if exact:
            t = mat_kron(ex(w.x), ey(w.y))
            t = [[v * c for v in r] for r in t]
            out = t if out is None else mat_add(out, t)
        else:
            t = complex(c) * np.kron(ex(w.x), ey(w.y))
            out = t if out is None else out + t
    if out is None:
        n = len(ex.eye) * len(ey.eye)
        out = [[KNum(0)] * n for _ in range(n)] if exact else np.zeros((n, n), complex)
    return out


def evaluate(p: NCPoly, xs: dict, ys: dict, psi, check: bool = True, tol: float = 1e-9):
    """psi^* p(X (x) I, I (x) Y) psi.

    Exact when matrices are nested lists of field elements; otherwise numpy
    complex arithmetic.  The state index is a * dimB + b.
    """
    exact = _is_exact(xs)
    dA = len(next(iter(xs.values())))
    dB = len(next(iter(ys.values())))
    if len(psi) != dA * dB:
        raise ValueError(f"state has length {len(psi)}, expected {dA * dB}")
    for side in (xs, ys):
        sizes = {len(m) for m in side.values()}
        if len(sizes) != 1:
            raise ValueError("matrices on one side must share a dimension")
    if check:
        for i, m in xs.items():
            _check_unitary(m, exact, tol, p.d, f"X{i}")
        for j, m in ys.items():
            _check_unitary(m, exact, tol, p.d, f"Y{j}")
    ex, ey = _PartEval(xs, exact, p.d), _PartEval(ys, exact, p.d)
    if exact:
        psi = [KNum.coerce(v) for v in psi]
        Psi = [[psi[a * dB + b] for b in range(dB)] for a in range(dA)]
        PsiC = [[v.conj() for v in r] for r in Psi]
        total = KNum(0)
        for w, c in p.terms.items():
            # psi^* (A (x) B) psi = sum conj(Psi) .* (A Psi B^T)
            T = mat_mul(mat_mul(ex(w.x), Psi), [list(r) for r in zip(*ey(w.y))])
            s = KNum(0)
            for a in range(dA):
                for b in range(dB):
                    if PsiC[a][b] and T[a][b]:
                        s = s + PsiC[a][b] * T[a][b]
            total = total + s * c
        return total
    psi = np.asarray(psi, dtype=complex)
    Psi = psi.reshape(dA, dB)
    total = 0j
    for w, c in p.terms.items():
        total += complex(c) * np.vdot(Psi, ex(w.x) @ Psi @ ey(w.y).T)
    return total


__all__ = [
    "A", "B", "Word", "normal_form", "X", "Y", "format_word", "parse_word", "NCPoly",
    "involution", "mul", "evaluate", "evaluate_matrix", "conj", "kmat", "mat_eye", "mat_mul",
    "mat_adj", "mat_kron", "mat_pow", "mat_is_identity", "mat_to_complex", "vec_to_complex",
    "Cyc3", "FNum", "KNum", "mpq",
]
