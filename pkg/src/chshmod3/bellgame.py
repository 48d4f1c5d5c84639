"""The CHSH mod d game: Bell polynomial, classical value, known bounds and
scoring of finite-dimensional strategies.

Questions k, l and answers run over 1..d (d acts as 0).  In observable form

    p_d = d^-3 * sum_{k,l,n=1..d} w^(k l n) X_k^n Y_l^n,

where X_k = sum_i w^-i A_i^k is the generalized observable of Alice's k-th
measurement and similarly for Bob.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from itertools import product

import mpmath
import numpy as np

from .exactnum import Cyc3, FNum, KNum, mpq, parse_knum
from .ncalg import (A, B, NCPoly, Word, evaluate, kmat, mat_adj, mat_eye, mat_is_identity,
                    mat_mul, mat_pow, normal_form)


def _check_prime(d: int):
    if d < 2 or any(d % p == 0 for p in range(2, int(d ** 0.5) + 1)):
        raise ValueError(f"d={d} is not prime")


def omega_power(d: int, k: int):
    """w^k with w = exp(2 pi i/d), exactly, for the fields available here."""
    k %= d
    if d == 2:
        return mpq(1) if k == 0 else mpq(-1)
    if d == 3:
        return Cyc3.w(k)
    raise NotImplementedError("exact roots of unity only for d in {2, 3}")


@dataclass
class BellPolynomial:
    d: int
    observable_form: NCPoly
    identity_coefficient: mpq

    def __iter__(self):
        return iter(self.observable_form.terms.items())


def build_p(d: int = 3) -> BellPolynomial:
    _check_prime(d)
    poly = NCPoly(d=d)
    scale = mpq(1, d ** 3)
    for k, l, n in product(range(1, d + 1), repeat=3):
        w = normal_form([(A, k, n), (B, l, n)], d)
        poly._acc(w, omega_power(d, k * l * n) * scale)
    ic = poly.terms[Word.identity(d)]
    ic = ic if isinstance(ic, type(mpq(0))) else ic.a
    return BellPolynomial(d, poly, mpq(ic))


def projector_coefficients(d: int):
    """c[i, j, k, l] = d^-2 [i + j = k l mod d], indices 1..d."""
    _check_prime(d)
    return {(i, j, k, l): (mpq(1, d * d) if (i + j - k * l) % d == 0 else mpq(0))
            for i, j, k, l in product(range(1, d + 1), repeat=4)}


def projector_in_observables(side: str, i: int, k: int, d: int) -> NCPoly:
    """A_i^k = d^-1 sum_n w^(i n) X_k^n (or the B-side analogue)."""
    p = NCPoly(d=d)
    for n in range(1, d + 1):
        p._acc(normal_form([(side, k, n)], d), omega_power(d, i * n) * mpq(1, d))
    return p


def projector_form(d: int):
    """(coefficients, polynomial obtained by substituting the projectors)."""
    c = projector_coefficients(d)
    proj_a = {(i, k): projector_in_observables(A, i, k, d) for i in range(1, d + 1) for k in range(1, d + 1)}
    proj_b = {(j, l): projector_in_observables(B, j, l, d) for j in range(1, d + 1) for l in range(1, d + 1)}
    total = NCPoly(d=d)
    for (i, j, k, l), cv in c.items():
        if cv:
            total = total + (proj_a[i, k] * proj_b[j, l]) * cv
    return c, total


def classical_value(d: int) -> mpq:
    """Best deterministic winning probability.

    For a fixed Alice assignment a, Bob answers each question l independently,
    so only the d^d outer loop is enumerated.
    """
    if d > 5:
        raise ValueError("exhaustive search only for d <= 5")
    best = 0
    for a in product(range(d), repeat=d):
        wins = 0
        for l in range(1, d + 1):
            counts = [0] * d
            for k in range(1, d + 1):
                counts[(k * l - a[k - 1]) % d] += 1
            wins += max(counts)
        best = max(best, wins)
    return mpq(best, d * d)


def bm_bound(d: int, prec: int = 256):
    """1/d + (d-1)/(d sqrt d)."""
    with mpmath.workprec(prec):
        return mpmath.mpf(1) / d + mpmath.mpf(d - 1) / (d * mpmath.sqrt(d))


def optimal_value() -> FNum:
    """(1 + 2z + z^2)/9, the quantum value for d = 3."""
    return FNum(mpq(1, 9), mpq(2, 9), mpq(1, 9))


# --- strategies --------------------------------------------------------------

@dataclass
class StrategyTuple:
    """Operators X[1..d] on C^dimA, Y[1..d] on C^dimB and a state.

    Exact strategies hold KNum matrices and may store an unnormalized state
    together with its squared norm (the normalization is generally outside K).
    """
    d: int
    xs: dict
    ys: dict
    psi: list
    exact: bool = True
    psi_norm2: object = None
    label: str = ""
    meta: dict = field(default_factory=dict)

    @property
    def dimA(self):
        return len(self.xs[1])

    @property
    def dimB(self):
        return len(self.ys[1])

    def norm2(self):
        if self.psi_norm2 is not None:
            return self.psi_norm2
        if self.exact:
            s = KNum(0)
            for v in self.psi:
                s = s + v * v.conj()
            return s.as_fnum()
        return float(np.vdot(self.psi, self.psi).real)

    def check(self):
        """Raise ValueError naming the first violated relation."""
        d = self.d
        for side, mats in (("X", self.xs), ("Y", self.ys)):
            for i, m in mats.items():
                if self.exact:
                    if not mat_is_identity(mat_mul(mat_adj(m), m)):
                        raise ValueError(f"{side}{i} not unitary")
                    if not mat_is_identity(mat_pow(m, d)):
                        raise ValueError(f"{side}{i}^{d} != I")
                else:
                    if np.linalg.norm(m.conj().T @ m - np.eye(len(m))) > 1e-9:
                        raise ValueError(f"{side}{i} not unitary")
                    if np.linalg.norm(np.linalg.matrix_power(m, d) - np.eye(len(m))) > 1e-9:
                        raise ValueError(f"{side}{i}^{d} != I")
        if len(self.psi) != self.dimA * self.dimB:
            raise ValueError("state dimension mismatch")
        if self.exact and self.psi_norm2 is not None:
            s = KNum(0)
            for v in self.psi:
                s = s + v * v.conj()
            if s != KNum(self.psi_norm2):
                raise ValueError("stored squared norm does not match the state")
        return True

    def to_float(self) -> "StrategyTuple":
        if not self.exact:
            return self
        xs = {i: _cmat(m) for i, m in self.xs.items()}
        ys = {j: _cmat(m) for j, m in self.ys.items()}
        psi = np.array([complex(v) for v in self.psi])
        psi = psi / np.linalg.norm(psi)
        return StrategyTuple(self.d, xs, ys, psi, exact=False, label=self.label)

    def reduced_state_A(self):
        """Tr_B |psi><psi| (exact if the strategy is exact)."""
        dA, dB = self.dimA, self.dimB
        if self.exact:
            n2 = KNum(self.norm2())
            P = [[self.psi[a * dB + b] for b in range(dB)] for a in range(dA)]
            rho = mat_mul(P, mat_adj(P))
            return [[v / n2 for v in r] for r in rho]
        P = np.asarray(self.psi).reshape(dA, dB)
        return P @ P.conj().T


def _cmat(m):
    return np.array([[complex(v) for v in r] for r in m], dtype=complex)


def score(strategy: StrategyTuple, p: BellPolynomial | None = None, certified_value=None):
    """psi^* p(X, Y) psi / psi^* psi; returns (value, deficit or None)."""
    strategy.check()
    if p is None:
        p = build_p(strategy.d)
    raw = evaluate(p.observable_form, strategy.xs, strategy.ys, strategy.psi, check=False)
    if strategy.exact:
        val = raw / KNum(strategy.norm2())
        if not val.is_real():
            raise ValueError("value is not real")
        val = val.as_fnum()
    else:
        val = raw.real / float(np.vdot(strategy.psi, strategy.psi).real)
    deficit = None
    if certified_value is not None:
        deficit = certified_value - val if strategy.exact else float(certified_value) - val
    return val, deficit


def shift_matrix(n: int = 3):
    """X|j> = |j+1 mod n>."""
    return kmat([[1 if (i - j) % n == 1 else 0 for j in range(n)] for i in range(n)])


def clock_matrix():
    """Z = diag(1, w, w^2)."""
    return kmat([[Cyc3.w(j) if i == j else 0 for j in range(3)] for i in range(3)])


def optimal_strategy() -> StrategyTuple:
    """The optimal d=3 strategy: X1=Z^2X^2, X2=X, X3=Z, Y1=X, Y2=Z^2X^2, Y3=Z,
    with the state stored unnormalized (squared norm 18 - 9z)."""
    Xs, Zc = shift_matrix(), clock_matrix()
    z2x2 = mat_mul(mat_mul(Zc, Zc), mat_mul(Xs, Xs))
    z = FNum.z()
    wi = KNum.w(2)
    a = KNum(z - 1)
    b = KNum(2 - z * z)
    psi = [KNum(1), a, wi * b, a, b, wi, wi * b, wi, KNum.w(1) * a]
    return StrategyTuple(3, {1: z2x2, 2: Xs, 3: Zc}, {1: Xs, 2: z2x2, 3: Zc}, psi,
                         psi_norm2=FNum(18, -9, 0), label="optimal")


def identity_strategy(d: int = 3) -> StrategyTuple:
    I = mat_eye(d)
    return StrategyTuple(d, {i: I for i in range(1, d + 1)}, {i: I for i in range(1, d + 1)},
                         [KNum(1)] * (d * d))


# --- strategy files -----------------------------------------------------------

def write_strategy(s: StrategyTuple, path):
    tag = "K" if s.exact else "C"
    lines = [f"BSTRAT v1; d={s.d}; dimA={s.dimA}; dimB={s.dimB}; field={tag}"]
    if s.label:
        lines.append(f"label {s.label}")
    if s.exact and s.psi_norm2 is not None:
        lines.append(f"norm2 {s.psi_norm2}")

    def ent(v):
        if s.exact:
            return str(KNum.coerce(v))
        v = complex(v)
        return f"{v.real!r} {v.imag!r}"

    for side, mats in (("X", s.xs), ("Y", s.ys)):
        for i in sorted(mats):
            lines.append(f"{side}{i}")
            for r in mats[i]:
                lines.append(" ; ".join(ent(v) for v in r))
    lines.append("PSI")
    lines.extend(ent(v) for v in s.psi)
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def read_strategy(path) -> StrategyTuple:
    with open(path) as fh:
        lines = [ln.rstrip("\n") for ln in fh if ln.strip()]
    head = lines[0]
    if not head.startswith("BSTRAT v1"):
        raise ValueError(f"{path}:1: not a strategy file")
    kv = dict(part.strip().split("=") for part in head.split(";")[1:])
    d, dA, dB = int(kv["d"]), int(kv["dimA"]), int(kv["dimB"])
    exact = kv["field"].strip() == "K"

    def ent(t, lineno):
        try:
            if exact:
                return parse_knum(t)
            re_, im = t.split()
            return complex(float(re_), float(im))
        except ValueError as e:
            raise ValueError(f"{path}:{lineno}: {e}") from None

    pos, label, norm2 = 1, "", None
    if lines[pos].startswith("label "):
        label = lines[pos][6:]
        pos += 1
    if lines[pos].startswith("norm2 "):
        norm2 = parse_knum(lines[pos][6:]).as_fnum()
        pos += 1
    mats = {"X": {}, "Y": {}}
    for side, dim in (("X", dA), ("Y", dB)):
        for i in range(1, d + 1):
            if lines[pos] != f"{side}{i}":
                raise ValueError(f"{path}:{pos + 1}: expected {side}{i}")
            rows = [[ent(t, pos + 2 + r) for t in lines[pos + 1 + r].split(" ; ")] for r in range(dim)]
            mats[side][i] = rows if exact else np.array(rows, dtype=complex)
            pos += 1 + dim
    if lines[pos] != "PSI":
        raise ValueError(f"{path}:{pos + 1}: expected PSI")
    psi = [ent(t, pos + 2 + k) for k, t in enumerate(lines[pos + 1:pos + 1 + dA * dB])]
    if not exact:
        psi = np.array(psi, dtype=complex)
    return StrategyTuple(d, mats["X"], mats["Y"], psi, exact=exact, psi_norm2=norm2, label=label)
