"""Optimal strategies from the certificate, and moment-side flatness.

The SOS side works with the cyclic module H_J = C<X,Y> psi / J, where J is
generated by the annihilators g (g(X,Y) psi = 0 for every optimal strategy).
We build H_J by a vector enumeration (the linear analogue of Todd-Coxeter):
vectors are labelled by words applied to psi, images under the 12 letters
X_i^{+-1}, Y_j^{+-1} are defined lazily, and every relation that is checked
(X_i^3 = 1, X_i X_i^-1 = 1, [X_i, Y_j] = 0 at each vector, g psi = 0 at psi)
produces a coincidence that kills one vector.  New vectors are only created
when their label has normal-form degree <= D; if the table does not close
the answer is "increase D".

The enumeration runs modulo a prime p = 1 mod 9, once per embedding of
K = Q(z, w) = Q(zeta_9) into F_p.  The six images of each matrix entry
determine its coordinates in the basis z^a w^b mod p, and rational
reconstruction (with CRT over more primes if needed) lifts them to K.  The
result is then checked exactly over K: the relations hold, g(rho) e_0 = 0,
and so the K-module is a quotient of H_J; the enumeration itself only ever
identifies vectors that are equal in H_J, which gives the other inclusion.
"""
from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass, field
from fractions import Fraction

import gmpy2
import mpmath
import numpy as np
from flint import nmod_mat

from .bellgame import StrategyTuple, build_p, optimal_value, score
from .exactnum import Cyc3, FNum, KNum, mpq
from .ncalg import Word, evaluate_matrix, mat_adj, mat_eye, mat_is_identity, mat_mul, mat_pow

log = logging.getLogger(__name__)

GENS = [(side, i, e) for side in "xy" for i in (1, 2, 3) for e in (1, 2)]
BASE = [g for g in GENS if g[2] == 1]


class IncreaseD(Exception):
    """The enumeration did not close at the given cap."""


class _Cap(Exception):
    pass


# --- primes and embeddings -------------------------------------------------------

def primes_1_mod_9(start: int = 2 ** 62):
    """Primes p = 1 mod 9 below ``start``, largest first."""
    p = (start - 1) // 9 * 9 + 1
    while p > 9:
        if gmpy2.is_prime(p):
            yield p
        p -= 9


def embeddings(p: int):
    """The six maps K -> F_p as pairs (z0, w0) = (zeta^k + zeta^-k, zeta^3k)."""
    if (p - 1) % 9:
        raise ValueError("need p = 1 mod 9")
    for a in range(2, 1000):
        zeta = pow(a, (p - 1) // 9, p)
        if pow(zeta, 3, p) != 1:
            break
    out = []
    for k in (1, 2, 4, 5, 7, 8):
        zk = pow(zeta, k, p)
        out.append(((zk + pow(zk, 8, p)) % p, pow(zk, 3, p)))
    return out


def _q_mod(r, p):
    return int(r.numerator) * pow(int(r.denominator), -1, p) % p


def knum_mod(x: KNum, p: int, z0: int, w0: int) -> int:
    def f(v):
        c = v.coeffs()
        return (_q_mod(c[0], p) + _q_mod(c[1], p) * z0 + _q_mod(c[2], p) * z0 * z0) % p
    return (f(x.x0) + f(x.x1) * w0) % p


def rational_reconstruct(r: int, m: int):
    """a/b with a = b r mod m and |a|, |b| <= sqrt(m/2), or None."""
    r %= m
    bound = gmpy2.isqrt(m // 2)
    r0, r1 = m, r
    s0, s1 = 0, 1
    while r1 > bound:
        q = r0 // r1
        r0, r1 = r1, r0 - q * r1
        s0, s1 = s1, s0 - q * s1
    if s1 == 0 or abs(s1) > bound or gmpy2.gcd(s1, m) != 1:
        return None
    return mpq(int(r1), int(s1))


# --- vector enumeration mod p --------------------------------------------------------

def _letter_word(s):
    side, i, e = s
    return Word(((i, e),), (), 3) if side == "x" else Word((), ((i, e),), 3)


class VectorEnumeration:
    """Vector enumeration for the cyclic module over F_p (see module docstring)."""

    def __init__(self, relators, p: int, cap: int, max_vectors: int = 100000):
        self.rel = relators           # list of dict Word -> int mod p
        self.p, self.cap, self.max_vectors = p, cap, max_vectors
        self.img = {s: [] for s in GENS}
        self.label = []
        self.repl = {}
        self.pending = []
        self.capped = False

    # sparse vectors are dicts index -> nonzero residue
    def _new(self, lab):
        if len(self.label) >= self.max_vectors:
            raise IncreaseD(f"more than {self.max_vectors} vectors at degree cap {self.cap}")
        n = len(self.label)
        self.label.append(lab)
        for s in GENS:
            self.img[s].append(None)
        return n

    def _full(self, e):
        r = self.repl[e]
        if any(k in self.repl for k in r):
            r = self.reduce(r)
            self.repl[e] = r
        return r

    def reduce(self, v):
        p, out = self.p, {}
        for e, c in v.items():
            items = self._full(e).items() if e in self.repl else ((e, 1),)
            for e2, c2 in items:
                x = (out.get(e2, 0) + c * c2) % p
                if x:
                    out[e2] = x
                else:
                    out.pop(e2, None)
        return out

    def image(self, s, e):
        if self.img[s][e] is None:
            lab = _letter_word(s) * self.label[e]
            if lab.degree() > self.cap:
                self.capped = True
                raise _Cap
            self.img[s][e] = {self._new(lab): 1}
        return self.img[s][e]

    def apply(self, s, v):
        p, out = self.p, {}
        for e, c in self.reduce(v).items():
            for e2, c2 in self.image(s, e).items():
                out[e2] = (out.get(e2, 0) + c * c2) % p
        return self.reduce(out)

    def _add(self, a, b, cb=1):
        p, out = self.p, dict(a)
        for e, c in b.items():
            x = (out.get(e, 0) + cb * c) % p
            if x:
                out[e] = x
            else:
                out.pop(e, None)
        return out

    def coincide(self, v):
        v = self.reduce(v)
        if not v:
            return
        e = max(v)
        ci = pow(v[e], -1, self.p)
        self.repl[e] = {k: (-x * ci) % self.p for k, x in v.items() if k != e}
        for s in GENS:
            if self.img[s][e] is not None:
                self.pending.append((s, e))

    def drain(self):
        while self.pending:
            s, e = self.pending.pop()
            im = self.img[s][e]
            self.img[s][e] = None
            try:
                self.coincide(self._add(im, self.apply(s, self.repl[e]), self.p - 1))
            except _Cap:
                self.img[s][e] = im

    def apply_word(self, w: Word, v):
        letters = [("x", i, e) for i, e in w.x] + [("y", i, e) for i, e in w.y]
        for s in reversed(letters):
            v = self.apply(s, v)
        return v

    def _try(self, fn):
        try:
            fn()
            self.drain()
        except _Cap:
            pass

    def run(self):
        self._new(Word((), (), 3))
        for g in self.rel:
            def mod_rel(g=g):
                v = {}
                for w, c in g.items():
                    v = self._add(v, self.apply_word(w, {0: 1}), c)
                self.coincide(v)
            self._try(mod_rel)
        i = 0
        while i < len(self.label):
            if i not in self.repl:
                self._relators_at(i)
            i += 1
        return self

    def _relators_at(self, i):
        one = {i: 1}
        for s in BASE:
            def cube(s=s):
                v = one
                for _ in range(3):
                    v = self.apply(s, v)
                self.coincide(self._add(v, one, self.p - 1))
            self._try(cube)
            inv = (s[0], s[1], 2)
            for a, b in ((s, inv), (inv, s)):
                self._try(lambda a=a, b=b: self.coincide(
                    self._add(self.apply(a, self.apply(b, one)), one, self.p - 1)))
        for a in BASE[:3]:
            for b in BASE[3:]:
                def comm(a=a, b=b):
                    v1 = self.apply(a, self.apply(b, one))
                    v2 = self.apply(b, self.apply(a, one))
                    self.coincide(self._add(v1, v2, self.p - 1))
                self._try(comm)

    # -- results --
    def alive(self):
        return [e for e in range(len(self.label)) if e not in self.repl]

    def complete(self):
        return all(self.img[s][e] is not None for e in self.alive() for s in GENS)

    def matrices(self):
        """rho(s) for the 6 base letters as dicts col -> {row: residue} on alive vectors."""
        al = self.alive()
        pos = {e: k for k, e in enumerate(al)}
        out = {}
        for s in BASE:
            cols = []
            for e in al:
                v = self.reduce(self.img[s][e])
                cols.append({pos[k]: c for k, c in v.items()})
            out[s] = cols
        return out


# --- the closure -----------------------------------------------------------------

@dataclass
class ClosureModule:
    cap: int
    basis: list                     # Word labels, basis[k] psi is the k-th basis vector
    rho: dict                       # ('x'|'y', i) -> dense KNum matrix on the basis
    stabilized: bool
    dims: dict                      # cap -> dimension found mod p
    primes: list
    n_relations: int                # coincidences used at cap (first embedding)
    checks: dict = field(default_factory=dict)

    @property
    def dim(self):
        return len(self.basis)

    def dump(self) -> str:
        from .ncalg import format_word
        lines = [f"closure cap={self.cap} dim={self.dim} stabilized={self.stabilized}",
                 f"dims {self.dims}", f"primes {self.primes}",
                 f"coincidences {self.n_relations}"]
        lines += [f"check {k} {v}" for k, v in self.checks.items()]
        lines += [f"basis {k} {format_word(w)}" for k, w in enumerate(self.basis)]
        return "\n".join(lines) + "\n"


def _relators_mod(ann, p, z0, w0):
    return [{w: knum_mod(KNum.coerce(c), p, z0, w0) for w, c in g.terms.items()}
            for _, g in ann.items()]


def _enumerate(ann, cap, p, emb, max_vectors):
    ve = VectorEnumeration(_relators_mod(ann, p, *emb), p, cap, max_vectors).run()
    if not ve.complete():
        raise IncreaseD(f"coset table not closed at degree cap {cap}")
    return ve


def _coords_from_embeddings(p, embs):
    """Inverse of the 6x6 map (c_ab) -> (sum c_ab z0^a w0^b) over all embeddings."""
    V = nmod_mat([[z0 ** a * w0 ** b % p for b in (0, 1) for a in (0, 1, 2)] for z0, w0 in embs], p)
    return V.inv()


def _crt(r1, m1, r2, m2):
    return (r1 + m1 * ((r2 - r1) * pow(m1, -1, m2) % m2)) % (m1 * m2), m1 * m2


def closure(ann, D: int = 6, max_vectors: int = 100000, check_next: bool = True,
            max_primes: int = 6) -> ClosureModule:
    """Exact closure H_J at degree cap D.  Raises IncreaseD if it does not close."""
    primes = primes_1_mod_9()
    p = next(primes)
    embs = embeddings(p)
    runs = [_enumerate(ann, D, p, e, max_vectors) for e in embs]
    labels = runs[0].label
    alive = runs[0].alive()
    for r in runs[1:]:
        if r.alive() != alive or r.label != labels:
            raise IncreaseD("enumeration structure differs between embeddings (unlucky prime)")
    dims = {D: len(alive)}
    stabilized = None
    if check_next:
        dims[D + 1] = len(_enumerate(ann, D + 1, p, embs[0], max_vectors).alive())
        stabilized = dims[D + 1] == dims[D]
        if not stabilized:
            raise IncreaseD(f"dimension changes from {dims[D]} to {dims[D + 1]} at cap {D + 1}")
    basis = [labels[e] for e in alive]
    n = len(basis)

    def residues(runs, p):
        Vinv = _coords_from_embeddings(p, embeddings(p))
        mats = [r.matrices() for r in runs]
        out = {}
        for s in BASE:
            for col in range(n):
                rows = set().union(*(m[s][col].keys() for m in mats))
                for row in rows:
                    vals = nmod_mat([[m[s][col].get(row, 0)] for m in mats], p)
                    c = Vinv * vals
                    out[(s, row, col)] = [int(c[k, 0]) for k in range(6)]
        return out

    acc, M = residues(runs, p), p
    used = [p]
    while True:
        rho = _reconstruct(acc, M, n)
        if rho is not None:
            checks = verify_closure_rho(rho, basis, ann)
            if all(checks.values()):
                break
        if len(used) >= max_primes:
            raise IncreaseD("rational reconstruction did not stabilize")
        p = next(primes)
        used.append(p)
        runs = [_enumerate(ann, D, p, e, max_vectors) for e in embeddings(p)]
        if any(r.alive() != alive or r.label != labels for r in runs):
            continue
        new = residues(runs, p)
        keys = set(acc) | set(new)
        merged = {}
        for k in keys:
            a = acc.get(k, [0] * 6)
            b = new.get(k, [0] * 6)
            merged[k] = [_crt(x, M, y, p)[0] for x, y in zip(a, b)]
        acc, M = merged, M * p
    return ClosureModule(D, basis, rho, bool(stabilized), dims, used, len(runs[0].repl), checks)


def _reconstruct(acc, M, n):
    rho = {(s[0], s[1]): [[KNum(0)] * n for _ in range(n)] for s in BASE}
    for (s, row, col), cs in acc.items():
        qs = []
        for c in cs:
            q = rational_reconstruct(c, M)
            if q is None:
                return None
            qs.append(q)
        rho[(s[0], s[1])][row][col] = KNum(FNum(*qs[:3]), FNum(*qs[3:]))
    return rho


# --- exact checks on rho ---------------------------------------------------------------

def _sparse_cols(Mx):
    n = len(Mx)
    return [{r: Mx[r][c] for r in range(n) if not Mx[r][c].is_zero()} for c in range(n)]


def _sp_apply(cols, v):
    out = {}
    for c, x in v.items():
        for r, y in cols[c].items():
            t = out.get(r, KNum(0)) + y * x
            if t.is_zero():
                out.pop(r, None)
            else:
                out[r] = t
    return out


def _word_vec(cols, w: Word, v, cache=None):
    letters = [("x", i, e) for i, e in w.x] + [("y", i, e) for i, e in w.y]
    for side, i, e in reversed(letters):
        for _ in range(e):
            v = _sp_apply(cols[(side, i)], v)
    return v


def verify_closure_rho(rho, basis, ann) -> dict:
    """Exact checks: X_i^3 = 1, [X_i, Y_j] = 0, g e0 = 0, basis[k] e0 = e_k."""
    n = len(basis)
    cols = {k: _sparse_cols(m) for k, m in rho.items()}
    units = [{k: KNum(1)} for k in range(n)]
    out = {}
    ok = True
    for key, c in cols.items():
        for u in units:
            v = u
            for _ in range(3):
                v = _sp_apply(c, v)
            if v != u:
                ok = False
                break
    out["order3"] = ok
    ok = True
    for i in (1, 2, 3):
        for j in (1, 2, 3):
            a, b = cols[("x", i)], cols[("y", j)]
            for u in units:
                if _sp_apply(a, _sp_apply(b, u)) != _sp_apply(b, _sp_apply(a, u)):
                    ok = False
    out["commute"] = ok
    e0 = units[0]
    words = set()
    for _, g in ann.items():
        words.update(g.terms)
    wv = {w: _word_vec(cols, w, e0) for w in words}
    ok = True
    for _, g in ann.items():
        acc = {}
        for w, c in g.terms.items():
            for r, x in wv[w].items():
                acc[r] = acc.get(r, KNum(0)) + x * KNum.coerce(c)
        if any(not x.is_zero() for x in acc.values()):
            ok = False
            break
    out["annihilators"] = ok
    out["cyclic_basis"] = all(_word_vec(cols, w, e0) == units[k] for k, w in enumerate(basis))
    return out


# --- unitarization and block diagonalization --------------------------------------------

def _cnum(m):
    return np.array([[complex(v) for v in r] for r in m], dtype=complex)


def group_words(gens_mod, limit: int = 20000):
    """BFS over the group generated by matrices mod p; returns generator words.

    Keys are exact (residue matrices), so no numerical identification of
    group elements is needed.  Word entries index into ``gens_mod``.
    """
    n = gens_mod[0].nrows()
    p = gens_mod[0].modulus()
    I = nmod_mat([[int(r == c) for c in range(n)] for r in range(n)], p)
    seen = {str(I): ()}
    frontier = [(I, ())]
    while frontier:
        nxt = []
        for M, w in frontier:
            for k, g in enumerate(gens_mod):
                P = g * M
                key = str(P)
                if key not in seen:
                    seen[key] = (k,) + w
                    nxt.append((P, (k,) + w))
                    if len(seen) > limit:
                        raise ValueError("matrix group larger than limit")
        frontier = nxt
    return list(seen.values())


def _mod_matrix(m, p, emb):
    return nmod_mat([[knum_mod(v, p, *emb) for v in r] for r in m], p)


def _word_product(mats, w):
    M = np.eye(len(mats[0]), dtype=complex)
    for k in reversed(w):
        M = mats[k] @ M
    return M


def unitarize(cm: ClosureModule):
    """Group-averaged inner product P and the unitary images L^* rho L^-*.

    Returns (U, (|G_X|, |G_Y|), unitarity error, (words_X, words_Y)).
    """
    p = next(primes_1_mod_9())
    emb = embeddings(p)[0]
    R = {k: _cnum(m) for k, m in cm.rho.items()}
    words = []
    for side in "xy":
        gm = [_mod_matrix(cm.rho[(side, i)], p, emb) for i in (1, 2, 3)]
        words.append(group_words(gm))
    GX = [_word_product([R[("x", i)] for i in (1, 2, 3)], w) for w in words[0]]
    GY = [_word_product([R[("y", j)] for j in (1, 2, 3)], w) for w in words[1]]
    PX = sum(g.conj().T @ g for g in GX) / len(GX)
    P = sum(h.conj().T @ PX @ h for h in GY) / len(GY)
    P = (P + P.conj().T) / 2
    L = np.linalg.cholesky(P)
    Linv_h = np.linalg.inv(L.conj().T)
    U = {k: L.conj().T @ m @ Linv_h for k, m in R.items()}
    err = max(np.linalg.norm(u.conj().T @ u - np.eye(len(u))) for u in U.values())
    return U, (len(GX), len(GY)), err, words


def _clusters(vals, rel=1e-6):
    vals = np.asarray(vals)
    scale = max(1.0, float(np.max(np.abs(vals))))
    groups, cur = [], [0]
    for k in range(1, len(vals)):
        if vals[k] - vals[k - 1] > rel * scale:
            groups.append(cur)
            cur = [k]
        else:
            cur.append(k)
    groups.append(cur)
    return groups


def _rand_herm(n, rng):
    A = rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))
    return A + A.conj().T


def _to_cyc3(v: complex, tol: float = 1e-8) -> Cyc3:
    s = np.sqrt(3) / 2
    b = Fraction(v.imag / s).limit_denominator(36)
    a = Fraction(v.real).limit_denominator(36) + b / 2
    c = Cyc3(mpq(a.numerator, a.denominator), mpq(b.numerator, b.denominator))
    if abs(complex(c) - v) > tol:
        raise ValueError(f"entry {v} is not a small element of Q(w)")
    return c


def canonical_side(mats: dict, tol: float = 1e-8):
    """Canonical form of a tuple of 3x3 unitaries of order 3 under unitary conjugation.

    Returns (canonical KNum matrices, W) with canonical = W^* M W.  The first
    matrix with three distinct eigenvalues is diagonalized with eigenvalues in
    the order 1, w, w^2; phases are fixed so that the first non-commuting
    partner has two entries equal to 1 along its cycle.
    """
    keys = sorted(mats)
    M = {k: np.asarray(mats[k], dtype=complex) for k in keys}
    a = b = None
    for k in keys:
        ev = np.linalg.eigvals(M[k])
        if min(abs(ev[i] - ev[j]) for i in range(3) for j in range(i)) > 1e-6:
            a = k
            break
    if a is None:
        raise ValueError("no generator with distinct eigenvalues")
    for k in keys:
        if np.linalg.norm(M[a] @ M[k] - M[k] @ M[a]) > 1e-6:
            b = k
            break
    ev, Q = np.linalg.eig(M[a])
    # eigenvalue w^k gets label k; rounding first keeps 1 from wrapping to 2 pi
    labels = np.mod(np.rint(np.angle(ev) / (2 * np.pi / 3)), 3)
    order = np.argsort(labels, kind="stable")
    Q = Q[:, order]
    Q, _ = np.linalg.qr(Q)     # orthonormalize (eigenvalues are distinct)
    Q = Q @ np.diag([np.conj(Q[np.argmax(abs(Q[:, c])), c]) / abs(Q[np.argmax(abs(Q[:, c])), c])
                     for c in range(3)])
    d = np.ones(3, dtype=complex)
    if b is not None:
        N = Q.conj().T @ M[b] @ Q
        c, seen = 0, {0}
        while True:
            r = int(np.argmax(abs(N[:, c])))
            if r in seen:
                break
            d[r] = N[r, c] * d[c] / abs(N[r, c])
            seen.add(r)
            c = r
    W = Q @ np.diag(d)
    out = {}
    for k in keys:
        C = W.conj().T @ M[k] @ W
        out[k] = [[KNum.coerce(_to_cyc3(C[r, s], tol)) for s in range(3)] for r in range(3)]
    return out, W


# --- strategies ---------------------------------------------------------------------

@dataclass
class IrreducibleStrategy:
    xs: dict                  # i -> 3x3 KNum
    ys: dict
    psi: list                 # KNum, unnormalized
    psi_norm2: FNum
    value: FNum
    fingerprint: tuple
    label: str = ""

    def as_tuple(self) -> StrategyTuple:
        return StrategyTuple(3, self.xs, self.ys, self.psi, psi_norm2=self.psi_norm2, label=self.label)

    def key(self):
        return canonical_key(self.xs, self.ys)


def canonical_key(xs, ys):
    return (tuple(tuple(tuple(str(v) for v in r) for r in xs[i]) for i in sorted(xs)),
            tuple(tuple(tuple(str(v) for v in r) for r in ys[j]) for j in sorted(ys)))


def _k_nullspace(A):
    """Exact nullspace basis over K by Gauss-Jordan elimination."""
    M = [list(r) for r in A]
    nr, nc = len(M), len(M[0])
    piv, r = [], 0
    for c in range(nc):
        p = next((i for i in range(r, nr) if not M[i][c].is_zero()), None)
        if p is None:
            continue
        M[r], M[p] = M[p], M[r]
        inv = M[r][c].inverse()
        M[r] = [x * inv for x in M[r]]
        for i in range(nr):
            if i != r and not M[i][c].is_zero():
                f = M[i][c]
                M[i] = [x - f * y for x, y in zip(M[i], M[r])]
        piv.append(c)
        r += 1
        if r == nr:
            break
    free = [c for c in range(nc) if c not in piv]
    basis = []
    for fc in free:
        v = [KNum(0)] * nc
        v[fc] = KNum(1)
        for i, pc in enumerate(piv):
            v[pc] = -M[i][fc]
        basis.append(v)
    return basis


def optimal_state(xs, ys, lam: FNum | None = None):
    """The unique (up to scale) eigenvector of p(X, Y) for eigenvalue lam, exactly."""
    lam = optimal_value() if lam is None else lam
    P = evaluate_matrix(build_p(3).observable_form, xs, ys, check=False)
    n = len(P)
    A = [[P[r][c] - (KNum(lam) if r == c else KNum(0)) for c in range(n)] for r in range(n)]
    ker = _k_nullspace(A)
    if len(ker) != 1:
        return None, len(ker)
    v = ker[0]
    first = next(x for x in v if not x.is_zero())
    inv = first.inverse()
    return [x * inv for x in v], 1


def _norm2(psi) -> FNum:
    s = KNum(0)
    for v in psi:
        s = s + v * v.conj()
    return s.as_fnum()


def _side_traces(mats, length):
    """tr of every word of length <= length in the given matrices (exact)."""
    keys = sorted(mats)
    out = {(): KNum(3)}
    prods = {(): mat_eye(3)}
    for L in range(1, length + 1):
        for w in itertools.product(keys, repeat=L):
            M = mat_mul(prods[w[:-1]], mats[w[-1]])
            prods[w] = M
            out[w] = M[0][0] + M[1][1] + M[2][2]
    return out


def fingerprint(xs, ys, length: int = 4) -> tuple:
    """Traces of all words of length <= length in X_1..X_3, Y_1..Y_3 on C^3 (x) C^3."""
    tx, ty = _side_traces(xs, length), _side_traces(ys, length)
    out = []
    for L in range(length + 1):
        for a in range(L + 1):
            for wx in (w for w in tx if len(w) == a):
                for wy in (w for w in ty if len(w) == L - a):
                    out.append(str(tx[wx] * ty[wy]))
    return tuple(out)


def make_strategy(xs, ys, label="") -> IrreducibleStrategy:
    psi, k = optimal_state(xs, ys)
    if psi is None:
        raise ValueError(f"lambda-eigenspace has dimension {k}, expected 1")
    st = StrategyTuple(3, xs, ys, psi, psi_norm2=_norm2(psi), label=label)
    val, _ = score(st)
    return IrreducibleStrategy(xs, ys, psi, st.psi_norm2, val, fingerprint(xs, ys), label)


def block_diagonalize(cm: ClosureModule, seed: int = 0) -> list:
    """Split the unitarized closure into irreducible X (x) Y blocks; exact output."""
    U, orders, err, (wx, wy) = unitarize(cm)
    if err > 1e-8:
        raise ValueError(f"unitarization failed (error {err:.2e})")
    rng = np.random.default_rng(seed)
    n = cm.dim
    GX = [_word_product([U[("x", i)] for i in (1, 2, 3)], w) for w in wx]
    GY = [_word_product([U[("y", j)] for j in (1, 2, 3)], w) for w in wy]
    R = _rand_herm(n, rng)
    C1 = sum(h.conj().T @ R @ h for h in GY) / len(GY)
    C = sum(g.conj().T @ C1 @ g for g in GX) / len(GX)
    vals, vecs = np.linalg.eigh((C + C.conj().T) / 2)
    groups = _clusters(vals)
    sizes = [len(g) for g in groups]
    if any(s != 9 for s in sizes):
        raise ValueError(f"block sizes {sizes} do not split as 3 x 3")
    out = []
    for bi, g in enumerate(groups):
        Bm = vecs[:, g]
        xs = {i: Bm.conj().T @ U[("x", i)] @ Bm for i in (1, 2, 3)}
        ys = {j: Bm.conj().T @ U[("y", j)] @ Bm for j in (1, 2, 3)}
        for side in (xs, ys):
            for m in side.values():
                if np.linalg.norm(m.conj().T @ m - np.eye(9)) > 1e-8:
                    raise ValueError("block is not invariant")
        xa, yb = _tensor_split(xs, ys, rng)
        cx, _ = canonical_side(xa)
        cy, _ = canonical_side(yb)
        out.append(make_strategy(cx, cy, label=f"s{bi + 1}"))
    out.sort(key=lambda s: s.key())
    for k, s in enumerate(out):
        s.label = f"s{k + 1}"
    return out


def _tensor_split(xs, ys, rng):
    def herm_from(mats):
        H = np.zeros((9, 9), dtype=complex)
        for m in mats.values():
            c = rng.standard_normal() + 1j * rng.standard_normal()
            H += c * m + np.conj(c) * m.conj().T
        return H

    def compress(H, mats):
        vals, vecs = np.linalg.eigh(H)
        groups = _clusters(vals)
        if [len(g) for g in groups] != [3, 3, 3]:
            raise ValueError(f"tensor split failed: clusters {[len(g) for g in groups]}")
        E = vecs[:, groups[0]]
        return {k: E.conj().T @ m @ E for k, m in mats.items()}
    return compress(herm_from(ys), xs), compress(herm_from(xs), ys)


# --- verification ----------------------------------------------------------------------

def _word_vectors(xs, ys, psi, words):
    """w(X, Y) psi for each word, via A Psi B^T on the 3 x 3 reshaping."""
    Psi = [[psi[3 * a + b] for b in range(3)] for a in range(3)]
    cache = {}

    def part(mats, letters):
        key = (id(mats), letters)
        if key not in cache:
            M = mat_eye(3)
            for i, e in letters:
                M = mat_mul(M, mat_pow(mats[i], e))
            cache[key] = M
        return cache[key]
    out = {}
    for w in words:
        Bt = [list(r) for r in zip(*part(ys, w.y))]
        T = mat_mul(mat_mul(part(xs, w.x), Psi), Bt)
        out[w] = [T[a][b] for a in range(3) for b in range(3)]
    return out


def annihilated(ann, xs, ys, psi) -> list:
    """Keys of annihilators with g(X, Y) psi != 0 (empty list = all vanish)."""
    words = set()
    for _, g in ann.items():
        words.update(g.terms)
    wv = _word_vectors(xs, ys, psi, words)
    bad = []
    for key, g in ann.items():
        acc = [KNum(0)] * len(psi)
        for w, c in g.terms.items():
            cc = KNum.coerce(c)
            acc = [a + cc * x for a, x in zip(acc, wv[w])]
        if any(not a.is_zero() for a in acc):
            bad.append(key)
    return bad


def _distinct_triples():
    return [t for t in itertools.permutations((1, 2, 3))]


def verify_strategy(s, ann=None, lam: FNum | None = None) -> dict:
    """Exact checks for a 3 x 3 strategy; returns name -> (ok, detail)."""
    if isinstance(s, IrreducibleStrategy):
        s = s.as_tuple()
    lam = optimal_value() if lam is None else lam
    rep = {}
    for side, mats in (("X", s.xs), ("Y", s.ys)):
        bad = [i for i, m in mats.items()
               if not (mat_is_identity(mat_mul(mat_adj(m), m)) and mat_is_identity(mat_pow(m, 3)))]
        rep[f"{side}_order3_unitary"] = (not bad, f"failing {bad}" if bad else "")
        bad = []
        for i, j, k in _distinct_triples():
            lhs = mat_mul(mat_mul(mats[i], mats[j]), mats[k])
            rhs = mat_mul(mat_mul(mats[k], mats[i]), mats[j])
            if lhs != rhs:
                bad.append((i, j, k))
        rep[f"{side}_braid"] = (not bad, f"failing {bad}" if bad else "")
    # cross-commutation holds by the tensor structure X (x) I, I (x) Y
    rep["cross_commute"] = (s.dimA * s.dimB == len(s.psi), "tensor-product form")
    try:
        val, _ = score(s)
        rep["value"] = (val == lam, f"value {val}" + ("" if val == lam else " (suboptimal)"))
    except ValueError as e:
        rep["value"] = (False, str(e))
    rho = s.reduced_state_A()
    third = KNum(FNum(mpq(1, 3)))
    mm = all(rho[r][c] == (third if r == c else KNum(0)) for r in range(s.dimA) for c in range(s.dimA))
    rep["maximally_mixed"] = (mm, "" if mm else "Tr_B(psi psi*) != I/3")
    if ann is not None:
        bad = annihilated(ann, s.xs, s.ys, s.psi)
        rep["annihilated"] = (not bad, f"{len(bad)} annihilators nonzero" if bad else f"{len(ann)} vanish")
    return rep


# --- symmetries and equivalence ------------------------------------------------------------

def _w(k):
    return np.exp(2j * np.pi * (k % 3) / 3)


def _idx(i):
    r = i % 3
    return 3 if r == 0 else r


def symmetry_maps():
    """Strategy-level generators of the symmetry group (numeric matrices)."""
    inv = np.linalg.inv
    return {
        "swap": lambda X, Y: (dict(Y), dict(X)),
        "negate": lambda X, Y: ({i: X[_idx(-i)] for i in X}, {j: Y[_idx(-j)] for j in Y}),
        "shift_x": lambda X, Y: ({i: X[_idx(i + 1)] for i in X}, {j: _w(j) * Y[j] for j in Y}),
        "shift_y": lambda X, Y: ({i: _w(i) * X[i] for i in X}, {j: Y[_idx(j + 1)] for j in Y}),
        "invert_x": lambda X, Y: ({i: inv(X[i]) for i in X}, {j: inv(Y[_idx(-j)]) for j in Y}),
        "invert_y": lambda X, Y: ({i: inv(X[_idx(-i)]) for i in X}, {j: inv(Y[j]) for j in Y}),
    }


def _numeric(mats):
    return {k: _cnum(m) if not isinstance(m, np.ndarray) else m for k, m in mats.items()}


def _key_numeric(X, Y):
    cx, _ = canonical_side(X)
    cy, _ = canonical_side(Y)
    return canonical_key(cx, cy)


def symmetry_orbit(xs, ys, limit: int = 1000) -> set:
    """Canonical keys of all images of (xs, ys) under the symmetry maps."""
    maps = symmetry_maps()
    X, Y = _numeric(xs), _numeric(ys)
    start = _key_numeric(X, Y)
    seen = {start}
    frontier = [(X, Y)]
    while frontier:
        nxt = []
        for X, Y in frontier:
            for f in maps.values():
                X2, Y2 = f(X, Y)
                k = _key_numeric(X2, Y2)
                if k not in seen:
                    seen.add(k)
                    nxt.append((X2, Y2))
                    if len(seen) > limit:
                        raise ValueError("orbit larger than limit")
        frontier = nxt
    return seen


def equivalence_class(s, t) -> str:
    fs = s.fingerprint if isinstance(s, IrreducibleStrategy) else fingerprint(s.xs, s.ys)
    ft = t.fingerprint if isinstance(t, IrreducibleStrategy) else fingerprint(t.xs, t.ys)
    if fs == ft:
        return "unitarily-equivalent"
    if _key_numeric(_numeric(t.xs), _numeric(t.ys)) in symmetry_orbit(s.xs, s.ys):
        return "symmetry-related"
    return "inequivalent"


def match_unitary(reference: StrategyTuple, target: IrreducibleStrategy, tol: float = 1e-10):
    """Unitary V = V_A (x) V_B with V^* ref V = target, or None.

    The canonical forms must agree exactly; V is then verified numerically on
    every operator and on the state (up to a phase).
    """
    X, Y = _numeric(reference.xs), _numeric(reference.ys)
    cx, WA = canonical_side(X)
    cy, WB = canonical_side(Y)
    if canonical_key(cx, cy) != target.key():
        return None
    TX, TY = _numeric(target.xs), _numeric(target.ys)
    err = max(max(np.linalg.norm(WA.conj().T @ X[i] @ WA - TX[i]) for i in X),
              max(np.linalg.norm(WB.conj().T @ Y[j] @ WB - TY[j]) for j in Y))
    V = np.kron(WA, WB)
    a = np.array([complex(v) for v in reference.psi])
    b = np.array([complex(v) for v in target.psi])
    a, b = V.conj().T @ a / np.linalg.norm(a), b / np.linalg.norm(b)
    err = max(err, 1 - abs(np.vdot(a, b)))
    return V if err < tol else None


def matrix_group_exact(mats, limit: int = 1000):
    """Elements of the group generated by exact matrices (BFS) and its center."""
    gens = list(mats)
    n = len(gens[0])
    I = mat_eye(n)

    def key(M):
        return tuple(tuple(str(v) for v in r) for r in M)
    seen = {key(I): I}
    frontier = [I]
    while frontier:
        nxt = []
        for M in frontier:
            for g in gens:
                P = mat_mul(g, M)
                k = key(P)
                if k not in seen:
                    seen[k] = P
                    nxt.append(P)
                    if len(seen) > limit:
                        raise ValueError("group larger than limit")
        frontier = nxt
    elems = list(seen.values())
    center = [M for M in elems if all(mat_mul(M, g) == mat_mul(g, M) for g in gens)]
    return elems, center


# --- flatness ------------------------------------------------------------------------

@dataclass
class FlatnessReport:
    rank_n: int
    rank_low: int
    delta: int
    flat: bool
    tol: float
    rank_Z: int | None = None
    rank_sum_ok: bool | None = None
    spectrum: list = field(default_factory=list)


def numeric_rank(M, tol: float):
    s = np.linalg.svd(np.asarray(M, dtype=complex), compute_uv=False)
    if len(s) == 0 or s[0] == 0:
        return 0, s
    return int(np.sum(s > tol * s[0])), s


def moment_from_dual(prob, res, msdp):
    """The 91 x 91 moment matrix of the level-n dual optimum.

    The dual slack block S^pi pairs with Z'(H) for Hermitian H; probing with
    H = E_ii, E_ij + E_ji, i(E_ij - E_ji) gives N^pi with <S, Z'(H)> = sum
    H_ab N_ab.  Each slot block of B^* M B equals N^pi / d_pi, where B holds
    the symmetry-adapted polynomials as columns.  M is normalized to M_11 = 1.
    """
    basis = prob.basis
    irr = {p.name: p for p in basis.irreps}
    s3 = np.sqrt(3) / 2
    words = msdp.words
    widx = {w: k for k, w in enumerate(words)}
    cols, blocks = [], []
    for bi, name in enumerate(prob.block_names):
        S = res.block_float(bi, "S")
        m = S.shape[0] // 2

        def pair(Hm):
            A, Bt = Hm.real, Hm.imag / s3
            Zp = np.block([[A / 2, -Bt / 2], [Bt / 2, 2 * A / 3]])
            return float(np.sum(S * Zp))
        N = np.zeros((m, m), dtype=complex)
        for a in range(m):
            E = np.zeros((m, m), dtype=complex)
            E[a, a] = 1
            N[a, a] = pair(E)
            for b in range(a + 1, m):
                E = np.zeros((m, m), dtype=complex)
                E[a, b] = E[b, a] = 1
                re = pair(E) / 2
                E = np.zeros((m, m), dtype=complex)
                E[a, b], E[b, a] = 1j, -1j
                im = -pair(E) / 2
                N[a, b] = re + 1j * im
                N[b, a] = re - 1j * im
        dim = irr[name].dim
        for j in range(dim):
            for i in range(m):
                v = np.zeros(len(words), dtype=complex)
                for w, c in basis.poly(name, i, j).terms.items():
                    v[widx[w]] = complex(c)
                cols.append(v)
            blocks.append(N / dim)
    Bm = np.array(cols).T
    C = np.zeros((len(words), len(words)), dtype=complex)
    k = 0
    for Nb in blocks:
        m = len(Nb)
        C[k:k + m, k:k + m] = Nb
        k += m
    Binv = np.linalg.inv(Bm)
    M = Binv.conj().T @ C @ Binv
    one = widx[Word.identity(3)]
    M = M / M[one, one].real
    return (M + M.conj().T) / 2


def moment_consistency(M, msdp) -> float:
    """Largest spread of M over an equality class (0 for a genuine moment matrix)."""
    worst = 0.0
    for pairs in msdp.classes.values():
        vals = [M[a, b] for a, b in pairs]
        worst = max(worst, max(abs(v - vals[0]) for v in vals))
    return worst


def flatness_check(M, words, low_words, delta: int = 1, tol: float = 1e-9, rank_Z=None) -> FlatnessReport:
    idx = [words.index(w) for w in low_words]
    rn, s = numeric_rank(M, tol)
    rl, _ = numeric_rank(np.asarray(M)[np.ix_(idx, idx)], tol)
    rep = FlatnessReport(rn, rl, delta, rn == rl, tol, spectrum=[float(x) for x in s])
    if rank_Z is not None:
        rep.rank_Z = rank_Z
        rep.rank_sum_ok = rank_Z + rn == len(words)
    return rep


def rank_of_primal(prob, res, tol: float = 1e-9) -> int:
    """sum over blocks of d_pi * rank(H^pi) for the numeric primal."""
    irr = {p.name: p for p in prob.basis.irreps}
    s3 = np.sqrt(3) / 2
    total = 0
    for bi, name in enumerate(prob.block_names):
        Z = res.block_float(bi, "X")
        m = Z.shape[0] // 2
        H = Z[:m, :m] + 0.75 * Z[m:, m:] + 1j * s3 * (Z[m:, :m] - Z[:m, m:])
        total += irr[name].dim * numeric_rank((H + H.conj().T) / 2, tol)[0]
    return total


def strategy_moments(s: StrategyTuple, words, prec: int = 256):
    """M_ab = psi^* w_a^* w_b psi / psi^* psi in mpmath at the given precision."""
    with mpmath.workprec(prec):
        def cm(m):
            return mpmath.matrix([[v.to_mpc(prec) for v in r] for r in m])
        X = {i: cm(m) for i, m in s.xs.items()}
        Y = {j: cm(m) for j, m in s.ys.items()}
        psi = mpmath.matrix([v.to_mpc(prec) for v in s.psi])
        psi = psi / mpmath.sqrt(mpmath.fsum(abs(v) ** 2 for v in psi))
        vecs = [_apply_word_mp(w, X, Y, psi) for w in words]
        n = len(words)
        M = mpmath.matrix(n, n)
        for a in range(n):
            for b in range(a, n):
                v = mpmath.fsum(mpmath.conj(x) * y for x, y in zip(vecs[a], vecs[b]))
                M[a, b] = v
                M[b, a] = mpmath.conj(v)
        return M


def _apply_word_mp(w: Word, X, Y, psi):
    eye = mpmath.eye(3)
    A, Bm = eye, eye
    for i, e in w.x:
        A = A * X[i] ** e
    for j, e in w.y:
        Bm = Bm * Y[j] ** e
    Psi = mpmath.matrix(3, 3)
    for a in range(3):
        for b in range(3):
            Psi[a, b] = psi[3 * a + b]
    T = A * Psi * Bm.T
    return [T[a, b] for a in range(3) for b in range(3)]


def gns_extract(M, words, low_words, rel_tol=None, prec: int = 256):
    """Flat extraction: Gram vectors of M, then the operators X_kY_l by least squares.

    Returns (value, operators) where value = sum_w c_w psi^* w(Q) psi for the
    CHSH mod 3 polynomial, with X_k^n Y_l^n evaluated as (X_kY_l)^n.
    """
    with mpmath.workprec(prec):
        n = M.rows
        rel_tol = mpmath.mpf(2) ** (-prec // 2) if rel_tol is None else rel_tol
        # pivoted Cholesky: M = V^* V
        R = M.copy()
        Vrows, piv = [], []
        diag = [R[i, i].real for i in range(n)]
        top = max(diag)
        while True:
            k = max(range(n), key=lambda i: diag[i] if i not in piv else -1)
            if diag[k] <= rel_tol * top:
                break
            piv.append(k)
            row = [R[k, j] / mpmath.sqrt(diag[k]) for j in range(n)]
            Vrows.append(row)
            for i in range(n):
                for j in range(n):
                    R[i, j] -= mpmath.conj(row[i]) * row[j]
            diag = [R[i, i].real for i in range(n)]
        r = len(Vrows)
        V = mpmath.matrix(r, n)
        for a in range(r):
            for b in range(n):
                V[a, b] = Vrows[a][b]
        widx = {w: k for k, w in enumerate(words)}
        low = [widx[w] for w in low_words]
        Vl = mpmath.matrix(r, len(low))
        for a in range(r):
            for b, k in enumerate(low):
                Vl[a, b] = V[a, k]
        pinv = Vl.H * mpmath.inverse(Vl * Vl.H)
        ops = {}
        for k in (1, 2, 3):
            for l in (1, 2, 3):
                g = Word(((k, 1),), ((l, 1),), 3)
                T = mpmath.matrix(r, len(low))
                for b, wk in enumerate(low):
                    T[:, b] = V[:, widx[g * words[wk]]]
                ops[(k, l)] = T * pinv
        psi = V[:, widx[Word.identity(3)]]
        val = mpmath.mpc(0)
        for w, c in build_p(3).observable_form.terms.items():
            if w.is_identity():
                val += c.to_mpc(prec) * (psi.H * psi)[0]
                continue
            (k, e), (l, e2) = w.x[0], w.y[0]
            Q = ops[(k, l)] ** e
            val += c.to_mpc(prec) * (psi.H * Q * psi)[0]
        return val, ops, r


__all__ = [
    "IncreaseD", "VectorEnumeration", "ClosureModule", "closure", "verify_closure_rho",
    "embeddings", "primes_1_mod_9", "rational_reconstruct", "knum_mod",
    "unitarize", "block_diagonalize", "canonical_side", "IrreducibleStrategy", "make_strategy",
    "optimal_state", "fingerprint", "verify_strategy", "annihilated", "symmetry_maps",
    "symmetry_orbit", "equivalence_class", "match_unitary", "matrix_group_exact",
    "group_words", "FlatnessReport", "moment_from_dual", "moment_consistency",
    "flatness_check", "rank_of_primal", "strategy_moments", "gns_extract", "numeric_rank",
]
