"""The symmetry group of p_d and symmetry-adapted bases.

Gamma = (C_d x C_d) x| (C_2 x C_2), elements (a1, a2, b1, b2).  The C_2 factors
act on C_d x C_d by swapping (b1) and negating (b2).  On words:

    b1:  X_i <-> Y_i
    b2:  X_i -> X_{-i},  Y_j -> Y_{-j}
    t_X: X_i -> X_{i+1}, Y_j -> w^j Y_j
    t_Y: X_i -> w^i X_i, Y_j -> Y_{j+1}

and (a, h) acts as t_X^a1 t_Y^a2 after h.  The two translations commute up to
X -> w^-1 X, Y -> w Y, which is trivial on words whose X and Y exponent sums
agree mod d (every word built from the X_i^k Y_j^k alphabet), so on those words
the action is a genuine representation of Gamma.

Irreps are induced from characters chi_ij(a) = w^(i a1 + j a2) of C_d x C_d
extended by characters of their stabilizer in C_2 x C_2.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from itertools import product

from .exactnum import Cyc3, mpq
from .ncalg import Word, NCPoly


def _w(k: int) -> Cyc3:
    return Cyc3.w(k)


def _root(k: int, d: int) -> Cyc3:
    if d == 3:
        return Cyc3.w(k)
    if d == 2:
        return Cyc3(1 if k % 2 == 0 else -1)
    raise NotImplementedError("phases are exact only for d in {2, 3}")


def _idx(i: int, d: int) -> int:
    """Map an integer to the index range 1..d (d plays the role of 0)."""
    r = i % d
    return d if r == 0 else r


class Gamma:
    """The group for a fixed d; elements are plain tuples (a1, a2, b1, b2)."""

    def __init__(self, d: int = 3):
        self.d = d
        self.elements = [(a1, a2, b1, b2) for b1 in range(2) for b2 in range(2)
                         for a1 in range(d) for a2 in range(d)]
        self.identity = (0, 0, 0, 0)

    @property
    def order(self):
        return len(self.elements)

    def hact(self, b1, b2, a):
        """h . a for a in C_d x C_d."""
        x, y = a
        if b1:
            x, y = y, x
        if b2:
            x, y = -x, -y
        return (x % self.d, y % self.d)

    def mul(self, g, h):
        a = self.hact(g[2], g[3], (h[0], h[1]))
        return ((g[0] + a[0]) % self.d, (g[1] + a[1]) % self.d, g[2] ^ h[2], g[3] ^ h[3])

    def inv(self, g):
        a = self.hact(g[2], g[3], (-g[0], -g[1]))
        return (a[0], a[1], g[2], g[3])

    def generators(self):
        return {"swap": (0, 0, 1, 0), "negate": (0, 0, 0, 1),
                "shift_x": (1, 0, 0, 0), "shift_y": (0, 1, 0, 0)}

    # -- action on words --

    def act(self, g, w: Word):
        """Image of the word w: (phase, word)."""
        d = self.d
        a1, a2, b1, b2 = g
        letters = [("A", i, e) for i, e in w.x] + [("B", i, e) for i, e in w.y]
        out, ph = [], 0
        for side, i, e in letters:
            if b1:
                side = "B" if side == "A" else "A"
            if b2:
                i = _idx(-i, d)
            # t_Y^a2 first, then t_X^a1
            if side == "A":
                ph += a2 * i * e
                i = _idx(i + a1, d)
            else:
                j = _idx(i + a2, d)
                ph += a1 * j * e
                i = j
            out.append((side, i, e))
        sx, sy = [], []
        for side, i, e in out:
            (sx if side == "A" else sy).append((i, e))
        return _root(ph, d), Word.from_parts(sx, sy, d)

    def act_poly(self, g, p: NCPoly) -> NCPoly:
        out = NCPoly(d=p.d)
        for w, c in p.terms.items():
            ph, w2 = self.act(g, w)
            out._acc(w2, c * ph)
        return out


# --- irreducible representations ------------------------------------------------

@dataclass
class Irrep:
    name: str
    orbit_rep: tuple
    rho: tuple           # character values on stabilizer elements, aligned with `stabilizer`
    stabilizer: tuple
    coset_reps: tuple
    dim: int
    matrices: dict = field(repr=False)   # element -> list-of-lists of Cyc3

    def __call__(self, g):
        return self.matrices[g]

    def character(self, g) -> Cyc3:
        m = self.matrices[g]
        s = Cyc3(0)
        for i in range(self.dim):
            s = s + m[i][i]
        return s


def _hmul(h, k):
    return (h[0] ^ k[0], h[1] ^ k[1])


def irreps(d: int = 3, group: Gamma | None = None):
    """Complete list of irreps of Gamma via induction from orbit stabilizers."""
    G = group or Gamma(d)
    if d != 3:
        raise NotImplementedError("exact irreps are tabulated for d = 3 (Q(w) coefficients)")
    H = [(0, 0), (1, 0), (0, 1), (1, 1)]

    def chi(ij, a):
        return (ij[0] * a[0] + ij[1] * a[1]) % d

    def hchi(h, ij):
        # character chi o h^-1 ; h is an involution
        return G.hact(h[0], h[1], ij)

    seen, out = set(), []
    for ij in sorted(product(range(d), repeat=2)):
        if ij in seen:
            continue
        orbit = {hchi(h, ij) for h in H}
        seen |= orbit
        stab = tuple(h for h in H if hchi(h, ij) == ij)
        # coset representatives: first element of each left coset h*Stab, identity first
        cosets, reps = [], []
        for h in H:
            cs = frozenset(_hmul(h, s) for s in stab)
            if cs not in cosets:
                cosets.append(cs)
                reps.append(h)
        # characters of the (elementary abelian) stabilizer: restrictions of chars of H
        rhos = []
        for r1, r2 in product(range(2), repeat=2):
            vals = tuple((-1) ** (r1 * s[0] + r2 * s[1]) for s in stab)
            if vals not in rhos:
                rhos.append(vals)
        for rho in rhos:
            rho_of = dict(zip(stab, rho))
            n = len(reps)
            mats = {}
            for g in G.elements:
                a, h = (g[0], g[1]), (g[2], g[3])
                m = [[Cyc3(0) for _ in range(n)] for _ in range(n)]
                for c in range(n):
                    for cp in range(n):
                        k = _hmul(_hmul(reps[cp], h), reps[c])
                        if k in rho_of:
                            aa = G.hact(reps[cp][0], reps[cp][1], a)
                            m[cp][c] = _w(chi(ij, aa)) * rho_of[k]
                mats[g] = m
            sign = "".join("+" if v == 1 else "-" for v in rho)
            out.append(Irrep(f"{ij[0]}{ij[1]}{sign}", ij, rho, stab, tuple(reps), n, mats))
    return out


def _matmul(a, b):
    n, k, m = len(a), len(b), len(b[0])
    return [[sum((a[i][t] * b[t][j] for t in range(k)), Cyc3(0)) for j in range(m)] for i in range(n)]


def check_irrep(pi: Irrep, G: Gamma) -> bool:
    """Exact homomorphism and unitarity checks."""
    for g in G.elements:
        m = pi(g)
        mh = [[m[j][i].conj() for j in range(pi.dim)] for i in range(pi.dim)]
        prod_ = _matmul(mh, m)
        if any(prod_[i][j] != (1 if i == j else 0) for i in range(pi.dim) for j in range(pi.dim)):
            return False
        for h in G.elements:
            lhs = pi(G.mul(g, h))
            rhs = _matmul(m, pi(h))
            if any(lhs[i][j] != rhs[i][j] for i in range(pi.dim) for j in range(pi.dim)):
                return False
    return True


def character_inner(pi: Irrep, sigma: Irrep, G: Gamma):
    s = Cyc3(0)
    for g in G.elements:
        s = s + pi.character(g) * sigma.character(g).conj()
    return s / G.order


# --- adapted bases -------------------------------------------------------------

def _hdot(u: dict, v: dict) -> Cyc3:
    s = Cyc3(0)
    for k, c in u.items():
        t = v.get(k)
        if t is not None:
            s = s + c.conj() * t
    return s


def _axpy(y: dict, a: Cyc3, x: dict) -> dict:
    out = dict(y)
    for k, c in x.items():
        v = out.get(k, Cyc3(0)) + a * c
        if v.is_zero():
            out.pop(k, None)
        else:
            out[k] = v
    return out


class WordAction:
    """Monomial representation L of Gamma on span(words)."""

    def __init__(self, words, G: Gamma):
        self.words = list(words)
        self.index = {w: k for k, w in enumerate(self.words)}
        self.G = G
        self.table = {}
        for g in G.elements:
            row = []
            for w in self.words:
                ph, w2 = G.act(g, w)
                if w2 not in self.index:
                    raise ValueError(f"word span is not invariant: {w} -> {w2}")
                row.append((self.index[w2], ph))
            self.table[g] = row

    def apply(self, g, v: dict) -> dict:
        out = {}
        row = self.table[g]
        for k, c in v.items():
            k2, ph = row[k]
            out[k2] = out.get(k2, Cyc3(0)) + c * ph
        return {k: c for k, c in out.items() if not c.is_zero()}

    def projector_apply(self, pi: Irrep, alpha: int, beta: int, v: dict) -> dict:
        """p_{alpha beta} v = (dim/|G|) sum_g pi(g^-1)_{beta alpha} L(g) v."""
        G = self.G
        out = {}
        scale = mpq(pi.dim, G.order)
        for g in G.elements:
            c = pi(G.inv(g))[beta][alpha]
            if c.is_zero():
                continue
            row = self.table[g]
            for k, x in v.items():
                k2, ph = row[k]
                out[k2] = out.get(k2, Cyc3(0)) + x * ph * c
        return {k: c * scale for k, c in out.items() if not c.is_zero()}


@dataclass
class AdaptedBasis:
    words: list
    irreps: list
    # vectors[name] = list over multiplicity index i of list over slot j of dict(word index -> Cyc3)
    vectors: dict

    def multiplicity(self, name) -> int:
        return len(self.vectors[name])

    def poly(self, name, i, j) -> NCPoly:
        p = NCPoly(d=self.words[0].d)
        for k, c in self.vectors[name][i][j].items():
            p._acc(self.words[k], c)
        return p

    def dump(self) -> str:
        lines = []
        for pi in self.irreps:
            for i, slots in enumerate(self.vectors[pi.name]):
                for j, vec in enumerate(slots):
                    terms = "; ".join(f"{self.words[k]} : {c}" for k, c in sorted(vec.items()))
                    lines.append(f"{pi.name} {i} {j} | {terms}")
        return "\n".join(lines)


def adapted_basis(words, irreps_list=None, G: Gamma | None = None, verify: bool = True) -> AdaptedBasis:
    words = list(words)
    d = words[0].d
    G = G or Gamma(d)
    irreps_list = irreps_list or irreps(d, G)
    L = WordAction(words, G)
    vectors = {}
    total = 0
    for pi in irreps_list:
        first = []  # orthogonal basis of image of p_11
        norms = []
        for k in range(len(words)):
            v = L.projector_apply(pi, 0, 0, {k: Cyc3(1)})
            for u, nu in zip(first, norms):
                if not v:
                    break
                v = _axpy(v, -(_hdot(u, v) / nu), u)
            if v:
                first.append(v)
                norms.append(_hdot(v, v))
        vecs = []
        for v in first:
            slots = [v] + [L.projector_apply(pi, a, 0, v) for a in range(1, pi.dim)]
            vecs.append(slots)
        vectors[pi.name] = vecs
        total += len(vecs) * pi.dim
    if total != len(words):
        raise ValueError(f"adapted basis has {total} vectors for {len(words)} words")
    basis = AdaptedBasis(words, irreps_list, vectors)
    if verify:
        verify_adapted(basis, L)
    return basis


def verify_adapted(basis: AdaptedBasis, L: WordAction) -> bool:
    """L(g) e_{i,a} = sum_b pi(g)_{b a} e_{i,b} for all g (exact)."""
    for pi in basis.irreps:
        for slots in basis.vectors[pi.name]:
            for g in L.G.elements:
                m = pi(g)
                for a in range(pi.dim):
                    lhs = L.apply(g, slots[a])
                    rhs = {}
                    for b in range(pi.dim):
                        if not m[b][a].is_zero():
                            rhs = _axpy(rhs, m[b][a], slots[b])
                    if lhs != rhs:
                        raise ValueError(f"adapted basis check failed for {pi.name} at {g}")
    return True
