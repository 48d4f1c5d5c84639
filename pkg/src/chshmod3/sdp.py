"""Symmetry-reduced sum-of-squares program for lambda - p_d and its moment dual.

For each irrep pi with multiplicity m the unknown is a real symmetric 2m x 2m
matrix Z.  The complex Hermitian block is recovered as

    H = (I, s i I) Z (I; -s i I),    s = sqrt(3/4),

so that s i = w + 1/2 lies in Q(w).  The constraint is

    sum_pi sum_j e_{pi,.,j}^* H^pi e_{pi,.,j} = lambda - p    (mod the ideal)

and splitting each word coefficient into its real part and its imaginary part
divided by s gives rational linear equations in the entries of Z.
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from itertools import product

from .bellgame import build_p
from .exactnum import Cyc3, FNum, mpq
from .ncalg import A, B, NCPoly, Word, format_word, normal_form, parse_word
from .symmetry import AdaptedBasis, Gamma, adapted_basis, irreps

SI = Cyc3(mpq(1, 2), 1)          # s*i = w + 1/2
MINUS_SI = Cyc3(mpq(-1, 2), -1)


@dataclass
class BorderVector:
    d: int
    n: int
    words: list

    def __len__(self):
        return len(self.words)


def generator_alphabet(d: int):
    """X_i^k Y_j^k with 1 <= k <= (d-1)/2."""
    kmax = max(1, (d - 1) // 2)
    return [normal_form([(A, i, k), (B, j, k)], d)
            for k in range(1, kmax + 1) for i in range(1, d + 1) for j in range(1, d + 1)]


def border_vector(d: int = 3, n: int = 2) -> BorderVector:
    if n < 1:
        raise ValueError("level must be >= 1")
    alpha = generator_alphabet(d)
    level = [Word.identity(d)]
    seen = {Word.identity(d)}
    for _ in range(n):
        nxt = []
        for w in level:
            for g in alpha:
                u = w * g
                if u not in seen:
                    seen.add(u)
                    nxt.append(u)
        level = nxt
    return BorderVector(d, n, sorted(seen, key=Word.sort_key))


def gram_of_p(d: int, words) -> dict:
    """Hermitian G with v^* G v = p (v = words).

    p is supported on 1, level-one words u and their adjoints; the coefficient
    of u sits at (1, u) and that of u^* at (u, 1).
    """
    p = build_p(d).observable_form
    idx = {w: k for k, w in enumerate(words)}
    one = idx[Word.identity(d)]
    gens = set(generator_alphabet(d))
    G = {}
    for w, c in p.terms.items():
        if w.is_identity():
            G[one, one] = G.get((one, one), Cyc3(0)) + c
        elif w in gens and w in idx:
            G[one, idx[w]] = G.get((one, idx[w]), Cyc3(0)) + c
        elif w.adjoint() in gens and w.adjoint() in idx:
            # c * (w^*)^* 1
            G[idx[w.adjoint()], one] = G.get((idx[w.adjoint()], one), Cyc3(0)) + c
        else:
            raise ValueError(f"support word {w} not in the border vector or its adjoint")
    return G


# --- block SDP -----------------------------------------------------------------

@dataclass
class Row:
    word: Word
    kind: str                 # "re" or "im"
    coeffs: dict              # (block index, a, b) with a <= b -> mpq ; <A, Z> = sum coeff * Z_ab
    rhs: mpq                  # constant part of the right-hand side
    lam: int = 0              # coefficient of lambda on the right-hand side

    def key(self):
        return (self.word.sort_key(), self.kind)


@dataclass
class BlockSDP:
    d: int
    n: int
    block_names: list
    block_sizes: list
    rows: list
    basis: AdaptedBasis | None = None
    cmats: dict | None = None        # name -> m x m list of NCPoly  (C^pi)
    slater: dict | None = None       # {"lambda": mpq, "blocks": [matrices of mpq]}
    meta: dict = field(default_factory=dict)

    def block_index(self, name):
        return self.block_names.index(name)

    def nonzero_rows(self):
        return [r for r in self.rows if r.coeffs or r.rhs or r.lam]

    def hash(self) -> str:
        return hashlib.sha256(export_text(self).encode()).hexdigest()[:16]

    def same_problem(self, other: "BlockSDP") -> bool:
        if (self.d, self.n, self.block_names, self.block_sizes) != \
           (other.d, other.n, other.block_names, other.block_sizes):
            return False
        if len(self.rows) != len(other.rows):
            return False
        for r1, r2 in zip(self.rows, other.rows):
            if (r1.word, r1.kind, r1.coeffs, r1.rhs, r1.lam) != (r2.word, r2.kind, r2.coeffs, r2.rhs, r2.lam):
                return False
        return True

    def residuals_exact(self, lam, blocks):
        """Per-row exact residual <A, Z> - rhs - lam_coeff * lambda (generic ring elements)."""
        out = []
        for r in self.rows:
            s = 0
            for (bi, a, b), v in r.coeffs.items():
                s = blocks[bi][a][b] * v + s
            s = s - r.rhs - lam * r.lam
            out.append(s)
        return out


def _cyc_poly_mul_adj(u: dict, v: dict, words, d) -> NCPoly:
    """(sum u_w w)^* (sum v_w w) mod I."""
    out = {}
    for k1, c1 in u.items():
        w1 = words[k1].adjoint()
        cc = c1.conj()
        for k2, c2 in v.items():
            w = w1 * words[k2]
            prev = out.get(w)
            out[w] = cc * c2 if prev is None else prev + cc * c2
    p = NCPoly(d=d)
    p.terms = {w: c for w, c in out.items() if not c.is_zero()}
    return p


def compute_cmats(basis: AdaptedBasis) -> dict:
    """C^pi_{i i'} = sum_j e_{pi,i,j}^* e_{pi,i',j} mod I."""
    words = basis.words
    d = words[0].d
    out = {}
    for pi in basis.irreps:
        vecs = basis.vectors[pi.name]
        m = len(vecs)
        if m == 0:
            continue
        C = [[None] * m for _ in range(m)]
        for i in range(m):
            for ip in range(i, m):
                acc = NCPoly(d=d)
                for j in range(pi.dim):
                    acc = acc + _cyc_poly_mul_adj(vecs[i][j], vecs[ip][j], words, d)
                C[i][ip] = acc
                if ip != i:
                    C[ip][i] = acc.adjoint()
        out[pi.name] = C
    return out


def block_factor(a: int, m: int, left: bool) -> Cyc3:
    if a < m:
        return Cyc3(1)
    return SI if left else MINUS_SI


def assemble_sos(d: int = 3, n: int = 2, with_slater: bool = True) -> BlockSDP:
    bv = border_vector(d, n)
    G = Gamma(d)
    basis = adapted_basis(bv.words, irreps(d, G), G)
    cmats = compute_cmats(basis)
    names = [pi.name for pi in basis.irreps if pi.name in cmats]
    sizes = [2 * len(cmats[nm]) for nm in names]
    # per word: accumulate complex coefficient maps
    acc = {}
    for bi, nm in enumerate(names):
        C = cmats[nm]
        m = len(C)
        for a in range(2 * m):
            for b in range(a, 2 * m):
                pairs = [(a, b)] if a == b else [(a, b), (b, a)]
                for (x, y) in pairs:
                    f = block_factor(x, m, True) * block_factor(y, m, False)
                    for w, c in C[x % m][y % m].terms.items():
                        row = acc.setdefault(w, {})
                        key = (bi, a, b)
                        v = c * f
                        row[key] = row[key] + v if key in row else v
    p = build_p(d).observable_form
    words = set(acc) | set(p.terms)
    rows = []
    for w in sorted(words, key=Word.sort_key):
        coeffs = acc.get(w, {})
        pc = p.terms.get(w, Cyc3(0))
        pc = pc if isinstance(pc, Cyc3) else Cyc3(pc)
        re = {k: v.real() for k, v in coeffs.items() if v.real() != 0}
        im = {k: v.imag_over_s() for k, v in coeffs.items() if v.imag_over_s() != 0}
        lam = 1 if w.is_identity() else 0
        rows.append(Row(w, "re", re, -pc.real(), lam))
        rows.append(Row(w, "im", im, -pc.imag_over_s(), 0))
    prob = BlockSDP(d, n, names, sizes, rows, basis, cmats)
    prob.meta["border_words"] = len(bv.words)
    if with_slater:
        prob.slater = slater_point(prob)
    return prob


def _cyc_of(v):
    return v if isinstance(v, Cyc3) else Cyc3(v)


def slater_point(prob: BlockSDP, M=1) -> dict:
    """Exact strictly feasible point lambda = M N, Gram M I - G_p, mapped to blocks.

    With F_j = conj(e_{.,j}) (orthogonal columns), a Gram matrix Q in commutant
    form satisfies Q = sum_j F_j H F_j^*, hence H_{ii'} = F_i^* Q F_i' /(|F_i|^2 |F_i'|^2).
    """
    basis = prob.basis
    words = basis.words
    N = len(words)
    Gp = gram_of_p(prob.d, words)
    M = mpq(M)
    blocks = []
    for nm in prob.block_names:
        vecs = basis.vectors[nm]
        m = len(vecs)
        F = [{k: c.conj() for k, c in vecs[i][0].items()} for i in range(m)]
        norms = [sum((c.norm() for c in f.values()), mpq(0)) for f in F]
        H = [[Cyc3(0)] * m for _ in range(m)]
        for i in range(m):
            for ip in range(m):
                # F_i^* (M I - Gp) F_ip
                s = Cyc3(0)
                if i == ip:
                    s = Cyc3(M * norms[i])
                for (a, b), g in Gp.items():
                    fa, fb = F[i].get(a), F[ip].get(b)
                    if fa is not None and fb is not None:
                        s = s - fa.conj() * _cyc_of(g) * fb
                H[i][ip] = s / (norms[i] * norms[ip])
        Aa = [[H[i][j].real() for j in range(m)] for i in range(m)]
        Bt = [[H[i][j].imag_over_s() for j in range(m)] for i in range(m)]
        Z = [[mpq(0)] * (2 * m) for _ in range(2 * m)]
        for i in range(m):
            for j in range(m):
                Z[i][j] = Aa[i][j] / 2
                Z[m + i][m + j] = Aa[i][j] * mpq(2, 3)
                Z[m + i][j] = Bt[i][j] / 2
                Z[i][m + j] = -Bt[i][j] / 2
        blocks.append(Z)
    return {"lambda": M * N, "blocks": blocks}


def reconstruct_poly(prob: BlockSDP, blocks) -> NCPoly:
    """sum_pi sum_j e^* (I, s i I) Z (I; -s i I) e, directly from C^pi (entries in F or Q)."""
    out = NCPoly(d=prob.d)
    from .exactnum import KNum
    for bi, nm in enumerate(prob.block_names):
        C = prob.cmats[nm]
        m = len(C)
        Z = blocks[bi]
        for a in range(2 * m):
            for b in range(2 * m):
                z = Z[a][b]
                if not z:
                    continue
                f = KNum.coerce(block_factor(a, m, True) * block_factor(b, m, False)) * z
                for w, c in C[a % m][b % m].terms.items():
                    out._acc(w, f * c)
    return out


# --- moment SDP ------------------------------------------------------------------

@dataclass
class MomentSDP:
    d: int
    n: int
    words: list
    classes: dict            # Word -> list of (a, b) with words[a]^* words[b] = Word
    gram_p: dict             # (a, b) -> Cyc3
    delta: int

    @property
    def size(self):
        return len(self.words)

    def class_of(self, a, b) -> Word:
        return self.words[a].adjoint() * self.words[b]

    def objective(self, moments):
        """<G_p, M> = sum G_ab M_ab for a moment functional Word -> value."""
        s = 0
        for (a, b), g in self.gram_p.items():
            m = moments(self.class_of(a, b))
            s = s + (complex(g) * m if isinstance(m, complex) else g * m)
        return s


def assemble_moment(d: int = 3, n: int = 2) -> MomentSDP:
    bv = border_vector(d, n)
    words = bv.words
    classes = {}
    for a, wa in enumerate(words):
        wa_adj = wa.adjoint()
        for b, wb in enumerate(words):
            classes.setdefault(wa_adj * wb, []).append((a, b))
    return MomentSDP(d, n, words, classes, gram_of_p(d, words), delta=1)


# --- problem files --------------------------------------------------------------

def _fmt_rhs(r: Row) -> str:
    return f"{r.rhs} + {r.lam}*lambda"


def export_text(prob: BlockSDP) -> str:
    lines = [f"BSDP v1; d={prob.d}; n={prob.n}; field=Q"]
    lines.append(f"blocks {len(prob.block_names)}")
    for nm, sz in zip(prob.block_names, prob.block_sizes):
        lines.append(f"block {nm} {sz}")
    lines.append(f"rows {len(prob.rows)}")
    for r in prob.rows:
        ent = ", ".join(f"({prob.block_names[bi]}, {a}, {b}, {v})"
                        for (bi, a, b), v in sorted(r.coeffs.items()))
        lines.append(f"{r.kind} ({format_word(r.word)}) : [{ent}] = {_fmt_rhs(r)}")
    return "\n".join(lines) + "\n"


def import_text(text: str) -> BlockSDP:
    lines = text.splitlines()

    def err(k, msg):
        raise ValueError(f"line {k + 1}: {msg}")

    head = lines[0]
    if not head.startswith("BSDP v1"):
        err(0, "missing BSDP v1 header")
    kv = dict(part.strip().split("=") for part in head.split(";")[1:])
    d, n = int(kv["d"]), int(kv["n"])
    k = 1
    try:
        nb = int(lines[k].split()[1])
    except (IndexError, ValueError):
        err(k, "expected 'blocks <count>'")
    names, sizes = [], []
    for t in range(nb):
        k += 1
        parts = lines[k].split()
        if len(parts) != 3 or parts[0] != "block":
            err(k, "expected 'block <name> <size>'")
        names.append(parts[1])
        sizes.append(int(parts[2]))
    k += 1
    try:
        nr = int(lines[k].split()[1])
    except (IndexError, ValueError):
        err(k, "expected 'rows <count>'")
    rows = []
    index = {nm: i for i, nm in enumerate(names)}
    for t in range(nr):
        k += 1
        if k >= len(lines):
            err(k, "file ends before all rows were read")
        ln = lines[k]
        try:
            kind, rest = ln.split(" ", 1)
            wtxt, rest = rest[1:].split(") : [", 1)
            ent, rhs = rest.split("] = ", 1)
            coeffs = {}
            if ent.strip():
                for item in ent[1:-1].split("), ("):
                    nm, a, b, v = [x.strip() for x in item.split(",")]
                    coeffs[(index[nm], int(a), int(b))] = mpq(v)
            c0, c1 = rhs.split(" + ")
            rows.append(Row(parse_word(wtxt, d), kind, coeffs, mpq(c0), int(c1.split("*")[0])))
        except (ValueError, KeyError) as e:
            err(k, f"malformed row: {e}")
    return BlockSDP(d, n, names, sizes, rows)


def export_problem(prob: BlockSDP, path, fmt: str = "exact-text", digits: int = 80):
    if fmt == "exact-text":
        with open(path, "w") as fh:
            fh.write(export_text(prob))
    elif fmt == "sdpa-sparse":
        with open(path, "w") as fh:
            fh.write(export_sdpa(prob, digits))
    else:
        raise ValueError(f"unknown format {fmt}")


def import_problem(path) -> BlockSDP:
    with open(path) as fh:
        return import_text(fh.read())


def _dec(q: mpq, digits: int) -> str:
    import mpmath
    if q.denominator == 1:
        return str(q.numerator)
    with mpmath.workdps(digits + 5):
        return mpmath.nstr(mpmath.mpf(int(q.numerator)) / int(q.denominator), digits,
                           strip_zeros=True, min_fixed=-mpmath.inf, max_fixed=mpmath.inf)


def export_sdpa(prob: BlockSDP, digits: int = 80) -> str:
    """SDPA sparse (.dat-s).

    lambda is eliminated through the identity-word real row, giving
    max -<A_1, Z> s.t. <A_u, Z> = b_u over the remaining nonzero rows in
    canonical word order (re before im).  SDPA's dual-side variable is Z; the
    reported optimum equals -(lambda + p_1).
    """
    rows = [r for r in prob.nonzero_rows() if not r.lam]
    obj = [r for r in prob.rows if r.lam][0]
    out = [f"* rows: canonical word order, re then im; objective row {format_word(obj.word)}",
           f"{len(rows)}", f"{len(prob.block_sizes)}", " ".join(str(s) for s in prob.block_sizes),
           " ".join(_dec(r.rhs, digits) for r in rows)]

    def mat_lines(k, coeffs, sign):
        for (bi, a, b), v in sorted(coeffs.items()):
            val = v if a == b else v / 2
            out.append(f"{k} {bi + 1} {a + 1} {b + 1} {_dec(sign * val, digits)}")

    mat_lines(0, obj.coeffs, -1)
    for k, r in enumerate(rows, start=1):
        mat_lines(k, r.coeffs, 1)
    return "\n".join(out) + "\n"
