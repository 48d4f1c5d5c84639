"""Rounding a numeric SOS solution to an exact certificate over F, and checking it.

Per irrep block the real variable Z (size 2m) only enters the constraints
through the Hermitian m x m matrix

    H = (I, si I) Z (I; -si I) = A + si * Bt,   A = Z11 + 3/4 Z22,  Bt = Z21 - Z12,

and every H >= 0 comes from the PSD block Z' = [[A/2, -Bt/2], [Bt/2, 2A/3]].
The optimal face is not a single point, so rounding entry by entry does not
give an exact solution.  Instead:

  1. recognize lambda in F;
  2. recognize the kernel of each H in K (row-reduced, small heights);
  3. write H = U W U^* with an exact basis U of the orthogonal complement;
  4. round W to dyadic rationals and apply the minimum-norm F-linear
     correction that makes all constraint rows hold exactly;
  5. factor Z' = T Zhat T^T by exact pivoted LDL^T, with every pivot sign
     decided by sign_of.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from math import gcd

import mpmath
import numpy as np
from flint import fmpq, fmpq_mat, fmpz_mat

from .bellgame import build_p
from .exactnum import FNum, KNum, mpq, parse_fnum, recognize, sign_of
from .ncalg import NCPoly, evaluate_matrix, format_word
from .sdp import BlockSDP, block_factor, reconstruct_poly
from .solver import SolveResult, arb_to_mpf, select_rows


class RoundingError(Exception):
    pass


@dataclass
class ExactCertificate:
    d: int
    n: int
    lam: FNum
    block_names: list
    blocks: list            # Z^pi, 2m x 2m, FNum
    T: list                 # 2m x r, FNum
    Zhat: list              # r x r diagonal, FNum
    problem_hash: str
    meta: dict = field(default_factory=dict)


@dataclass
class VerifyReport:
    passed: bool
    lam: FNum
    checks: dict                      # name -> (bool, detail)
    violated_words: list = field(default_factory=list)

    def summary(self) -> str:
        lines = [f"{'PASS' if self.passed else 'FAIL'} lambda = {self.lam}"]
        for k, (ok, det) in self.checks.items():
            lines.append(f"  {k}: {'ok' if ok else 'FAIL'} {det}")
        return "\n".join(lines)


# --- small helpers ------------------------------------------------------------------

def _F(q) -> FNum:
    return q if isinstance(q, FNum) else FNum(q)


def _dyadic(x, bits: int) -> mpq:
    return mpq(int(mpmath.nint(x * mpmath.mpf(2) ** bits)), 2 ** bits)


def _knum_from_mpc(v, bits):
    """Recognize a complex number as x0 + x1 w with x0, x1 in F (or None)."""
    s = mpmath.sqrt(3) / 2
    x1 = recognize(v.imag / s, bits, denominator_bound=10**6) if abs(v.imag) > mpmath.mpf(2) ** (-bits) else FNum(0)
    if x1 is None:
        return None
    re = recognize(v.real, bits, denominator_bound=10**6) if abs(v.real) > mpmath.mpf(2) ** (-bits) else FNum(0)
    if re is None:
        return None
    return KNum(re + x1 * mpq(1, 2), x1)


def _hermitian_numeric(Z):
    """H = A + i s Bt from the real 2m x 2m block (mpmath)."""
    n = len(Z)
    m = n // 2
    s = mpmath.sqrt(3) / 2
    H = mpmath.matrix(m, m)
    for i in range(m):
        for j in range(m):
            A = Z[i][j] + mpmath.mpf(3) / 4 * Z[m + i][m + j]
            Bt = Z[m + i][j] - Z[i][m + j]
            H[i, j] = mpmath.mpc(A, s * Bt)
    # symmetrize against round-off
    for i in range(m):
        for j in range(i, m):
            v = (H[i, j] + mpmath.conj(H[j, i])) / 2
            H[i, j], H[j, i] = v, mpmath.conj(v)
    return H


def _numeric_rref(rows, m):
    M = [list(r) for r in rows]
    piv, r = [], 0
    for c in range(m):
        if r >= len(M):
            break
        p = max(range(r, len(M)), key=lambda i: abs(M[i][c]))
        if abs(M[p][c]) < mpmath.mpf(10) ** -8:
            continue
        M[r], M[p] = M[p], M[r]
        pv = M[r][c]
        M[r] = [x / pv for x in M[r]]
        for i in range(len(M)):
            if i != r:
                f = M[i][c]
                M[i] = [a - f * b for a, b in zip(M[i], M[r])]
        piv.append(c)
        r += 1
    return M[:r], piv


def z_prime(Hx):
    """Real PSD block [[A/2, -Bt/2], [Bt/2, 2A/3]] from an exact Hermitian H over K."""
    m = len(Hx)
    Z = [[FNum(0)] * (2 * m) for _ in range(2 * m)]
    for i in range(m):
        for j in range(m):
            A = Hx[i][j].real_part()
            Bt = Hx[i][j].imag_over_s()
            Z[i][j] = A * mpq(1, 2)
            Z[m + i][m + j] = A * mpq(2, 3)
            Z[m + i][j] = Bt * mpq(1, 2)
            Z[i][m + j] = -Bt * mpq(1, 2)
    return Z


# --- exact pivoted LDL^T --------------------------------------------------------------

def ldl_pivoted(Z):
    """Exact symmetric pivoted LDL^T over F.

    Returns (T, D, rank) with Z = T diag(D) T^T, or raises RoundingError if Z
    is not PSD (negative pivot, or zero pivot with a nonzero row).
    """
    n = len(Z)
    S = [[_F(x) for x in r] for r in Z]
    perm = list(range(n))
    L = [[FNum(0)] * n for _ in range(n)]
    D = []
    k = 0
    while k < n:
        # pivot: largest diagonal entry by value
        p = max(range(k, n), key=lambda i: S[i][i].to_mpf(64))
        if S[p][p].is_zero():
            for i in range(k, n):
                for j in range(k, n):
                    if not S[i][j].is_zero():
                        raise RoundingError(f"zero pivot with nonzero entry at step {k}")
            break
        if sign_of(S[p][p]) < 0:
            raise RoundingError(f"negative pivot at step {k}")
        S[k], S[p] = S[p], S[k]
        for r in S:
            r[k], r[p] = r[p], r[k]
        L[k], L[p] = L[p], L[k]
        perm[k], perm[p] = perm[p], perm[k]
        d = S[k][k]
        dinv = d.inverse()
        L[k][k] = FNum(1)
        for i in range(k + 1, n):
            L[i][k] = S[i][k] * dinv
        for i in range(k + 1, n):
            if S[i][k].is_zero():
                continue
            li = L[i][k]
            for j in range(k + 1, n):
                if not S[k][j].is_zero():
                    S[i][j] = S[i][j] - li * S[k][j]
        D.append(d)
        k += 1
    rank = len(D)
    T = [[FNum(0)] * rank for _ in range(n)]
    for i in range(n):
        for c in range(rank):
            T[perm[i]][c] = L[i][c]
    return T, D, rank


def _primitive_scale(col):
    """Rational s with s*col having coprime integer coordinates."""
    den, num = 1, 0
    for x in col:
        for q in x.coeffs():
            if q:
                den = den * int(q.denominator) // gcd(den, int(q.denominator))
    for x in col:
        for q in x.coeffs():
            if q:
                num = gcd(num, int(q * den))
    return mpq(den, num or 1)


# --- the F-linear correction -------------------------------------------------------

_MZ = FNum(0, 1).mul_matrix()
_MZ2 = FNum(0, 0, 1).mul_matrix()
_MI = [[1, 0, 0], [0, 1, 0], [0, 0, 1]]


def _rep(comps, transpose=False):
    """Regular representation of an F-matrix given as rational components
    (M0, M1, M2) with M = M0 + z M1 + z^2 M2, as an fmpq_mat."""
    M0, M1, M2 = comps
    R, C = len(M0), len(M0[0]) if M0 else 0
    if transpose:
        R, C = C, R
    out = [[0] * (3 * C) for _ in range(3 * R)]
    for i in range(R):
        for j in range(C):
            a, b = (j, i) if transpose else (i, j)
            c0, c1, c2 = M0[a][b], M1[a][b], M2[a][b]
            if not (c0 or c1 or c2):
                continue
            for r in range(3):
                for s in range(3):
                    v = c0 * _MI[r][s] + c1 * _MZ[r][s] + c2 * _MZ2[r][s]
                    if v:
                        out[3 * i + r][3 * j + s] = fmpq(int(v.numerator), int(v.denominator))
    return fmpq_mat(out)


def _to_mpq(x: fmpq) -> mpq:
    return mpq(int(x.p), int(x.q))


# --- rounding ----------------------------------------------------------------------

def round_solution(numeric: SolveResult, prob: BlockSDP, lam_bits: int | None = None,
                   kernel_bits: int | None = None, round_bits: int = 64,
                   kernel_tol: float | None = None, sanity: float = 1e-8,
                   log=None) -> ExactCertificate:
    say = log or (lambda *a: None)
    gap = max(mpmath.mpf(numeric.gap), mpmath.mpf(2) ** (-numeric.prec))
    acc_bits = int(-mpmath.log(gap, 2))
    if lam_bits is None:
        lam_bits = max(40, min(numeric.prec, acc_bits - 8))
    if kernel_bits is None:
        kernel_bits = max(32, min(128, acc_bits // 2 - 6))
    if kernel_tol is None:
        kernel_tol = float(max(mpmath.mpf(10) ** -20, 1e4 * mpmath.sqrt(gap)))

    with mpmath.workprec(numeric.prec):
        lam = recognize(numeric.lam, lam_bits, denominator_bound=10**6)
        if lam is None:
            raise RoundingError(f"lambda = {mpmath.nstr(numeric.lam, 30)} not recognized in F at {lam_bits} bits")
        say(f"lambda recognized: {lam}")

        # per-block numeric H, exact kernel, exact range basis U, numeric W
        Us, Wn, Ms = [], [], []
        for bi, name in enumerate(prob.block_names):
            Z = numeric.block_matrix(bi)
            H = _hermitian_numeric(Z)
            m = H.rows
            E, Q = mpmath.eighe(H)
            scale = max(mpmath.mpf(1), max(abs(e) for e in E))
            ks = [k for k in range(m) if E[k] < kernel_tol * scale]
            for k in range(m):
                if E[k] < -kernel_tol * scale:
                    raise RoundingError(f"block {name}: eigenvalue {mpmath.nstr(E[k], 5)} is negative")
            V = []
            if ks:
                rows = [[Q[i, k] for i in range(m)] for k in ks]
                R, piv = _numeric_rref(rows, m)
                for r, row in enumerate(R):
                    ex = []
                    for j, v in enumerate(row):
                        if j in piv:
                            ex.append(KNum(1 if piv.index(j) == r else 0))
                            continue
                        kv = _knum_from_mpc(v, kernel_bits)
                        if kv is None:
                            raise RoundingError(f"block {name}: kernel entry ({r}, {j}) = "
                                                f"{mpmath.nstr(v, 20)} not recognized in K")
                        ex.append(kv)
                    V.append(ex)
                # sanity: H v ~ 0
                for r, v in enumerate(V):
                    vn = [v_.to_mpc(numeric.prec) for v_ in v]
                    res = max(abs(sum(H[i, j] * vn[j] for j in range(m))) for i in range(m))
                    if res > 1e-8 * scale:
                        raise RoundingError(f"block {name}: recognized kernel vector {r} has residual {mpmath.nstr(res, 5)}")
                piv_set = piv
            else:
                piv_set = []
            # U: null space of conj(V) (orthogonal complement of the kernel)
            free = [j for j in range(m) if j not in piv_set]
            U = [[KNum(0)] * len(free) for _ in range(m)]
            for c, f in enumerate(free):
                U[f][c] = KNum(1)
                for r, p in enumerate(piv_set):
                    U[p][c] = -V[r][f].conj()
            r_ = len(free)
            Un = mpmath.matrix(m, r_)
            for i in range(m):
                for c in range(r_):
                    Un[i, c] = U[i][c].to_mpc(numeric.prec)
            G = Un.H * Un
            Gi = G ** -1
            W = Gi * Un.H * H * Un * Gi
            Us.append(U)
            Wn.append(W)
            Ms.append(m)
            say(f"block {name}: size {m}, kernel {len(ks)}")

        # parameters: per block, W_aa (F), and W_ab = x0 + x1 w for a < b (two F each)
        params = []
        p0 = []
        s = mpmath.sqrt(3) / 2
        for bi, W in enumerate(Wn):
            r_ = W.rows
            for a in range(r_):
                params.append((bi, "d", a, a))
                p0.append(_dyadic(W[a, a].real, round_bits))
                for b in range(a + 1, r_):
                    x1 = W[a, b].imag / s
                    x0 = W[a, b].real + x1 / 2
                    params.append((bi, "x0", a, b))
                    p0.append(_dyadic(x0, round_bits))
                    params.append((bi, "x1", a, b))
                    p0.append(_dyadic(x1, round_bits))

    # constraint rows (identity row first); rows act on Z' entries
    obj, sel = select_rows(prob)
    rowsel = [obj] + list(sel)
    nr, npar = len(rowsel), len(params)
    Lc = [[[mpq(0)] * npar for _ in range(nr)] for _ in range(3)]
    by_block = {}
    for ri, k in enumerate(rowsel):
        for (bi, a, b), v in prob.rows[k].coeffs.items():
            by_block.setdefault(bi, []).append((ri, a, b, v))
    for pi, (bi, kind, a, b) in enumerate(params):
        U = Us[bi]
        m = Ms[bi]
        dH = [[KNum(0)] * m for _ in range(m)]
        if kind == "d":
            for i in range(m):
                for j in range(m):
                    dH[i][j] = U[i][a] * U[j][a].conj()
        else:
            c = KNum(1) if kind == "x0" else KNum.w(1)
            cc = c.conj()
            for i in range(m):
                for j in range(m):
                    dH[i][j] = U[i][a] * c * U[j][b].conj() + U[i][b] * cc * U[j][a].conj()
        dZ = z_prime(dH)
        for ri, ra, rb, v in by_block.get(bi, ()):
            x = dZ[ra][rb]
            if x.is_zero():
                continue
            for t in range(3):
                ct = x.coeffs()[t]
                if ct:
                    Lc[t][ri][pi] += ct * v
    # right-hand side b in F
    bF = []
    for ri, k in enumerate(rowsel):
        r = prob.rows[k]
        bF.append(_F(r.rhs) + lam * r.lam)
    # residual r = b - L p0 (p0 rational)
    resid = []
    for ri in range(nr):
        acc = [mpq(0), mpq(0), mpq(0)]
        for t in range(3):
            row = Lc[t][ri]
            acc[t] = sum((row[j] * p0[j] for j in range(npar) if row[j]), mpq(0))
        resid.append(bF[ri] - FNum(*acc))
    # independent rows over F, chosen in float64 at the real embedding
    zf = float(FNum(0, 1).to_mpf(64))
    Lf = np.array(Lc[0], dtype=float) + zf * np.array(Lc[1], dtype=float) + zf * zf * np.array(Lc[2], dtype=float)
    keep, basis = [], []
    for ri in range(nr):
        v = Lf[ri].copy()
        nv = np.linalg.norm(v)
        for q in basis:
            v -= np.dot(q, v) * q
        if nv > 0 and np.linalg.norm(v) > 1e-9 * nv:
            basis.append(v / np.linalg.norm(v))
            keep.append(ri)
    say(f"correction system: {len(keep)} independent rows of {nr}, {npar} parameters over F")
    comps = [[Lc[t][ri] for ri in keep] for t in range(3)]
    RL = _rep(comps)
    RLt = _rep(comps, transpose=True)
    Gm = RL * RLt
    rv = fmpq_mat([[fmpq(int(c.numerator), int(c.denominator))] for ri in keep for c in resid[ri].coeffs()])
    try:
        x = Gm.solve(rv)
    except ZeroDivisionError:
        raise RoundingError("correction system is singular") from None
    dx = RLt * x
    delta = [FNum(_to_mpq(dx[3 * j, 0]), _to_mpq(dx[3 * j + 1, 0]), _to_mpq(dx[3 * j + 2, 0]))
             for j in range(npar)]
    dmax = max((abs(float(d.to_mpf(64))) for d in delta), default=0.0)
    say(f"largest correction {dmax:.3e}")
    if dmax > sanity:
        raise RoundingError(f"constraint correction {dmax:.3e} exceeds the sanity threshold {sanity:.1e}")
    pex = [FNum(p) + d for p, d in zip(p0, delta)]

    # assemble exact W, H, Z', factor
    blocks, Ts, Zh = [], [], []
    Wex = [[[KNum(0)] * Wn[bi].rows for _ in range(Wn[bi].rows)] for bi in range(len(Wn))]
    for (bi, kind, a, b), v in zip(params, pex):
        if kind == "d":
            Wex[bi][a][a] = KNum(v)
        elif kind == "x0":
            Wex[bi][a][b] = Wex[bi][a][b] + KNum(v)
        else:
            Wex[bi][a][b] = Wex[bi][a][b] + KNum(FNum(0), v)
    for bi, name in enumerate(prob.block_names):
        W = Wex[bi]
        r_ = len(W)
        for a in range(r_):
            for b in range(a + 1, r_):
                W[b][a] = W[a][b].conj()
        U, m = Us[bi], Ms[bi]
        UW = [[sum((U[i][c] * W[c][e] for c in range(r_)), KNum(0)) for e in range(r_)] for i in range(m)]
        Hx = [[sum((UW[i][e] * U[j][e].conj() for e in range(r_)), KNum(0)) for j in range(m)] for i in range(m)]
        Zp = z_prime(Hx)
        try:
            T, D, rank = ldl_pivoted(Zp)
        except RoundingError as e:
            raise RoundingError(f"block {name}: {e}") from None
        for c in range(rank):
            sc = _primitive_scale([T[i][c] for i in range(len(T))])
            for i in range(len(T)):
                T[i][c] = T[i][c] * sc
            D[c] = D[c] / (sc * sc)
        Zhat = [[D[i] if i == j else FNum(0) for j in range(rank)] for i in range(rank)]
        if rank != 2 * r_:
            raise RoundingError(f"block {name}: rank {rank} differs from 2 x {r_}")
        blocks.append(Zp)
        Ts.append(T)
        Zh.append(Zhat)
    return ExactCertificate(prob.d, prob.n, lam, list(prob.block_names), blocks, Ts, Zh, prob.hash(),
                            meta={"lam_bits": lam_bits, "kernel_bits": kernel_bits,
                                  "round_bits": round_bits, "max_correction": dmax})


# --- verification ------------------------------------------------------------------

def _mat_T_D_Tt(T, Zhat):
    n = len(T)
    r = len(Zhat)
    TD = [[sum((T[i][k] * Zhat[k][l] for k in range(r) if not Zhat[k][l].is_zero()), FNum(0))
           for l in range(r)] for i in range(n)]
    return [[sum((TD[i][l] * T[j][l] for l in range(r)), FNum(0)) for j in range(n)] for i in range(n)]


def _pd_exact(M) -> tuple[bool, str]:
    """Exact LDL^T of a square matrix without pivoting; PD iff all pivots positive."""
    n = len(M)
    S = [[_F(x) for x in r] for r in M]
    for k in range(n):
        sg = sign_of(S[k][k])
        if sg <= 0:
            return False, f"pivot {k} has sign {sg}"
        inv = S[k][k].inverse()
        for i in range(k + 1, n):
            if S[i][k].is_zero():
                continue
            f = S[i][k] * inv
            for j in range(k + 1, n):
                S[i][j] = S[i][j] - f * S[k][j]
    return True, f"{n} positive pivots"


def _components(M):
    """F-matrix -> ([M0, M1, M2] as fmpz_mat, den) with M = (M0 + M1 z + M2 z^2) / den."""
    rows, cols = len(M), len(M[0]) if M else 0
    entries = [_F(x).coeffs() for r in M for x in r]
    den = 1
    for cs in entries:
        for c in cs:
            den = den * int(c.denominator) // gcd(den, int(c.denominator))
    return [fmpz_mat(rows, cols, [int(cs[k] * den) for cs in entries]) for k in range(3)], den


def _fmat_mul(A, B):
    """Product of component triples, reduced with z^3 = 3z - 1."""
    C = [None] * 5
    for i in range(3):
        for j in range(3):
            t = A[i] * B[j]
            C[i + j] = t if C[i + j] is None else C[i + j] + t
    return [C[0] - C[3], C[1] + 3 * C[3] - C[4], C[2] + 3 * C[4]]


def _factorization_holds(Z, T, Zh) -> bool:
    """Z == T Zhat T^T, compared as integer matrices after clearing denominators."""
    if not T or not T[0]:
        return all(_F(x).is_zero() for r in Z for x in r)
    (Tc, dT), (Dc, dD), (Zc, dZ) = _components(T), _components(Zh), _components(Z)
    TDT = _fmat_mul(_fmat_mul(Tc, Dc), [m.transpose() for m in Tc])
    return all(a * dZ == b * (dT * dT * dD) for a, b in zip(TDT, Zc))


def _violated_rows(prob: BlockSDP, blocks, lam: FNum) -> list:
    """Words whose coefficient in sum Z-terms - (lambda - p) is nonzero.

    Every entry is brought to a common denominator first so that the row sums
    run over Python integers.
    """
    den = 1
    for B in blocks:
        for r in B:
            for x in r:
                for c in _F(x).coeffs():
                    den = den * int(c.denominator) // gcd(den, int(c.denominator))
    for c in lam.coeffs():
        den = den * int(c.denominator) // gcd(den, int(c.denominator))
    ints = [[[tuple(int(c * den) for c in _F(x).coeffs()) for x in r] for r in B] for B in blocks]
    lam_i = tuple(int(c * den) for c in lam.coeffs())
    bad = []
    for row in prob.rows:
        rden = 1
        for v in list(row.coeffs.values()) + [row.rhs]:
            rden = rden * int(mpq(v).denominator) // gcd(rden, int(mpq(v).denominator))
        acc = [0, 0, 0]
        for (bi, a, b), v in row.coeffs.items():
            v = int(mpq(v) * rden)
            e = ints[bi][a][b]
            acc[0] += v * e[0]
            acc[1] += v * e[1]
            acc[2] += v * e[2]
        acc[0] -= int(mpq(row.rhs) * rden) * den
        for k in range(3):
            acc[k] -= row.lam * rden * lam_i[k]
        if any(acc):
            bad.append(row.word)
    return sorted(set(bad), key=lambda w: w.sort_key())


def verify_certificate(cert: ExactCertificate, prob: BlockSDP, direct: bool = False) -> VerifyReport:
    """Exact checks of a certificate against a problem.

    The identity lambda - p = sum of squares is checked row by row on the
    problem's constraints; ``direct=True`` instead expands the Hermitian
    squares from the C^pi matrices (independent of the rows, but slower).
    """
    checks = {}
    checks["problem"] = ((cert.d, cert.n, cert.block_names) == (prob.d, prob.n, list(prob.block_names)),
                         f"d={cert.d} n={cert.n}")
    if not checks["problem"][0]:
        return VerifyReport(False, cert.lam, checks)
    ok_sym, ok_fac, ok_pd, det_pd = True, True, True, []
    for bi, name in enumerate(cert.block_names):
        Z, T, Zh = cert.blocks[bi], cert.T[bi], cert.Zhat[bi]
        n = len(Z)
        if n != prob.block_sizes[bi] or any(len(r) != n for r in Z) or len(T) != n \
                or any(len(r) != len(Zh) for r in T) or any(len(r) != len(Zh) for r in Zh):
            ok_sym = ok_fac = False
            continue
        if any(Z[i][j] != Z[j][i] for i in range(n) for j in range(i + 1, n)):
            ok_sym = False
        if not _factorization_holds(Z, T, Zh):
            ok_fac = False
        pd, det = _pd_exact(Zh)
        if not pd:
            ok_pd = False
            det_pd.append(f"{name}: {det}")
    checks["symmetric"] = (ok_sym, "")
    checks["factorization"] = (ok_fac, "Z = T Zhat T^T")
    checks["zhat_pd"] = (ok_pd, "; ".join(det_pd) or "all pivots positive")
    violated = []
    if ok_sym and checks["problem"][0]:
        if direct:
            sos = reconstruct_poly(prob, cert.blocks)
            target = NCPoly.const(KNum(cert.lam), prob.d) - build_p(prob.d).observable_form
            violated = sorted((sos - target).terms, key=lambda w: w.sort_key())
        else:
            violated = _violated_rows(prob, cert.blocks, cert.lam)
        checks["identity"] = (not violated, "lambda - p matches" if not violated else
                              "violated words: " + ", ".join(format_word(w) for w in violated[:10]))
    else:
        checks["identity"] = (False, "skipped")
    passed = all(v[0] for v in checks.values())
    return VerifyReport(passed, cert.lam, checks, violated)


# --- annihilators ------------------------------------------------------------------

@dataclass
class AnnihilatorSet:
    # (block name, column i, slot j) -> NCPoly; weight = Zhat_ii
    polys: dict
    weights: dict

    def __len__(self):
        return len(self.polys)

    def items(self):
        return self.polys.items()


def annihilators(cert: ExactCertificate, prob: BlockSDP) -> AnnihilatorSet:
    """g_{pi,i,j} = sum_b T_{b,i} f(b) e_{b mod m, j}, f = (1, ..., -si, ...)."""
    basis = prob.basis
    irr = {p.name: p for p in basis.irreps}
    polys, weights = {}, {}
    for bi, name in enumerate(cert.block_names):
        T = cert.T[bi]
        n = len(T)
        m = n // 2
        dim = irr[name].dim
        es = {(k, j): basis.poly(name, k, j) for k in range(m) for j in range(dim)}
        for i in range(len(cert.Zhat[bi])):
            for j in range(dim):
                g = NCPoly(d=prob.d)
                for b in range(n):
                    if T[b][i].is_zero():
                        continue
                    f = KNum.coerce(block_factor(b, m, False)) * T[b][i]
                    for w, c in es[(b % m, j)].terms.items():
                        g._acc(w, f * c)
                polys[(name, i, j)] = g
                weights[(name, i, j)] = cert.Zhat[bi][i][i]
    return AnnihilatorSet(polys, weights)


def apply_poly(g: NCPoly, xs, ys, psi, exact=True):
    """g(X, Y) psi."""
    M = evaluate_matrix(g, xs, ys, check=False)
    if exact:
        return [sum((M[r][c] * psi[c] for c in range(len(psi))), KNum(0)) for r in range(len(psi))]
    return M @ psi


def sos_residual(ann: AnnihilatorSet, strategy, prec: int = 256) -> float:
    """sum_g Zhat_g ||g(X,Y)psi||^2 / ||psi||^2, evaluated in mpmath.

    The annihilator coefficients are rationals with hundreds of digits, so a
    plain float evaluation overflows; exact or float strategies are lifted
    to ``prec`` bits first.
    """
    from .robust import MPStrategy, certificate_residual, mp_strategy
    if getattr(strategy, "exact", False):
        s = mp_strategy(strategy.xs, strategy.ys, strategy.psi, prec)
    else:
        with mpmath.workprec(prec):
            def lift(m):
                return mpmath.matrix([[mpmath.mpc(complex(x)) for x in r] for r in np.asarray(m)])
            v = mpmath.matrix([mpmath.mpc(complex(c)) for c in np.asarray(strategy.psi)])
            v = v / mpmath.sqrt(mpmath.fsum(abs(c) ** 2 for c in v))
            s = MPStrategy({i: lift(m) for i, m in strategy.xs.items()},
                           {j: lift(m) for j, m in strategy.ys.items()}, v, prec)
    return float(certificate_residual(s, ann))


# --- certificate file --------------------------------------------------------------

def _mat_lines(M):
    return [" ; ".join(str(x) for x in r) for r in M]


def write_certificate(cert: ExactCertificate, path):
    out = [f"BCERT v1; d={cert.d}; n={cert.n}; field=F; minpoly=z^3-3z+1; hash={cert.problem_hash}",
           f"lambda {cert.lam}"]
    for bi, name in enumerate(cert.block_names):
        Z, T, Zh = cert.blocks[bi], cert.T[bi], cert.Zhat[bi]
        out.append(f"block {name} {len(Z)} {len(Zh)}")
        out.append("Z")
        out += _mat_lines(Z)
        out.append("T")
        out += _mat_lines(T)
        out.append("Zhat")
        out += _mat_lines(Zh)
    out.append("end")
    with open(path, "w") as fh:
        fh.write("\n".join(out) + "\n")


def read_certificate(path) -> ExactCertificate:
    with open(path) as fh:
        lines = [ln.rstrip("\n") for ln in fh]
    head = lines[0]
    if not head.startswith("BCERT v1"):
        raise ValueError("line 1: not a BCERT v1 file")
    kv = dict(part.strip().split("=", 1) for part in head.split(";")[1:])
    d, n = int(kv["d"]), int(kv["n"])
    if not lines[1].startswith("lambda "):
        raise ValueError("line 2: expected lambda")
    lam = parse_fnum(lines[1][7:])
    names, blocks, Ts, Zh = [], [], [], []
    k = 2

    def mat(nrows, tag):
        nonlocal k
        if lines[k] != tag:
            raise ValueError(f"line {k + 1}: expected {tag}")
        k += 1
        rows = []
        for _ in range(nrows):
            txt = lines[k]
            rows.append([parse_fnum(t) for t in txt.split(" ; ")] if txt.strip() else [])
            k += 1
        return rows
    while lines[k] != "end":
        parts = lines[k].split()
        if parts[0] != "block":
            raise ValueError(f"line {k + 1}: expected block header")
        name, size, rank = parts[1], int(parts[2]), int(parts[3])
        k += 1
        names.append(name)
        blocks.append(mat(size, "Z"))
        Ts.append(mat(size, "T"))
        Zh.append(mat(rank, "Zhat"))
    return ExactCertificate(d, n, lam, names, blocks, Ts, Zh, kv.get("hash", ""))
