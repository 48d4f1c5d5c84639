"""Arbitrary-precision primal-dual interior-point method for the block SDP.

The free variable lambda is eliminated through the identity-word real row, so
the problem is put in standard form

    min <C, X>  s.t.  <A_k, X> = b_k,  X = blockdiag(Z^pi) >= 0,
    max b^T y   s.t.  S = C - sum_k y_k A_k >= 0,

with lambda = <C, X> - b_1.  Search directions are HKM with a Mehrotra
predictor-corrector; dense linear algebra is done with python-flint ball
matrices (midpoints only) at the configured precision.  Step lengths use
float64 eigenvalues of the scaled direction followed by a high-precision
Cholesky acceptance test.
"""
from __future__ import annotations

import json
import logging
import time
from dataclasses import dataclass, field

import mpmath
import numpy as np
from flint import arb, arb_mat, ctx, fmpq, fmpq_mat

from .exactnum import mpq
from .sdp import BlockSDP

log = logging.getLogger(__name__)


@dataclass
class SolverConfig:
    prec: int = 256
    gap_tol: float = 1e-30
    feas_tol: float = 1e-30
    max_iter: int = 120
    step_frac: float = 0.98
    verbose: bool = False
    # keep iterating below gap_tol by this factor while progress lasts
    extra_digits_factor: float = 1e-15
    stall_iters: int = 4
    # the Schur complement is squared-condition; build and invert it with extra bits
    schur_prec_factor: int = 2

    def __post_init__(self):
        if self.prec < 128:
            raise ValueError("working precision must be at least 128 bits")
        if self.gap_tol <= 0 or self.feas_tol <= 0:
            raise ValueError("tolerances must be positive")


@dataclass
class SolveResult:
    status: str
    lam: object                  # mpmath.mpf
    primal_obj: object
    dual_obj: object
    gap: object
    primal_residual: object
    dual_residual: object
    iterations: int
    X: list                      # per block: arb_mat
    S: list
    y: list                      # mpmath.mpf per selected row
    rows: list                   # indices into problem.rows of the selected constraints
    objective_row: int
    prec: int
    seconds: float = 0.0
    history: list = field(default_factory=list)

    def block_matrix(self, bi, which="X"):
        """Block as a list of lists of mpmath.mpf."""
        M = (self.X if which == "X" else self.S)[bi]
        return [[arb_to_mpf(M[i, j]) for j in range(M.ncols())] for i in range(M.nrows())]

    def block_float(self, bi, which="X") -> np.ndarray:
        M = (self.X if which == "X" else self.S)[bi]
        return np.array([[float(arb_to_mpf(M[i, j])) for j in range(M.ncols())] for i in range(M.nrows())])


# --- conversions ----------------------------------------------------------------

def arb_to_mpq(x: arb) -> mpq:
    m, e = x.mid().man_exp()
    m, e = int(m), int(e)
    return mpq(m * 2 ** e) if e >= 0 else mpq(m, 2 ** (-e))


def arb_to_mpf(x: arb):
    """Exact conversion of the midpoint (mpmath keeps the full mantissa)."""
    m, e = x.mid().man_exp()
    m = int(m)
    with mpmath.workprec(max(53, m.bit_length() + 2)):
        return mpmath.ldexp(mpmath.mpf(m), int(e))


def _to_arb(q) -> arb:
    q = mpq(q)
    return arb(fmpq(int(q.numerator), int(q.denominator)))


def _float(M: arb_mat) -> np.ndarray:
    return np.array([[float(M[i, j].mid()) for j in range(M.ncols())] for i in range(M.nrows())])


def _eye(n):
    return arb_mat([[1 if i == j else 0 for j in range(n)] for i in range(n)])


def _sym(M: arb_mat) -> arb_mat:
    return ((M + M.transpose()) * arb("0.5")).mid()


def cholesky(M: arb_mat):
    """Lower Cholesky factor at working precision, or None if not PD."""
    n = M.nrows()
    L = [[arb(0)] * n for _ in range(n)]
    for j in range(n):
        s = M[j, j]
        for k in range(j):
            s -= L[j][k] * L[j][k]
        s = s.mid()
        if not s > 0:
            return None
        ljj = s.sqrt().mid()
        L[j][j] = ljj
        for i in range(j + 1, n):
            t = M[i, j]
            for k in range(j):
                t -= L[i][k] * L[j][k]
            L[i][j] = (t / ljj).mid()
    return arb_mat(L)


def _vec(M: arb_mat):
    """vec(M) row-major as a column arb_mat."""
    n = M.nrows()
    return arb_mat([[M[i, j]] for i in range(n) for j in range(n)])


def _unvec(v: arb_mat, n: int, offset: int = 0) -> arb_mat:
    return arb_mat([[v[offset + i * n + j, 0] for j in range(n)] for i in range(n)])


# --- row selection ----------------------------------------------------------------

def select_rows(prob: BlockSDP):
    """Representative rows: one word per orbit of Gamma x {*}, zero rows dropped,
    then a maximal independent subset (exact rank over Q).

    Returns (objective row index, list of constraint row indices).
    """
    from .symmetry import Gamma
    G = Gamma(prob.d)
    words = {}
    for k, r in enumerate(prob.rows):
        words.setdefault(r.word, []).append(k)
    covered, reps = set(), []
    for w in sorted(words, key=lambda u: u.sort_key()):
        if w in covered:
            continue
        reps.append(w)
        for g in G.elements:
            _, w2 = G.act(g, w)
            covered.add(w2)
            covered.add(w2.adjoint())
    cand = []
    obj = None
    for w in reps:
        for k in words[w]:
            r = prob.rows[k]
            if r.lam:
                obj = k
                continue
            if not r.coeffs:
                if r.rhs != 0:
                    raise ValueError(f"infeasible row for word {w}")
                continue
            cand.append(k)
    if obj is None:
        raise ValueError("no identity-word row")
    cols = _col_index(prob)
    # exact independence: rref of the candidate rows (as columns of the transpose)
    mat = [[0] * len(cand) for _ in range(len(cols))]
    for j, k in enumerate(cand):
        for key, v in prob.rows[k].coeffs.items():
            mat[cols[key]][j] = fmpq(int(v.numerator), int(v.denominator))
    R, rank = fmpq_mat(mat).rref()
    pivots, r = [], 0
    for j in range(len(cand)):
        if r < rank and R[r, j] != 0:
            pivots.append(cand[j])
            r += 1
    return obj, pivots


def _col_index(prob: BlockSDP):
    cols = {}
    for bi, n in enumerate(prob.block_sizes):
        for a in range(n):
            for b in range(a, n):
                cols[(bi, a, b)] = len(cols)
    return cols


# --- operators ---------------------------------------------------------------------

class _Ops:
    def __init__(self, prob: BlockSDP, obj: int, rows: list):
        self.sizes = prob.block_sizes
        self.m = len(rows)
        self.b = arb_mat([[_to_arb(prob.rows[k].rhs)] for k in rows])
        self.b0 = prob.rows[obj].rhs
        # V[bi]: m x n^2 matrix of vec(A_k) restricted to block bi
        self.V = []
        self.C = []
        for bi, n in enumerate(self.sizes):
            dense = [[0] * (n * n) for _ in range(self.m)]
            for kk, k in enumerate(rows):
                for (bj, a, b), v in prob.rows[k].coeffs.items():
                    if bj != bi:
                        continue
                    self._put(dense[kk], n, a, b, v)
            self.V.append(arb_mat([[_q(x) for x in r] for r in dense]))
            cdense = [0] * (n * n)
            for (bj, a, b), v in prob.rows[obj].coeffs.items():
                if bj == bi:
                    self._put(cdense, n, a, b, v)
            self.C.append(arb_mat([[_q(cdense[i * n + j]) for j in range(n)] for i in range(n)]))
        self.VT = [V.transpose() for V in self.V]
        # Gram matrix of the constraint map, used to project directions back
        # onto A(dX) = r_p (the Schur system is far worse conditioned than AA^*)
        AAt = arb_mat(self.m, self.m)
        for V, VT in zip(self.V, self.VT):
            AAt += V * VT
        self.AAt_inv = AAt.solve(_eye(self.m), algorithm="approx").mid()

    def project(self, dXs, rp):
        """dX + A^*((AA^*)^-1 (rp - A(dX)))."""
        corr = (self.AAt_inv * (rp - self.A(dXs))).mid()
        return [(dX + T).mid() for dX, T in zip(dXs, self.At(corr))]

    @staticmethod
    def _put(row, n, a, b, v):
        if a == b:
            row[a * n + a] = row[a * n + a] + v
        else:
            row[a * n + b] = row[a * n + b] + v / 2
            row[b * n + a] = row[b * n + a] + v / 2

    def A(self, Xs):
        out = arb_mat(self.m, 1)
        for V, X in zip(self.V, Xs):
            out += V * _vec(X)
        return out.mid()

    def At(self, y):
        return [_unvec((VT * y).mid(), n) for VT, n in zip(self.VT, self.sizes)]

    def inner(self, Xs, Ys):
        s = arb(0)
        for X, Y in zip(Xs, Ys):
            n = X.nrows()
            for i in range(n):
                for j in range(n):
                    s += X[i, j] * Y[i, j]
        return s.mid()

    def schur(self, Xs, Sinv):
        M = arb_mat(self.m, self.m)
        for V, X, Si in zip(self.V, Xs, Sinv):
            n = X.nrows()
            K = arb_mat([[X[i, p] * Si[q, j] for p in range(n) for q in range(n)]
                         for i in range(n) for j in range(n)])
            W = (V * K.transpose()).mid()
            M += V * W.transpose()
        M = M.mid()
        return _sym(M)


def _q(x):
    if isinstance(x, int):
        return x
    x = mpq(x)
    return fmpq(int(x.numerator), int(x.denominator))


def _norm(v: arb_mat):
    s = arb(0)
    for i in range(v.nrows()):
        for j in range(v.ncols()):
            s += v[i, j] * v[i, j]
    return s.sqrt().mid()


def _norm_blocks(Ms):
    s = arb(0)
    for M in Ms:
        for i in range(M.nrows()):
            for j in range(M.ncols()):
                s += M[i, j] * M[i, j]
    return s.sqrt().mid()


def _max_step(Xs, dXs, Ls=None):
    """Largest alpha with X + alpha dX >= 0 (estimated in float64 after scaling)."""
    amax = mpmath.inf
    for bi, (X, dX) in enumerate(zip(Xs, dXs)):
        L = Ls[bi] if Ls else cholesky(X)
        if L is None:
            raise ArithmeticError(f"iterate lost positive definiteness in block {bi}")
        Li = L.solve(_eye(L.nrows()), algorithm="approx").mid()
        T = _float((Li * dX * Li.transpose()).mid())
        T = (T + T.T) / 2
        ev = np.linalg.eigvalsh(T).min()
        if ev < 0:
            amax = min(amax, -1.0 / ev)
    return amax


def _all_pd(Xs):
    return all(cholesky(X) is not None for X in Xs)


def solve(prob: BlockSDP, cfg: SolverConfig | None = None) -> SolveResult:
    cfg = cfg or SolverConfig()
    old_prec = ctx.prec
    ctx.prec = cfg.prec
    t0 = time.time()
    try:
        return _solve(prob, cfg, t0)
    finally:
        ctx.prec = old_prec


def _solve(prob: BlockSDP, cfg: SolverConfig, t0: float) -> SolveResult:
    obj, rows = select_rows(prob)
    ops = _Ops(prob, obj, rows)
    nb = len(ops.sizes)
    ntot = sum(ops.sizes)
    if prob.slater is not None:
        Xs = [arb_mat([[_q(v) for v in r] for r in Z]) for Z in prob.slater["blocks"]]
    else:
        Xs = [_eye(n) for n in ops.sizes]
    tau = max(1.0, float(_norm_blocks(ops.C).mid()))
    Ss = [_eye(n) * arb(tau) for n in ops.sizes]
    y = arb_mat(ops.m, 1)
    gap_tol = mpmath.mpf(cfg.gap_tol)
    feas_tol = mpmath.mpf(cfg.feas_tol)
    half = arb("0.5")
    history = []
    status = "max-iter"
    best, stall = None, 0

    def gap_of(Xs_, Ss_, y_):
        p_ = ops.inner(ops.C, Xs_)
        d_ = (ops.b.transpose() * y_)[0, 0]
        return arb_to_mpf(abs(p_ - d_) / (1 + abs(p_) + abs(d_)))
    it = 0
    for it in range(1, cfg.max_iter + 1):
        rp = (ops.b - ops.A(Xs)).mid()
        Aty = ops.At(y)
        Rd = [(C - At - S).mid() for C, At, S in zip(ops.C, Aty, Ss)]
        mu = ops.inner(Xs, Ss) / ntot
        pobj = ops.inner(ops.C, Xs)
        dobj = (ops.b.transpose() * y)[0, 0]
        gap = abs(pobj - dobj) / (1 + abs(pobj) + abs(dobj))
        pres = _norm(rp) / (1 + _norm(ops.b))
        dres = _norm_blocks(Rd) / (1 + _norm_blocks(ops.C))
        history.append((it, float(pobj), float(gap.mid()), float(pres.mid()), float(dres.mid())))
        if cfg.verbose:
            log.info("it %d pobj %.16e gap %.2e pres %.2e dres %.2e", it, float(pobj),
                     float(gap.mid()), float(pres.mid()), float(dres.mid()))
        feasible = arb_to_mpf(pres) < feas_tol and arb_to_mpf(dres) < feas_tol
        g = arb_to_mpf(gap)
        if feasible and (best is None or g < best[0]):
            best, stall = (g, Xs, Ss, y), 0
        elif best is not None:
            stall += 1
        if feasible and g < gap_tol * cfg.extra_digits_factor:
            break
        if stall >= cfg.stall_iters:
            break
        ctx.prec = cfg.prec * cfg.schur_prec_factor
        Sinv = [S.solve(_eye(S.nrows()), algorithm="approx").mid() for S in Ss]
        Sinv = [_sym(Si) for Si in Sinv]
        M = ops.schur(Xs, Sinv)
        Minv = M.solve(_eye(ops.m), algorithm="approx").mid()
        ctx.prec = cfg.prec

        # predictor (sigma = 0)
        dy_a, dS_a, dX_a = _hkm(ops, Xs, Sinv, Rd, rp, Minv, arb(0))
        ap = min(1.0, cfg.step_frac * _max_step(Xs, dX_a))
        ad = min(1.0, cfg.step_frac * _max_step(Ss, dS_a))
        mu_aff = ops.inner([(X + dX * arb(ap)).mid() for X, dX in zip(Xs, dX_a)],
                           [(S + dS * arb(ad)).mid() for S, dS in zip(Ss, dS_a)]) / ntot
        sigma = (mu_aff / mu) ** 3 if mu > 0 else arb(0)
        sigma = min(max(float(sigma.mid()), 0.0), 1.0)
        corr = [(dX * dS * Si).mid() for dX, dS, Si in zip(dX_a, dS_a, Sinv)]
        dy, dS, dX = _hkm(ops, Xs, Sinv, Rd, rp, Minv, (mu * arb(sigma)).mid(), corr)
        ap = min(1.0, cfg.step_frac * _max_step(Xs, dX))
        ad = min(1.0, cfg.step_frac * _max_step(Ss, dS))
        # high-precision acceptance
        Xn = _accept(Xs, dX, ap)
        Sn = _accept(Ss, dS, ad)
        if Xn is None or Sn is None:
            status = "stalled"
            break
        Xs, Ss = Xn, Sn
        y = (y + dy * arb(ad)).mid()

    if best is not None and best[0] < gap_of(Xs, Ss, y):
        Xs, Ss, y = best[1], best[2], best[3]
    return _finish(prob, ops, obj, rows, Xs, Ss, y, status, it, cfg, t0, history)


def _accept(Ms, dMs, alpha):
    for _ in range(80):
        Mn = [_sym((M + d * arb(alpha)).mid()) for M, d in zip(Ms, dMs)]
        if _all_pd(Mn):
            return Mn
        alpha *= 0.7
    return None


def _hkm(ops, Xs, Sinv, Rd, rp, Minv, sigma_mu, corr=None):
    """HKM direction for  X S = sigma_mu I  (optionally with a second-order correction)."""
    G = []
    for k, (X, Si, R) in enumerate(zip(Xs, Sinv, Rd)):
        g = (Si * sigma_mu - X - X * R * Si).mid()
        if corr is not None:
            g = (g - corr[k]).mid()
        G.append(g)
    # dX = G + X A*(dy) S^-1 ; A(dX) = rp  =>  M dy = rp - A(G)
    rhs = (rp - ops.A(G)).mid()
    dy = (Minv * rhs).mid()
    Atdy = ops.At(dy)
    dS = [(R - T).mid() for R, T in zip(Rd, Atdy)]
    dX = [_sym(g + X * T * Si) for g, X, T, Si in zip(G, Xs, Atdy, Sinv)]
    return dy, dS, ops.project(dX, rp)


def _finish(prob, ops, obj, rows, Xs, Ss, y, status, it, cfg, t0, history):
    # recompute everything from the returned iterates
    old = ctx.prec
    ctx.prec = 2 * cfg.prec
    try:
        rp = (ops.b - ops.A(Xs)).mid()
        Aty = ops.At(y)
        Rd = [(C - At - S).mid() for C, At, S in zip(ops.C, Aty, Ss)]
        pobj = ops.inner(ops.C, Xs)
        dobj = (ops.b.transpose() * y)[0, 0]
        gap = abs(pobj - dobj)
        pres = _norm(rp)
        dres = _norm_blocks(Rd)
    finally:
        ctx.prec = old
    b0 = _to_arb(ops.b0)
    lam = arb_to_mpf(pobj - b0)
    rel_gap = arb_to_mpf(gap) / (1 + abs(arb_to_mpf(pobj)) + abs(arb_to_mpf(dobj)))
    pres_rel = arb_to_mpf(pres) / (1 + arb_to_mpf(_norm(ops.b)))
    dres_rel = arb_to_mpf(dres) / (1 + arb_to_mpf(_norm_blocks(ops.C)))
    if rel_gap <= cfg.gap_tol and pres_rel <= cfg.feas_tol and dres_rel <= cfg.feas_tol:
        status = "optimal"
    elif arb_to_mpf(gap) > 1:
        status = "infeasible-suspect"
    else:
        status = "max-iter"
    return SolveResult(status, lam, arb_to_mpf(pobj), arb_to_mpf(dobj), arb_to_mpf(gap),
                       arb_to_mpf(pres), arb_to_mpf(dres), it, Xs, Ss,
                       [arb_to_mpf(y[k, 0]) for k in range(y.nrows())], rows, obj, cfg.prec,
                       time.time() - t0, history)


# --- residual check and solution files ----------------------------------------------

def residuals(prob: BlockSDP, blocks, lam=None, prec: int = 256):
    """Affine residual and per-block minimum eigenvalues at 2*prec bits.

    ``blocks`` holds square matrices of mpf, mpq or FNum entries. If ``lam``
    is None it is read off the identity-word row, so that row has zero
    residual by construction.
    """
    with mpmath.workprec(2 * prec):
        def cv(x):
            if hasattr(x, "to_mpf"):
                return x.to_mpf(2 * prec)
            if isinstance(x, type(mpq(0))):
                return mpmath.mpf(int(x.numerator)) / int(x.denominator)
            return mpmath.mpf(x)
        Z = [[[cv(x) for x in row] for row in B] for B in blocks]

        def val(r):
            s = mpmath.mpf(0)
            for (bi, a, b), v in r.coeffs.items():
                s += Z[bi][a][b] * cv(v)
            return s
        if lam is None:
            r0 = next(r for r in prob.rows if r.lam)
            lam = (val(r0) - cv(r0.rhs)) / r0.lam
        lam = cv(lam)
        res = mpmath.mpf(0)
        for r in prob.rows:
            if not (r.coeffs or r.rhs or r.lam):
                continue
            res = max(res, abs(val(r) - cv(r.rhs) - lam * r.lam))
        eigs = []
        for B in Z:
            ev = mpmath.eigsy(mpmath.matrix(B), eigvals_only=True)
            eigs.append(+min(ev))
        return +res, eigs


def write_solution(path, res: SolveResult, prob: BlockSDP):
    """Text solution file: JSON manifest line, then each X block row-major,
    then each dual block S (tagged ``dual``)."""
    digits = int(res.prec * 0.30103) + 5
    manifest = {
        "format": "BSOL v1", "problem_hash": prob.hash(), "d": prob.d, "n": prob.n,
        "status": res.status, "prec": res.prec, "iterations": res.iterations,
        "lambda": mpmath.nstr(res.lam, digits), "gap": mpmath.nstr(res.gap, 10),
        "primal_residual": mpmath.nstr(res.primal_residual, 10),
        "dual_residual": mpmath.nstr(res.dual_residual, 10),
        "blocks": list(zip(prob.block_names, prob.block_sizes)),
    }
    with open(path, "w") as fh:
        fh.write(json.dumps(manifest) + "\n")
        for tag, mats in (("block", res.X), ("dual", res.S)):
            for bi, M in enumerate(mats):
                fh.write(f"{tag} {prob.block_names[bi]} {M.nrows()}\n")
                for i in range(M.nrows()):
                    fh.write(" ".join(mpmath.nstr(arb_to_mpf(M[i, j]), digits, strip_zeros=False)
                                      for j in range(M.ncols())) + "\n")


def read_solution(path) -> tuple[dict, SolveResult]:
    """Inverse of write_solution; returns (manifest, SolveResult).  The dual
    multipliers y are not stored, so ``res.y`` is empty."""
    with open(path) as fh:
        lines = [ln.rstrip("\n") for ln in fh]
    manifest = json.loads(lines[0])
    prec = int(manifest["prec"])
    Xs, Ss = [], []
    k = 1
    with mpmath.workprec(prec + 16):
        old = ctx.prec
        ctx.prec = prec + 16
        try:
            while k < len(lines):
                head = lines[k].split()
                if not head:
                    k += 1
                    continue
                if head[0] not in ("block", "dual"):
                    raise ValueError(f"line {k + 1}: expected block header")
                n = int(head[2])
                rows = [lines[k + 1 + i].split() for i in range(n)]
                (Xs if head[0] == "block" else Ss).append(arb_mat([[arb(x) for x in r] for r in rows]))
                k += n + 1
        finally:
            ctx.prec = old
        mp = mpmath.mpf
        res = SolveResult(manifest["status"], mp(manifest["lambda"]), None, None,
                          mp(manifest["gap"]), mp(manifest["primal_residual"]),
                          mp(manifest["dual_residual"]), manifest["iterations"], Xs, Ss, [],
                          [], -1, prec)
    return manifest, res
