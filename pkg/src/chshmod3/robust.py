"""Robust self-testing experiments for CHSH mod 3.

The order-81 group is handled in exponent coordinates j = (j1, j2, j3, j4),
j <-> g1^j1 g2^j2 g3^j3 g4^j4, with the product law

    (j)(k) = (j1 + k1, j2 + k2, j3 + k3, j4 + k4 + j2 k1)  mod 3.

The generators g_i are realized on a tuple (X1, X2, X3) by four fixed words
(``GAMMA_WORDS``), which gives maps f: G -> U(n) for any strategy.  For an
exact optimal strategy f is a representation; for a perturbed one we measure
how far it is from one (defect), build the Gowers-Hatami isometry, and
compare with the optimal irreducible strategies.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import mpmath
import numpy as np

from .bellgame import build_p, optimal_value
from .exactnum import Cyc3, KNum
from .ncalg import mat_adj, mat_eye, mat_mul

ORDER = 81
GENERATORS = [(1, 0, 0, 0), (0, 1, 0, 0), (0, 0, 1, 0), (0, 0, 0, 1)]

# words for g1..g4 in X1, X2, X3; (i, -1) is X_i^-1
GAMMA_WORDS = {
    1: [(1, 2), (2, 2)],
    2: [(1, 2), (3, 1)] + [(3, 1), (2, -1), (3, -1), (2, 1)] * 2 + [(3, 1)],
    3: [(1, 1)] + [(2, 1), (3, 1), (2, -1), (3, -1)] * 4 + [(2, 1), (3, 1)],
    4: [(2, -1), (3, -1), (2, 1), (3, 1)] * 4,
}


# --- the group ------------------------------------------------------------------

def gmul(j, k):
    return ((j[0] + k[0]) % 3, (j[1] + k[1]) % 3, (j[2] + k[2]) % 3,
            (j[3] + k[3] + j[1] * k[0]) % 3)


@dataclass
class GroupTable:
    elements: list
    index: dict
    table: list          # table[a][b] = index of elements[a] * elements[b]
    inverse: list

    @property
    def order(self):
        return len(self.elements)

    def mul(self, a, b):
        return self.table[a][b]

    def power(self, a, n):
        r = self.index[(0, 0, 0, 0)]
        for _ in range(n):
            r = self.table[r][a]
        return r


def group_table() -> GroupTable:
    els = list(itertools.product(range(3), repeat=4))
    idx = {e: k for k, e in enumerate(els)}
    table = [[idx[gmul(a, b)] for b in els] for a in els]
    e = idx[(0, 0, 0, 0)]
    inv = [next(b for b in range(len(els)) if table[a][b] == e) for a in range(len(els))]
    return GroupTable(els, idx, table, inv)


def check_group_table(G: GroupTable) -> dict:
    """Exhaustive checks; name -> bool."""
    n, t = G.order, G.table
    e = G.index[(0, 0, 0, 0)]
    out = {"order_81": n == ORDER}
    out["closed"] = all(0 <= t[a][b] < n for a in range(n) for b in range(n))
    out["identity"] = all(t[e][a] == a and t[a][e] == a for a in range(n))
    out["associative"] = all(t[t[a][b]][c] == t[a][t[b][c]]
                             for a in range(n) for b in range(n) for c in range(n))
    out["inverses"] = all(t[a][G.inverse[a]] == e and t[G.inverse[a]][a] == e for a in range(n))
    orders = []
    for a in range(n):
        k, x = 1, a
        while x != e:
            x = t[x][a]
            k += 1
        orders.append(k)
    out["exponent_3"] = max(orders) == 3
    g = [G.index[v] for v in GENERATORS]
    out["generators_cube"] = all(G.power(x, 3) == e for x in g)
    out["commute_3_4"] = all(t[g[i]][g[j]] == t[g[j]][g[i]] for i in range(4) for j in (2, 3))
    out["g2g1_eq_g4g1g2"] = t[g[1]][g[0]] == t[t[g[3]][g[0]]][g[1]]
    return out


# --- gamma words and maps f: G -> U(n) ---------------------------------------------------

def _ops(mats, exact):
    if exact:
        return (lambda a, b: mat_mul(a, b)), (lambda a: mat_adj(a)), mat_eye(len(mats[1]))
    n = len(mats[1])
    return (lambda a, b: a @ b), (lambda a: a.conj().T), np.eye(n, dtype=complex)


def _is_exact(mats):
    return not isinstance(mats[1], np.ndarray) and isinstance(mats[1], list) \
        and isinstance(mats[1][0][0], (KNum, Cyc3))


def phi_images(X: dict) -> dict:
    """g_i(X) for i = 1..4; exact when X holds K-matrices (inverse = adjoint)."""
    exact = _is_exact(X)
    mul, adj, I = _ops(X, exact)
    out = {}
    for i, word in GAMMA_WORDS.items():
        M = I
        for k, e in word:
            M = mul(M, X[k] if e == 1 else (mul(X[k], X[k]) if e == 2 else adj(X[k])))
        out[i] = M
    return out


def h_relations(gam: dict) -> dict:
    """The defining relations of G on the images g1..g4; name -> bool (exact) or residual."""
    exact = _is_exact(gam)
    mul, adj, I = _ops(gam, exact)

    def diff(a, b):
        if exact:
            return a == b
        return float(np.linalg.norm(a - b))
    out = {}
    for i in range(1, 5):
        out[f"g{i}^3"] = diff(mul(mul(gam[i], gam[i]), gam[i]), I)
    for i in range(1, 5):
        for j in (3, 4):
            if i != j:
                out[f"[g{i},g{j}]"] = diff(mul(gam[i], gam[j]), mul(gam[j], gam[i]))
    out["g2g1=g4g1g2"] = diff(mul(gam[2], gam[1]), mul(mul(gam[4], gam[1]), gam[2]))
    return out


def rep_map(gam: dict, G: GroupTable):
    """f(j) = g1^j1 g2^j2 g3^j3 g4^j4 for all 81 elements (list in table order)."""
    exact = _is_exact(gam)
    mul, _, I = _ops(gam, exact)
    pw = {}
    for i in range(1, 5):
        pw[(i, 0)] = I
        for e in (1, 2):
            pw[(i, e)] = mul(pw[(i, e - 1)], gam[i])
    out = []
    for j in G.elements:
        M = I
        for i in range(4):
            M = mul(M, pw[(i + 1, j[i])])
        out.append(M)
    return out


def generator_coordinates(X_faithful: dict, G: GroupTable) -> dict:
    """Coordinates j with f(j) = X_k, using an exact faithful tuple X."""
    fs = rep_map(phi_images(X_faithful), G)
    keys = [tuple(tuple(str(v) for v in r) for r in M) for M in fs]
    if len(set(keys)) != G.order:
        raise ValueError("the given tuple does not realize G faithfully")
    out = {}
    for k, M in X_faithful.items():
        key = tuple(tuple(str(v) for v in r) for r in M)
        if key not in keys:
            raise ValueError(f"X{k} is not in the image of phi")
        out[k] = G.elements[keys.index(key)]
    return out


def block_sum(mats_list):
    """Exact block-diagonal sum of square K-matrices."""
    n = sum(len(m) for m in mats_list)
    out = [[KNum(0)] * n for _ in range(n)]
    o = 0
    for m in mats_list:
        for r in range(len(m)):
            for c in range(len(m)):
                out[o + r][o + c] = KNum.coerce(m[r][c])
        o += len(m)
    return out


# --- irreps of G --------------------------------------------------------------------

def irreps_G(G: GroupTable):
    """All 33 irreducible representations as lists of 81 complex matrices.

    27 characters w^(a j1 + b j2 + c j3) and 6 three-dimensional ones
    g1 -> S, g2 -> C^s, g3 -> w^c, g4 -> w^s (S shift, C clock, s in {1, 2}).
    """
    w = np.exp(2j * np.pi / 3)
    out = []
    for a, b, c in itertools.product(range(3), repeat=3):
        out.append((f"chi{a}{b}{c}", [np.array([[w ** ((a * j[0] + b * j[1] + c * j[2]) % 3)]])
                                       for j in G.elements]))
    S = np.array([[1 if (r - c) % 3 == 1 else 0 for c in range(3)] for r in range(3)], dtype=complex)
    C = np.diag([1, w, w * w])
    for s in (1, 2):
        for c in range(3):
            mats = []
            for j in G.elements:
                M = np.linalg.matrix_power(S, j[0]) @ np.linalg.matrix_power(C, (s * j[1]) % 3)
                mats.append(M * w ** ((c * j[2] + s * j[3]) % 3))
            out.append((f"heis{s}{c}", mats))
    return out


def check_irreps_G(G: GroupTable, irr, tol=1e-12) -> bool:
    for _, mats in irr:
        for a in range(G.order):
            for b in range(G.order):
                if np.linalg.norm(mats[a] @ mats[b] - mats[G.table[a][b]]) > tol:
                    return False
    return sum(len(m[0]) ** 2 for _, m in irr) == G.order


def _p_operator(XA: dict, YB: dict):
    p = build_p(3).observable_form
    nA, nB = len(XA[1]), len(YB[1])
    tot = np.zeros((nA * nB, nA * nB), dtype=complex)
    for wd, c in p.terms.items():
        A = np.eye(nA, dtype=complex)
        for i, e in wd.x:
            A = A @ np.linalg.matrix_power(XA[i], e)
        Bm = np.eye(nB, dtype=complex)
        for j, e in wd.y:
            Bm = Bm @ np.linalg.matrix_power(YB[j], e)
        tot += complex(c) * np.kron(A, Bm)
    return (tot + tot.conj().T) / 2


@dataclass
class SpectralData:
    optimal_pairs: list          # (name_pi, name_sigma)
    lam2: dict                   # pair -> second eigenvalue
    beta_prime: float
    lam: float
    states: dict                 # pair -> normalized top eigenvector (nA*nB)
    margin_lam2: float = 0.0
    margin_beta: float = 0.0


def spectral_constants(G: GroupTable, coords: dict, irr=None, tol=1e-10) -> SpectralData:
    """Eigenvalues of p on every pair of irreps (pi on X, sigma on Y)."""
    irr = irreps_G(G) if irr is None else irr
    lam = float(optimal_value())
    gx = {k: G.index[v] for k, v in coords.items()}
    opt, lam2, states, others = [], {}, {}, []
    for (na, ma), (nb, mb) in itertools.product(irr, irr):
        XA = {k: ma[gx[k]] for k in (1, 2, 3)}
        YB = {k: mb[gx[k]] for k in (1, 2, 3)}
        ev, V = np.linalg.eigh(_p_operator(XA, YB))
        if abs(ev[-1] - lam) < tol:
            opt.append((na, nb))
            lam2[(na, nb)] = float(ev[-2]) if len(ev) > 1 else -math.inf
            states[(na, nb)] = V[:, -1]
        else:
            others.append(float(ev[-1]))
    beta = max(others)
    sd = SpectralData(opt, lam2, beta, lam, states)
    sd.margin_lam2 = lam - max(lam2.values())
    sd.margin_beta = lam - beta
    return sd


# --- (eps, psi)-representations -------------------------------------------------------

@dataclass
class EpsRepresentation:
    images: np.ndarray        # (81, n, n) in table order
    R: np.ndarray             # reduced density on the acting side


def reduced_densities(psi, nA, nB):
    P = np.asarray(psi, dtype=complex).reshape(nA, nB)
    P = P / np.linalg.norm(P)
    return P @ P.conj().T, P.T @ P.conj()


def eps_representation(mats: dict, R, G: GroupTable) -> EpsRepresentation:
    return EpsRepresentation(np.array(rep_map(phi_images(mats), G)), np.asarray(R))


def _rnorm2(A, R):
    """Tr(A A^* R) for a stack of matrices."""
    return np.einsum("...ij,...kj,ki->...", A, A.conj(), R).real


def defect(f: EpsRepresentation, G: GroupTable) -> float:
    F = f.images
    FH = np.conj(np.transpose(F, (0, 2, 1)))
    tot = 0.0
    inv = G.inverse
    for x in range(G.order):
        idx = [G.table[x][inv[y]] for y in range(G.order)]
        D = F[x][None, :, :] @ FH - F[idx]
        tot += float(np.sum(_rnorm2(D, f.R)))
    return tot / G.order ** 2


def gh_isometry(f: EpsRepresentation, G: GroupTable):
    """(U, tau, closeness).  U: C^n -> C^|G| (x) C^n, (Uu)_x = |G|^-1/2 f(x)^* u;
    tau(g) = (left regular g) (x) I."""
    F = f.images
    N, n = G.order, F.shape[1]
    U = np.concatenate([F[x].conj().T for x in range(N)], axis=0) / math.sqrt(N)

    def tau(g):
        L = np.zeros((N, N))
        for x in range(N):
            L[G.table[g][x], x] = 1
        return np.kron(L, np.eye(n))
    FH = np.conj(np.transpose(F, (0, 2, 1)))
    inv = G.inverse
    close = 0.0
    for g in range(N):
        idx = [G.table[inv[g]][y] for y in range(N)]
        approx = np.einsum("yab,ybc->ac", F, FH[idx]) / N          # U^* tau(g) U
        close += float(_rnorm2(F[g] - approx, f.R))
    return U, tau, close / N


def isometry_error(U) -> float:
    return float(np.linalg.norm(U.conj().T @ U - np.eye(U.shape[1])))


# --- strategies and perturbations --------------------------------------------------------

def _mp_mat(m, prec):
    return mpmath.matrix([[KNum.coerce(v).to_mpc(prec) for v in r] for r in m])


def _mp_expm_unitary(n, t, rng, prec):
    A = rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))
    H = (A + A.conj().T) / 2
    H /= np.linalg.norm(H, 2)
    Hm = mpmath.matrix([[mpmath.mpc(complex(x)) for x in r] for r in H])
    return mpmath.expm(mpmath.mpc(0, 1) * mpmath.mpf(t) * Hm)


@dataclass
class MPStrategy:
    X: dict
    Y: dict
    psi: object            # mpmath column, normalized
    prec: int


def mp_strategy(xs, ys, psi, prec=256) -> MPStrategy:
    with mpmath.workprec(prec):
        v = mpmath.matrix([KNum.coerce(c).to_mpc(prec) for c in psi])
        v = v / mpmath.sqrt(mpmath.fsum(abs(c) ** 2 for c in v))
        return MPStrategy({i: _mp_mat(m, prec) for i, m in xs.items()},
                          {j: _mp_mat(m, prec) for j, m in ys.items()}, v, prec)


def perturb(s: MPStrategy, t: float, rng, kind: str = "conjugate") -> MPStrategy:
    """conjugate: X_i -> V X_i V^*, V = exp(i t H) independent per operator;
    state: psi -> normalize(psi + t phi) with phi random."""
    with mpmath.workprec(s.prec):
        if kind == "conjugate":
            X, Y = {}, {}
            for side, src, dst in (("x", s.X, X), ("y", s.Y, Y)):
                for k, M in src.items():
                    V = _mp_expm_unitary(M.rows, t, rng, s.prec)
                    dst[k] = V * M * V.H
            return MPStrategy(X, Y, s.psi, s.prec)
        if kind == "state":
            n = s.psi.rows
            phi = rng.standard_normal(n) + 1j * rng.standard_normal(n)
            phi /= np.linalg.norm(phi)
            v = s.psi + mpmath.mpf(t) * mpmath.matrix([mpmath.mpc(complex(c)) for c in phi])
            v = v / mpmath.sqrt(mpmath.fsum(abs(c) ** 2 for c in v))
            return MPStrategy(s.X, s.Y, v, s.prec)
    raise ValueError(f"unknown perturbation kind {kind!r}")


def _mp_word_vec(s: MPStrategy, w, cache):
    key = w
    if key in cache:
        return cache[key]
    n = s.X[1].rows
    m = s.Y[1].rows
    A = mpmath.eye(n)
    for i, e in w.x:
        A = A * s.X[i] ** e
    Bm = mpmath.eye(m)
    for j, e in w.y:
        Bm = Bm * s.Y[j] ** e
    Psi = mpmath.matrix(n, m)
    for a in range(n):
        for b in range(m):
            Psi[a, b] = s.psi[a * m + b]
    T = A * Psi * Bm.T
    v = [T[a, b] for a in range(n) for b in range(m)]
    cache[key] = v
    return v


def mp_value(s: MPStrategy):
    with mpmath.workprec(s.prec):
        cache = {}
        tot = mpmath.mpc(0)
        for w, c in build_p(3).observable_form.terms.items():
            v = _mp_word_vec(s, w, cache)
            tot += c.to_mpc(s.prec) * mpmath.fsum(mpmath.conj(a) * b for a, b in zip(s.psi, v))
        return tot.real


def compile_annihilators(ann, prec: int = 256) -> list:
    """[(weight, [(word, coefficient)])] with constants converted once to mpmath."""
    with mpmath.workprec(prec):
        return [(ann.weights[key].to_mpf(prec),
                 [(w, KNum.coerce(c).to_mpc(prec)) for w, c in g.terms.items()])
                for key, g in ann.items()]


def certificate_residual(s: MPStrategy, ann, compiled=None) -> object:
    """sum_g Zhat_g ||g(X, Y) psi||^2 at the strategy's precision."""
    compiled = compile_annihilators(ann, s.prec) if compiled is None else compiled
    with mpmath.workprec(s.prec):
        cache = {}
        tot = mpmath.mpf(0)
        for weight, terms in compiled:
            acc = None
            for w, cc in terms:
                v = _mp_word_vec(s, w, cache)
                acc = [cc * x for x in v] if acc is None else [a + cc * x for a, x in zip(acc, v)]
            tot += weight * mpmath.fsum(abs(a) ** 2 for a in acc)
        return tot


def to_numpy(s: MPStrategy):
    X = {k: np.array(M.tolist(), dtype=complex) for k, M in s.X.items()}
    Y = {k: np.array(M.tolist(), dtype=complex) for k, M in s.Y.items()}
    return X, Y, np.array([complex(c) for c in s.psi])


# --- approximate relations -------------------------------------------------------------------

def relation_residuals(X: dict, Y: dict, psi, side: str = "A") -> dict:
    """max ||(lhs - rhs) (x) I psi|| per relation family 1..4 (numeric)."""
    gam = phi_images(X if side == "A" else Y)
    nA, nB = len(X[1]), len(Y[1])
    P = np.asarray(psi, dtype=complex).reshape(nA, nB)
    P = P / np.linalg.norm(P)

    def act(M):
        return (M @ P if side == "A" else P @ M.T)

    def pw(i, k):
        return np.linalg.matrix_power(gam[i], k)

    def res(lhs, rhs):
        return float(np.linalg.norm(act(lhs) - act(rhs)))
    fam = {1: 0.0, 2: 0.0, 3: 0.0, 4: 0.0}
    for i1, i2, i3 in itertools.product(range(3), repeat=3):
        u = pw(1, i1) @ pw(2, i2) @ pw(3, i3)
        for k in range(1, 5):
            v = pw(4, k)
            fam[1] = max(fam[1], res(u @ v, v @ u))
    for i1, i2, i4 in itertools.product(range(3), repeat=3):
        u = pw(1, i1) @ pw(2, i2)
        for k in range(1, 5):
            v = pw(3, k)
            fam[2] = max(fam[2], res(u @ v @ pw(4, i4), v @ u @ pw(4, i4)))
    for i1, i3, i4 in itertools.product(range(3), repeat=3):
        for k in range(1, 5):
            lhs = pw(1, i1) @ pw(2, k) @ pw(3, i3) @ pw(4, i4 + i1 * k)
            rhs = pw(2, k) @ pw(1, i1) @ pw(3, i3) @ pw(4, i4)
            fam[3] = max(fam[3], res(lhs, rhs))
    for j in range(1, 5):
        for tail in itertools.product(range(3), repeat=4 - j):
            T = np.eye(len(gam[1]), dtype=complex)
            for l, e in zip(range(j + 1, 5), tail):
                T = T @ pw(l, e)
            fam[4] = max(fam[4], res(pw(j, 3) @ T, T))
    return fam


# --- isotypic analysis ---------------------------------------------------------------------

def _regular_state(fA: EpsRepresentation, fB: EpsRepresentation, P):
    """U psi as a tensor T[x, a, y, b] (U = U_A (x) U_B)."""
    N = fA.images.shape[0]
    AH = np.conj(np.transpose(fA.images, (0, 2, 1)))
    BH = np.conj(np.transpose(fB.images, (0, 2, 1)))
    return np.einsum("xac,cd,ybd->xayb", AH, P, BH, optimize=True) / N


def _isotypic_vectors(irr_mats, sd: SpectralData, G: GroupTable):
    """Orthonormal basis of the lambda-eigenspace of p(tau_A, tau_B) on C^81 (x) C^81."""
    N = G.order
    vecs = []
    for pair in sd.optimal_pairs:
        mp, ms = irr_mats[pair[0]], irr_mats[pair[1]]
        dp, ds = mp[0].shape[0], ms[0].shape[0]
        psi = sd.states[pair].reshape(dp, ds)
        Wp = np.sqrt(dp / N) * np.conj(np.array(mp))          # Wp[x, a, b]
        Ws = np.sqrt(ds / N) * np.conj(np.array(ms))
        for b in range(dp):
            for b2 in range(ds):
                v = np.einsum("xa,yc,ac->xy", Wp[:, :, b], Ws[:, :, b2], psi)
                vecs.append(v.reshape(-1))
    return np.array(vecs)


def isotypic_analysis(fA, fB, P, irr, sd: SpectralData, G: GroupTable, basis=None):
    """(isotypic mass 1 - sum_i c_i, state distance to the optimal direct sum)."""
    irr_mats = dict(irr)
    N = G.order
    T = _regular_state(fA, fB, P)
    nA, nB = P.shape
    mass = 0.0
    for pa, pb in sd.optimal_pairs:
        ca = np.array([np.trace(m) for m in irr_mats[pa]])
        cb = np.array([np.trace(m) for m in irr_mats[pb]])
        Pa = _isotypic_projector(ca, G, len(irr_mats[pa][0]))
        Pb = _isotypic_projector(cb, G, len(irr_mats[pb][0]))
        proj = np.einsum("xz,zayb,wy->xawb", Pa, T, Pb, optimize=True)
        mass += float(np.sum(abs(proj) ** 2))
    if basis is None:
        basis = _isotypic_vectors(irr_mats, sd, G)
    Tm = np.transpose(T, (0, 2, 1, 3)).reshape(N * N, nA * nB)
    coef = basis.conj() @ Tm
    pn = math.sqrt(float(np.sum(abs(coef) ** 2)))
    dist = math.sqrt(max(0.0, 2 - 2 * pn))
    return 1 - mass, dist, basis


def _isotypic_projector(chi, G: GroupTable, d):
    """(d/|G|) sum_g conj(chi(g)) L(g) on C^|G|."""
    N = G.order
    Pm = np.zeros((N, N), dtype=complex)
    for g in range(N):
        c = np.conj(chi[g]) * d / N
        for x in range(N):
            Pm[G.table[g][x], x] += c
    return Pm


# --- experiment ---------------------------------------------------------------------------

@dataclass
class DefectReport:
    seed: int
    target: float
    deficit: float
    cert_residual: float
    cert_rel_error: float
    relation_residuals: dict
    defect_A: float
    defect_B: float
    gh_A: float
    gh_B: float
    isotypic_mass: float
    state_distance: float


@dataclass
class ExperimentResult:
    rows: list
    slopes: dict
    flags: list = field(default_factory=list)
    spectral: SpectralData | None = None
    matched: dict = field(default_factory=dict)

    def tsv(self) -> str:
        head = ["seed", "eps_target", "deficit", "cert_residual", "cert_rel_error",
                "rel_f1", "rel_f2", "rel_f3", "rel_f4", "defect_A", "defect_B",
                "gh_A", "gh_B", "isotypic_mass", "state_distance"]
        out = ["\t".join(head)]
        for r in self.rows:
            out.append("\t".join(str(v) for v in [
                r.seed, f"{r.target:.6e}", f"{r.deficit:.12e}", f"{r.cert_residual:.12e}",
                f"{r.cert_rel_error:.3e}", *(f"{r.relation_residuals[k]:.6e}" for k in (1, 2, 3, 4)),
                f"{r.defect_A:.6e}", f"{r.defect_B:.6e}", f"{r.gh_A:.6e}", f"{r.gh_B:.6e}",
                f"{r.isotypic_mass:.6e}", f"{r.state_distance:.6e}"]))
        out.append("# slopes")
        for k, v in self.slopes.items():
            out.append(f"# {k}\t{v:.4f}")
        for f in self.flags:
            out.append(f"# flag\t{f}")
        return "\n".join(out) + "\n"


def loglog_slope(x, y):
    x, y = np.asarray(x, float), np.asarray(y, float)
    ok = (x > 0) & (y > 0)
    if ok.sum() < 3 or np.ptp(np.log10(x[ok])) < 1:
        return float("nan")
    return float(np.polyfit(np.log10(x[ok]), np.log10(y[ok]), 1)[0])


def eps_grid(spec: str, samples: int):
    """'1e-6:1e-2:log10' -> samples targets evenly spaced in log10."""
    lo, hi, mode = spec.split(":")
    lo, hi = float(lo), float(hi)
    if mode != "log10":
        raise ValueError("only log10 grids are supported")
    if samples == 1:
        return [lo]
    return [10 ** (math.log10(lo) + (math.log10(hi) - math.log10(lo)) * k / (samples - 1))
            for k in range(samples)]


def match_pairs_to_strategies(sd: SpectralData, irr, coords, G, strategies, length=3):
    """Map each optimal irrep pair to the extracted strategy with the same characters."""
    irr_mats = dict(irr)
    gx = {k: G.index[v] for k, v in coords.items()}

    def traces(mats):
        out = []
        for L in range(1, length + 1):
            for w in itertools.product((1, 2, 3), repeat=L):
                M = np.eye(len(mats[1]), dtype=complex)
                for k in w:
                    M = M @ mats[k]
                out.append(np.trace(M))
        return np.array(out)
    out = {}
    for pair in sd.optimal_pairs:
        tx = traces({k: irr_mats[pair[0]][gx[k]] for k in (1, 2, 3)})
        ty = traces({k: irr_mats[pair[1]][gx[k]] for k in (1, 2, 3)})
        for s in strategies:
            sx = traces({k: np.array([[complex(v) for v in r] for r in s.xs[k]]) for k in (1, 2, 3)})
            sy = traces({k: np.array([[complex(v) for v in r] for r in s.ys[k]]) for k in (1, 2, 3)})
            if np.allclose(tx, sx, atol=1e-9) and np.allclose(ty, sy, atol=1e-9):
                out[pair] = s.label
    return out


def robust_experiment(strategies, ann, targets, seed: int = 7, kind: str = "conjugate",
                      base: int = 0, prec: int = 256, log=None) -> ExperimentResult:
    """Perturb optimal strategy ``strategies[base]`` to each target deficit and measure."""
    G = group_table()
    faithful = {k: block_sum([s.xs[k] for s in strategies]) for k in (1, 2, 3)}
    coords = generator_coordinates(faithful, G)
    irr = irreps_G(G)
    sd = spectral_constants(G, coords, irr)
    matched = match_pairs_to_strategies(sd, irr, coords, G, strategies)
    s0 = strategies[base]
    ref = mp_strategy(s0.xs, s0.ys, s0.psi, prec)
    lam = optimal_value().to_mpf(prec)
    rows, flags, basis = [], [], None
    compiled = compile_annihilators(ann, prec)
    for n, target in enumerate(targets):
        rng = np.random.default_rng([seed, n])
        state = rng.bit_generator.state
        t0 = 1e-3
        pilot = perturb(ref, t0, rng, kind)
        kappa = float(lam - mp_value(pilot)) / t0 ** 2
        rng.bit_generator.state = state
        t = math.sqrt(target / kappa) if kappa > 0 else t0
        s = perturb(ref, t, rng, kind)
        with mpmath.workprec(prec):
            eps = lam - mp_value(s)
            cert = certificate_residual(s, ann, compiled)
            rel = abs(cert - eps) / abs(eps) if eps else abs(cert)
        X, Y, psi = to_numpy(s)
        RA, RB = reduced_densities(psi, 3, 3)
        fA, fB = eps_representation(X, RA, G), eps_representation(Y, RB, G)
        rr = relation_residuals(X, Y, psi)
        rb = relation_residuals(X, Y, psi, side="B")
        rr = {k: max(rr[k], rb[k]) for k in rr}
        dA, dB = defect(fA, G), defect(fB, G)
        _, _, gA = gh_isometry(fA, G)
        _, _, gB = gh_isometry(fB, G)
        P = psi.reshape(3, 3) / np.linalg.norm(psi)
        mass, dist, basis = isotypic_analysis(fA, fB, P, irr, sd, G, basis)
        rows.append(DefectReport(n, target, float(eps), float(cert), float(rel), rr,
                                 dA, dB, gA, gB, mass, dist))
        if log:
            log(f"sample {n}: eps={float(eps):.3e} defect={dA:.3e} dist={dist:.3e}")
    eps = [r.deficit for r in rows]
    slopes = {
        "defect_A": loglog_slope(eps, [r.defect_A for r in rows]),
        "defect_B": loglog_slope(eps, [r.defect_B for r in rows]),
        "relation_residual": loglog_slope(eps, [max(r.relation_residuals.values()) for r in rows]),
        "state_distance": loglog_slope(eps, [r.state_distance for r in rows]),
        "isotypic_mass": loglog_slope(eps, [r.isotypic_mass for r in rows]),
    }
    for k, v in slopes.items():
        if math.isnan(v):
            flags.append(f"degenerate fit for {k}")
    return ExperimentResult(rows, slopes, flags, sd, matched)


__all__ = [
    "GroupTable", "group_table", "check_group_table", "gmul", "GAMMA_WORDS", "phi_images",
    "h_relations", "rep_map", "generator_coordinates", "irreps_G", "check_irreps_G",
    "spectral_constants", "SpectralData", "EpsRepresentation", "eps_representation", "defect",
    "gh_isometry", "isometry_error", "relation_residuals", "isotypic_analysis", "perturb",
    "mp_strategy", "mp_value", "certificate_residual", "compile_annihilators", "robust_experiment", "ExperimentResult",
    "DefectReport", "loglog_slope", "eps_grid", "reduced_densities", "block_sum",
    "match_pairs_to_strategies", "SpectralData",
]
