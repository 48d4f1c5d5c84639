"""Command-line front end: build -> solve -> round -> certify -> extract -> robust.

Every stage reads and writes files, prints a one-line JSON manifest with the
sha256 of each input and output, and exits with

    0 ok, 2 a check failed, 3 malformed input, 4 resource limit.

Errors are reported on stderr as a single ``error {json}`` line.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
import time

import mpmath

from . import __version__

EXIT_OK, EXIT_CHECK, EXIT_INPUT, EXIT_LIMIT = 0, 2, 3, 4


class CheckFailed(Exception):
    pass


class ResourceLimit(Exception):
    pass


def _sha(path) -> str:
    h = hashlib.sha256()
    if os.path.isdir(path):
        for name in sorted(os.listdir(path)):
            p = os.path.join(path, name)
            if os.path.isfile(p):
                h.update(name.encode())
                with open(p, "rb") as fh:
                    h.update(fh.read())
    else:
        with open(path, "rb") as fh:
            h.update(fh.read())
    return h.hexdigest()


def _manifest(stage, inputs, outputs, config):
    rec = {"stage": stage, "version": __version__,
           "inputs": {p: _sha(p) for p in inputs},
           "outputs": {p: _sha(p) for p in outputs},
           "config": config}
    print("manifest " + json.dumps(rec, sort_keys=True))


def _lam_text(lam) -> str:
    return f"{lam}  ({mpmath.nstr(lam.to_mpf(256), 50)})"


def _need(path):
    if not os.path.exists(path):
        raise FileNotFoundError(path)


def _problem_for(cert):
    from .sdp import assemble_sos
    prob = assemble_sos(cert.d, cert.n)
    if cert.problem_hash and prob.hash() != cert.problem_hash:
        raise CheckFailed(f"certificate was made for problem {cert.problem_hash}, "
                          f"rebuilt problem is {prob.hash()}")
    return prob


# --- commands ---------------------------------------------------------------------

def cmd_build_sdp(a):
    from .sdp import assemble_sos, export_problem
    t = time.time()
    prob = assemble_sos(a.d, a.level)
    export_problem(prob, a.out)
    print(f"blocks {' '.join(f'{n}:{s}' for n, s in zip(prob.block_names, prob.block_sizes))}")
    print(f"constraints {len(prob.nonzero_rows())}  hash {prob.hash()}  ({time.time() - t:.1f}s)")
    _manifest("build-sdp", [], [a.out], {"d": a.d, "level": a.level})


def cmd_export_sdpa(a):
    from .sdp import export_problem, import_problem
    _need(a.problem)
    prob = import_problem(a.problem)
    export_problem(prob, a.out, fmt="sdpa-sparse", digits=a.digits)
    _manifest("export-sdpa", [a.problem], [a.out], {"digits": a.digits})


def cmd_solve(a):
    from .sdp import import_problem
    from .solver import SolverConfig, solve, write_solution
    _need(a.problem)
    prob = import_problem(a.problem)
    cfg = SolverConfig(prec=a.prec, gap_tol=a.tol, feas_tol=a.tol, max_iter=a.max_iter,
                       verbose=a.verbose)
    res = solve(prob, cfg)
    write_solution(a.out, res, prob)
    print(f"status {res.status}  lambda {mpmath.nstr(res.lam, 40)}  gap {mpmath.nstr(res.gap, 5)}  "
          f"iterations {res.iterations}  ({res.seconds:.1f}s)")
    _manifest("solve", [a.problem], [a.out], {"prec": a.prec, "tol": a.tol})
    if res.status != "optimal":
        raise CheckFailed(f"solver status {res.status}")


SUPPORTED_FIELD = "z^3-3z+1@[3/2,8/5]"


def cmd_round(a):
    from .certify import RoundingError, round_solution, write_certificate
    from .sdp import import_problem
    from .solver import read_solution
    if a.field.replace(" ", "") != SUPPORTED_FIELD:
        raise ValueError(f"unsupported field {a.field!r}; only {SUPPORTED_FIELD!r}")
    _need(a.solution)
    _need(a.problem)
    prob = import_problem(a.problem)
    man, res = read_solution(a.solution)
    if man.get("problem_hash") != prob.hash():
        raise ValueError("solution and problem hashes differ")
    try:
        cert = round_solution(res, prob)
    except RoundingError as e:
        raise CheckFailed(f"rounding failed: {e}") from None
    write_certificate(cert, a.out)
    print(f"lambda {_lam_text(cert.lam)}")
    _manifest("round", [a.solution, a.problem], [a.out], {"field": SUPPORTED_FIELD})


def cmd_certify(a):
    from .certify import read_certificate, verify_certificate
    _need(a.cert)
    cert = read_certificate(a.cert)
    if (cert.d, cert.n) != (a.d, a.level):
        raise CheckFailed(f"certificate is for d={cert.d}, level={cert.n}")
    rep = verify_certificate(cert, _problem_for(cert))
    print(rep.summary())
    print(f"lambda {_lam_text(cert.lam)}")
    print("PASS" if rep.passed else "FAIL")
    _manifest("certify", [a.cert], [], {"d": a.d, "level": a.level})
    if not rep.passed:
        raise CheckFailed("certificate verification failed")


def _load_certified(path):
    from .certify import annihilators, read_certificate, verify_certificate
    _need(path)
    cert = read_certificate(path)
    prob = _problem_for(cert)
    rep = verify_certificate(cert, prob)
    if not rep.passed:
        raise CheckFailed("certificate does not verify:\n" + rep.summary())
    return cert, prob, annihilators(cert, prob)


def cmd_extract(a):
    from .bellgame import optimal_strategy, write_strategy
    from .extract import IncreaseD, block_diagonalize, closure, equivalence_class, match_unitary, verify_strategy
    _, _, ann = _load_certified(a.cert)
    try:
        cm = closure(ann, a.degree_cap, max_vectors=a.max_vectors)
    except IncreaseD as e:
        raise ResourceLimit(f"closure did not close: {e}; increase --degree-cap") from None
    strategies = block_diagonalize(cm, seed=a.seed)
    os.makedirs(a.out, exist_ok=True)
    lines = [cm.dump().rstrip("\n"), f"strategies {len(strategies)}"]
    failed = []
    for s in strategies:
        path = os.path.join(a.out, f"{s.label}.bstrat")
        write_strategy(s.as_tuple(), path)
        rep = verify_strategy(s, ann)
        ok = all(v[0] for v in rep.values())
        failed += [] if ok else [s.label]
        lines.append(f"{s.label} value {s.value} checks {'pass' if ok else 'FAIL'}")
    for i, s in enumerate(strategies):
        for t in strategies[i + 1:]:
            lines.append(f"{s.label} {t.label} {equivalence_class(s, t)}")
    ref = optimal_strategy()
    hits = [s.label for s in strategies if match_unitary(ref, s) is not None]
    lines.append(f"reference tuple matches {hits}")
    with open(os.path.join(a.out, "closure.txt"), "w") as fh:
        fh.write("\n".join(lines) + "\n")
    print("\n".join(lines[-(len(strategies) * 2 + 3):]))
    _manifest("extract", [a.cert], [a.out], {"degree_cap": a.degree_cap, "seed": a.seed})
    if failed or not hits or len(strategies) != 4:
        raise CheckFailed(f"extraction checks failed: {failed or 'reference tuple not found'}")


def cmd_verify_strategy(a):
    from .bellgame import read_strategy
    from .extract import verify_strategy
    _need(a.strategy)
    s = read_strategy(a.strategy)
    if not s.exact:
        raise ValueError("verify-strategy needs an exact (field=K) strategy file")
    ann = _load_certified(a.cert)[2] if a.cert else None
    rep = verify_strategy(s, ann)
    for k, (ok, detail) in rep.items():
        print(f"{k:20s} {'pass' if ok else 'FAIL'} {detail}")
    _manifest("verify-strategy", [a.strategy] + ([a.cert] if a.cert else []), [], {})
    if not all(v[0] for v in rep.values()):
        raise CheckFailed("strategy checks failed")


def cmd_classical(a):
    from .bellgame import classical_value
    v = classical_value(a.d)
    with mpmath.workprec(256):
        print(f"{v}  ({mpmath.nstr(mpmath.mpf(int(v.numerator)) / int(v.denominator), 50)})")


def cmd_bounds(a):
    from .bellgame import bm_bound, classical_value, optimal_value
    if a.d != 3:
        raise ValueError("the exact quantum value is only available for d = 3")
    with mpmath.workprec(256):
        c = classical_value(3)
        cf = mpmath.mpf(int(c.numerator)) / int(c.denominator)
        lam = optimal_value()
        lf = lam.to_mpf(256)
        bm = bm_bound(3)
        print(f"classical  {c}  {mpmath.nstr(cf, 50)}")
        print(f"quantum    {lam}  {mpmath.nstr(lf, 50)}")
        print(f"bm_bound   1/3 + 2/(3 sqrt 3)  {mpmath.nstr(bm, 50)}")
        ok = cf < lf < bm
        print(f"ordering classical < quantum < bm_bound: {ok}")
    if not ok:
        raise CheckFailed("bound ordering violated")


def cmd_flatness(a):
    from .extract import flatness_check, moment_consistency, moment_from_dual, rank_of_primal
    from .sdp import assemble_moment, assemble_sos, border_vector
    from .solver import read_solution
    _need(a.solution)
    man, res = read_solution(a.solution)
    prob = assemble_sos(man["d"], man["n"])
    if man["problem_hash"] != prob.hash():
        raise ValueError("solution was made for a different problem")
    if not res.S:
        raise ValueError("solution file has no dual blocks")
    ms = assemble_moment(man["d"], man["n"])
    M = moment_from_dual(prob, res, ms)
    low = border_vector(man["d"], man["n"] - 1).words
    rep = flatness_check(M, ms.words, low, ms.delta, a.tol, rank_of_primal(prob, res, a.tol))
    print(f"moment consistency {moment_consistency(M, ms):.2e}")
    print(f"rank M_n {rep.rank_n}  rank M_(n-delta) {rep.rank_low}  flat {rep.flat}")
    print(f"rank Z {rep.rank_Z}  rank Z + rank M = N: {rep.rank_sum_ok}")
    _manifest("flatness", [a.solution], [], {"tol": a.tol})


def cmd_robust(a):
    from .bellgame import read_strategy
    from .extract import make_strategy
    from .robust import eps_grid, robust_experiment
    _, _, ann = _load_certified(a.cert)
    if not os.path.isdir(a.strategies):
        raise FileNotFoundError(a.strategies)
    files = sorted(f for f in os.listdir(a.strategies) if f.endswith(".bstrat"))
    if len(files) != 4:
        raise ValueError(f"expected 4 strategy files in {a.strategies}, found {len(files)}")
    strategies = []
    for f in files:
        t = read_strategy(os.path.join(a.strategies, f))
        strategies.append(make_strategy(t.xs, t.ys, label=t.label))
    res = robust_experiment(strategies, ann, eps_grid(a.eps_grid, a.samples), seed=a.seed,
                            kind=a.kind)
    with open(a.out, "w") as fh:
        fh.write(res.tsv())
    for k, v in res.slopes.items():
        print(f"slope {k} {v:.4f}")
    sd = res.spectral
    print(f"lambda2 margin {sd.margin_lam2:.6f}  beta' {sd.beta_prime:.6f} (margin {sd.margin_beta:.6f})")
    _manifest("robust", [a.cert, a.strategies], [a.out],
              {"eps_grid": a.eps_grid, "samples": a.samples, "seed": a.seed, "kind": a.kind})
    bad = [r.seed for r in res.rows if r.gh_A > r.defect_A or r.gh_B > r.defect_B]
    if bad:
        raise CheckFailed(f"Gowers-Hatami closeness exceeds defect for samples {bad}")


# --- parser -----------------------------------------------------------------------------

def build_parser():
    ap = argparse.ArgumentParser(prog="chshmod3", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="cmd", required=True)

    p = sub.add_parser("build-sdp")
    p.add_argument("--d", type=int, default=3)
    p.add_argument("--level", type=int, default=2)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_build_sdp)

    p = sub.add_parser("export-sdpa")
    p.add_argument("problem")
    p.add_argument("--out", required=True)
    p.add_argument("--digits", type=int, default=40)
    p.set_defaults(fn=cmd_export_sdpa)

    p = sub.add_parser("solve")
    p.add_argument("problem")
    p.add_argument("--prec", type=int, default=256)
    p.add_argument("--tol", type=float, default=1e-30)
    p.add_argument("--max-iter", type=int, default=120)
    p.add_argument("--verbose", action="store_true")
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_solve)

    p = sub.add_parser("round")
    p.add_argument("solution")
    p.add_argument("problem")
    p.add_argument("--field", default="z^3-3z+1 @ [3/2,8/5]")
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_round)

    p = sub.add_parser("certify")
    p.add_argument("cert")
    p.add_argument("--d", type=int, default=3)
    p.add_argument("--level", type=int, default=2)
    p.set_defaults(fn=cmd_certify)

    p = sub.add_parser("extract")
    p.add_argument("cert")
    p.add_argument("--degree-cap", type=int, default=6)
    p.add_argument("--max-vectors", type=int, default=100000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_extract)

    p = sub.add_parser("verify-strategy")
    p.add_argument("strategy")
    p.add_argument("--cert", help="also check annihilation by this certificate's polynomials")
    p.set_defaults(fn=cmd_verify_strategy)

    p = sub.add_parser("classical")
    p.add_argument("--d", type=int, default=3)
    p.set_defaults(fn=cmd_classical)

    p = sub.add_parser("bounds")
    p.add_argument("--d", type=int, default=3)
    p.set_defaults(fn=cmd_bounds)

    p = sub.add_parser("flatness")
    p.add_argument("solution")
    p.add_argument("--tol", type=float, default=1e-9)
    p.set_defaults(fn=cmd_flatness)

    p = sub.add_parser("robust")
    p.add_argument("cert")
    p.add_argument("strategies")
    p.add_argument("--eps-grid", default="1e-6:1e-2:log10")
    p.add_argument("--samples", type=int, default=50)
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--kind", choices=["conjugate", "state"], default="conjugate")
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_robust)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        args.fn(args)
        return EXIT_OK
    except CheckFailed as e:
        code, kind = EXIT_CHECK, "check-failed"
        msg = str(e)
    except ResourceLimit as e:
        code, kind = EXIT_LIMIT, "resource-limit"
        msg = str(e)
    except MemoryError:
        code, kind, msg = EXIT_LIMIT, "resource-limit", "out of memory"
    except (ValueError, KeyError, IndexError, FileNotFoundError, UnicodeDecodeError) as e:
        code, kind = EXIT_INPUT, "input-malformed"
        msg = f"{type(e).__name__}: {e}"
    print("error " + json.dumps({"command": args.cmd, "code": code, "kind": kind, "message": msg}),
          file=sys.stderr)
    return code


if __name__ == "__main__":
    sys.exit(main())
