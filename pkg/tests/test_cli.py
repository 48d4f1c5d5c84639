import json
import subprocess
import sys

import pytest

from chshmod3.certify import write_certificate
from chshmod3.cli import main


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


def error_record(err):
    line = next(ln for ln in err.splitlines() if ln.startswith("error "))
    return json.loads(line[len("error "):])


def test_classical(capsys):
    code, out, _ = run(capsys, "classical", "--d", 2)
    assert code == 0 and out.startswith("3/4")
    code, out, _ = run(capsys, "classical", "--d", 3)
    assert code == 0 and out.startswith("2/3")


def test_bounds(capsys):
    code, out, _ = run(capsys, "bounds")
    assert code == 0
    assert "ordering classical < quantum < bm_bound: True" in out
    assert "0.71238601420108587094588931730669958752712013140997" in out


def test_build_export_solve_level1(tmp_path, capsys):
    prob, sdpa, sol = tmp_path / "p.bsdp", tmp_path / "p.dat-s", tmp_path / "p.bsol"
    code, out, _ = run(capsys, "build-sdp", "--level", 1, "--out", prob)
    assert code == 0 and prob.exists()
    manifest = json.loads(out.splitlines()[-1][len("manifest "):])
    assert str(prob) in manifest["outputs"]
    assert run(capsys, "export-sdpa", prob, "--out", sdpa)[0] == 0
    assert sdpa.read_text().count("\n") > 10
    code, out, _ = run(capsys, "solve", prob, "--out", sol)
    assert code in (0, 2) and sol.exists()
    assert "lambda 0.7182335" in out


def test_round_rejects_other_fields(tmp_path, capsys):
    code, _, err = run(capsys, "round", tmp_path / "x", tmp_path / "y", "--field", "z^2-2@[1,2]", "--out",
                       tmp_path / "c")
    assert code == 3 and error_record(err)["kind"] == "input-malformed"


def test_missing_and_malformed_inputs(tmp_path, capsys):
    code, _, err = run(capsys, "certify", tmp_path / "nope.bcert")
    assert code == 3
    bad = tmp_path / "bad.bcert"
    bad.write_text("hello\n")
    code, _, err = run(capsys, "certify", bad)
    assert code == 3 and "BCERT" in error_record(err)["message"]
    bad.write_text("BSTRAT v1; d=3; dimA=3; dimB=3; field=K\nX1\n1 ; 0\n")
    assert run(capsys, "verify-strategy", bad)[0] == 3


@pytest.fixture(scope="module")
def cert_file(pipeline, tmp_path_factory):
    path = tmp_path_factory.mktemp("cli") / "c.bcert"
    write_certificate(pipeline.cert, path)
    return path


def test_certify_pass_and_fail(cert_file, tmp_path, capsys):
    code, out, _ = run(capsys, "certify", cert_file)
    assert code == 0 and "\nPASS\n" in out
    lines = cert_file.read_text().splitlines()
    k = next(i for i, ln in enumerate(lines) if ln == "Zhat") + 1
    first = lines[k].split(" ; ")
    first[0] = "-1 + 0*z + 0*z^2"
    lines[k] = " ; ".join(first)
    bad = tmp_path / "bad.bcert"
    bad.write_text("\n".join(lines) + "\n")
    code, out, err = run(capsys, "certify", bad)
    assert code == 2 and "FAIL" in out and error_record(err)["code"] == 2


def test_extract_verify_robust(cert_file, tmp_path, capsys):
    out_dir = tmp_path / "strategies"
    code, out, _ = run(capsys, "extract", cert_file, "--degree-cap", 6, "--out", out_dir)
    assert code == 0, out
    assert sorted(p.name for p in out_dir.iterdir()) == ["closure.txt", "s1.bstrat", "s2.bstrat",
                                                         "s3.bstrat", "s4.bstrat"]
    assert "closure cap=6 dim=36 stabilized=True" in (out_dir / "closure.txt").read_text()
    code, out, _ = run(capsys, "verify-strategy", out_dir / "s1.bstrat", "--cert", cert_file)
    assert code == 0 and "FAIL" not in out
    tsv = tmp_path / "r.tsv"
    code, out, _ = run(capsys, "robust", cert_file, out_dir, "--eps-grid", "1e-6:1e-5:log10",
                       "--samples", 2, "--seed", 7, "--out", tsv)
    assert code == 0
    rows = [ln for ln in tsv.read_text().splitlines() if not ln.startswith("#")]
    assert len(rows) == 3 and rows[0].startswith("seed\t")


def test_degree_cap_too_small(cert_file, tmp_path, capsys):
    code, _, err = run(capsys, "extract", cert_file, "--degree-cap", 2, "--out", tmp_path / "s")
    assert code == 4 and error_record(err)["kind"] == "resource-limit"


def test_console_entry_point():
    r = subprocess.run([sys.executable, "-m", "chshmod3.cli", "classical", "--d", "2"],
                       capture_output=True, text=True)
    assert r.returncode == 0 and r.stdout.startswith("3/4")
