import csv
import subprocess
import sys

import numpy as np
import pytest

from sketchode.cli import COUNTER_COLUMNS, RunConfig, main, read_config


def read_csv(path):
    lines = path.read_text().splitlines()
    header = [l for l in lines if l.startswith("#")]
    rows = list(csv.reader(l for l in lines if not l.startswith("#")))
    return header, rows[0], rows[1:]


def numeric_columns(path, skip=("wallclock_ms", "time_s")):
    _, cols, rows = read_csv(path)
    keep = [i for i, c in enumerate(cols) if c not in skip]
    return [[r[i] for i in keep] for r in rows]


def test_solve_fom_laplacian(tmp_path, capsys):
    rc = main(["solve", "--problem", "laplacian", "--N", "100", "--method", "fom", "--tol", "1e-8",
               "--update", "1", "--out-dir", str(tmp_path)])
    assert rc == 0
    assert "converged" in capsys.readouterr().out
    header, cols, rows = read_csv(tmp_path / "convergence.csv")
    assert cols == ["iteration", "delta", "wallclock_ms"]
    deltas = [float(r[1]) for r in rows]
    onset = int(np.argmax(deltas))
    assert all(b <= a for a, b in zip(deltas[onset:], deltas[onset + 1:]))
    assert deltas[-1] <= 1e-8
    assert "# method = fom" in header and "# tol = 1e-08" in header


def test_counters_schema_bytes(tmp_path):
    main(["solve", "--problem", "laplacian", "--N", "50", "--method", "sfom", "--ref", "fom",
          "--m-restart", "20", "--out-dir", str(tmp_path)])
    text = (tmp_path / "counters.csv").read_text()
    body = [l for l in text.splitlines() if not l.startswith("#")]
    assert body[0] == "m,time_s,delta_m,xi_rel,mvecs,sprods,nprods,mfuns,mfunsize,nops"
    assert body[0] == ",".join(COUNTER_COLUMNS)
    row = body[1].split(",")
    assert len(row) == 10 and float(row[3]) < 1e-6


def test_xi_rel_empty_without_reference(tmp_path):
    main(["solve", "--problem", "laplacian", "--N", "50", "--out-dir", str(tmp_path)])
    _, _, rows = read_csv(tmp_path / "counters.csv")
    assert rows[0][3] == ""


def test_sketch_too_small_refused(tmp_path, capsys):
    rc = main(["solve", "--problem", "convdiff3d", "--N", "10", "--method", "sfom",
               "--m-restart", "100", "--sketch-dim", "50", "--out-dir", str(tmp_path / "o")])
    assert rc == 1
    assert "sketch dimension" in capsys.readouterr().err
    assert not (tmp_path / "o").exists()


def test_unconverged_exit_code(tmp_path):
    rc = main(["solve", "--problem", "laplacian", "--N", "200", "--nu", "50", "--method", "fom",
               "--m-restart", "10", "--tol", "1e-12", "--out-dir", str(tmp_path)])
    assert rc == 2


@pytest.mark.parametrize("argv", [
    ["solve", "--method", "bogus"],
    ["solve", "--problem", "laplacian", "--N", "2"],
    ["solve", "--update", "20", "--m-restart", "10"],
    ["solve", "--unknown-flag"],
    ["solve", "--problem", "external"],
    ["solve", "--config", "/nonexistent/file.cfg"],
])
def test_config_errors(argv, tmp_path):
    assert main(argv + ["--out-dir", str(tmp_path)] if "--unknown-flag" not in argv else argv) == 1


def test_config_file_and_override(tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("# comment\nproblem = laplacian\nN = 60\nmethod = fom\ntol = 1e-6  # trailing\nm-max = 40\n")
    d = read_config(cfg)
    assert d == {"problem": "laplacian", "N": 60, "method": "fom", "tol": 1e-6, "m_restart": 40}
    rc = main(["solve", "--config", str(cfg), "--tol", "1e-9", "--out-dir", str(tmp_path)])
    assert rc == 0
    header, _, _ = read_csv(tmp_path / "convergence.csv")
    assert "# tol = 1e-09" in header and "# N = 60" in header and "# m_restart = 40" in header
    bad = tmp_path / "bad.cfg"
    bad.write_text("N = 10\nfoo = 3\n")
    assert main(["solve", "--config", str(bad)]) == 1


def test_header_lists_every_field(tmp_path):
    main(["solve", "--problem", "laplacian", "--N", "30", "--out-dir", str(tmp_path)])
    header, _, _ = read_csv(tmp_path / "counters.csv")
    keys = [h[2:].split(" = ")[0] for h in header]
    assert keys == list(RunConfig.__dataclass_fields__)


def test_compare_identity_degeneracy(tmp_path):
    rc = main(["compare", "--problem", "laplacian", "--N", "100", "--T", "5", "--methods", "fom,sfom",
               "--sketch", "identity", "--trunc-k", "0", "--update", "1", "--tol", "1e-10",
               "--out-dir", str(tmp_path)])
    assert rc == 0
    _, cols, rows = read_csv(tmp_path / "compare.csv")
    assert cols == ["iteration", "fom", "sfom-identity"]
    a = np.array([float(r[1]) for r in rows])
    b = np.array([float(r[2]) for r in rows])
    np.testing.assert_allclose(b, a, rtol=1e-10, atol=1e-20)
    _, lcols, lrows = read_csv(tmp_path / "compare_long.csv")
    assert lcols == ["method", "iteration", "delta"] and len(lrows) == 2 * len(rows)


def test_compare_three_configs(tmp_path):
    paths = []
    for i, body in enumerate(["method = fom", "method = sfom", "method = sfom-restarted\nm_restart = 20"]):
        p = tmp_path / f"c{i}.cfg"
        p.write_text("problem = convdiff3d\nN = 8\n" + body + "\n")
        paths.append(str(p))
    rc = main(["compare", *paths, "--out-dir", str(tmp_path)])
    assert rc == 0
    _, cols, _ = read_csv(tmp_path / "compare.csv")
    assert cols == ["iteration", "fom", "sfom", "sfom-restarted"]


def test_compare_mismatched_problems(tmp_path, capsys):
    a, b = tmp_path / "a.cfg", tmp_path / "b.cfg"
    a.write_text("problem = laplacian\nN = 50\n")
    b.write_text("problem = laplacian\nN = 60\n")
    assert main(["compare", str(a), str(b), "--out-dir", str(tmp_path)]) == 1
    assert "different problems" in capsys.readouterr().err
    assert main(["compare", str(a)]) == 1


def test_deterministic_output(tmp_path):
    args = ["solve", "--problem", "convdiff3d", "--N", "8", "--method", "sfom-restarted",
            "--m-restart", "15", "--seed", "3"]
    main(args + ["--out-dir", str(tmp_path / "a")])
    main(args + ["--out-dir", str(tmp_path / "b")])
    for name in ("convergence.csv", "counters.csv"):
        assert numeric_columns(tmp_path / "a" / name) == numeric_columns(tmp_path / "b" / name)


def test_module_entry_point(tmp_path):
    out = subprocess.run([sys.executable, "-m", "sketchode", "solve", "--problem", "laplacian",
                          "--N", "30", "--out-dir", str(tmp_path)], capture_output=True, text=True)
    assert out.returncode == 0, out.stderr
    assert (tmp_path / "counters.csv").exists()


def test_header_expands_defaults(tmp_path):
    main(["solve", "--problem", "convdiff3d", "--N", "8", "--method", "sfom-restarted",
          "--m-restart", "20", "--tol", "1e-7", "--out-dir", str(tmp_path)])
    header, _, _ = read_csv(tmp_path / "counters.csv")
    assert "# nu = 0.005" in header and "# sketch_dim = 40" in header and "# xi = 1e-07" in header
