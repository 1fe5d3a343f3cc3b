import csv
import json
import math
import subprocess
import sys
from pathlib import Path

import jsonschema
import pytest

from cascadelab.cli import main

DOCS = Path(__file__).parents[1] / "docs"
CONSISTENCY = json.loads((DOCS / "consistency.schema.json").read_text())
CERTIFICATE = json.loads((DOCS / "certificate.schema.json").read_text())

W_TOML = """
[generator]
family = "discrete"
c = 2
atoms = [0.5, 1.5]
probs = [0.5, 0.5]
"""
W_PAIR = W_TOML + """
[generator2]
power = 2
"""
LOGN_PAIR = """
[generator]
family = "lognormal"
c = 2
sigma2 = 0.1

[generator2]
family = "lognormal"
c = 3
sigma2 = 0.1
"""
RUN = """
n = 6
replicates = 20
seed = 12345
rho = [1.5, 2.0]
moment_samples = 2000
dump_levels = [0, 3, 6]

[q_grid]
start = 0.0
stop = 2.5
step = 0.5
"""


def write_config(tmp_path, text, name="run.toml"):
    path = tmp_path / name
    path.write_text(text)
    return str(path)


def run(args, tmp_path, out=None):
    out = out or tmp_path / "out"
    out.mkdir(exist_ok=True)
    return main(list(args) + ["--out", str(out)]), out


def check_csv_finite(path):
    with open(path) as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]
    assert body
    for row in body:
        assert len(row) == len(header)
        for cell in row:
            try:
                value = float(cell)
            except ValueError:
                continue
            assert math.isfinite(value), (path, row)
    return header, body


# ------------------------------------------------------------ gen-info

def test_gen_info_deterministic(tmp_path, capsys):
    cfg = write_config(tmp_path, '[generator]\nfamily = "deterministic"\nc = 2\n')
    code, _ = run(["gen-info", "--config", cfg], tmp_path)
    assert code == 0
    out = capsys.readouterr().out
    rows = [line.split("\t") for line in out.splitlines() if "\t" in line][1:]
    assert len(rows) == 7
    for q, tau in rows:
        assert float(tau) == pytest.approx(float(q) - 1, abs=1e-12)
    assert "q_minus = -inf" in out and "q_plus = inf" in out
    assert "m2 = 1\n" in out and "V_a = 1\n" in out
    assert "nondegenerate = True" in out


def test_gen_info_divergent_m2(tmp_path, capsys):
    cfg = write_config(tmp_path, '[generator]\nfamily = "lognormal"\nc = 2\nsigma2 = 1.0\n')
    assert run(["gen-info", "--config", cfg], tmp_path)[0] == 0
    assert "m2 = divergent" in capsys.readouterr().out


# ------------------------------------------------------- identify-base

def test_identify_base_8_32(tmp_path, capsys):
    assert run(["identify-base", "--c1", "8", "--c2", "32"], tmp_path)[0] == 0
    out = capsys.readouterr().out
    assert "common_power_base(8, 32): p=2 k1=3 k2=5" in out
    assert "minimal_base(8) = 2" in out


def test_identify_base_none(tmp_path, capsys):
    assert run(["identify-base", "--c1", "2", "--c2", "3"], tmp_path)[0] == 0
    assert "common_power_base(2, 3) = none" in capsys.readouterr().out
    assert run(["identify-base", "--c1", "1"], tmp_path)[0] == 2
    assert run(["identify-base"], tmp_path)[0] == 2


# ---------------------------------------------------- simulate / tau / moments

def test_simulate_writes_cells(tmp_path):
    cfg = write_config(tmp_path, RUN + W_TOML)
    code, out = run(["simulate", "--config", cfg], tmp_path)
    assert code == 0
    header, body = check_csv_finite(out / "cells.csv")
    assert header[:3] == ["replicate", "level", "cell_index"]
    assert len(body) == 20 * (1 + 8 + 64)


def test_tau_writes_table(tmp_path):
    cfg = write_config(tmp_path, RUN + W_TOML)
    code, out = run(["tau", "--config", cfg], tmp_path)
    assert code == 0
    header, body = check_csv_finite(out / "tau.csv")
    assert header == ["q", "tau_hat", "tau_heuristic", "stderr", "j_min", "j_max"]
    assert [float(r[0]) for r in body] == [0.0, 0.5, 1.0, 1.5, 2.0, 2.5]
    assert {(r[4], r[5]) for r in body} == {("3", "6")}


def test_moments_writes_table(tmp_path):
    cfg = write_config(tmp_path, RUN + W_TOML)
    code, out = run(["moments", "--config", cfg], tmp_path)
    assert code == 0
    header, body = check_csv_finite(out / "moments.csv")
    assert header == ["quantity", "rho", "index", "empirical", "stderr", "closed_form"]
    kinds = {r[0] for r in body}
    assert kinds == {"weight", "total_mass", "adjacent_cells"}
    mass1 = [r for r in body if r[0] == "total_mass" and r[1] == "1"][0]
    assert float(mass1[5]) == 1.0


# ------------------------------------------------------------ commute

def test_commute_literal_exact(tmp_path, capsys):
    code, out = run(["commute", "--x", "1,2", "--y", "1,2,2,4"], tmp_path)
    assert code == 0
    doc = json.loads((out / "certificate.json").read_text())
    jsonschema.validate(doc, CERTIFICATE)
    assert doc["source"] == "literal" and doc["commutes"]
    cert = doc["certificate"]
    assert (cert["verdict"], cert["p"], cert["k1"], cert["k2"], cert["exact"]) == ("CommonBase", 2, 1, 2, True)


def test_commute_not_commuting_exit_1(tmp_path):
    code, out = run(["commute", "--x", "1,2", "--y", "1,2,4"], tmp_path)
    assert code == 1
    cert = json.loads((out / "certificate.json").read_text())["certificate"]
    assert cert["verdict"] == "NotCommuting" and cert["witness"] == 2


def test_commute_generator_means(tmp_path):
    cfg = write_config(tmp_path, 'vector = "mean"\n[generator]\nfamily = "dirichlet"\nc = 3\n'
                                 'concentration = [1.0, 2.0, 0.5]\n[generator2]\npower = 2\n')
    code, out = run(["commute", "--config", cfg], tmp_path)
    doc = json.loads((out / "certificate.json").read_text())
    assert code == 0 and doc["source"] == "component_mean"
    assert doc["certificate"]["verdict"] == "CommonBase" and doc["certificate"]["p"] == 3
    cfg = write_config(tmp_path, 'vector = "moment"\nrho = [2.0]\n' + W_PAIR, "w.toml")
    code, out = run(["commute", "--config", cfg], tmp_path, tmp_path / "w")
    doc = json.loads((out / "certificate.json").read_text())
    assert code == 0 and doc["source"].startswith("component_moment")
    assert doc["certificate"]["verdict"] == "AllConstant"    # W is symmetric


def test_commute_needs_two_vectors(tmp_path):
    assert run(["commute", "--x", "1,2"], tmp_path)[0] == 2
    assert run(["commute", "--x", "1,a", "--y", "1,2"], tmp_path)[0] == 2


# ------------------------------------------------------ xy-check / lemma2

def _consistency(out):
    doc = json.loads((out / "consistency.json").read_text())
    jsonschema.validate(doc, CONSISTENCY)
    return doc


def test_xy_check_same_measure_consistent(tmp_path):
    cfg = write_config(tmp_path, W_PAIR)
    code, out = run(["xy-check", "--config", cfg], tmp_path)
    doc = _consistency(out)
    assert code == 0 and doc["verdict"] == "consistent"
    assert doc["reports"][0]["xy_residual"] <= 1e-12


def test_xy_check_lognormal_inconsistent(tmp_path):
    cfg = write_config(tmp_path, LOGN_PAIR)
    code, out = run(["xy-check", "--config", cfg], tmp_path)
    doc = _consistency(out)
    assert code == 1 and doc["verdict"] == "inconsistent"
    assert doc["reports"][0]["xy_residual"] > 0


def test_lemma2_reports_per_rho(tmp_path):
    cfg = write_config(tmp_path, "rho = [1.5, 2.0, 2.5]\n" + W_PAIR)
    code, out = run(["lemma2", "--config", cfg], tmp_path)
    doc = _consistency(out)
    assert code == 0 and [r["rho"] for r in doc["reports"]] == [1.5, 2.0, 2.5]
    cfg = write_config(tmp_path, LOGN_PAIR, "b.toml")
    code, out = run(["lemma2", "--config", cfg], tmp_path, tmp_path / "b")
    assert code == 1 and _consistency(out)["reports"][0]["eq23_residual"] > 0


def test_pair_required(tmp_path):
    cfg = write_config(tmp_path, W_TOML)
    assert run(["xy-check", "--config", cfg], tmp_path)[0] == 2
    assert run(["lemma2", "--config", cfg], tmp_path)[0] == 2


# ------------------------------------------------------------ input errors

@pytest.mark.parametrize("text, line", [
    ('n = 4\nseed = 1\n[generator]\nfamily = "discrete"\nc = 2\natoms = [0.5, 1.5]\nprobs = [0.5]\n', 6),
    ('n = 4\nseed = 1\n[generator]\nfamily = "nope"\nc = 2\n', 4),
    ('n = -1\nseed = 1\n[generator]\nfamily = "deterministic"\nc = 2\n', 1),
    ('seed = 1\nbogus = 3\n[generator]\nfamily = "deterministic"\nc = 2\n', 2),
    ('seed = 1\n[generator]\nfamily = "lognormal"\nc = 2\nsigma2 = -0.1\n', 5),
])
def test_config_errors_have_line(tmp_path, capsys, text, line):
    cfg = write_config(tmp_path, text)
    assert run(["simulate", "--config", cfg], tmp_path)[0] == 2
    err = capsys.readouterr().err
    assert err.startswith("error:") and f"line {line}" in err


def test_toml_syntax_error(tmp_path, capsys):
    cfg = write_config(tmp_path, "n = = 3\n")
    assert run(["simulate", "--config", cfg], tmp_path)[0] == 2
    assert "line 1" in capsys.readouterr().err


def test_seed_required_and_memory_bound(tmp_path, capsys, monkeypatch):
    cfg = write_config(tmp_path, W_TOML)
    assert run(["simulate", "--config", cfg], tmp_path)[0] == 2
    assert "seed" in capsys.readouterr().err
    monkeypatch.setenv("CASCADELAB_MAX_CELLS", "16")
    cfg = write_config(tmp_path, "seed = 1\nn = 5\n" + W_TOML)
    assert run(["simulate", "--config", cfg], tmp_path)[0] == 2
    assert run(["simulate", "--config", str(tmp_path / "missing.toml")], tmp_path)[0] == 2
    assert run(["simulate", "--config", cfg, "--threads", "0"], tmp_path)[0] == 2


# ------------------------------------------------------------ determinism

ARTIFACT_RUNS = [
    ("simulate", RUN + W_TOML, "cells.csv"),
    ("tau", RUN + W_TOML, "tau.csv"),
    ("moments", RUN + W_TOML, "moments.csv"),
    ("commute", W_PAIR, "certificate.json"),
    ("xy-check", W_PAIR, "consistency.json"),
    ("lemma2", "rho = [1.5, 2.0]\n" + W_PAIR, "consistency.json"),
]


@pytest.mark.parametrize("cmd, text, name", ARTIFACT_RUNS)
def test_artifacts_byte_identical(tmp_path, cmd, text, name):
    cfg = write_config(tmp_path, text)
    blobs = set()
    for i, threads in enumerate((1, 1, 4, 16)):
        code, out = run([cmd, "--config", cfg, "--threads", str(threads)], tmp_path, tmp_path / f"o{i}")
        assert code in (0, 1)
        blobs.add((out / name).read_bytes())
    assert len(blobs) == 1


def test_module_entry_point(tmp_path):
    res = subprocess.run([sys.executable, "-m", "cascadelab", "identify-base", "--c1", "27", "--c2", "9"],
                         capture_output=True, text=True, check=False)
    assert res.returncode == 0 and "p=3 k1=3 k2=2" in res.stdout
