import json
from pathlib import Path

import numpy as np
import pytest

from hepplab import cli
from hepplab.errors import ConfigError, ParseError, UnknownKey
from hepplab.settings import DEFAULT_TOLERANCES

CONFIGS = Path(__file__).resolve().parent.parent / "configs"

QUARTIC = """kind = converge
seed = 3
[model]
d = 1
dk = 0.5
m0 = 1.0
beta = 0, 0, 0, 0, 0.0816496580927726
[run]
phi0 = 0.5
N = 0, 1
"""


def write(tmp_path, text, name="run.cfg"):
    path = tmp_path / name
    path.write_text(text)
    return path


# ---------------------------------------------------------------------------
# parsing

def test_minimal_config_has_defaults():
    cfg = cli.parse_config("kind = validate\n")
    ref = cli.ExperimentConfig()
    assert cfg.kind == "validate"
    assert cfg.to_dict() == ref.to_dict()
    assert cfg.tolerances == DEFAULT_TOLERANCES


def test_eps_list_sorted_descending():
    cfg = cli.parse_config("kind = converge\n[run]\neps = 0.16, 0.32\n")
    assert cfg.eps == [0.32, 0.16]
    assert cli.parse_config("[run]\neps = 0.32,0.16\n").eps == [0.32, 0.16]


def test_unknown_key_reports_line():
    with pytest.raises(UnknownKey) as info:
        cli.parse_config("kind = converge\n\n[run]\nepss = 0.1\n")
    assert info.value.key == "epss" and info.value.line == 4


@pytest.mark.parametrize("text,line", [
    ("kind = converge\n[run\n", 2),
    ("kind = converge\n[nowhere]\n", 2),
    ("kind = converge\nseed\n", 2),
    ("seed = 1\nseed = 2\n", 2),
    ("[run]\nT = fast\n", 2),
    ("[run]\neps = 0.5, 1.5\n", 2),
    ("[tolerances]\ntail_tol = -1e-10\n", 2),
    ("kind = explore\n", 1),
])
def test_parse_errors_carry_line(text, line):
    with pytest.raises(ParseError) as info:
        cli.parse_config(text)
    assert info.value.line == line


def test_model_file_and_inline_are_exclusive(tmp_path):
    with pytest.raises(ConfigError):
        cli.parse_config("[model]\nfile = m.spec\nd = 2\n")
    spec = write(tmp_path, "d = 2\ndk = 0.5\nm0 = 1.0\nbeta = [0, 0, 0.5]\n", "m.spec")
    cfg = cli.load_config(write(tmp_path, "kind = classical\n[model]\nfile = m.spec\n"))
    assert Path(cfg.model["file"]) == spec.resolve()


def test_tolerance_override():
    cfg = cli.parse_config("[tolerances]\ntail_tol = 1e-8\nslope_band = 0.2\n")
    assert cfg.tolerances.tail_tol == 1e-8 and cfg.tolerances.slope_band == 0.2
    assert cfg.tolerances.quad_tol == DEFAULT_TOLERANCES.quad_tol


@pytest.mark.parametrize("name", sorted(p.name for p in CONFIGS.glob("*.cfg")))
def test_shipped_configs_parse(name):
    cfg = cli.load_config(CONFIGS / name)
    assert cfg.kind in cli.KINDS


# ---------------------------------------------------------------------------
# fluctuation states

def test_fluctuation_states():
    from hepplab.fock import FockBasis
    from hepplab.tensor import ModeSpace
    basis = FockBasis(ModeSpace.diagonal([1.0]), 30)
    assert np.allclose(cli.fluctuation_state("vacuum", basis, 1), basis.vacuum())
    v = cli.fluctuation_state("sector:2", basis, 1)
    assert np.allclose(v, basis.basis_vector((2,)))
    c = cli.fluctuation_state("coherent:0.5", basis, 2)
    assert abs(np.linalg.norm(c) - 1) < 1e-12
    assert np.all(c[basis.sector > basis.M - 3 * 2 - 8] == 0)
    with pytest.raises(ConfigError):
        cli.fluctuation_state("squeezed", basis, 1)


# ---------------------------------------------------------------------------
# experiments and reports

def test_validate_is_deterministic(tmp_path):
    cfg = cli.parse_config("kind = validate\nseed = 7\n[run]\ncases = 3\nsuites = tensor, ccr\n")
    code_a, _, paths_a = cli.run_experiment(cfg, tmp_path / "a")
    code_b, _, paths_b = cli.run_experiment(cfg, tmp_path / "b")
    assert code_a == code_b == cli.EXIT_OK
    assert paths_a[0].read_bytes() == paths_b[0].read_bytes()
    manifest = json.loads(paths_a[0].read_text())
    assert manifest["seed"] == 7 and manifest["config"]["tolerances"]["tail_tol"] == 1e-10
    assert all(json.loads(p.read_text())["seed"] == 7 for p in paths_a if p.suffix == ".json")


def test_subquadratic_converge_is_exact(tmp_path):
    cfg = cli.load_config(CONFIGS / "converge_quadratic.cfg")
    cfg.eps = [0.32, 0.16, 0.08]
    code, res, _ = cli.run_experiment(cfg, tmp_path)
    assert code == cli.EXIT_OK
    assert res.summary["exact_regime"]
    assert all(v is None for v in res.summary["slopes"].values())
    assert all("exact regime" in r.lines[0] for r in res.reports)


def test_quartic_converge_reports_slopes(tmp_path):
    code, res, paths = cli.run_experiment(cli.parse_config(QUARTIC), tmp_path)
    assert code == cli.EXIT_OK
    assert [r.name for r in res.reports] == ["converge_N0", "converge_N1"]
    for N in (0, 1):
        assert abs(res.summary["slopes"][str(N)] - (N + 1) / 2) < 0.15
    header = (tmp_path / "converge_N0.csv").read_text().splitlines()[0]
    assert header == "eps,M,tail,err_norm,err_fidelity,runtime_s"
    assert "slope" in (tmp_path / "converge_summary.txt").read_text()


def test_emit_empty_results(tmp_path):
    paths = cli.emit_report(cli.Results("validate", {"seed": 1}), tmp_path, exit_code=0)
    assert [p.name for p in paths] == ["manifest.json"]
    assert sorted(p.name for p in tmp_path.iterdir()) == ["manifest.json"]


def test_emit_one_report_and_versioning(tmp_path):
    res = cli.Results("classical", {"seed": 1})
    res.reports.append(cli.Report("traj", ["t", "x"], [[0.0, 1.0]], {"seed": 1}, ["ok"]))
    first = cli.emit_report(res, tmp_path, exit_code=0)
    assert sorted(p.name for p in first[1:]) == ["classical_summary.txt", "traj.csv", "traj.json"]
    second = cli.emit_report(res, tmp_path, exit_code=0)
    assert sorted(p.name for p in second) == ["classical_summary-v2.txt", "manifest-v2.json",
                                              "traj-v2.csv", "traj-v2.json"]
    assert all(p.exists() for p in first)


def test_exit_codes(tmp_path):
    good = write(tmp_path, "kind = validate\nseed = 1\n[run]\ncases = 2\nsuites = tensor\n", "ok.cfg")
    assert cli.main(["validate", "--config", str(good), "--out", str(tmp_path / "ok")]) == cli.EXIT_OK

    strict = write(tmp_path, "seed = 1\n[run]\ncases = 2\nsuites = classical\n"
                             "[tolerances]\nenergy_tol = 1e-300\n", "strict.cfg")
    assert cli.main(["validate", "--config", str(strict), "--out", str(tmp_path / "strict")]) == cli.EXIT_ASSERT

    bad = write(tmp_path, "kind = validate\nepss = 1\n", "bad.cfg")
    assert cli.main(["validate", "--config", str(bad), "--out", str(tmp_path / "bad")]) == cli.EXIT_CONFIG
    failure = json.loads((tmp_path / "bad" / "manifest.json").read_text())["failure"]
    assert failure["type"] == "UnknownKey"

    # T = 1.5 lies beyond the lifespan bound (about 1.12) of this model
    numeric = write(tmp_path, QUARTIC + "T = 1.5\noverride = false\n", "numeric.cfg")
    assert cli.main(["converge", "--config", str(numeric), "--out", str(tmp_path / "num")]) == cli.EXIT_NUMERIC
    manifest = json.loads((tmp_path / "num" / "manifest.json").read_text())
    assert manifest["exit_code"] == cli.EXIT_NUMERIC and manifest["failure"]["type"] == "RangeError"
