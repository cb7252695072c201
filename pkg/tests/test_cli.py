import json

import numpy as np
import pytest

from almostmin.cli import main
from almostmin.field import read_field


def write(tmp_path, text, name="exp.ini"):
    p = tmp_path / name
    p.write_text(text)
    return str(p)


def test_zero_data_solve(tmp_path):
    cfg = write(tmp_path, "[grid]\nh = 1/16\n\n[problem]\ndata = zero\n")
    assert main(["solve", "--config", cfg, "--out", str(tmp_path / "o")]) == 0
    man = json.loads((tmp_path / "o" / "manifest.json").read_text())
    assert man["iterations"] == 0 and man["discrete_energy"] == 0
    assert np.all(read_field(tmp_path / "o" / "field.txt").values == 0)


def test_alpha_out_of_range_is_line_anchored(tmp_path, capsys):
    cfg = write(tmp_path, "[grid]\nh = 1/16\n\n[analysis]\n# gauge\nalpha = 3\n")
    assert main(["solve", "--config", cfg, "--out", str(tmp_path)]) == 1
    err = capsys.readouterr().err
    assert f"{cfg}:6:" in err and "alpha" in err


@pytest.mark.parametrize("text,line", [
    ("[grid]\nh = abc\n", 2),
    ("[problem]\ndata = parabola\n", 2),
    ("[grid]\nh = 1/16\nbogus = 1\n", 3),
    ("[nonsense]\n", 1),
])
def test_config_errors(tmp_path, capsys, text, line):
    cfg = write(tmp_path, text)
    assert main(["solve", "--config", cfg, "--out", str(tmp_path)]) == 1
    assert f"{cfg}:{line}:" in capsys.readouterr().err


def test_unparseable_config(tmp_path, capsys):
    cfg = write(tmp_path, "h = 1\n")
    assert main(["solve", "--config", cfg]) == 1
    assert f"{cfg}:1:" in capsys.readouterr().err


def test_non_convergence_exit_2_writes_field(tmp_path):
    cfg = write(tmp_path, "[grid]\nh = 1/32\n\n[problem]\nmax_iters = 5\n")
    assert main(["solve", "--config", cfg, "--out", str(tmp_path / "o")]) == 2
    man = json.loads((tmp_path / "o" / "manifest.json").read_text())
    assert man["converged"] is False
    assert (tmp_path / "o" / "field.txt").exists()


def test_half_space_pipeline_deterministic(tmp_path):
    cfg = write(tmp_path, "[grid]\nh = 1/32\n\n[problem]\nnu = 17\n\n[analysis]\nsubsample = 4\nmax_indeterminate = 1\n\n"
                          "[verify]\nframes = 4\nr_min = 0.125\nr_max = 1.25\nregion = 0.2\n")
    outs = []
    for k in range(2):
        o = tmp_path / f"o{k}"
        assert main(["solve", "--config", cfg, "--out", str(o)]) == 0
        assert main(["analyze", "--config", cfg, "--out", str(o), "--seed", "3"]) == 0
        assert main(["verify", "--config", cfg, "--out", str(o), "--seed", "3"]) == 0
        outs.append(o)
    for name in ("field.txt", "gamma.csv", "gauge.csv", "classification.json"):
        assert (outs[0] / name).read_bytes() == (outs[1] / name).read_bytes()
    text = (outs[0] / "field.txt").read_text()
    from almostmin.field import dumps
    assert dumps(read_field(outs[0] / "field.txt")) == text
    gamma = (outs[0] / "gamma.csv").read_text().splitlines()
    assert len(gamma) == 5 and "\r" not in (outs[0] / "gamma.csv").read_text()
    verdict = json.loads((outs[0] / "gauge.json").read_text())["verdict"]
    assert verdict == "indistinguishable from minimizer"


def test_analyze_zero_field_notice(tmp_path, capsys):
    cfg = write(tmp_path, "[grid]\nh = 1/16\n\n[problem]\ndata = zero\n")
    main(["solve", "--config", cfg, "--out", str(tmp_path)])
    assert main(["analyze", "--config", cfg, "--out", str(tmp_path)]) == 0
    assert "empty free boundary" in capsys.readouterr().out
    assert json.loads((tmp_path / "classification.json").read_text())["points"] == []


def test_coarse_grid_reports_indeterminate_fraction(tmp_path):
    cfg = write(tmp_path, "[grid]\nh = 1/16\n\n[analysis]\nmax_indeterminate = 0\n")
    main(["solve", "--config", cfg, "--out", str(tmp_path)])
    code = main(["analyze", "--config", cfg, "--out", str(tmp_path)])
    summary = json.loads((tmp_path / "classification.json").read_text())
    frac = summary["indeterminate_fraction"]
    assert code == (3 if frac > 0 else 0)


def test_epi_sweep(tmp_path):
    cfg = write(tmp_path, "[problem]\nnu = 0\n\n[verify]\nepi = yes\namplitudes = 0.01,0.05,0.1\nepi_h = 1/32\n")
    assert main(["verify", "--config", cfg, "--out", str(tmp_path)]) == 0
    rows = (tmp_path / "epi.csv").read_text().splitlines()
    assert rows[0] == "label,dist_to_H,M_c,M_v,kappa_hat,degenerate"
    assert len(rows) == 1 + 1 + 3 * 3 * 2
    assert rows[1].startswith('"exact"') and rows[1].endswith(",1")


def test_beta(capsys):
    assert main(["beta"]) == 0
    out = capsys.readouterr().out
    assert "n=2 beta/2=0.19634954" in out and "n=3 beta/2=0.20943951" in out


def test_drift_solve_manifest(tmp_path):
    cfg = write(tmp_path, "[grid]\nh = 1/32\n\n[problem]\ndrift = 0.5, 0\np = 4\n")
    assert main(["solve", "--config", cfg, "--out", str(tmp_path)]) == 0
    man = json.loads((tmp_path / "manifest.json").read_text())
    assert man["extra"]["predicted_exponent"] == 0.5
