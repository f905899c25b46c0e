import hashlib
import json
import math
from pathlib import Path

import numpy as np
import pytest

from cdlt import cli
from cdlt.config import ExperimentConfig
from cdlt.reports import read_table
from cdlt.triangulation import read_triangulation, validate

SMALL = {
    "sample": ["--height", "12", "--trees", "2"],
    "diagnose": ["--height", "40", "--trees", "3", "--set", "martingale_replicas=200",
                 "--set", "martingale_n=30"],
    "gauge": ["--height", "60", "--n", "10,20,40", "--trees", "2"],
    "mw": ["--n", "6,9", "--r", "2", "--replicas", "3", "--sweeps", "60"],
    "longrange-check": ["--height", "24", "--depths", "12,24", "--probe-radius", "4",
                        "--trees", "2"],
}


def run(tmp_path, name, *args):
    out = tmp_path / name
    code = cli.main([*args, "--out", str(out)])
    return code, out


def table(path):
    with open(path) as fh:
        return read_table(fh)


def test_config_round_trip(tmp_path):
    cfg = ExperimentConfig(law="poisson", mw_n=(10, 20), theta=0.25)
    p = tmp_path / "c.txt"
    cfg.save(p)
    back = ExperimentConfig.load(p)
    assert back == cfg and back.hash == cfg.hash
    shuffled = "# comment\n" + "".join(reversed(p.read_text().splitlines(True)))
    assert ExperimentConfig.from_lines(shuffled.splitlines()).hash == cfg.hash
    assert cfg.replace(out="elsewhere", workers=4).hash == cfg.hash
    assert cfg.replace(seed=1).hash != cfg.hash


@pytest.mark.parametrize("text", ["bogus = 1", "height = ten", "height = 3\nheight = 4",
                                  "height", "mw_n = 3", "law = cauchy", "seed = -1"])
def test_config_rejects(text):
    with pytest.raises(ValueError):
        ExperimentConfig.from_lines(text.splitlines())


@pytest.mark.parametrize("command", sorted(SMALL))
def test_commands_are_deterministic(tmp_path, command):
    c1, a = run(tmp_path, "a", command, *SMALL[command])
    c2, b = run(tmp_path, "b", command, *SMALL[command])
    assert c1 == c2 == 0
    manifest = json.loads((a / "manifest.json").read_text())
    assert manifest["complete"] and not (a / "INCOMPLETE").exists()
    names = sorted(p.name for p in a.iterdir())
    assert names == sorted(p.name for p in b.iterdir())
    assert set(manifest["files"]) | {"manifest.json", "timings.json"} == set(names)
    for name in names:
        if name != "timings.json":
            assert (a / name).read_bytes() == (b / name).read_bytes(), name
    for name, digest in manifest["files"].items():
        assert hashlib.sha256((a / name).read_bytes()).hexdigest() == digest


def test_tables_carry_config_hash(tmp_path):
    _, out = run(tmp_path, "g", "gauge", *SMALL["gauge"])
    cfg = ExperimentConfig.load(out / "config.txt")
    kind, meta, cols, rows = table(out / "gauge.tsv")
    assert kind == "gauge" and meta["config_hash"] == cfg.hash
    assert cols == ["tree", "source", "n", "Q", "phi", "bound", "ratio"]
    for tree in (0, 1):
        phis = [r[4] for r in rows if r[0] == tree]
        assert all(a >= b for a, b in zip(phis, phis[1:]))


def test_sample_outputs_validate(tmp_path):
    _, out = run(tmp_path, "s", "sample", "--law", "deterministic", "--height", "5")
    with open(out / "triangulation_0.txt") as fh:
        T = read_triangulation(fh)
    assert T.layer_sizes.tolist() == [1] * 6 and validate(T).ok
    assert np.array_equal(T.strip_edge_counts(), T.layer_sizes[:-1] + T.layer_sizes[1:])
    assert cli.main(["validate", str(out)]) == 0


def test_sample_layer_sizes_stable(tmp_path):
    _, a = run(tmp_path, "a", "sample", "--height", "300", "--seed", "77")
    _, b = run(tmp_path, "b", "sample", "--height", "300", "--seed", "77")
    assert table(a / "layer_sizes.tsv")[3] == table(b / "layer_sizes.tsv")[3]


def test_diagnose_path_closed_form(tmp_path):
    _, out = run(tmp_path, "d", "diagnose", "--law", "deterministic", "--height", "30",
                 "--set", "martingale_replicas=100")
    _, _, _, rows = table(out / "growth_tree0.tsv")
    for t, k, ratio, _ in rows:
        assert abs(ratio - 1 / (t * math.log(t) ** 0.6)) < 1e-12
    _, _, _, mrows = table(out / "martingale.tsv")
    assert all(r[1] == 0 and r[3] == 0 for r in mrows)


def test_diagnose_mean_growth(tmp_path):
    _, out = run(tmp_path, "d", "diagnose", "--height", "100", "--trees", "400",
                 "--set", "martingale_replicas=100", "--set", "martingale_n=10")
    _, meta, cols, rows = table(out / "growth_mean.tsv")
    for t in (1, 10, 100):
        _, mean, se, expected = rows[t]
        assert abs(mean - expected) < 3 * se
    _, _, qcols, qrows = table(out / "growth_quantiles.tsv")
    assert [r[0] for r in qrows][0] == 0.0 and qcols[1] == "C"


def test_diagnose_from_input(tmp_path):
    _, s = run(tmp_path, "s", "sample", "--height", "20", "--trees", "2")
    code = cli.main(["diagnose", "--input", str(s), "--out", str(tmp_path / "d"),
                     "--set", "martingale_replicas=100"])
    assert code == 0
    _, _, _, rows = table(tmp_path / "d" / "growth_summary.tsv")
    assert len(rows) == 2


def test_gauge_theta_zero_and_fixture(tmp_path):
    _, out = run(tmp_path, "z", "gauge", "--height", "30", "--n", "6,12", "--theta", "0")
    assert all(r[4] == 0 for r in table(out / "gauge.tsv")[3])
    _, out = run(tmp_path, "p", "gauge", "--law", "deterministic", "--height", "10", "--n", "6",
                 "--r", "1", "--theta", "1")
    assert table(out / "gauge.tsv")[3][0][4] == pytest.approx(1.2954157, abs=1e-6)


def test_mw_free_case_flat(tmp_path):
    _, out = run(tmp_path, "m", "mw", "--potential", "zero", "--n", "6,12", "--r", "2",
                 "--replicas", "4", "--sweeps", "200")
    _, meta, cols, rows = table(out / "mw_summary.tsv")
    assert meta["potential"] == "zero"
    assert abs(rows[0][1] - rows[1][1]) < 0.2
    _, _, rcols, rrows = table(out / "mw_records.tsv")
    assert len(rrows) == 8 and "mcmc_seed" in rcols


def test_exit_codes(tmp_path, capsys):
    assert cli.main(["gauge", "--height", "10", "--out", str(tmp_path / "g")]) == 1
    assert cli.main(["sample", "--set", "nonsense=1", "--out", str(tmp_path / "x")]) == 1
    blocker = tmp_path / "file"
    blocker.write_text("")
    assert cli.main(["sample", "--height", "3", "--out", str(blocker)]) == 2
    assert cli.main(["validate", str(tmp_path / "missing.txt")]) == 2
    assert cli.main(["diagnose", "--input", str(tmp_path / "nothing"),
                     "--out", str(tmp_path / "d")]) == 2


def test_validate_flags_corruption(tmp_path):
    _, out = run(tmp_path, "s", "sample", "--height", "6")
    path = out / "triangulation_0.txt"
    lines = path.read_text().splitlines(True)
    path.write_text("".join(lines[:-1]))
    assert cli.main(["validate", str(path)]) == 1


def test_interrupted_run_is_flagged(tmp_path, monkeypatch):
    def boom(*a):
        raise KeyboardInterrupt

    monkeypatch.setitem(cli.COMMANDS, "gauge", boom)
    with pytest.raises(KeyboardInterrupt):
        cli.main(["gauge", "--height", "600", "--out", str(tmp_path / "g")])
    assert (tmp_path / "g" / "INCOMPLETE").exists()
    assert json.loads((tmp_path / "g" / "manifest.json").read_text())["complete"] is False


def test_config_file_flag(tmp_path):
    cfg = tmp_path / "exp.txt"
    cfg.write_text("law = deterministic\nheight = 4\n")
    code, out = run(tmp_path, "s", "sample", "--config", str(cfg), "--height", "6")
    assert code == 0
    loaded = ExperimentConfig.from_lines((out / "config.txt").read_text().splitlines())
    assert loaded.height == 6 and loaded.law == "deterministic"
