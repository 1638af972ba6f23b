import json

import pytest

from loopsoup.cli import main

RECT = "domain:\n  rectangle: {x0: 0, y0: 0, x1: 2, y1: 2}\n"


def write(tmp_path, text, name="c.yaml"):
    p = tmp_path / name
    p.write_text(text)
    return str(p)


def test_sample_soup_and_occupation(tmp_path, capsys):
    cfg = write(tmp_path, "experiment: sample-soup\nlam: 0.5\ncutoffs: {maxlen: 10}\n" + RECT)
    assert main(["sample-soup", "--config", cfg, "--replicas", "5", "--out", str(tmp_path / "s")]) == 0
    payload = json.loads((tmp_path / "s" / "soup.json").read_text())
    assert payload
    assert main(["occupation", "--config", cfg, "--replicas", "3", "--out", str(tmp_path / "L.csv")]) == 0
    lines = (tmp_path / "L.csv").read_text().splitlines()
    assert lines[0] == "replica,x,y,L" and len(lines) == 1 + 3 * 9


def test_brownian_and_clusters(tmp_path):
    cfg = write(tmp_path, "experiment: brownian-soup\nlam: 1.0\ncutoffs: {t0: 0.05}\nparams: {eps: 0.05}\n"
                "domain:\n  rectangle: {x0: 0, y0: 0, x1: 1, y1: 1}\n")
    assert main(["brownian-soup", "--config", cfg, "--out", str(tmp_path / "b.json")]) == 0
    assert main(["clusters", "--config", cfg, "--out", str(tmp_path / "c.csv")]) == 0
    assert (tmp_path / "c.csv").read_text().startswith("id,size")


def test_run_and_report(tmp_path, capsys):
    out = str(tmp_path / "rep")
    assert main(["run", "measure-oracle", "--out", out]) == 0
    assert "PASS" in capsys.readouterr().out
    assert (tmp_path / "rep" / "measure-oracle.json").exists()
    assert (tmp_path / "rep" / "timings.json").exists()
    assert main(["report", out]) == 0


def test_config_command(capsys):
    assert main(["config", "poisson-sampling"]) == 0
    assert "experiment: poisson-sampling" in capsys.readouterr().out


@pytest.mark.parametrize("argv", [
    ["run", "no-such-experiment"],
    ["run", "measure-oracle", "--replicas", "0"],
    ["run"],
    ["sample-soup"],
])
def test_bad_input_exits_2(argv, capsys):
    assert main(argv) == 2
    assert "error:" in capsys.readouterr().err


def test_bad_config_file(tmp_path):
    cfg = write(tmp_path, "experiment: x\nlambda: 1.0\n")
    assert main(["sample-soup", "--config", cfg]) == 2


def test_unknown_command():
    with pytest.raises(SystemExit):
        main(["frobnicate"])
