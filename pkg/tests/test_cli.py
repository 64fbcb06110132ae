import json
import subprocess
import sys

import pytest

from hwfix.cli import main
from hwfix.corpus import get_bug

from conftest import GOLDEN, REPO
from test_sweep import E2E


def test_prompt_matches_golden(capsys):
    assert main(["prompt", "3", "--variation", "c"]) == 0
    assert capsys.readouterr().out == (GOLDEN / "bug3_c_prompt.txt").read_text()


def test_prompt_unknown_bug(capsys):
    assert main(["prompt", "99"]) == 2
    assert "no bug with id 99" in capsys.readouterr().err


def test_corpus_listing(capsys):
    assert main(["corpus"]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert len(lines) == 10 and "Grant Access" in lines[2]


def test_detect_text_and_json(corpus, capsys):
    path = get_bug(corpus, 9).buggy_file
    assert main(["detect", str(path)]) == 0
    out = capsys.readouterr().out
    assert out.strip().endswith("CWE1271 [R1271] register 'pmp_access_type_en' not assigned under reset")
    assert main(["detect", "--json", "--rules", "1245", str(E2E / "seeded_ctrl.sv")]) == 0
    (finding,) = json.loads(capsys.readouterr().out)
    assert finding["cwe"] == "CWE1245" and finding["span"] == [34, 38]


def test_detect_unparsable_file(tmp_path, capsys):
    bad = tmp_path / "bad.v"
    bad.write_text("module m;\n  always @* begin\nendmodule\n")
    assert main(["detect", str(bad), str(E2E / "clean_counter.v")]) == 2
    assert "bad.v" in capsys.readouterr().err


def test_sweep_bad_config(tmp_path, capsys):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"bug_ids": [3], "bogus": 1}))
    assert main(["sweep", "--config", str(cfg), "--out", str(tmp_path)]) == 2
    assert "bogus" in capsys.readouterr().err


@pytest.mark.sim
def test_sweep_cassette_miss_exit_3(tmp_path, capsys):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"bug_ids": [3], "variations": ["a"], "temperatures": [0.1], "n": 2}))
    code = main(["sweep", "--config", str(cfg), "--out", str(tmp_path), "--cassette", str(tmp_path / "none.jsonl")])
    assert code == 3
    assert "aborted" in capsys.readouterr().err


def test_live_without_credentials(tmp_path, monkeypatch, capsys):
    monkeypatch.delenv("MODEL_ENDPOINT", raising=False)
    monkeypatch.delenv("MODEL_API_KEY", raising=False)
    code = main(["e2e", str(E2E / "key_reg.sv"), "--mode", "live", "--out", str(tmp_path), "--sim",
                 str(REPO / "configs" / "verilator.json")])
    assert code == 2
    assert "MODEL_ENDPOINT" in capsys.readouterr().err


def test_best_missing_run(tmp_path, capsys):
    assert main(["best", "--run", str(tmp_path)]) == 2


@pytest.mark.sim
def test_sweep_and_best(tmp_path, capsys):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"bug_ids": [3], "variations": ["c"], "temperatures": [0.1, 0.3],
                               "models": ["scripted-a"], "seed_run_id": "cli"}))
    assert main(["sweep", "--config", str(cfg), "--out", str(tmp_path)]) == 0
    out = capsys.readouterr().out
    run_dir = out.strip().splitlines()[-1].split(": ", 1)[1]
    assert main(["best", "--run", run_dir]) == 0
    assert capsys.readouterr().out == "bug 3: 12 successes [scripted-a,c,0.1]\n"


@pytest.mark.sim
def test_e2e_clean_file(tmp_path, capsys):
    assert main(["e2e", str(E2E / "clean_counter.v"), "--out", str(tmp_path)]) == 0
    assert capsys.readouterr().out == "no findings\n"


def test_console_script_help():
    res = subprocess.run([sys.executable, "-m", "hwfix.cli", "--help"], capture_output=True, text=True)
    assert res.returncode == 0
    for cmd in ("detect", "prompt", "sweep", "best", "cirfix", "e2e"):
        assert cmd in res.stdout
