import json
from pathlib import Path

import pytest

from rwre import __version__
from rwre.harness import ConfigError, parse_config
from rwre.harness.cli import main

BIASED_CFG = """\
[experiment]
name = {name}
master_seed = 11

[distribution]
family = deterministic
d = 2
probs = 0.4, 0.1, 0.25, 0.25

[parameters]
ell = 1, 0
W = 60
horizon = 1500
n_walks = 120
"""


def write(tmp_path, text, name="run.cfg"):
    p = tmp_path / name
    p.write_text(text)
    return str(p)


def test_minimal_config_defaults():
    cfg = parse_config("[experiment]\nname = transience-scan\nmaster_seed = 1\n"
                       "[distribution]\nfamily = deterministic\nd = 2\nprobs = 0.25,0.25,0.25,0.25\n"
                       "[parameters]\nell = 1, 0\n")
    echo = cfg.echo()["parameters"]
    assert echo["W"] == 1000 and echo["horizon"] == 10000


def test_zero_ell_error_names_line():
    text = BIASED_CFG.format(name="velocity").replace("ell = 1, 0", "ell = 0,0")
    with pytest.raises(ConfigError) as exc:
        parse_config(text)
    line = text.splitlines().index("ell = 0,0") + 1
    assert exc.value.line == line and exc.value.key == "ell" and "nonzero" in str(exc.value)


def test_ell_normalized_for_identity_check():
    text = BIASED_CFG.format(name="identity-check").replace("ell = 1, 0", "ell = 3/2, 9/4")
    cfg = parse_config(text)
    assert cfg.ell == (2, 3)
    assert any("normalized" in n for n in cfg.notices)


@pytest.mark.parametrize("mutate,key", [
    (lambda t: t.replace("name = velocity", "name = warp-drive"), "name"),
    (lambda t: t.replace("master_seed = 11\n", ""), "master_seed"),
    (lambda t: t.replace("probs = 0.4, 0.1, 0.25, 0.25", "probs = 0.4, x, 0.25, 0.25"), "probs"),
    (lambda t: t.replace("ell = 1, 0\n", ""), "ell"),
])
def test_config_errors(mutate, key):
    with pytest.raises(ConfigError) as exc:
        parse_config(mutate(BIASED_CFG.format(name="velocity")))
    assert exc.value.key == key


def test_identity_check_on_straight_walk(tmp_path):
    text = BIASED_CFG.format(name="identity-check").replace("0.4, 0.1, 0.25, 0.25", "1, 0, 0, 0")
    assert main(["identity-check", "--config", write(tmp_path, text), "--out-dir", str(tmp_path)]) == 0
    summary = json.loads((tmp_path / "identity-check_summary.json").read_text())
    prod = summary["results"]["identity"]["product"]
    assert prod["value"] == 1.0 and prod["stderr"] == 0.0
    assert summary["strict_ellipticity"] is False
    assert summary["master_seed"] == 11 and summary["version"] == __version__


def test_transience_scan_symmetric(tmp_path):
    text = BIASED_CFG.format(name="transience-scan").replace("0.4, 0.1, 0.25, 0.25", "0.25, 0.25, 0.25, 0.25")
    assert main(["transience-scan", "--config", write(tmp_path, text), "--out-dir", str(tmp_path)]) == 0
    res = json.loads((tmp_path / "transience-scan_summary.json").read_text())["results"]
    assert res["counts"]["transient+"] == 0 and res["counts"]["transient-"] == 0
    assert res["counts"]["undecided"] == 120


def test_every_artifact_has_audit_header(tmp_path):
    assert main(["velocity", "--config", write(tmp_path, BIASED_CFG.format(name="velocity")),
                 "--out-dir", str(tmp_path)]) == 0
    for path in tmp_path.iterdir():
        if path.suffix in (".csv", ".dat"):
            head = path.read_text().splitlines()[:2]
            assert head[0] == f"# rwre {__version__} experiment=velocity master_seed=11"
            assert head[1].startswith("# config ")
        if path.suffix == ".dat":
            body = [ln for ln in path.read_text().splitlines() if not ln.startswith("#")]
            assert all(len(ln.split()) == 2 for ln in body)


def test_exit_codes(tmp_path, capsys):
    assert main(["velocity", "--config", str(tmp_path / "missing.cfg")]) == 1
    bad = BIASED_CFG.format(name="velocity").replace("ell = 1, 0", "ell = 0, 0")
    assert main(["velocity", "--config", write(tmp_path, bad)]) == 1
    assert "line" in capsys.readouterr().err
    # subcommand disagrees with the config
    assert main(["direction", "--config", write(tmp_path, BIASED_CFG.format(name="velocity"))]) == 1
    few = BIASED_CFG.format(name="identity-check").replace("n_walks = 120", "n_walks = 1").replace(
        "horizon = 1500", "horizon = 100")
    out = tmp_path / "few"
    assert main(["identity-check", "--config", write(tmp_path, few), "--out-dir", str(out)]) == 2
    assert json.loads((out / "identity-check_summary.json").read_text())["status"] == "insufficient-data"
    blocker = tmp_path / "blocker"
    blocker.write_text("not a directory")
    code = main(["velocity", "--config", write(tmp_path, BIASED_CFG.format(name="velocity")),
                 "--out-dir", str(blocker / "sub")])
    assert code == 1 and str(blocker) in capsys.readouterr().err


def test_seed_override_and_validate(tmp_path, capsys):
    cfg = write(tmp_path, BIASED_CFG.format(name="velocity"))
    assert main(["validate", "--config", cfg, "--seed-override", "42"]) == 0
    echo = json.loads(capsys.readouterr().out)
    assert echo["experiment"]["master_seed"] == 42


def test_trace(tmp_path):
    text = BIASED_CFG.format(name="trace").replace("0.4, 0.1, 0.25, 0.25", "1, 0, 0, 0") + "walk_index = 3\n"
    text = text.replace("horizon = 1500", "horizon = 4")
    assert main(["trace", "--config", write(tmp_path, text), "--out-dir", str(tmp_path)]) == 0
    lines = (tmp_path / "trace.txt").read_text().splitlines()
    assert lines[1:] == ["0 0 0", "1 1 0", "2 2 0", "3 3 0", "4 4 0"]


@pytest.mark.parametrize("name", ["renewal-stats", "transience-scan", "cone-survival", "cluster"])
def test_threads_do_not_change_artifacts(tmp_path, name):
    text = BIASED_CFG.format(name=name).replace("0.4, 0.1, 0.25, 0.25", "0.35, 0.15, 0.3, 0.2")
    cfg = write(tmp_path, text)
    outs = []
    for threads in (1, 3):
        out = tmp_path / f"t{threads}"
        assert main([name, "--config", cfg, "--out-dir", str(out), "--threads", str(threads)]) == 0
        outs.append({p.name: p.read_bytes() for p in sorted(out.iterdir())})
    assert outs[0] == outs[1]
