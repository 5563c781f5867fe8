import json

import pytest
from click.testing import CliRunner

from threefactor.cli import CONFIG, OK, VIOLATION, main


@pytest.fixture
def runner():
    return CliRunner()


def _write(path, text):
    path.write_text(text)
    return path


def test_builtin_suite_and_matrix(runner, tmp_path):
    out = tmp_path / "out"
    r = runner.invoke(main, ["run", "--out", str(out), "--jobs", "2"])
    assert r.exit_code == OK, r.output
    records = [json.loads(line) for line in (out / "report.jsonl").read_text().splitlines()]
    assert records and all(rec["passed"] for rec in records)
    assert (out / "report.txt").exists() and (out / "figures" / "verdicts.png").stat().st_size > 0
    assert all((out / "transcripts" / f"{rec['id']}.log").exists() for rec in records)
    r = runner.invoke(main, ["matrix", "--out", str(out)])
    assert r.exit_code == OK, r.output
    assert (out / "matrix.txt").read_text().startswith("Properties")
    assert (out / "figures" / "matrix.png").exists()


def test_empty_suite(runner, tmp_path):
    empty = tmp_path / "empty"
    empty.mkdir()
    out = tmp_path / "out"
    r = runner.invoke(main, ["run", str(empty), "--out", str(out)])
    assert r.exit_code == OK
    assert (out / "report.jsonl").read_text() == ""


def test_unmet_expectation_exits_1(runner, tmp_path):
    f = _write(tmp_path / "s.ini", "[scenario wrong]\nkind = guess\nscheme = S5\ndict_size = 50\n")
    r = runner.invoke(main, ["run", str(f), "--out", str(tmp_path / "o")])
    assert r.exit_code == VIOLATION


@pytest.mark.parametrize("text", ["[scenario x]\nkind = teleport\n", "[scenario x]\ntrials = 1\n",
                                  "not an ini file", "[scenario x]\nkind = honest\ntrials = many\n"])
def test_bad_config_exits_2(runner, tmp_path, text):
    f = _write(tmp_path / "s.ini", text)
    assert runner.invoke(main, ["run", str(f), "--out", str(tmp_path / "o")]).exit_code == CONFIG


def test_missing_paths_exit_2(runner, tmp_path):
    assert runner.invoke(main, ["run", str(tmp_path / "nope.ini")]).exit_code == CONFIG
    assert runner.invoke(main, ["run", "--suite", "no-such-suite"]).exit_code == CONFIG
    assert runner.invoke(main, ["matrix", "--out", str(tmp_path / "nothing")]).exit_code == CONFIG
    f = _write(tmp_path / "s.ini", "[scenario g]\nkind = guess\n")
    assert runner.invoke(main, ["run", str(f), "--dict", str(tmp_path / "none.txt")]).exit_code == CONFIG


def test_duplicate_ids_exit_2(runner, tmp_path):
    f = _write(tmp_path / "s.ini", "[scenario a]\nkind = honest\n[scenario b]\nid = a\nkind = honest\n")
    assert runner.invoke(main, ["run", str(f), "--out", str(tmp_path / "o")]).exit_code == CONFIG


def test_partial_report_leaves_cells_unbacked(runner, tmp_path):
    f = _write(tmp_path / "s.ini", "[scenario h]\nkind = honest\n")
    out = tmp_path / "o"
    assert runner.invoke(main, ["run", str(f), "--out", str(out)]).exit_code == OK
    r = runner.invoke(main, ["matrix", "--out", str(out)])
    assert r.exit_code == VIOLATION and "no backing scenario" in r.output


def test_env_overrides(runner, tmp_path):
    f = _write(tmp_path / "s.ini", "[scenario h]\nkind = honest\nseed = 1\n")
    out = tmp_path / "o"
    r = runner.invoke(main, ["run", str(f)], env={"TFA_OUT": str(out), "TFA_SEED": "99"})
    assert r.exit_code == OK
    first = (out / "report.jsonl").read_text()
    runner.invoke(main, ["run", str(f)], env={"TFA_OUT": str(out), "TFA_SEED": "98"})
    assert (out / "report.jsonl").read_text() != first


def test_run_reports_are_reproducible(runner, tmp_path):
    f = _write(tmp_path / "s.ini", "[scenario h]\nkind = honest\ntrials = 3\n[scenario r]\nkind = replay\ntrials = 3\n")
    texts = []
    for name in ("a", "b"):
        runner.invoke(main, ["run", str(f), "--out", str(tmp_path / name)])
        texts.append([(tmp_path / name / p).read_bytes() for p in
                      ("report.jsonl", "transcripts/h.log", "transcripts/r.log", "figures/verdicts.png")])
    assert texts[0] == texts[1]


PROVISION = "[provision]\nseed = 4\nuser = carol\nserver = bank\npassword = pw\ncontact = carol@example\n"


def test_provision_and_check(runner, tmp_path):
    cfg = _write(tmp_path / "p.ini", PROVISION)
    store = tmp_path / "store"
    r = runner.invoke(main, ["provision", str(cfg), "--store", str(store)])
    assert r.exit_code == OK, r.output
    assert sorted(p.name for p in store.iterdir()) == ["card.bin", "rc.store", "server.store", "user.store"]
    f = _write(tmp_path / "s.ini", "[scenario h]\nkind = honest\n")
    assert runner.invoke(main, ["run", str(f), "--store", str(store), "--out", str(tmp_path / "o")]).exit_code == OK


def test_reprovision_is_byte_identical(runner, tmp_path):
    cfg = _write(tmp_path / "p.ini", PROVISION)
    for name in ("a", "b"):
        assert runner.invoke(main, ["provision", str(cfg), "--store", str(tmp_path / name)]).exit_code == OK
    for p in (tmp_path / "a").iterdir():
        assert p.read_bytes() == (tmp_path / "b" / p.name).read_bytes()


def test_corrupted_store_exits_2(runner, tmp_path):
    cfg = _write(tmp_path / "p.ini", PROVISION)
    store = tmp_path / "store"
    runner.invoke(main, ["provision", str(cfg), "--store", str(store)])
    blob = bytearray((store / "server.store").read_bytes())
    blob[10] ^= 0x40
    (store / "server.store").write_bytes(bytes(blob))
    f = _write(tmp_path / "s.ini", "[scenario h]\nkind = honest\n")
    r = runner.invoke(main, ["run", str(f), "--store", str(store)])
    assert r.exit_code == CONFIG and "integrity tag mismatch" in r.output


def test_register_with_unknown_server_exits_1(runner, tmp_path):
    cfg = _write(tmp_path / "p.ini", PROVISION + "register_with = elsewhere\n")
    r = runner.invoke(main, ["provision", str(cfg), "--store", str(tmp_path / "s")])
    assert r.exit_code == VIOLATION and "UnknownPrincipal" in r.output


def test_provision_bad_config_exits_2(runner, tmp_path):
    assert runner.invoke(main, ["provision", str(tmp_path / "missing.ini")]).exit_code == CONFIG
    cfg = _write(tmp_path / "p.ini", "[provision]\nseed = lots\n")
    assert runner.invoke(main, ["provision", str(cfg)]).exit_code == CONFIG
