"""Frozen transcripts: any change to the codec, the RNG or a protocol step shows up here."""

import hashlib
import json
from pathlib import Path

import pytest

from threefactor.channel_sim import Scenario, run_scenario

GOLDEN = Path(__file__).parent / "golden"


@pytest.mark.parametrize("sid, scheme", [("golden-s1-honest", "S1"), ("golden-s5-honest", "S5")])
def test_transcript_and_record(sid, scheme):
    run = run_scenario(Scenario(sid, "honest", scheme=scheme, seed=7, trials=2))
    expected_text = (GOLDEN / f"{sid}.log").read_text()
    assert run.text() == expected_text
    record = json.loads((GOLDEN / f"{sid}.json").read_text())
    assert run.verdict.record() == record
    bare = "".join(line + "\n" for line in expected_text.splitlines() if not line.startswith("# trial"))
    assert hashlib.sha256(bare.encode()).hexdigest() == record["transcript_sha256"]


def test_s1_golden_shape():
    lines = (GOLDEN / "golden-s1-honest.log").read_text().splitlines()
    insecure = [line for line in lines if " INSECURE " in line]
    # three login messages per trial, all seen by the adversary
    assert len(insecure) == 6 and all(" A " in line for line in insecure)
    assert not any(" A " in line for line in lines if " SECURE " in line)
