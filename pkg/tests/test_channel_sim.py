import configparser

import pytest

from threefactor.channel_sim import (
    KINDS, MATRIX_ROWS, RUNNERS, SCHEMES, Scenario, Verdict, feature_matrix, run_scenario,
)
from threefactor.cli import collect, suite_dir
from threefactor.errors import ConfigError


def _section(text):
    p = configparser.ConfigParser(interpolation=None)
    p.read_string(text)
    return p[p.sections()[0]]


def test_every_kind_has_a_runner():
    assert {(s, k) for s in SCHEMES for k in KINDS} == set(RUNNERS)


@pytest.mark.parametrize("kw", [
    dict(kind="teleport"),
    dict(kind="honest", scheme="S9"),
    dict(kind="honest", expect="maybe"),
    dict(kind="guess", capabilities=frozenset({"card", "password", "biometric"})),
    dict(kind="guess", capabilities=frozenset({"telepathy"})),
    dict(kind="password_change", faults=("Z9.rc",)),
    dict(kind="honest", channel_faults=("explode(1)",)),
    dict(kind="honest", curve="p521"),
    dict(kind="honest", trials=-1),
    dict(kind="honest", features=("flying",)),
])
def test_invalid_scenarios(kw):
    with pytest.raises(ConfigError):
        Scenario("bad", **kw)


def test_section_parsing():
    s = Scenario.from_section(_section("""
[scenario lossy]
kind = honest
trials = 3
capabilities = card, password
channel_faults = drop(0); delay(1, 2)
features = mutual_auth
matrix = no
"""))
    assert s.id == "lossy" and s.trials == 3
    assert s.capabilities == {"card", "password"}
    assert s.channel_faults == ("drop(0)", "delay(1, 2)")
    assert s.backs == ()


def test_missing_kind():
    with pytest.raises(ConfigError, match="missing key"):
        Scenario.from_section(_section("[scenario x]\ntrials = 1\n"))


def test_trial_seeds_differ():
    s = Scenario("x", "honest", seed=5)
    assert len({s.trial_seed(i) for i in range(100)}) == 100


def test_verdict_semantics():
    v = Verdict("x", "guess", "S5", holds=False, expected=False, metrics={}, digest="")
    assert v.passed and v.outcome == "fails"
    assert "elapsed" not in v.record()


def test_feature_matrix_cells():
    recs = [
        dict(scheme="S1", outcome="holds", features=["replay"]),
        dict(scheme="S1", outcome="fails", features=["replay"]),
        dict(scheme="S5", outcome="holds", features=["replay", "dos"]),
    ]
    rows = dict(feature_matrix(recs))
    assert rows["Prevents Replay Attack"] == {"S1": False, "S5": True}
    assert rows["Prevents Denial of Service Attack"] == {"S1": None, "S5": True}
    assert len(rows) == len(MATRIX_ROWS) == 11


def test_builtin_ids_are_clean():
    ids = [s.id for s in collect([suite_dir("paper-attacks")])]
    assert ids and all(" " not in i and not i.startswith("scenario") for i in ids)


@pytest.mark.parametrize("s", collect([suite_dir("paper-attacks")]), ids=lambda s: s.id)
def test_builtin_scenarios_meet_expectations(s):
    v = run_scenario(s).verdict
    assert v.passed, v.record()


def test_lossy_login_recovers_with_retry():
    v = run_scenario(Scenario("lossy", "honest", trials=3, channel_faults=("drop(0)",), retries=1)).verdict
    assert v.holds
    v = run_scenario(Scenario("lossy", "honest", trials=3, channel_faults=("drop(0)",))).verdict
    assert not v.holds


def test_budget_exhaustion_is_a_failed_run():
    v = run_scenario(Scenario("tight", "honest", budget=2)).verdict
    assert not v.holds and (v.metrics.get("nontermination") or v.metrics.get("aborted"))


def test_unsupported_legacy_phase():
    v = run_scenario(Scenario("x", "card_recovery", scheme="S5", expect="fails")).verdict
    assert v.passed and v.metrics == {"supported": 0}


def test_noise_beyond_tolerance_denies_service():
    assert run_scenario(Scenario("n1", "noisy_login", trials=5, noise=1)).verdict.holds
    assert not run_scenario(Scenario("n2", "noisy_login", trials=5, noise=2)).verdict.holds
