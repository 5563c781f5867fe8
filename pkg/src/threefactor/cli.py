"""``threefactor`` command line.

Exit codes: 0 when every expectation is met, 1 on a property violation,
2 on configuration or I/O trouble.  Every flag can also come from a
``TFA_*`` environment variable.
"""

from __future__ import annotations

import configparser
import csv
import json
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import replace
from importlib import resources
from pathlib import Path
from typing import Optional

import click

from . import plotting, storage
from .channel_sim import MATRIX_ROWS, SCHEMES, Run, Scenario, feature_matrix, run_scenario
from .crypto_core import Rng
from .errors import ConfigError, StoreIntegrityError
from .proposed_scheme import RegistrationCenter, ServerActor, store_violations
from .world import PhaseAborted, provision_proposed

OK, VIOLATION, CONFIG = 0, 1, 2
REPORT_JSONL = "report.jsonl"
REPORT_TXT = "report.txt"
BUILTIN_SUITES = ("paper-attacks",)


def _fail(code: int, message: str) -> None:
    click.echo(f"error: {message}", err=True)
    sys.exit(code)


def suite_dir(name_or_path: str) -> Path:
    p = Path(name_or_path)
    if p.is_dir():
        return p
    if name_or_path in BUILTIN_SUITES:
        return Path(str(resources.files("threefactor") / "suites" / name_or_path))
    raise ConfigError(f"no suite directory or built-in suite named {name_or_path!r}")


def collect(paths: list[Path]) -> list[Scenario]:
    scenarios: list[Scenario] = []
    for p in paths:
        if p.is_dir():
            files = sorted(p.glob("*.ini"))
        elif p.is_file():
            files = [p]
        else:
            raise ConfigError(f"{p}: no such file or directory")
        for f in files:
            scenarios.extend(Scenario.load(f))
    ids = [s.id for s in scenarios]
    dupes = sorted({i for i in ids if ids.count(i) > 1})
    if dupes:
        raise ConfigError(f"duplicate scenario ids: {', '.join(dupes)}")
    return scenarios


def apply_overrides(scenarios: list[Scenario], seed: Optional[int], curve: Optional[str],
                    dictionary: Optional[str]) -> list[Scenario]:
    out = []
    for s in scenarios:
        changes = {}
        if seed is not None:
            changes["seed"] = seed
        if curve is not None:
            changes["curve"] = curve
        if dictionary is not None and s.kind in ("guess", "impersonate"):
            changes["dictionary"] = dictionary
        out.append(replace(s, **changes) if changes else s)
    return out


def _summary(metrics: dict, width: int = 60) -> str:
    text = " ".join(f"{k}={v}" for k, v in metrics.items() if "." not in k)
    return text if len(text) <= width else text[: width - 3] + "..."


def report_text(runs: list[Run]) -> str:
    lines = [f"{'id':<28} {'scheme':<6} {'kind':<18} {'outcome':<7} {'expected':<8} result  metrics"]
    for r in runs:
        v = r.verdict
        lines.append(f"{v.id:<28} {v.scheme:<6} {v.kind:<18} {v.outcome:<7} {'holds' if v.expected else 'fails':<8} "
                     f"{'PASS' if v.passed else 'FAIL':<6}  {_summary(v.metrics)}")
    passed = sum(r.verdict.passed for r in runs)
    total = sum(r.verdict.elapsed for r in runs)
    lines.append("")
    lines.append(f"{passed}/{len(runs)} scenarios met their expectation; scenario time {total:.2f}s")
    return "\n".join(lines) + "\n"


def write_reports(runs: list[Run], out: Path) -> None:
    out.mkdir(parents=True, exist_ok=True)
    (out / REPORT_JSONL).write_text(
        "".join(json.dumps(r.verdict.record(), sort_keys=True) + "\n" for r in runs), encoding="utf-8")
    (out / REPORT_TXT).write_text(report_text(runs), encoding="utf-8")
    tdir = out / "transcripts"
    tdir.mkdir(exist_ok=True)
    for r in runs:
        (tdir / f"{r.verdict.id}.log").write_text(r.text(), encoding="utf-8")
    plotting.verdict_figure([r.verdict.record() for r in runs], out / "figures" / "verdicts.png")


def check_stores(directory: Path) -> list[str]:
    """Load the four files (integrity-checked) and test the cross-store relations."""
    loaded = storage.read_stores(directory)
    rc = RegistrationCenter(Rng(0))
    rc.store = loaded[storage.RC_FILE]
    _, server_name, _ = loaded[storage.USER_FILE]
    server = ServerActor(server_name, Rng(0))
    server.store = loaded[storage.SERVER_FILE]
    return store_violations(rc, server)


def matrix_text(rows) -> str:
    width = max(len(label) for label, _ in rows)
    mark = {True: "Y", False: "N", None: "-"}
    lines = [f"{'Properties':<{width}}  " + "  ".join(SCHEMES)]
    for label, cells in rows:
        lines.append(f"{label:<{width}}  " + "  ".join(f"{mark[cells[s]]:<2}" for s in SCHEMES).rstrip())
    return "\n".join(lines) + "\n"


@click.group()
@click.version_option(package_name="artifact")
def main() -> None:
    """Provision, attack and compare three-factor authentication schemes."""


@main.command()
@click.argument("config", type=click.Path(dir_okay=False), envvar="TFA_CONFIG")
@click.option("--store", "store_dir", type=click.Path(file_okay=False), default="store", envvar="TFA_STORE",
              show_default=True, help="Directory for the three stores and the card file.")
@click.option("--seed", type=int, default=None, envvar="TFA_SEED", help="Override the config seed.")
def provision(config: str, store_dir: str, seed: Optional[int]) -> None:
    """Register a server and a user, then write their stores."""
    parser = configparser.ConfigParser(interpolation=None)
    try:
        with open(config, encoding="utf-8") as fh:
            parser.read_file(fh)
        sec = parser["provision"] if parser.has_section("provision") else parser[parser.default_section]
        kw = dict(
            user=sec.get("user", "alice"),
            server=sec.get("server", "bank"),
            password=sec.get("password", "correct horse"),
            contact=sec.get("contact", "alice@recovery.example"),
            noise=sec.getint("noise", 0),
            register_with=sec.get("register_with") or None,
        )
        seed = sec.getint("seed", 0) if seed is None else seed
    except (OSError, configparser.Error, ValueError) as exc:
        _fail(CONFIG, f"{config}: {exc}")
    try:
        world = provision_proposed(seed, **kw)
    except PhaseAborted as exc:
        _fail(VIOLATION, str(exc))
    try:
        paths = storage.write_world(world, store_dir)
    except OSError as exc:
        _fail(CONFIG, str(exc))
    for p in paths:
        click.echo(str(p))


@main.command()
@click.argument("paths", nargs=-1, type=click.Path(path_type=Path))
@click.option("--suite", default=None, envvar="TFA_SUITE",
              help="Suite directory or built-in name (default: paper-attacks when no paths are given).")
@click.option("--out", "out_dir", type=click.Path(file_okay=False, path_type=Path), default="out",
              envvar="TFA_OUT", show_default=True)
@click.option("--seed", type=int, default=None, envvar="TFA_SEED", help="Override every scenario seed.")
@click.option("--curve", type=click.Choice(["tiny", "std256"]), default=None, envvar="TFA_CURVE")
@click.option("--dict", "dictionary", type=click.Path(dir_okay=False), default=None, envvar="TFA_DICT",
              help="Dictionary file for guessing scenarios.")
@click.option("--store", "store_dir", type=click.Path(file_okay=False, path_type=Path), default=None,
              envvar="TFA_STORE", help="Check a provisioned store directory before running.")
@click.option("--jobs", type=click.IntRange(min=1), default=1, envvar="TFA_JOBS", show_default=True)
def run(paths: tuple[Path, ...], suite: Optional[str], out_dir: Path, seed: Optional[int], curve: Optional[str],
        dictionary: Optional[str], store_dir: Optional[Path], jobs: int) -> None:
    """Run scenario files or suites and write reports."""
    try:
        sources = list(paths)
        if suite is not None or not sources:
            sources.append(suite_dir(suite or "paper-attacks"))
        scenarios = apply_overrides(collect(sources), seed, curve, dictionary)
        if dictionary is not None and not Path(dictionary).is_file():
            raise ConfigError(f"{dictionary}: no such dictionary file")
        violations = check_stores(store_dir) if store_dir is not None else []
    except (ConfigError, StoreIntegrityError, OSError, KeyError) as exc:
        _fail(CONFIG, str(exc))
    if violations:
        for v in violations:
            click.echo(f"store violation: {v}", err=True)
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        try:
            runs = list(pool.map(run_scenario, scenarios))
        except ConfigError as exc:
            _fail(CONFIG, str(exc))
    try:
        write_reports(runs, out_dir)
    except OSError as exc:
        _fail(CONFIG, str(exc))
    click.echo(report_text(runs), nl=False)
    ok = all(r.verdict.passed for r in runs) and not violations
    sys.exit(OK if ok else VIOLATION)


@main.command()
@click.option("--out", "out_dir", type=click.Path(file_okay=False, path_type=Path), default="out",
              envvar="TFA_OUT", show_default=True, help="Directory holding report.jsonl; outputs go here too.")
@click.option("--report", type=click.Path(dir_okay=False, path_type=Path), default=None, envvar="TFA_REPORT",
              help="Explicit report.jsonl path.")
def matrix(out_dir: Path, report: Optional[Path]) -> None:
    """Rebuild the S1/S5 feature matrix from scenario records."""
    path = report or out_dir / REPORT_JSONL
    try:
        records = [json.loads(line) for line in path.read_text(encoding="utf-8").splitlines() if line.strip()]
    except (OSError, json.JSONDecodeError) as exc:
        _fail(CONFIG, f"cannot read suite results: {exc}")
    rows = feature_matrix(records)
    out_dir.mkdir(parents=True, exist_ok=True)
    text = matrix_text(rows)
    (out_dir / "matrix.txt").write_text(text, encoding="utf-8")
    with open(out_dir / "matrix.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["property", *SCHEMES, *(f"{s}_scenarios" for s in SCHEMES)])
        keys = dict((label, key) for key, label in MATRIX_ROWS)
        for label, cells in rows:
            backing = [";".join(r["id"] for r in records if r["scheme"] == s and keys[label] in r["features"])
                       for s in SCHEMES]
            w.writerow([label, *({True: "Y", False: "N", None: ""}[cells[s]] for s in SCHEMES), *backing])
    plotting.matrix_figure(rows, SCHEMES, out_dir / "figures" / "matrix.png")
    click.echo(text, nl=False)
    if any(cells[s] is None for _, cells in rows for s in SCHEMES):
        _fail(VIOLATION, "some matrix cells have no backing scenario")


if __name__ == "__main__":
    main()
