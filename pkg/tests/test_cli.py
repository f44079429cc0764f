"""Operator CLI: subprocess invocations for true exit-code behavior."""

import subprocess
import sys
import threading
from pathlib import Path

import pytest

from overlay_repo.fixtures import build_all
from overlay_repo.oai import OaiProvider
from overlay_repo.store import Repository
from overlay_repo.web import GatewayApp, make_server

from support import TickingClock, seed_metadata

FIXTURES = Path(__file__).resolve().parents[1] / "fixtures" / "figures"


def cli(*args, cwd=None):
    return subprocess.run(
        [sys.executable, "-m", "overlay_repo.cli", *args],
        capture_output=True, text=True, cwd=cwd, timeout=120)


def test_load_fixture_then_query(tmp_path):
    data = tmp_path / "data"
    loaded = cli("--data-dir", str(data), "load-fixture", str(FIXTURES),
                 "--porcelain")
    assert loaded.returncode == 0, loaded.stderr
    assert "nsdl:4" in loaded.stdout.splitlines()

    result = cli("--data-dir", str(data), "query", "--porcelain",
                 "-e", "select ?r where (?r <rel:memberOf> <info:nsdl/nsdl:31>)")
    assert result.returncode == 0, result.stderr
    assert result.stdout.splitlines() == ["nsdl:32", "nsdl:33"]


def test_export_round_trip(tmp_path):
    data = tmp_path / "data"
    cli("--data-dir", str(data), "load-fixture", str(FIXTURES))
    result = cli("--data-dir", str(data), "export", "--pid", "nsdl:4")
    assert result.returncode == 0
    assert result.stdout.startswith('<?xml version="1.0"')
    assert 'pid="nsdl:4"' in result.stdout


def test_export_unknown_pid_is_user_error(tmp_path):
    result = cli("--data-dir", str(tmp_path / "d"), "export", "--pid", "nsdl:9")
    assert result.returncode == 1
    assert "unknown pid" in result.stderr


def test_unknown_subcommand_exit_1():
    result = cli("no-such-command")
    assert result.returncode == 1


def test_register_provider_requires_data_dir():
    result = cli("register-provider", "--name", "x",
                 "--base-url", "http://x/oai")
    assert result.returncode == 1
    assert "data directory" in result.stderr


def test_query_parse_error_exit_1(tmp_path):
    result = cli("--data-dir", str(tmp_path / "d"), "query", "-e", "bogus")
    assert result.returncode == 1


@pytest.fixture
def upstream_server():
    """A live gateway over a seeded repository, for real-HTTP harvests."""
    upstream = Repository(clock=TickingClock())  # datestamps safely in the past
    seed_metadata(upstream, 5, provider_label="Upstream")
    server = make_server(
        GatewayApp(upstream, OaiProvider(upstream, repository_id="up.local")),
        "127.0.0.1", 0)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    try:
        yield f"http://127.0.0.1:{server.server_port}/oai"
    finally:
        server.shutdown()


def test_register_and_harvest_over_http(tmp_path, upstream_server):
    data = tmp_path / "data"
    registered = cli("--data-dir", str(data), "register-provider",
                     "--name", "up", "--base-url", upstream_server,
                     "--brand-label", "Upstream Mirror", "--porcelain")
    assert registered.returncode == 0, registered.stderr

    result = cli("--data-dir", str(data), "harvest", "--provider", "up",
                 "--porcelain")
    assert result.returncode == 0, result.stderr
    counters = dict(pair.split("=") for pair in result.stdout.split())
    assert counters["created"] == "5"
    assert counters["rejected"] == "0"

    again = cli("--data-dir", str(data), "harvest", "--provider", "up",
                "--porcelain")
    counters = dict(pair.split("=") for pair in again.stdout.split())
    assert counters["harvested"] == "0"


def test_harvest_unknown_provider(tmp_path):
    result = cli("--data-dir", str(tmp_path / "d"), "harvest",
                 "--provider", "ghost")
    assert result.returncode == 1


def test_shipped_fixture_files_match_builders(tmp_path):
    """The committed fixture directory is exactly what the builders
    produce; no drift between code and files."""
    from overlay_repo.fixtures import write_fixture_files

    regenerated = write_fixture_files(tmp_path / "figures")
    for path in regenerated:
        shipped = FIXTURES / path.relative_to(tmp_path / "figures")
        assert shipped.exists(), f"missing shipped fixture {shipped}"
        assert shipped.read_bytes() == path.read_bytes(), shipped

    shipped_all = {p.relative_to(FIXTURES) for p in FIXTURES.rglob("*.xml")}
    fresh_all = {p.relative_to(tmp_path / "figures")
                 for p in (tmp_path / "figures").rglob("*.xml")}
    assert shipped_all == fresh_all


def test_fixture_files_load_into_one_repository():
    repo = Repository()
    from overlay_repo.fixtures import load_fixture_dir

    pids = load_fixture_dir(repo, FIXTURES)
    assert len(pids) == 21
    fresh = Repository()
    labels = build_all(fresh)
    assert set(repo.pids()) == set(fresh.pids())
    assert repo.graph.dump() == fresh.graph.dump()
    assert labels["aggregation"]["aggregator"] in repo.pids()


def test_fixture_load_is_quiet_when_graph_is_sound(caplog):
    import logging

    repo = Repository()
    from overlay_repo.fixtures import load_fixture_dir

    with caplog.at_level(logging.WARNING):
        load_fixture_dir(repo, FIXTURES)
    assert caplog.records == []
    assert repo.validate_graph() == []


def test_fixture_load_reports_residual_violations(tmp_path, caplog):
    import logging

    from overlay_repo.fixtures import load_fixture_dir
    from support import put_object

    donor = Repository()
    aggregator = put_object(donor, {"Aggregator"})
    offender = put_object(donor, {"Metadata"}, edges=[("memberOf", aggregator)],
                          strict=False)
    directory = tmp_path / "broken"
    directory.mkdir()
    for pid in (aggregator, offender):
        (directory / f"{pid.split(':')[1]}.xml").write_bytes(
            donor.export_object(pid))

    repo = Repository()
    with caplog.at_level(logging.WARNING):
        load_fixture_dir(repo, directory)
    assert any("memberOf" in r.message for r in caplog.records)
