"""Canned topologies exercising the content model end to end.

Each builder populates a repository with one self-contained sub-graph
(fixed pids, handles, and datestamps, so exports are byte-stable) and
returns a map of descriptive labels to pids. ``write_fixture_files``
exports them as canonical XML for bulk loading.
"""

from __future__ import annotations

import logging
from datetime import datetime, timedelta, timezone
from pathlib import Path

from .behaviors import build_brand_doc
from .graph import Triple, serialize_rels
from .model import (
    BRAND_DS,
    CONTENT_DS,
    RELS_DS,
    RELS_MEDIA_TYPE,
    Datastream,
    DigitalObject,
    make_pid,
    pid_number,
)
from .ontology import base_predicate
from .records import serialize_dc, DcEntry

log = logging.getLogger(__name__)

_BASE_TIME = datetime(2005, 3, 5, 12, 0, 0, tzinfo=timezone.utc)


def _rels(pid: str, *edges: tuple[str, str]) -> Datastream:
    triples = [
        Triple(pid, base_predicate(name), target, provenance=pid)
        for name, target in edges
    ]
    return Datastream(RELS_DS, "local", RELS_MEDIA_TYPE,
                      payload=serialize_rels(pid, triples))


def _object(number: int, behaviors: set[str], streams: list[Datastream],
            handle: str | None = None, minute: int = 0) -> DigitalObject:
    return DigitalObject(
        pid=make_pid(number),
        handle=handle,
        behaviors=frozenset(behaviors),
        datastreams=tuple(streams),
        last_modified=_BASE_TIME + timedelta(minutes=minute),
        version=1,
    )


def _local(ds_id: str, media_type: str, payload: bytes) -> Datastream:
    return Datastream(ds_id, "local", media_type, payload=payload)


def _oai_dc(*entries: tuple[str, str]) -> bytes:
    return serialize_dc("oai_dc", [DcEntry(n, v) for n, v in entries])


def _nsdl_dc(*entries: tuple[str, str]) -> bytes:
    return serialize_dc("nsdl_dc", [DcEntry(n, v) for n, v in entries])


def build_basic_pair(repo) -> dict[str, str]:
    """A content resource and the metadata object describing it: the
    smallest complete dissemination graph."""
    resource = _object(
        1, {"Content"},
        [_local(CONTENT_DS, "text/html",
                b"<html><body>An introductory oceanography activity.</body></html>")],
        minute=0)
    metadata = _object(
        4, {"Metadata"},
        [_local("REC.oai_dc", "application/xml", _oai_dc(
            ("title", "Introductory Oceanography"),
            ("description", "Classroom activity on ocean circulation."),
            ("identifier", "http://example.edu/activities/oceanography"),
            ("date", "2004-11-02"),
        )),
         _local("REC.marcxml", "application/xml",
                b'<record xmlns="http://www.loc.gov/MARC21/slim">'
                b'<leader>00000nam a2200000 a 4500</leader>'
                b'<datafield tag="245"><subfield code="a">Introductory Oceanography'
                b'</subfield></datafield></record>'),
         _rels(make_pid(4), ("metadataFor", make_pid(1)))],
        minute=1)
    repo.restore_object(resource)
    repo.restore_object(metadata)
    return {"resource": resource.pid, "metadata": metadata.pid}


def build_branding(repo) -> dict[str, str]:
    """Two agents acting through distinct roles: a metadata provider
    branding the metadata it supplies, and an aggregator branding the
    resources it collects."""
    provider_agent = _object(11, {"Agent"}, [], handle="hdl:2200/00111", minute=0)
    provider_role = _object(
        12, {"MetadataProvider"},
        [_local(BRAND_DS, "application/xml",
                build_brand_doc("Example Metadata Service",
                                "http://example.org/brands/mds.png"))],
        minute=1)
    aggregator_agent = _object(13, {"Agent"}, [], handle="hdl:2200/00113", minute=2)
    aggregator_role = _object(
        14, {"Aggregator"},
        [_local(BRAND_DS, "application/xml",
                build_brand_doc("Example Science Collection",
                                "http://example.org/brands/collection.png"))],
        minute=3)
    content = _object(
        16, {"Content"},
        [_local(CONTENT_DS, "text/html", b"<html><body>A branded resource.</body></html>"),
         _rels(make_pid(16), ("memberOf", make_pid(14)))],
        handle="hdl:2200/00116", minute=4)
    metadata = _object(
        15, {"Metadata"},
        [_local("REC.oai_dc", "application/xml", _oai_dc(
            ("title", "A Branded Resource"),
            ("identifier", "http://example.org/branded"),
        )),
         _rels(make_pid(15),
               ("metadataFor", make_pid(16)),
               ("providedBy", make_pid(12)))],
        minute=5)
    for obj in (provider_agent, provider_role, aggregator_agent,
                aggregator_role, content, metadata):
        repo.restore_object(obj)
    # hasRole edges live in the agents' own fragments, added once the
    # role objects exist.
    for agent, role in ((provider_agent, provider_role),
                        (aggregator_agent, aggregator_role)):
        repo.restore_object(
            agent.with_datastream(_rels(agent.pid, ("hasRole", role.pid))))
    return {
        "provider_agent": provider_agent.pid,
        "provider_role": provider_role.pid,
        "aggregator_agent": aggregator_agent.pid,
        "aggregator_role": aggregator_role.pid,
        "metadata": metadata.pid,
        "resource": content.pid,
    }


def build_augmented_metadata(repo) -> dict[str, str]:
    """One resource described by two providers, the second record
    augmenting the first; the resource computes a merged gold record."""
    content = _object(
        21, {"Content"},
        [_local(CONTENT_DS, "text/html",
                b"<html><body>Photosynthesis for middle school.</body></html>")],
        handle="hdl:2200/00121", minute=0)
    agent_one = _object(22, {"Agent"}, [], handle="hdl:2200/00122", minute=1)
    role_one = _object(
        23, {"MetadataProvider"},
        [_local(BRAND_DS, "application/xml", build_brand_doc("First Provider"))],
        minute=2)
    agent_two = _object(24, {"Agent"}, [], handle="hdl:2200/00124", minute=3)
    role_two = _object(
        25, {"MetadataProvider"},
        [_local(BRAND_DS, "application/xml", build_brand_doc("Second Provider"))],
        minute=4)
    base_record = _object(
        5, {"Metadata"},
        [_local("REC.oai_dc", "application/xml", _oai_dc(
            ("title", "Photosynthesis Basics"),
            ("subject", "Botany"),
            ("date", "March 5, 2004"),
            ("identifier", "http://example.org/photosynthesis"),
        )),
         _rels(make_pid(5),
               ("metadataFor", make_pid(21)),
               ("providedBy", make_pid(23)))],
        minute=5)
    augmenting_record = _object(
        8, {"Metadata"},
        [_local("REC.nsdl_dc", "application/xml", _nsdl_dc(
            ("title", "Photosynthesis Basics (Revised)"),
            ("subject", "Botany"),
            ("subject", "Plant physiology"),
            ("identifier", "http://example.org/photosynthesis"),
        )),
         _rels(make_pid(8),
               ("metadataFor", make_pid(21)),
               ("providedBy", make_pid(25)),
               ("augments", make_pid(5)))],
        minute=6)
    for obj in (content, agent_one, role_one, agent_two, role_two,
                base_record, augmenting_record):
        repo.restore_object(obj)
    for agent, role in ((agent_one, role_one), (agent_two, role_two)):
        repo.restore_object(
            agent.with_datastream(_rels(agent.pid, ("hasRole", role.pid))))
    return {
        "resource": content.pid,
        "base_record": base_record.pid,
        "augmenting_record": augmenting_record.pid,
        "provider_role_one": role_one.pid,
        "provider_role_two": role_two.pid,
    }


def build_aggregation(repo) -> dict[str, str]:
    """An agent acting as an aggregator: two member resources, plus a
    content document standing in for the aggregation itself."""
    surrogate = _object(
        34, {"Content"},
        [_local(CONTENT_DS, "text/html",
                b"<html><body>State standard 7.2: life sciences.</body></html>")],
        handle="hdl:2200/00401", minute=0)
    aggregator = _object(
        31, {"Agent", "Aggregator"},
        [_local(BRAND_DS, "application/xml", build_brand_doc("Standard 7.2 Alignment")),
         _rels(make_pid(31), ("representedBy", make_pid(34)))],
        handle="hdl:2200/00402", minute=1)
    member_one = _object(
        32, {"Content"},
        [_local(CONTENT_DS, "text/html", b"<html><body>Cell structure lab.</body></html>"),
         _rels(make_pid(32), ("memberOf", make_pid(31)))],
        handle="hdl:2200/00406", minute=2)
    member_two = _object(
        33, {"Content"},
        [_local(CONTENT_DS, "text/html", b"<html><body>Food web simulation.</body></html>"),
         _rels(make_pid(33), ("memberOf", make_pid(31)))],
        handle="hdl:2200/00408", minute=3)
    for obj in (surrogate, aggregator, member_one, member_two):
        repo.restore_object(obj)
    return {
        "aggregator": aggregator.pid,
        "member_one": member_one.pid,
        "member_two": member_two.pid,
        "surrogate": surrogate.pid,
    }


def build_annotation(repo) -> dict[str, str]:
    """A primary resource and a second content resource reviewing it;
    the review is content in its own right, not metadata."""
    primary = _object(
        41, {"Content"},
        [_local(CONTENT_DS, "text/html",
                b"<html><body>Interactive fraction applet.</body></html>")],
        handle="hdl:2200/00441", minute=0)
    review = _object(
        42, {"Content"},
        [_local(CONTENT_DS, "text/html",
                b"<html><body>Worked well with my sixth graders.</body></html>"),
         _rels(make_pid(42), ("annotates", make_pid(41)))],
        handle="hdl:2200/00442", minute=1)
    repo.restore_object(primary)
    repo.restore_object(review)
    return {"primary": primary.pid, "review": review.pid}


FIXTURE_BUILDERS = {
    "basic_pair": build_basic_pair,
    "branding": build_branding,
    "augmented_metadata": build_augmented_metadata,
    "aggregation": build_aggregation,
    "annotation": build_annotation,
}


def build_all(repo) -> dict[str, dict[str, str]]:
    """All fixture sub-graphs in one repository (pids never collide)."""
    return {name: builder(repo) for name, builder in FIXTURE_BUILDERS.items()}


def write_fixture_files(target: str | Path) -> list[Path]:
    """Export every fixture object as canonical XML under one directory
    per topology, suitable for ``overlay load-fixture``."""
    from .store import Repository

    target = Path(target)
    written = []
    for name, builder in FIXTURE_BUILDERS.items():
        repo = Repository()
        builder(repo)
        directory = target / name
        directory.mkdir(parents=True, exist_ok=True)
        for pid in repo.pids():
            path = directory / f"{pid_number(pid)}.xml"
            path.write_bytes(repo.export_object(pid))
            written.append(path)
    return written


def load_fixture_dir(repo, directory: str | Path) -> list[str]:
    """Bulk-import every canonical XML file under a directory tree.

    File order is arbitrary, so objects stage in the lenient mode with
    forward references silenced; once everything has landed the whole
    graph is validated and only the violations that remain are logged.
    """
    paths = sorted(Path(directory).rglob("*.xml"))
    staging_loggers = [logging.getLogger("overlay_repo.graph"),
                       logging.getLogger("overlay_repo.store")]
    levels = [lg.level for lg in staging_loggers]
    for lg in staging_loggers:
        lg.setLevel(logging.ERROR)
    try:
        pids = [repo.import_object(path.read_bytes(), strict=False)
                for path in paths]
    finally:
        for lg, level in zip(staging_loggers, levels):
            lg.setLevel(level)
    for violation in repo.validate_graph():
        log.warning("fixture graph violation: %s", violation)
    return pids
