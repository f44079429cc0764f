"""Core domain types: pids, handles, datastreams, digital objects.

Identifiers are plain strings with a fixed grammar; the helpers here
validate and dissect them. Objects and datastreams are frozen dataclasses,
so every value handed out by the repository is an immutable snapshot that
is safe to share between threads.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field, replace
from datetime import datetime, timezone
from typing import NamedTuple
from xml.etree import ElementTree as ET
from xml.sax.saxutils import quoteattr

from .errors import ValidationError

PID_RE = re.compile(r"^nsdl:([0-9]+)$")
HANDLE_RE = re.compile(r"^hdl:([^/]+)/(.+)$")
INFO_URI_PREFIX = "info:nsdl/"

# Reserved datastream ids and naming conventions.
RELS_DS = "RELS"
CONTENT_DS = "CONTENT"
BRAND_DS = "BRAND"
SOURCE_DS = "SOURCE"
RECORD_DS_PREFIX = "REC."
RELS_MEDIA_TYPE = "application/rdf+xml"

# Behavior definitions an object may bind. Agent and Content imply the
# shared resource operations; Aggregator and MetadataProvider imply the
# role operations.
BEHAVIOR_NAMES = frozenset(
    {"Metadata", "Agent", "Content", "Aggregator", "MetadataProvider", "Role"}
)

EPOCH = datetime(1970, 1, 1, tzinfo=timezone.utc)


def make_pid(number: int) -> str:
    return f"nsdl:{number}"


def pid_number(pid: str) -> int:
    """Numeric part of a pid; raises ValidationError on bad grammar."""
    m = PID_RE.match(pid)
    if not m:
        raise ValidationError(f"malformed pid {pid!r} (expected nsdl:<decimal>)")
    return int(m.group(1))


def is_pid(value: str) -> bool:
    return bool(PID_RE.match(value))


def pid_sort_key(pid: str) -> int:
    return pid_number(pid)


def make_handle(prefix: str, number: int) -> str:
    return f"hdl:{prefix}/{number:05d}"


def is_handle(value: str) -> bool:
    return bool(HANDLE_RE.match(value))


def handle_suffix(handle: str) -> str:
    m = HANDLE_RE.match(handle)
    if not m:
        raise ValidationError(f"malformed handle {handle!r} (expected hdl:<prefix>/<suffix>)")
    return m.group(2)


def representation_uri(pid: str, op: str | None = None) -> str:
    """info-scheme URI for an object or one of its representations."""
    pid_number(pid)
    if op is None:
        return INFO_URI_PREFIX + pid
    return f"{INFO_URI_PREFIX}{pid}/{op}"


def parse_representation_uri(uri: str) -> tuple[str, str | None, dict[str, str]]:
    """Split an info URI into (pid, op, params).

    Accepts ``info:nsdl/nsdl:4``, ``info:nsdl/nsdl:4/getRecord`` and the
    same with a ``?key=value&...`` query suffix.
    """
    if not uri.startswith(INFO_URI_PREFIX):
        raise ValidationError(f"not an info:nsdl URI: {uri!r}")
    rest = uri[len(INFO_URI_PREFIX):]
    params: dict[str, str] = {}
    if "?" in rest:
        rest, query = rest.split("?", 1)
        for part in query.split("&"):
            if part:
                key, _, value = part.partition("=")
                params[key] = value
    if "/" in rest:
        pid, op = rest.split("/", 1)
    else:
        pid, op = rest, None
    pid_number(pid)
    return pid, op or None, params


def utcnow_seconds() -> datetime:
    """Current UTC time truncated to whole seconds (datestamp granularity)."""
    return datetime.now(timezone.utc).replace(microsecond=0)


def format_datestamp(dt: datetime) -> str:
    return dt.astimezone(timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")


def parse_datestamp(value: str) -> datetime:
    """Parse a UTC datestamp, either date-only or full seconds granularity."""
    for fmt in ("%Y-%m-%dT%H:%M:%SZ", "%Y-%m-%d"):
        try:
            return datetime.strptime(value, fmt).replace(tzinfo=timezone.utc)
        except ValueError:
            continue
    raise ValidationError(f"malformed UTC datestamp {value!r}")


class Representation(NamedTuple):
    """Output of a dissemination: whatever a behavior produced, or the
    bytes of a stored stream. Callers cannot tell the two apart."""

    media_type: str
    body: bytes


def build_source_doc(provider: str, oai_identifier: str, datestamp: datetime) -> bytes:
    """Provenance record stored in a harvested metadata object's SOURCE
    stream; the (provider, identifier) key makes incremental re-harvests
    find the object again."""
    return (
        f"<source provider={quoteattr(provider)}"
        f" oaiIdentifier={quoteattr(oai_identifier)}"
        f" datestamp={quoteattr(format_datestamp(datestamp))}/>\n"
    ).encode("utf-8")


def parse_source_doc(payload: bytes) -> tuple[str, str, datetime]:
    try:
        el = ET.fromstring(payload)
    except ET.ParseError as exc:
        raise ValidationError(f"malformed SOURCE document: {exc}")
    if el.tag != "source":
        raise ValidationError(f"SOURCE root must be <source>, got {el.tag!r}")
    provider = el.get("provider")
    oai_id = el.get("oaiIdentifier")
    stamp = el.get("datestamp")
    if provider is None or oai_id is None or stamp is None:
        raise ValidationError("SOURCE document is missing required attributes")
    return provider, oai_id, parse_datestamp(stamp)


@dataclass(frozen=True)
class Datastream:
    """A named component of an object: inline bytes or a URL reference."""

    ds_id: str
    kind: str  # "local" | "remote"
    media_type: str
    payload: bytes | None = None
    url: str | None = None
    created: datetime = field(default_factory=utcnow_seconds)

    def validate(self) -> None:
        if self.kind not in ("local", "remote"):
            raise ValidationError(f"datastream {self.ds_id}: unknown kind {self.kind!r}")
        if self.kind == "local" and (self.payload is None or self.url is not None):
            raise ValidationError(f"datastream {self.ds_id}: local streams carry payload only")
        if self.kind == "remote" and (self.url is None or self.payload is not None):
            raise ValidationError(f"datastream {self.ds_id}: remote streams carry url only")
        if self.ds_id == RELS_DS:
            if self.kind != "local" or self.media_type != RELS_MEDIA_TYPE:
                raise ValidationError(
                    f"datastream {RELS_DS} must be local with media type {RELS_MEDIA_TYPE}"
                )


def local_stream(ds_id: str, media_type: str, payload: bytes,
                 created: datetime | None = None) -> Datastream:
    return Datastream(ds_id, "local", media_type, payload=payload,
                      created=created or utcnow_seconds())


def remote_stream(ds_id: str, media_type: str, url: str,
                  created: datetime | None = None) -> Datastream:
    return Datastream(ds_id, "remote", media_type, url=url,
                      created=created or utcnow_seconds())


@dataclass(frozen=True)
class DigitalObject:
    """A uniquely identified aggregation of datastreams, bound behaviors,
    and a relationship fragment; the node of the overlay network."""

    pid: str
    state: str = "active"  # "active" | "deleted"
    handle: str | None = None
    datastreams: tuple[Datastream, ...] = ()
    behaviors: frozenset[str] = frozenset()
    last_modified: datetime = field(default_factory=utcnow_seconds)
    version: int = 0

    def validate(self) -> None:
        pid_number(self.pid)
        if self.state not in ("active", "deleted"):
            raise ValidationError(f"{self.pid}: unknown state {self.state!r}")
        if self.handle is not None and not is_handle(self.handle):
            raise ValidationError(f"{self.pid}: malformed handle {self.handle!r}")
        unknown = self.behaviors - BEHAVIOR_NAMES
        if unknown:
            raise ValidationError(
                f"{self.pid}: unknown behavior definitions {sorted(unknown)}")
        seen: set[str] = set()
        for ds in self.datastreams:
            if ds.ds_id in seen:
                raise ValidationError(f"{self.pid}: duplicate datastream {ds.ds_id}")
            seen.add(ds.ds_id)
            ds.validate()
        if self.handle is not None and not self.is_resource and self.state == "active":
            raise ValidationError(
                f"{self.pid}: handle present but object binds no resource type")

    @property
    def is_resource(self) -> bool:
        return bool(self.behaviors & {"Agent", "Content"})

    def datastream(self, ds_id: str) -> Datastream | None:
        for ds in self.datastreams:
            if ds.ds_id == ds_id:
                return ds
        return None

    def rels(self) -> bytes | None:
        ds = self.datastream(RELS_DS)
        return ds.payload if ds is not None else None

    def record_formats(self) -> list[str]:
        """Formats stored as REC.<format> datastreams, sorted."""
        return sorted(
            ds.ds_id[len(RECORD_DS_PREFIX):]
            for ds in self.datastreams
            if ds.ds_id.startswith(RECORD_DS_PREFIX)
        )

    def with_datastream(self, ds: Datastream) -> "DigitalObject":
        """Copy with ds replacing any same-named stream (order preserved)."""
        streams = [d for d in self.datastreams if d.ds_id != ds.ds_id]
        streams.append(ds)
        return replace(self, datastreams=tuple(streams))

    def tombstone(self, when: datetime) -> "DigitalObject":
        return DigitalObject(
            pid=self.pid,
            state="deleted",
            handle=self.handle,
            datastreams=(),
            behaviors=frozenset(),
            last_modified=when,
            version=self.version + 1,
        )
