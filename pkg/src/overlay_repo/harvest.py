"""OAI-PMH harvesting: incremental pulls from provider endpoints into the
content-model graph.

Each registered provider gets an agent object plus two role objects (a
metadata provider and an aggregator). Every harvested record becomes a
metadata object carrying the verbatim payload, the normalized nsdl_dc
derivative, and provenance; described resources are created once per
URL across all providers and collected into the provider's aggregation.
"""

from __future__ import annotations

import json
import urllib.request
from dataclasses import dataclass, field, replace
from datetime import datetime
from pathlib import Path
from typing import Callable
from urllib.parse import urlencode, urlparse
from xml.etree import ElementTree as ET

from . import records
from .behaviors import build_brand_doc
from .errors import HarvestProtocolError, NotFoundError
from .graph import Triple, serialize_rels
from .model import (
    BRAND_DS,
    CONTENT_DS,
    RELS_DS,
    RELS_MEDIA_TYPE,
    SOURCE_DS,
    Datastream,
    DigitalObject,
    build_source_doc,
    format_datestamp,
    local_stream,
    parse_datestamp,
    remote_stream,
)
from .ontology import base_predicate
from .records import MetadataRecord, apply_safe_transforms, crosswalk, validate_record

OAI_NS = "http://www.openarchives.org/OAI/2.0/"
DC_IDENTIFIER = "{http://purl.org/dc/elements/1.1/}identifier"

# Transport seam: url -> response body. The default speaks HTTP; tests and
# in-process federation substitute direct calls.
Transport = Callable[[str], bytes]


def http_transport(url: str, timeout: float = 30.0) -> bytes:
    with urllib.request.urlopen(url, timeout=timeout) as response:
        return response.read()


@dataclass
class ProviderConfig:
    """One harvest source and the repository objects standing for it."""

    name: str
    base_url: str
    format: str = "oai_dc"
    set_spec: str | None = None
    schedule_hint: int = 3600  # seconds between scheduled harvests
    brand_label: str | None = None
    brand_logo_url: str | None = None
    agent_pid: str | None = None
    provider_role_pid: str | None = None
    aggregator_role_pid: str | None = None

    def to_dict(self) -> dict:
        return {k: v for k, v in self.__dict__.items() if v is not None}

    @classmethod
    def from_dict(cls, data: dict) -> "ProviderConfig":
        return cls(**data)


@dataclass
class HarvestState:
    """Incremental-harvest bookkeeping; last_success_until never decreases."""

    last_success_until: datetime | None = None
    pending_resumption: str | None = None
    pending_until: datetime | None = None
    consecutive_failures: int = 0

    def to_dict(self) -> dict:
        return {
            "last_success_until": _opt_stamp(self.last_success_until),
            "pending_resumption": self.pending_resumption,
            "pending_until": _opt_stamp(self.pending_until),
            "consecutive_failures": self.consecutive_failures,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "HarvestState":
        return cls(
            last_success_until=_opt_parse(data.get("last_success_until")),
            pending_resumption=data.get("pending_resumption"),
            pending_until=_opt_parse(data.get("pending_until")),
            consecutive_failures=int(data.get("consecutive_failures", 0)),
        )


def _opt_stamp(dt: datetime | None) -> str | None:
    return None if dt is None else format_datestamp(dt)


def _opt_parse(value: str | None) -> datetime | None:
    return None if value is None else parse_datestamp(value)


@dataclass
class IngestReport:
    harvested: int = 0
    created: int = 0
    updated: int = 0
    deleted: int = 0
    rejected: int = 0
    rejects: list[tuple[str, str]] = field(default_factory=list)

    def check(self) -> None:
        assert self.harvested == self.created + self.updated + self.deleted + self.rejected


def next_attempt_delay(cfg: ProviderConfig, state: HarvestState) -> int:
    """Exponential backoff from the provider's schedule hint, capped at
    24 hours."""
    return min(cfg.schedule_hint * (2 ** state.consecutive_failures), 86400)


@dataclass(frozen=True)
class _Header:
    identifier: str
    datestamp: datetime
    deleted: bool


@dataclass(frozen=True)
class _Page:
    records: list
    resumption_token: str | None


class Harvester:
    def __init__(self, repo, transport: Transport | None = None):
        self.repo = repo
        self.transport = transport or http_transport

    # ------------------------------------------------------------------
    # provisioning

    def register_provider(self, cfg: ProviderConfig) -> ProviderConfig:
        """Create the provider's agent and its two role objects (with
        brands), wiring hasRole edges; idempotent for an already
        provisioned config."""
        if cfg.agent_pid is not None:
            return cfg
        label = cfg.brand_label or cfg.name
        brand = local_stream(BRAND_DS, "application/xml",
                             build_brand_doc(label, cfg.brand_logo_url))
        provider_role = self.repo.mint_pid()
        self.repo.put_object(DigitalObject(
            pid=provider_role, behaviors=frozenset({"MetadataProvider"}),
            datastreams=(brand,)))
        aggregator_role = self.repo.mint_pid()
        self.repo.put_object(DigitalObject(
            pid=aggregator_role, behaviors=frozenset({"Aggregator"}),
            datastreams=(brand,)))
        agent = self.repo.mint_pid()
        rels = serialize_rels(agent, [
            Triple(agent, base_predicate("hasRole"), provider_role, agent),
            Triple(agent, base_predicate("hasRole"), aggregator_role, agent),
        ])
        self.repo.put_object(DigitalObject(
            pid=agent, behaviors=frozenset({"Agent"}),
            datastreams=(Datastream(RELS_DS, "local", RELS_MEDIA_TYPE, payload=rels),)))
        self.repo.assign_handle(agent)
        return replace(cfg, agent_pid=agent, provider_role_pid=provider_role,
                       aggregator_role_pid=aggregator_role)

    # ------------------------------------------------------------------
    # harvesting

    def harvest(self, cfg: ProviderConfig,
                state: HarvestState | None = None) -> tuple[IngestReport, HarvestState]:
        """One full ListRecords pass: window [last_success_until, now),
        following resumption tokens to completion. The state advances only
        once the whole chain lands; a failed page leaves it resumable."""
        if cfg.agent_pid is None:
            raise HarvestProtocolError(f"provider {cfg.name} is not registered")
        state = state or HarvestState()
        report = IngestReport()
        if state.pending_resumption is not None:
            until = state.pending_until or self.repo.clock()
            params = {"verb": "ListRecords",
                      "resumptionToken": state.pending_resumption}
        else:
            until = self.repo.clock()
            params = {"verb": "ListRecords", "metadataPrefix": cfg.format}
            if state.last_success_until is not None:
                params["from"] = format_datestamp(state.last_success_until)
            params["until"] = format_datestamp(until)
            if cfg.set_spec:
                params["set"] = cfg.set_spec

        while True:
            try:
                page = self._fetch_page(cfg, params)
            except HarvestProtocolError as exc:
                state.consecutive_failures += 1
                if exc.code == "badResumptionToken":
                    state.pending_resumption = None
                    state.pending_until = None
                raise
            for header, metadata in page.records:
                report.harvested += 1
                if header.deleted:
                    self.handle_deleted(header.identifier, cfg)
                    report.deleted += 1
                    continue
                outcome = self.ingest_record(header, metadata, cfg)
                if outcome == "created":
                    report.created += 1
                elif outcome == "updated":
                    report.updated += 1
                else:
                    report.rejected += 1
                    report.rejects.append((header.identifier, outcome))
            if page.resumption_token:
                state.pending_resumption = page.resumption_token
                state.pending_until = until
                params = {"verb": "ListRecords",
                          "resumptionToken": page.resumption_token}
                continue
            break

        state.pending_resumption = None
        state.pending_until = None
        state.consecutive_failures = 0
        if state.last_success_until is None or until > state.last_success_until:
            state.last_success_until = until
        report.check()
        return report, state

    # ------------------------------------------------------------------
    # other client verbs

    def identify(self, cfg: ProviderConfig) -> dict[str, str]:
        """The provider's Identify fields (repositoryName, baseURL, ...)."""
        root = self._request(cfg, {"verb": "Identify"})
        self._raise_on_error(cfg, root)
        el = root.find(f"{{{OAI_NS}}}Identify")
        if el is None:
            raise HarvestProtocolError(f"{cfg.name}: response has no Identify")
        return {child.tag.split('}', 1)[1]: (child.text or "") for child in el}

    def list_formats(self, cfg: ProviderConfig) -> list[str]:
        root = self._request(cfg, {"verb": "ListMetadataFormats"})
        self._raise_on_error(cfg, root)
        return [el.text or "" for el in root.findall(
            f"{{{OAI_NS}}}ListMetadataFormats/{{{OAI_NS}}}metadataFormat"
            f"/{{{OAI_NS}}}metadataPrefix")]

    def get_record(self, cfg: ProviderConfig,
                   identifier: str) -> tuple[_Header, bytes | None]:
        root = self._request(cfg, {
            "verb": "GetRecord", "identifier": identifier,
            "metadataPrefix": cfg.format})
        self._raise_on_error(cfg, root)
        container = root.find(f"{{{OAI_NS}}}GetRecord")
        records = self._parse_records(container) if container is not None else []
        if not records:
            raise HarvestProtocolError(f"{cfg.name}: GetRecord returned nothing")
        return records[0]

    # ------------------------------------------------------------------
    # transport plumbing

    def _request(self, cfg: ProviderConfig, params: dict) -> ET.Element:
        url = cfg.base_url + "?" + urlencode(params)
        try:
            body = self.transport(url)
        except Exception as exc:
            raise HarvestProtocolError(f"{cfg.name}: request failed: {exc}") from exc
        try:
            return ET.fromstring(body)
        except ET.ParseError as exc:
            raise HarvestProtocolError(f"{cfg.name}: malformed response: {exc}") from exc

    def _raise_on_error(self, cfg: ProviderConfig, root: ET.Element) -> None:
        error = root.find(f"{{{OAI_NS}}}error")
        if error is not None:
            code = error.get("code", "")
            raise HarvestProtocolError(
                f"{cfg.name}: provider error {code}: {error.text or ''}", code=code)

    def _fetch_page(self, cfg: ProviderConfig, params: dict) -> _Page:
        root = self._request(cfg, params)
        error = root.find(f"{{{OAI_NS}}}error")
        if error is not None:
            code = error.get("code", "")
            if code == "noRecordsMatch":
                return _Page([], None)
            raise HarvestProtocolError(
                f"{cfg.name}: provider error {code}: {error.text or ''}", code=code)
        container = root.find(f"{{{OAI_NS}}}ListRecords")
        if container is None:
            raise HarvestProtocolError(f"{cfg.name}: response has no ListRecords")
        token_el = container.find(f"{{{OAI_NS}}}resumptionToken")
        token = (token_el.text or "").strip() if token_el is not None else ""
        return _Page(self._parse_records(container), token or None)

    def _parse_records(self, container: ET.Element) -> list:
        parsed = []
        for record in container.findall(f"{{{OAI_NS}}}record"):
            header_el = record.find(f"{{{OAI_NS}}}header")
            if header_el is None:
                continue
            identifier = header_el.findtext(f"{{{OAI_NS}}}identifier", "").strip()
            stamp = header_el.findtext(f"{{{OAI_NS}}}datestamp", "").strip()
            try:
                datestamp = parse_datestamp(stamp)
            except Exception:
                datestamp = self.repo.clock()
            deleted = header_el.get("status") == "deleted"
            metadata_el = record.find(f"{{{OAI_NS}}}metadata")
            payload = None
            if metadata_el is not None:
                children = list(metadata_el)
                if children:
                    payload = ET.tostring(children[0], encoding="utf-8")
            parsed.append((_Header(identifier, datestamp, deleted), payload))
        return parsed

    # ------------------------------------------------------------------
    # record ingest

    def ingest_record(self, header: _Header, payload: bytes | None,
                      cfg: ProviderConfig) -> str:
        """Returns "created", "updated", or a rejection reason."""
        if payload is None:
            return "empty record"
        verdict = validate_record(payload, cfg.format)
        if verdict is not None:
            return verdict
        resource_key = extract_resource_key(payload, cfg.format)
        if resource_key is None:
            return "no resource key"
        resource_pid = self._resolve_resource(resource_key, cfg)
        existing = self.repo.source_pid(cfg.name, header.identifier)
        metadata_pid = existing or self.repo.mint_pid()

        streams = [
            local_stream(f"REC.{cfg.format}", records.RECORD_MEDIA_TYPE, payload),
            local_stream(SOURCE_DS, "application/xml",
                         build_source_doc(cfg.name, header.identifier,
                                          header.datestamp)),
        ]
        if cfg.format in records.FORMATS and cfg.format != "nsdl_dc":
            normalized = crosswalk(
                apply_safe_transforms(MetadataRecord(cfg.format, payload)),
                "nsdl_dc")
            streams.append(local_stream(
                "REC.nsdl_dc", records.RECORD_MEDIA_TYPE, normalized.xml))
        rels = serialize_rels(metadata_pid, [
            Triple(metadata_pid, base_predicate("metadataFor"), resource_pid,
                   metadata_pid),
            Triple(metadata_pid, base_predicate("providedBy"),
                   cfg.provider_role_pid, metadata_pid),
        ])
        streams.append(Datastream(RELS_DS, "local", RELS_MEDIA_TYPE, payload=rels))
        self.repo.put_object(DigitalObject(
            pid=metadata_pid, behaviors=frozenset({"Metadata"}),
            datastreams=tuple(streams)))
        return "updated" if existing else "created"

    def _resolve_resource(self, url: str, cfg: ProviderConfig) -> str:
        """Content object for a resource key, deduplicated across all
        providers; membership in this provider's aggregation is asserted
        either way."""
        existing = self.repo.content_pid_for_url(url)
        if existing is not None:
            memberships = self.repo.graph.objects_of(existing, "memberOf")
            if cfg.aggregator_role_pid not in memberships:
                self._set_memberships(
                    existing, memberships + [cfg.aggregator_role_pid])
            return existing
        pid = self.repo.mint_pid()
        rels = serialize_rels(pid, [
            Triple(pid, base_predicate("memberOf"), cfg.aggregator_role_pid, pid)])
        self.repo.put_object(DigitalObject(
            pid=pid, behaviors=frozenset({"Content"}),
            datastreams=(
                remote_stream(CONTENT_DS, "text/html", url),
                Datastream(RELS_DS, "local", RELS_MEDIA_TYPE, payload=rels),
            )))
        self.repo.assign_handle(pid)
        return pid

    def _set_memberships(self, pid: str, aggregations: list[str]) -> None:
        obj = self.repo.get_object(pid)
        keep = [t for t in self.repo.graph.triples_asserted_by(pid)
                if str(t.predicate) != "memberOf"]
        triples = keep + [
            Triple(pid, base_predicate("memberOf"), a, pid) for a in aggregations]
        self.repo.put_object(obj.with_datastream(Datastream(
            RELS_DS, "local", RELS_MEDIA_TYPE,
            payload=serialize_rels(pid, triples))))

    def handle_deleted(self, oai_identifier: str, cfg: ProviderConfig) -> None:
        """Tombstone the metadata object for a deleted upstream record.
        The described resource survives (other providers may still
        describe it); it leaves this provider's aggregation once none of
        this provider's records remain."""
        metadata_pid = self.repo.source_pid(cfg.name, oai_identifier)
        if metadata_pid is None:
            return
        resources = self.repo.graph.objects_of(metadata_pid, "metadataFor")
        self.repo.delete_object(metadata_pid)
        for resource in resources:
            still_provided = [
                m for m in self.repo.graph.subjects_of("metadataFor", resource)
                if cfg.provider_role_pid in self.repo.graph.objects_of(m, "providedBy")
            ]
            if still_provided:
                continue
            memberships = self.repo.graph.objects_of(resource, "memberOf")
            if cfg.aggregator_role_pid in memberships:
                memberships.remove(cfg.aggregator_role_pid)
                try:
                    self._set_memberships(resource, memberships)
                except NotFoundError:
                    pass


# --------------------------------------------------------------------------
# resource keys


def extract_resource_key(payload: bytes, format_name: str) -> str | None:
    """First absolute-URL dc:identifier; the cross-provider dedup key."""
    if format_name in records.FORMATS:
        entries = records.apply_rules(records.parse_dc_entries(payload))
        candidates = [e.value for e in entries if e.name == "identifier"]
    else:
        root = ET.fromstring(payload)
        candidates = [
            (el.text or "").strip() for el in root.iter(DC_IDENTIFIER)]
    for value in candidates:
        if is_absolute_url(value):
            return value
    return None


def is_absolute_url(value: str) -> bool:
    parsed = urlparse(value)
    return bool(parsed.scheme in ("http", "https", "ftp") and parsed.netloc)


# --------------------------------------------------------------------------
# configuration and state files


def providers_path(data_dir: Path) -> Path:
    return Path(data_dir) / "providers.json"


def load_provider_configs(path: Path) -> dict[str, ProviderConfig]:
    path = Path(path)
    if not path.exists():
        return {}
    raw = json.loads(path.read_text("utf-8"))
    configs = [ProviderConfig.from_dict(item) for item in raw]
    return {cfg.name: cfg for cfg in configs}


def save_provider_configs(path: Path, configs: dict[str, ProviderConfig]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = [configs[name].to_dict() for name in sorted(configs)]
    path.write_text(json.dumps(payload, indent=2) + "\n", "utf-8")


def state_path(data_dir: Path, provider_name: str) -> Path:
    return Path(data_dir) / "harvest_state" / f"{provider_name}.json"


def load_state(data_dir: Path, provider_name: str) -> HarvestState:
    path = state_path(data_dir, provider_name)
    if not path.exists():
        return HarvestState()
    return HarvestState.from_dict(json.loads(path.read_text("utf-8")))


def save_state(data_dir: Path, provider_name: str, state: HarvestState) -> None:
    path = state_path(data_dir, provider_name)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(state.to_dict(), indent=2) + "\n", "utf-8")
