"""OAI-PMH v2.0 data provider over the repository.

Every stored or crosswalkable metadata format is exposed, plus the
resource-centric "nsdl_agg" format bundling everything known about one
resource. Sets map one-to-one onto aggregations. Selective harvest
windows are half-open [from, until) over object datestamps; resumption
tokens freeze the window end at first request so mid-harvest writes can
never cause omissions.
"""

from __future__ import annotations

import secrets
import threading
from dataclasses import dataclass
from datetime import datetime, timedelta
from urllib.parse import parse_qsl
from xml.etree import ElementTree as ET

from . import behaviors
from .errors import (
    BrandMissingError,
    FormatUnavailableError,
    ModelIntegrityError,
    NoMetadataError,
    RepositoryError,
)
from .model import (
    CONTENT_DS,
    EPOCH,
    DigitalObject,
    format_datestamp,
    is_pid,
    parse_datestamp,
    pid_number,
)
from .records import FORMATS

OAI_NS = "http://www.openarchives.org/OAI/2.0/"
XSI_NS = "http://www.w3.org/2001/XMLSchema-instance"
OAI_SCHEMA = "http://www.openarchives.org/OAI/2.0/OAI-PMH.xsd"
AGG_FORMAT = "nsdl_agg"
# The aggregation format needs its own namespace: an unqualified payload
# would be captured by the envelope's default namespace when embedded.
AGG_NS = "http://ns.nsdl.org/nsdl_agg_v1.00/"
AGG_SCHEMA = "http://ns.nsdl.org/schemas/nsdl_agg/nsdl_agg_v1.00.xsd"

# Serialize protocol elements in the default namespace.
ET.register_namespace("", OAI_NS)
ET.register_namespace(AGG_FORMAT, AGG_NS)


def _q(name: str) -> str:
    return f"{{{OAI_NS}}}{name}"


def _a(name: str) -> str:
    return f"{{{AGG_NS}}}{name}"


_VERB_ARGS = {
    "Identify": set(),
    "ListMetadataFormats": {"identifier"},
    "ListSets": {"resumptionToken"},
    "ListRecords": {"from", "until", "set", "metadataPrefix", "resumptionToken"},
    "ListIdentifiers": {"from", "until", "set", "metadataPrefix", "resumptionToken"},
    "GetRecord": {"identifier", "metadataPrefix"},
}


class ProtocolError(Exception):
    """Maps onto an OAI <error> element (always served with HTTP 200)."""

    def __init__(self, code: str, message: str):
        super().__init__(message)
        self.code = code


@dataclass
class _TokenState:
    verb: str
    format: str
    set_spec: str | None
    from_: datetime | None
    window_until: datetime
    cursor: int
    expiry: datetime


@dataclass(frozen=True)
class _Item:
    """One selectable record: a metadata object, a tombstone, or an
    aggregation-format resource."""

    pid: str
    datestamp: datetime
    deleted: bool
    set_specs: tuple[str, ...]


class OaiProvider:
    def __init__(self, repo, *, repository_id: str = "overlay.local",
                 repository_name: str = "Overlay Repository",
                 base_url: str = "http://localhost:8080/oai",
                 admin_email: str = "admin@localhost",
                 page_size: int = 250, token_ttl: int = 3600):
        self.repo = repo
        self.repository_id = repository_id
        self.repository_name = repository_name
        self.base_url = base_url
        self.admin_email = admin_email
        self.page_size = page_size
        self.token_ttl = token_ttl
        self._tokens: dict[str, _TokenState] = {}
        self._token_lock = threading.Lock()

    # ------------------------------------------------------------------
    # identifiers

    def oai_identifier(self, pid: str) -> str:
        return f"oai:{self.repository_id}:{pid}"

    def pid_from_identifier(self, identifier: str) -> str:
        prefix = f"oai:{self.repository_id}:"
        if not identifier.startswith(prefix):
            raise ProtocolError("idDoesNotExist", f"unknown identifier {identifier}")
        pid = identifier[len(prefix):]
        if not is_pid(pid):
            raise ProtocolError("idDoesNotExist", f"malformed identifier {identifier}")
        return pid

    # ------------------------------------------------------------------
    # request entry points

    def handle_request(self, params: dict[str, str]) -> bytes:
        verb = params.get("verb", "")
        try:
            if verb not in _VERB_ARGS:
                raise ProtocolError("badVerb", f"unknown verb {verb!r}")
            self._check_arguments(verb, params)
            body = self._dispatch(verb, params)
            return self._envelope(verb, params, body)
        except ProtocolError as exc:
            return self._error_envelope(verb, params, exc)

    def wsgi_app(self, environ, start_response):
        params = dict(parse_qsl(environ.get("QUERY_STRING", "")))
        if environ.get("REQUEST_METHOD") == "POST":
            try:
                length = int(environ.get("CONTENT_LENGTH") or 0)
            except ValueError:
                length = 0
            body = environ["wsgi.input"].read(length).decode("utf-8")
            params.update(dict(parse_qsl(body)))
        payload = self.handle_request(params)
        start_response("200 OK", [
            ("Content-Type", "text/xml; charset=UTF-8"),
            ("Content-Length", str(len(payload))),
        ])
        return [payload]

    def _check_arguments(self, verb: str, params: dict[str, str]) -> None:
        allowed = _VERB_ARGS[verb]
        extras = set(params) - allowed - {"verb"}
        if extras:
            raise ProtocolError("badArgument", f"illegal arguments {sorted(extras)}")
        if "resumptionToken" in params and len(params) > 2:
            raise ProtocolError(
                "badArgument", "resumptionToken is an exclusive argument")
        if verb in ("ListRecords", "ListIdentifiers") and "resumptionToken" not in params:
            if "metadataPrefix" not in params:
                raise ProtocolError("badArgument", "metadataPrefix is required")
        if verb == "GetRecord" and {"identifier", "metadataPrefix"} - set(params):
            raise ProtocolError(
                "badArgument", "GetRecord needs identifier and metadataPrefix")

    def _dispatch(self, verb: str, params: dict[str, str]) -> list[ET.Element]:
        if verb == "Identify":
            return self.serve_identify()
        if verb == "ListSets":
            return self.serve_list_sets()
        if verb == "ListMetadataFormats":
            return self.serve_list_formats(params.get("identifier"))
        if verb == "GetRecord":
            return self.serve_get_record(
                params["identifier"], params["metadataPrefix"])
        return self.serve_list(verb, params)

    # ------------------------------------------------------------------
    # verbs

    def serve_identify(self) -> list[ET.Element]:
        stamps = [o.last_modified for o in self.repo.objects()]
        earliest = min(stamps) if stamps else EPOCH
        fields = [
            ("repositoryName", self.repository_name),
            ("baseURL", self.base_url),
            ("protocolVersion", "2.0"),
            ("adminEmail", self.admin_email),
            ("earliestDatestamp", format_datestamp(earliest)),
            ("deletedRecord", "persistent"),
            ("granularity", "YYYY-MM-DDThh:mm:ssZ"),
        ]
        out = []
        for name, value in fields:
            el = ET.Element(_q(name))
            el.text = value
            out.append(el)
        return out

    def serve_list_sets(self) -> list[ET.Element]:
        sets = self._aggregation_sets()
        if not sets:
            raise ProtocolError("noSetHierarchy", "no aggregations exist")
        out = []
        for spec, name in sets:
            el = ET.Element(_q("set"))
            ET.SubElement(el, _q("setSpec")).text = spec
            ET.SubElement(el, _q("setName")).text = name
            out.append(el)
        return out

    def serve_list_formats(self, identifier: str | None) -> list[ET.Element]:
        if identifier is None:
            names = self._global_formats()
        else:
            pid = self.pid_from_identifier(identifier)
            try:
                obj = self.repo.get_object(pid)
            except RepositoryError:
                raise ProtocolError("idDoesNotExist", identifier)
            names = self._item_formats(obj)
            if not names:
                raise ProtocolError(
                    "noMetadataFormats", f"{identifier} has no available formats")
        out = []
        for name in names:
            el = ET.Element(_q("metadataFormat"))
            ET.SubElement(el, _q("metadataPrefix")).text = name
            info = FORMATS.get(name)
            if name == AGG_FORMAT:
                schema, namespace = AGG_SCHEMA, AGG_NS
            elif info is not None:
                schema, namespace = info.schema, info.namespace
            else:
                schema, namespace = "", f"info:nsdl/formats/{name}"
            ET.SubElement(el, _q("schema")).text = schema
            ET.SubElement(el, _q("metadataNamespace")).text = namespace
            out.append(el)
        return out

    def serve_get_record(self, identifier: str, format_name: str) -> list[ET.Element]:
        pid = self.pid_from_identifier(identifier)
        try:
            obj = self.repo.get_object(pid)
        except RepositoryError:
            raise ProtocolError("idDoesNotExist", identifier)
        if obj.state == "deleted":
            return [self._record_element(
                _Item(pid, obj.last_modified, True, ()), format_name,
                headers_only=False)]
        if format_name == AGG_FORMAT:
            if "Content" not in obj.behaviors or not self._described(pid):
                raise ProtocolError("idDoesNotExist", identifier)
            item = _Item(pid, self._agg_datestamp(obj), False,
                         self._sets_of_resource(pid))
            return [self._record_element(item, format_name, headers_only=False)]
        if "Metadata" not in obj.behaviors:
            raise ProtocolError("idDoesNotExist", identifier)
        if format_name not in behaviors.available_formats(self.repo, pid):
            raise ProtocolError(
                "cannotDisseminateFormat", f"{identifier} has no {format_name}")
        item = _Item(pid, obj.last_modified, False, self._sets_of_metadata(pid))
        return [self._record_element(item, format_name, headers_only=False)]

    def serve_list(self, verb: str, params: dict[str, str]) -> list[ET.Element]:
        headers_only = verb == "ListIdentifiers"
        token_id = params.get("resumptionToken")
        if token_id is not None:
            state = self._take_token(token_id, verb)
            format_name = state.format
            set_spec = state.set_spec
            from_ = state.from_
            until = state.window_until
            cursor = state.cursor
        else:
            format_name = params["metadataPrefix"]
            set_spec = params.get("set")
            from_ = self._parse_stamp(params.get("from"))
            until = self._parse_stamp(params.get("until")) or self.repo.clock()
            cursor = -1
            self._check_format_known(format_name)
            if set_spec is not None and set_spec not in {
                    spec for spec, _ in self._aggregation_sets()}:
                raise ProtocolError("noRecordsMatch", f"no such set {set_spec}")

        items = self._select(format_name, from_, until, set_spec)
        remaining = [i for i in items if pid_number(i.pid) > cursor]
        if not remaining and token_id is None:
            raise ProtocolError("noRecordsMatch", "selection is empty")
        page, rest = remaining[:self.page_size], remaining[self.page_size:]
        out = [self._record_element(i, format_name, headers_only) for i in page]
        if rest:
            new_token = secrets.token_hex(16)
            with self._token_lock:
                self._tokens[new_token] = _TokenState(
                    verb=verb, format=format_name, set_spec=set_spec,
                    from_=from_, window_until=until,
                    cursor=pid_number(page[-1].pid),
                    expiry=self.repo.clock() + timedelta(seconds=self.token_ttl))
            el = ET.Element(_q("resumptionToken"))
            el.set("expirationDate", format_datestamp(
                self._tokens[new_token].expiry))
            el.text = new_token
            out.append(el)
        elif token_id is not None:
            out.append(ET.Element(_q("resumptionToken")))
        return out

    # ------------------------------------------------------------------
    # selection

    def _select(self, format_name: str, from_: datetime | None,
                until: datetime, set_spec: str | None) -> list[_Item]:
        """Items in the half-open window [from, until), pid order."""
        items = []
        for obj in self.repo.objects():
            item = self._classify(obj, format_name)
            if item is None:
                continue
            if from_ is not None and item.datestamp < from_:
                continue
            if item.datestamp >= until:
                continue
            if set_spec is not None and not item.deleted \
                    and set_spec not in item.set_specs:
                continue
            items.append(item)
        return items

    def _classify(self, obj: DigitalObject, format_name: str) -> _Item | None:
        if obj.state == "deleted":
            return _Item(obj.pid, obj.last_modified, True, ())
        if format_name == AGG_FORMAT:
            if "Content" not in obj.behaviors or not self._described(obj.pid):
                return None
            return _Item(obj.pid, self._agg_datestamp(obj), False,
                         self._sets_of_resource(obj.pid))
        if "Metadata" not in obj.behaviors:
            return None
        if format_name not in behaviors.available_formats(self.repo, obj.pid):
            return None
        return _Item(obj.pid, obj.last_modified, False,
                     self._sets_of_metadata(obj.pid))

    def _described(self, resource_pid: str) -> bool:
        return bool(self.repo.graph.subjects_of("metadataFor", resource_pid))

    def _agg_datestamp(self, obj: DigitalObject) -> datetime:
        stamps = [obj.last_modified]
        for m in self.repo.graph.subjects_of("metadataFor", obj.pid):
            stamps.append(self.repo.get_object(m).last_modified)
        return max(stamps)

    def _sets_of_resource(self, resource_pid: str) -> tuple[str, ...]:
        return tuple(
            str(pid_number(a))
            for a in self.repo.graph.objects_of(resource_pid, "memberOf"))

    def _sets_of_metadata(self, metadata_pid: str) -> tuple[str, ...]:
        resources = self.repo.graph.objects_of(metadata_pid, "metadataFor")
        specs: list[str] = []
        for r in resources:
            specs.extend(self._sets_of_resource(r))
        return tuple(dict.fromkeys(specs))

    def _aggregation_sets(self) -> list[tuple[str, str]]:
        sets = []
        for obj in self.repo.active_objects():
            if "Aggregator" not in obj.behaviors:
                continue
            try:
                name = behaviors.role_get_brand(self.repo, obj.pid).label
            except (BrandMissingError, RepositoryError):
                name = obj.pid
            sets.append((str(pid_number(obj.pid)), name))
        return sets

    def _global_formats(self) -> list[str]:
        names = set(FORMATS) | {AGG_FORMAT}
        for obj in self.repo.active_objects():
            names.update(obj.record_formats())
        return sorted(names)

    def _item_formats(self, obj: DigitalObject) -> list[str]:
        if obj.state == "deleted":
            return []
        names: set[str] = set()
        if "Metadata" in obj.behaviors:
            names.update(behaviors.available_formats(self.repo, obj.pid))
        if "Content" in obj.behaviors and self._described(obj.pid):
            names.add(AGG_FORMAT)
        return sorted(names)

    def _check_format_known(self, format_name: str) -> None:
        if format_name not in self._global_formats():
            raise ProtocolError(
                "cannotDisseminateFormat", f"unknown format {format_name}")

    def _parse_stamp(self, value: str | None) -> datetime | None:
        if value is None:
            return None
        try:
            return parse_datestamp(value)
        except RepositoryError:
            raise ProtocolError("badArgument", f"malformed datestamp {value!r}")

    def _take_token(self, token_id: str, verb: str) -> _TokenState:
        with self._token_lock:
            state = self._tokens.get(token_id)
            if state is None or state.verb != verb:
                raise ProtocolError("badResumptionToken", "unknown token")
            if self.repo.clock() > state.expiry:
                del self._tokens[token_id]
                raise ProtocolError("badResumptionToken", "token expired")
        return state

    # ------------------------------------------------------------------
    # record rendering

    def _record_element(self, item: _Item, format_name: str,
                        headers_only: bool) -> ET.Element:
        header = ET.Element(_q("header"))
        if item.deleted:
            header.set("status", "deleted")
        ET.SubElement(header, _q("identifier")).text = self.oai_identifier(item.pid)
        ET.SubElement(header, _q("datestamp")).text = format_datestamp(item.datestamp)
        for spec in item.set_specs:
            ET.SubElement(header, _q("setSpec")).text = spec
        if headers_only:
            return header
        record = ET.Element(_q("record"))
        record.append(header)
        if not item.deleted:
            metadata = ET.SubElement(record, _q("metadata"))
            metadata.append(self._payload(item.pid, format_name))
        return record

    def _payload(self, pid: str, format_name: str) -> ET.Element:
        if format_name == AGG_FORMAT:
            return ET.fromstring(self.emit_aggregation_record(pid))
        record = behaviors.metadata_get_record(self.repo, pid, format_name)
        return ET.fromstring(record.xml)

    def emit_aggregation_record(self, resource_pid: str) -> bytes:
        """The resource-centric bundle: every source record with its
        provider's brand, plus the computed gold record."""
        obj = self.repo.get_object(resource_pid)
        root = ET.Element(_a(AGG_FORMAT))
        resource = ET.SubElement(root, _a("resource"))
        resource.set("handle", obj.handle or "")
        content = obj.datastream(CONTENT_DS)
        url = content.url if content is not None and content.kind == "remote" else ""
        resource.set("url", url or "")
        for m in self.repo.graph.subjects_of("metadataFor", resource_pid):
            meta_obj = self.repo.get_object(m)
            if meta_obj.state == "deleted":
                continue
            try:
                role = behaviors.metadata_get_provider(self.repo, m)
                label = behaviors.role_get_brand(self.repo, role).label
            except (ModelIntegrityError, BrandMissingError):
                label = ""
            for format_name in meta_obj.record_formats():
                source = ET.SubElement(root, _a("sourceRecord"))
                source.set("brand", label)
                source.set("format", format_name)
                record = behaviors.metadata_get_record(self.repo, m, format_name)
                source.append(ET.fromstring(record.xml))
        gold = ET.SubElement(root, _a("gold"))
        try:
            gold.append(ET.fromstring(
                behaviors.content_get_gold(self.repo, resource_pid).xml))
        except (NoMetadataError, FormatUnavailableError):
            pass
        return ET.tostring(root, encoding="utf-8")

    # ------------------------------------------------------------------
    # envelopes

    def _envelope(self, verb: str, params: dict[str, str],
                  body: list[ET.Element]) -> bytes:
        root = self._root(verb, params, echo_args=True)
        container = ET.SubElement(root, _q(verb))
        container.extend(body)
        return ET.tostring(root, encoding="utf-8", xml_declaration=True)

    def _error_envelope(self, verb: str, params: dict[str, str],
                        exc: ProtocolError) -> bytes:
        # Bad requests must not echo their arguments back.
        echo = exc.code not in ("badVerb", "badArgument")
        root = self._root(verb if echo else "", params, echo_args=echo)
        error = ET.SubElement(root, _q("error"))
        error.set("code", exc.code)
        error.text = str(exc)
        return ET.tostring(root, encoding="utf-8", xml_declaration=True)

    def _root(self, verb: str, params: dict[str, str], echo_args: bool) -> ET.Element:
        root = ET.Element(_q("OAI-PMH"))
        root.set(f"{{{XSI_NS}}}schemaLocation", f"{OAI_NS} {OAI_SCHEMA}")
        ET.SubElement(root, _q("responseDate")).text = format_datestamp(
            self.repo.clock())
        request = ET.SubElement(root, _q("request"))
        if echo_args:
            for key, value in sorted(params.items()):
                request.set(key, value)
        request.text = self.base_url
        return root
