"""Content-model behaviors: the typed operations objects can bind.

Six behavior definitions (Metadata, Agent, Content, Aggregator,
MetadataProvider, Role) plus the two implied abstract sets (Resource,
Role) give objects their operational semantics. An object binds any
subset and answers the union of the bound operation sets.

Implementations live in a registry keyed by (behavior, operation) so a
remote web-service binding could replace any entry without touching
callers; everything registered here runs in-process against a repository
snapshot.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable
from xml.etree import ElementTree as ET
from xml.sax.saxutils import escape, quoteattr

from . import records
from .errors import (
    BrandMissingError,
    FormatUnavailableError,
    ModelIntegrityError,
    NoMetadataError,
    NotFoundError,
    NotRepresentedError,
    ObjectDeletedError,
    OperationNotSupportedError,
    ValidationError,
)
from .model import (
    BRAND_DS,
    CONTENT_DS,
    RECORD_DS_PREFIX,
    DigitalObject,
    Representation,
    representation_uri,
)
from .records import GoldInput, GoldRecord, MetadataRecord, crosswalk, fold_gold

URI_LIST_TYPE = "text/uri-list"

# Accepted operation-name spellings that map onto a canonical name.
ALIASES = {"displayContent": "showContent"}

Operation = Callable[[object, str, dict], Representation]


class BehaviorRegistry:
    """Named operations per behavior definition, pluggable per entry."""

    def __init__(self):
        self._impl: dict[tuple[str, str], Operation] = {}

    def register(self, behavior: str, op: str, fn: Operation) -> None:
        self._impl[(behavior, op)] = fn

    def dispatch(self, behaviors: frozenset[str], op: str) -> Operation | None:
        op = ALIASES.get(op, op)
        for behavior in sorted(behaviors):
            fn = self._impl.get((behavior, op))
            if fn is not None:
                return fn
        return None

    def operations_for(self, behaviors: frozenset[str]) -> list[str]:
        return sorted({op for (b, op) in self._impl if b in behaviors})


@dataclass(frozen=True)
class Brand:
    """Display identity of a role, projected onto the information it
    provides or collects."""

    label: str
    logo_url: str | None
    holder: str  # pid of the role object


def build_brand_doc(label: str, logo_url: str | None = None) -> bytes:
    lines = ["<brand>", f"  <label>{escape(label)}</label>"]
    if logo_url:
        lines.append(f"  <logoUrl>{escape(logo_url)}</logoUrl>")
    lines.append("</brand>")
    return ("\n".join(lines) + "\n").encode("utf-8")


def parse_brand_doc(holder: str, payload: bytes) -> Brand:
    try:
        root = ET.fromstring(payload)
    except ET.ParseError as exc:
        raise ValidationError(f"{holder}: malformed BRAND document: {exc}")
    label = root.findtext("label")
    if root.tag != "brand" or label is None:
        raise ValidationError(f"{holder}: BRAND document needs <brand><label>")
    return Brand(label=label, logo_url=root.findtext("logoUrl"), holder=holder)


# --------------------------------------------------------------------------
# operation implementations (direct-call API)


def _active(repo, pid: str) -> DigitalObject:
    obj = repo.get_object(pid)
    if obj.state == "deleted":
        raise ObjectDeletedError(f"{pid} is deleted")
    return obj


def _require(obj: DigitalObject, *any_of: str) -> None:
    if not obj.behaviors & set(any_of):
        raise OperationNotSupportedError(
            f"{obj.pid} binds none of {sorted(any_of)}")


def metadata_get_record(repo, pid: str, format_name: str) -> MetadataRecord:
    """Stored record in the requested format, or one computed through a
    registered crosswalk; callers cannot tell which path produced it."""
    obj = _active(repo, pid)
    _require(obj, "Metadata")
    ds = obj.datastream(RECORD_DS_PREFIX + format_name)
    if ds is not None:
        return MetadataRecord(format_name, ds.payload, obj.last_modified)
    for stored in obj.record_formats():
        if format_name in records.crosswalk_targets(stored):
            source = obj.datastream(RECORD_DS_PREFIX + stored)
            return crosswalk(
                MetadataRecord(stored, source.payload, obj.last_modified),
                format_name)
    raise FormatUnavailableError(f"{pid} cannot disseminate format {format_name}")


def available_formats(repo, pid: str) -> list[str]:
    """Stored formats plus everything reachable through crosswalks."""
    obj = _active(repo, pid)
    found = set(obj.record_formats())
    for stored in list(found):
        found.update(records.crosswalk_targets(stored))
    return sorted(found)


def metadata_get_provider(repo, pid: str) -> str:
    obj = _active(repo, pid)
    _require(obj, "Metadata")
    providers = repo.graph.objects_of(pid, "providedBy")
    if len(providers) != 1:
        raise ModelIntegrityError(
            f"{pid} must name exactly one provider, found {len(providers)}")
    return providers[0]


def metadata_get_resource(repo, pid: str) -> str:
    obj = _active(repo, pid)
    _require(obj, "Metadata")
    targets = repo.graph.objects_of(pid, "metadataFor")
    if len(targets) != 1:
        raise ModelIntegrityError(
            f"{pid} must describe exactly one resource, found {len(targets)}")
    return targets[0]


def resource_get_handle(repo, pid: str) -> str:
    return repo.assign_handle(pid)


def resource_get_metadata(repo, pid: str) -> list[str]:
    obj = _active(repo, pid)
    _require(obj, "Agent", "Content")
    return repo.graph.subjects_of("metadataFor", pid)


def resource_memberships(repo, pid: str) -> list[str]:
    obj = _active(repo, pid)
    _require(obj, "Agent", "Content")
    return repo.graph.objects_of(pid, "memberOf")


def annotations_for(repo, pid: str) -> list[str]:
    """Content objects commenting on this resource; one hop, never
    transitive."""
    obj = _active(repo, pid)
    _require(obj, "Agent", "Content")
    return repo.graph.subjects_of("annotates", pid)


def role_get_brand(repo, pid: str) -> Brand:
    obj = _active(repo, pid)
    _require(obj, "Role", "Aggregator", "MetadataProvider")
    ds = obj.datastream(BRAND_DS)
    if ds is None:
        raise BrandMissingError(f"role {pid} has no BRAND stream")
    return parse_brand_doc(pid, ds.payload)


def show_brand(repo, pid: str) -> list[Brand]:
    """Brands projected onto an information object. Metadata takes its
    provider's brand; resources take the brand of every aggregation they
    are a member of."""
    obj = _active(repo, pid)
    if "Metadata" in obj.behaviors:
        return [role_get_brand(repo, metadata_get_provider(repo, pid))]
    _require(obj, "Agent", "Content")
    return [role_get_brand(repo, role)
            for role in repo.graph.objects_of(pid, "memberOf")]


def content_show_content(repo, pid: str) -> Representation:
    obj = _active(repo, pid)
    _require(obj, "Content")
    ds = obj.datastream(CONTENT_DS)
    if ds is None:
        raise NotFoundError(f"{pid} has no CONTENT stream")
    if ds.kind == "local":
        return Representation(ds.media_type, ds.payload)
    return Representation(ds.media_type, repo.fetch_remote(ds.url))


def content_get_gold(repo, pid: str) -> GoldRecord:
    """Computed merged record for a resource, folding every describing
    record along the augmentation order. Contributors that cannot produce
    nsdl_dc (directly or by crosswalk) are left out."""
    obj = _active(repo, pid)
    _require(obj, "Content")
    describing = resource_get_metadata(repo, pid)
    if not describing:
        raise NoMetadataError(f"no metadata describes {pid}")
    inputs = []
    for m in describing:
        try:
            record = metadata_get_record(repo, m, "nsdl_dc")
        except FormatUnavailableError:
            continue
        inputs.append(GoldInput(
            pid=m,
            datestamp=repo.get_object(m).last_modified,
            entries=tuple(records.parse_dc_entries(record.xml)),
        ))
    if not inputs:
        raise NoMetadataError(f"no record describing {pid} can produce nsdl_dc")
    edges = [
        (a.pid, b)
        for a in inputs
        for b in repo.graph.objects_of(a.pid, "augments")
    ]
    return fold_gold(inputs, edges)


def aggregator_list_members(repo, pid: str, offset: int = 0,
                            limit: int | None = None) -> list[str]:
    """Members of an aggregation, answered from the joined graph (a stored
    member list would not scale), in pid order with offset/limit paging."""
    obj = _active(repo, pid)
    _require(obj, "Aggregator")
    members = repo.graph.subjects_of("memberOf", pid)
    end = None if limit is None else offset + limit
    return members[offset:end]


def aggregator_get_representation(repo, pid: str) -> str:
    obj = _active(repo, pid)
    _require(obj, "Aggregator")
    surrogates = repo.graph.objects_of(pid, "representedBy")
    if not surrogates:
        raise NotRepresentedError(f"aggregation {pid} has no surrogate resource")
    return surrogates[0]


def mdprovider_list_provided(repo, pid: str, offset: int = 0,
                             limit: int | None = None) -> list[str]:
    obj = _active(repo, pid)
    _require(obj, "MetadataProvider")
    provided = repo.graph.subjects_of("providedBy", pid)
    end = None if limit is None else offset + limit
    return provided[offset:end]


# --------------------------------------------------------------------------
# dissemination wrappers


def _uri_list(pids: list[str]) -> Representation:
    body = "".join(representation_uri(p) + "\n" for p in pids)
    return Representation(URI_LIST_TYPE, body.encode("utf-8"))


def _paging(params: dict) -> tuple[int, int | None]:
    try:
        offset = int(params.get("offset", 0))
        limit = int(params["limit"]) if "limit" in params else None
    except ValueError:
        raise ValidationError("offset and limit must be integers")
    if offset < 0 or (limit is not None and limit < 0):
        raise ValidationError("offset and limit must be non-negative")
    return offset, limit


def _brands_doc(brands: list[Brand]) -> Representation:
    lines = ["<brands>"]
    for brand in brands:
        lines.append(f"  <brand holder={quoteattr(representation_uri(brand.holder))}>")
        lines.append(f"    <label>{escape(brand.label)}</label>")
        if brand.logo_url:
            lines.append(f"    <logoUrl>{escape(brand.logo_url)}</logoUrl>")
        lines.append("  </brand>")
    lines.append("</brands>")
    return Representation(
        "application/xml", ("\n".join(lines) + "\n").encode("utf-8"))


def default_registry() -> BehaviorRegistry:
    reg = BehaviorRegistry()

    def op_get_record(repo, pid, params):
        format_name = params.get("format")
        if not format_name:
            raise ValidationError("getRecord requires a format parameter")
        record = metadata_get_record(repo, pid, format_name)
        return Representation(records.RECORD_MEDIA_TYPE, record.xml)

    reg.register("Metadata", "getRecord", op_get_record)
    reg.register(
        "Metadata", "getProvider",
        lambda repo, pid, params: _uri_list([metadata_get_provider(repo, pid)]))
    reg.register(
        "Metadata", "getResource",
        lambda repo, pid, params: _uri_list([metadata_get_resource(repo, pid)]))

    reg.register(
        "Resource", "getHandle",
        lambda repo, pid, params: Representation(
            "text/plain", (resource_get_handle(repo, pid) + "\n").encode("utf-8")))
    reg.register(
        "Resource", "getMetadata",
        lambda repo, pid, params: _uri_list(resource_get_metadata(repo, pid)))
    reg.register(
        "Resource", "listMemberships",
        lambda repo, pid, params: _uri_list(resource_memberships(repo, pid)))
    reg.register(
        "Resource", "showBrand",
        lambda repo, pid, params: _brands_doc(show_brand(repo, pid)))
    reg.register(
        "Resource", "getAnnotations",
        lambda repo, pid, params: _uri_list(annotations_for(repo, pid)))

    reg.register(
        "Content", "showContent",
        lambda repo, pid, params: content_show_content(repo, pid))
    reg.register(
        "Content", "getGold",
        lambda repo, pid, params: Representation(
            records.RECORD_MEDIA_TYPE, content_get_gold(repo, pid).xml))

    def op_get_brand(repo, pid, params):
        brand = role_get_brand(repo, pid)
        obj = repo.get_object(pid)
        return Representation("application/xml", obj.datastream(BRAND_DS).payload)

    reg.register("Role", "getBrand", op_get_brand)

    def op_list_members(repo, pid, params):
        offset, limit = _paging(params)
        return _uri_list(aggregator_list_members(repo, pid, offset, limit))

    reg.register("Aggregator", "listMembers", op_list_members)
    reg.register(
        "Aggregator", "getRepresentation",
        lambda repo, pid, params: _uri_list([aggregator_get_representation(repo, pid)]))

    def op_list_provided(repo, pid, params):
        offset, limit = _paging(params)
        return _uri_list(mdprovider_list_provided(repo, pid, offset, limit))

    reg.register("MetadataProvider", "listProvided", op_list_provided)
    return reg
