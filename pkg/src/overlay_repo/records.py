"""Metadata record handling: DC-family formats, safe transforms, the
oai_dc -> nsdl_dc crosswalk, and the merged "gold" record fold.

Transforms are lossless by convention: callers keep the original record
verbatim and store the normalized output next to it. Every function here
is a pure function of its inputs so record pipelines stay deterministic.
"""

from __future__ import annotations

import heapq
import re
from dataclasses import dataclass, field
from datetime import datetime
from xml.etree import ElementTree as ET
from xml.sax.saxutils import escape, quoteattr

from .errors import FormatUnavailableError, ModelIntegrityError, ValidationError
from .model import EPOCH, pid_sort_key

DC_NS = "http://purl.org/dc/elements/1.1/"
DCT_NS = "http://purl.org/dc/terms/"
OAI_DC_NS = "http://www.openarchives.org/OAI/2.0/oai_dc/"
NSDL_DC_NS = "http://ns.nsdl.org/nsdl_dc_v1.02/"
XSI_NS = "http://www.w3.org/2001/XMLSchema-instance"

# Stable prefixes wherever ElementTree re-serializes record payloads.
for _prefix, _uri in (("dc", DC_NS), ("dct", DCT_NS), ("oai_dc", OAI_DC_NS),
                      ("nsdl_dc", NSDL_DC_NS), ("xsi", XSI_NS)):
    ET.register_namespace(_prefix, _uri)

RECORD_MEDIA_TYPE = "application/xml"

DC_ELEMENT_ORDER = (
    "title", "creator", "subject", "description", "publisher", "contributor",
    "date", "type", "format", "identifier", "source", "language", "relation",
    "coverage", "rights",
)

# Elements where a later record's values replace earlier ones during the
# gold fold; everything else unions with exact-string dedup.
GOLD_SINGLE_VALUED = frozenset({"title", "identifier", "date"})


@dataclass(frozen=True)
class FormatInfo:
    prefix: str
    namespace: str
    root: str
    schema: str


FORMATS: dict[str, FormatInfo] = {
    "oai_dc": FormatInfo(
        "oai_dc", OAI_DC_NS, "dc",
        "http://www.openarchives.org/OAI/2.0/oai_dc.xsd"),
    "nsdl_dc": FormatInfo(
        "nsdl_dc", NSDL_DC_NS, "nsdl_dc",
        "http://ns.nsdl.org/schemas/nsdl_dc/nsdl_dc_v1.02.xsd"),
}


@dataclass(frozen=True)
class MetadataRecord:
    """Format-tagged XML payload with harvest provenance."""

    format: str
    xml: bytes
    source_datestamp: datetime = EPOCH


@dataclass(frozen=True)
class DcEntry:
    name: str
    value: str
    xsi_type: str | None = None


@dataclass(frozen=True)
class GoldRecord:
    xml: bytes
    contributors: tuple[str, ...]


# --------------------------------------------------------------------------
# parsing / serialization


def parse_dc_entries(xml: bytes) -> list[DcEntry]:
    """DC elements of an oai_dc or nsdl_dc document, in document order.

    Elements outside the DC namespace are skipped, so the parser tolerates
    provider-specific extras.
    """
    try:
        root = ET.fromstring(xml)
    except ET.ParseError as exc:
        raise ValidationError(f"record is not well-formed XML: {exc}")
    entries = []
    for child in root:
        if child.tag.startswith("{%s}" % DC_NS):
            name = child.tag.split("}", 1)[1]
            value = (child.text or "").strip()
            entries.append(DcEntry(name, value, child.get(f"{{{XSI_NS}}}type")))
    return entries


def serialize_dc(format_name: str, entries: list[DcEntry]) -> bytes:
    """Deterministic serialization of DC entries under the given root.

    oai_dc is unqualified, so xsi:type annotations are dropped there;
    nsdl_dc keeps them.
    """
    info = FORMATS.get(format_name)
    if info is None:
        raise FormatUnavailableError(f"unknown record format {format_name!r}")
    qualified = format_name == "nsdl_dc"
    decls = (
        f' xmlns:{info.prefix}="{info.namespace}"'
        f' xmlns:dc="{DC_NS}"'
    )
    if qualified:
        decls += f' xmlns:dct="{DCT_NS}" xmlns:xsi="{XSI_NS}"'
    lines = [f"<{info.prefix}:{info.root}{decls}>"]
    for entry in entries:
        attr = ""
        if qualified and entry.xsi_type:
            attr = f" xsi:type={quoteattr(entry.xsi_type)}"
        lines.append(f"  <dc:{entry.name}{attr}>{escape(entry.value)}</dc:{entry.name}>")
    lines.append(f"</{info.prefix}:{info.root}>")
    return ("\n".join(lines) + "\n").encode("utf-8")


def validate_record(xml: bytes, format_name: str) -> str | None:
    """Structural validation verdict: None when acceptable, else the
    rejection reason. Registered DC formats are checked for the right
    root element and at least one dc:identifier; anything else only has
    to be well-formed."""
    try:
        root = ET.fromstring(xml)
    except ET.ParseError as exc:
        return f"not well-formed: {exc}"
    info = FORMATS.get(format_name)
    if info is None:
        return None
    expected = f"{{{info.namespace}}}{info.root}"
    if root.tag != expected:
        return f"root element {root.tag} does not match format {format_name}"
    for entry in parse_dc_entries(xml):
        if entry.name == "identifier" and entry.value:
            return None
    return "no identifier"


# --------------------------------------------------------------------------
# safe transforms


@dataclass(frozen=True)
class TransformRule:
    element: str  # DC element name, or "*" for all
    rule_kind: str
    parameters: dict = field(default_factory=dict)


_W3CDTF_RE = re.compile(
    r"^\d{4}(-\d{2}(-\d{2}(T\d{2}:\d{2}(:\d{2})?(Z|[+-]\d{2}:\d{2}))?)?)?$")

_DATE_INPUT_FORMATS = (
    ("%B %d, %Y", "%Y-%m-%d"),
    ("%b %d, %Y", "%Y-%m-%d"),
    ("%d %B %Y", "%Y-%m-%d"),
    ("%d %b %Y", "%Y-%m-%d"),
    ("%B %d %Y", "%Y-%m-%d"),
    ("%b %d %Y", "%Y-%m-%d"),
    ("%Y/%m/%d", "%Y-%m-%d"),
    ("%Y.%m.%d", "%Y-%m-%d"),
    ("%m/%d/%Y", "%Y-%m-%d"),
    ("%B %Y", "%Y-%m"),
    ("%b %Y", "%Y-%m"),
)

LANGUAGE_MAP = {
    "english": "en", "eng": "en",
    "french": "fr", "fre": "fr", "fra": "fr",
    "german": "de", "ger": "de", "deu": "de",
    "spanish": "es", "spa": "es",
    "italian": "it", "ita": "it",
    "portuguese": "pt", "por": "pt",
    "dutch": "nl", "dut": "nl", "nld": "nl",
    "japanese": "ja", "jpn": "ja",
    "chinese": "zh", "chi": "zh", "zho": "zh",
    "russian": "ru", "rus": "ru",
}

DCMI_TYPES = frozenset({
    "Collection", "Dataset", "Event", "Image", "InteractiveResource",
    "MovingImage", "PhysicalObject", "Service", "Software", "Sound",
    "StillImage", "Text",
})

TYPE_VOCAB_MAP = {
    "movie": "MovingImage", "video": "MovingImage", "film": "MovingImage",
    "text": "Text", "document": "Text", "article": "Text",
    "image": "Image", "picture": "StillImage", "photo": "StillImage",
    "photograph": "StillImage",
    "audio": "Sound", "sound": "Sound", "music": "Sound",
    "dataset": "Dataset", "data": "Dataset",
    "software": "Software", "application": "Software",
    "collection": "Collection", "event": "Event", "service": "Service",
    "interactive resource": "InteractiveResource",
    "physical object": "PhysicalObject",
}

# Applied in this exact order; every rule is total and idempotent, so the
# whole pipeline is too.
DEFAULT_TRANSFORMS: tuple[TransformRule, ...] = (
    TransformRule("*", "whitespace_collapse"),
    TransformRule("date", "date_normalize"),
    TransformRule("language", "language_normalize", LANGUAGE_MAP),
    TransformRule("type", "type_vocab_map", TYPE_VOCAB_MAP),
    TransformRule("date", "qualify", {"xsi_type": "dct:W3CDTF"}),
    TransformRule("type", "qualify", {"xsi_type": "dct:DCMIType"}),
    TransformRule("language", "qualify", {"xsi_type": "dct:RFC3066"}),
)


def collapse_whitespace(value: str) -> str:
    return " ".join(value.split())


def normalize_date(value: str) -> str:
    if _W3CDTF_RE.match(value):
        return value
    for in_fmt, out_fmt in _DATE_INPUT_FORMATS:
        try:
            return datetime.strptime(value, in_fmt).strftime(out_fmt)
        except ValueError:
            continue
    return value


def normalize_language(value: str, mapping: dict[str, str]) -> str:
    lowered = value.lower()
    if len(lowered) == 2 and lowered.isalpha():
        return lowered
    return mapping.get(lowered, value)


def map_type_vocab(value: str, mapping: dict[str, str]) -> str:
    if value in DCMI_TYPES:
        return value
    return mapping.get(value.lower(), value)


def _qualify(entry: DcEntry, xsi_type: str) -> DcEntry:
    if entry.xsi_type is not None:
        return entry
    conforms = (
        (xsi_type == "dct:W3CDTF" and bool(_W3CDTF_RE.match(entry.value)))
        or (xsi_type == "dct:DCMIType" and entry.value in DCMI_TYPES)
        or (xsi_type == "dct:RFC3066"
            and len(entry.value) == 2 and entry.value.isalpha()
            and entry.value.islower())
    )
    if conforms:
        return DcEntry(entry.name, entry.value, xsi_type)
    return entry


def apply_rules(entries: list[DcEntry],
                rules: tuple[TransformRule, ...] = DEFAULT_TRANSFORMS) -> list[DcEntry]:
    out = list(entries)
    for rule in rules:
        applied = []
        for entry in out:
            if rule.element not in ("*", entry.name):
                applied.append(entry)
                continue
            if rule.rule_kind == "whitespace_collapse":
                entry = DcEntry(entry.name, collapse_whitespace(entry.value), entry.xsi_type)
            elif rule.rule_kind == "date_normalize":
                entry = DcEntry(entry.name, normalize_date(entry.value), entry.xsi_type)
            elif rule.rule_kind == "language_normalize":
                entry = DcEntry(entry.name,
                                normalize_language(entry.value, rule.parameters),
                                entry.xsi_type)
            elif rule.rule_kind == "type_vocab_map":
                entry = DcEntry(entry.name,
                                map_type_vocab(entry.value, rule.parameters),
                                entry.xsi_type)
            elif rule.rule_kind == "qualify":
                entry = _qualify(entry, rule.parameters["xsi_type"])
            else:
                raise ValueError(f"unknown transform rule kind {rule.rule_kind!r}")
            applied.append(entry)
        out = applied
    return out


def apply_safe_transforms(record: MetadataRecord,
                          rules: tuple[TransformRule, ...] = DEFAULT_TRANSFORMS,
                          ) -> MetadataRecord:
    """Normalized copy of a DC-family record, same format. Unknown values
    pass through untouched; running the pipeline twice changes nothing."""
    if record.format not in FORMATS:
        return record
    entries = apply_rules(parse_dc_entries(record.xml), rules)
    return MetadataRecord(
        record.format,
        serialize_dc(record.format, entries),
        record.source_datestamp,
    )


# --------------------------------------------------------------------------
# crosswalks

_CROSSWALKS = {("oai_dc", "nsdl_dc")}


def crosswalk(record: MetadataRecord, to_format: str) -> MetadataRecord:
    """Derive a record in another format. The only registered pair is
    oai_dc -> nsdl_dc; asking for the format a record already has is the
    identity."""
    if to_format == record.format:
        return record
    if (record.format, to_format) not in _CROSSWALKS:
        raise FormatUnavailableError(
            f"no crosswalk from {record.format} to {to_format}")
    entries = apply_rules(parse_dc_entries(record.xml))
    return MetadataRecord(
        to_format, serialize_dc(to_format, entries), record.source_datestamp)


def crosswalk_targets(format_name: str) -> list[str]:
    return sorted(to for (frm, to) in _CROSSWALKS if frm == format_name)


# --------------------------------------------------------------------------
# gold record fold


@dataclass(frozen=True)
class GoldInput:
    """One contributing record: the asserting metadata object's pid, its
    record datestamp (tie-break), and its parsed nsdl_dc entries."""

    pid: str
    datestamp: datetime
    entries: tuple[DcEntry, ...]


def fold_order(inputs: list[GoldInput],
               augment_edges: list[tuple[str, str]]) -> list[GoldInput]:
    """Topological order of the augmentation subgraph: every record comes
    before the records that augment it; incomparable records order by
    (datestamp, pid). An (a, b) edge reads "a augments b"."""
    by_pid = {g.pid: g for g in inputs}
    remaining_preds: dict[str, set[str]] = {g.pid: set() for g in inputs}
    augmenters: dict[str, set[str]] = {g.pid: set() for g in inputs}
    for a, b in augment_edges:
        if a in by_pid and b in by_pid and a != b:
            remaining_preds[a].add(b)
            augmenters[b].add(a)

    def key(pid: str):
        g = by_pid[pid]
        return (g.datestamp, pid_sort_key(pid))

    ready = [key(p) + (p,) for p, preds in remaining_preds.items() if not preds]
    heapq.heapify(ready)
    ordered: list[GoldInput] = []
    done: set[str] = set()
    while ready:
        *_, pid = heapq.heappop(ready)
        if pid in done:
            continue
        done.add(pid)
        ordered.append(by_pid[pid])
        for follower in augmenters[pid]:
            remaining_preds[follower].discard(pid)
            if not remaining_preds[follower]:
                heapq.heappush(ready, key(follower) + (follower,))
    if len(ordered) != len(inputs):
        cycle = sorted(set(by_pid) - done, key=pid_sort_key)
        raise ModelIntegrityError(
            f"augmentation cycle involving {', '.join(cycle)}")
    return ordered


def fold_gold(inputs: list[GoldInput],
              augment_edges: list[tuple[str, str]]) -> GoldRecord:
    """Merge contributing records element-wise in augmentation order.

    Single-valued elements (title, identifier, date) are overridden by
    later records; repeatable elements union with exact-string dedup in
    first-seen order.
    """
    ordered = fold_order(inputs, augment_edges)
    single: dict[str, list[DcEntry]] = {}
    repeat: dict[str, list[DcEntry]] = {}
    seen: dict[str, set[str]] = {}
    for g in ordered:
        by_name: dict[str, list[DcEntry]] = {}
        for entry in g.entries:
            by_name.setdefault(entry.name, []).append(entry)
        for name, entries in by_name.items():
            if name in GOLD_SINGLE_VALUED:
                single[name] = entries
            else:
                for entry in entries:
                    if entry.value not in seen.setdefault(name, set()):
                        seen[name].add(entry.value)
                        repeat.setdefault(name, []).append(entry)

    merged: list[DcEntry] = []
    names = list(DC_ELEMENT_ORDER) + sorted(
        (set(single) | set(repeat)) - set(DC_ELEMENT_ORDER))
    for name in names:
        merged.extend(single.get(name, ()))
        merged.extend(repeat.get(name, ()))

    contributors = tuple(g.pid for g in ordered)
    body = serialize_dc("nsdl_dc", merged).decode("utf-8").rstrip("\n")
    # The contributors trailer rides inside the root element.
    closing = "</nsdl_dc:nsdl_dc>"
    assert body.endswith(closing)
    trailer_lines = ["  <contributors>"]
    trailer_lines += [
        f"    <contributor>info:nsdl/{pid}</contributor>" for pid in contributors]
    trailer_lines.append("  </contributors>")
    xml = body[: -len(closing)] + "\n".join(trailer_lines) + "\n" + closing + "\n"
    return GoldRecord(xml.encode("utf-8"), contributors)
