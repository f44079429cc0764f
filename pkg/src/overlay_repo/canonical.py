"""Canonical XML interchange format for digital objects.

The serialization is deterministic byte for byte: fixed attribute order,
datastreams sorted by id, behaviors sorted, the relationship fragment
last, two-space indentation, LF line endings, UTF-8. Importing an export
reproduces an equal object, so the same format doubles as the on-disk
record layout and the bulk-fixture format.

    <digitalObject pid="nsdl:4" state="active" version="1"
                   lastModified="2005-03-05T12:00:00Z" [handle="hdl:p/s"]>
      <datastream dsId="REC.oai_dc" kind="local" mediaType="application/xml">
        <!-- base64 payload text -->
      </datastream>
      <datastream dsId="CONTENT" kind="remote" mediaType="text/html"
                  url="http://..."/>
      <behavior name="Metadata"/>
      <rels>...RDF/XML fragment...</rels>
    </digitalObject>

Tombstones serialize as an empty root element with state="deleted".
"""

from __future__ import annotations

import base64
from xml.etree import ElementTree as ET
from xml.sax.saxutils import quoteattr

from .errors import ValidationError
from .graph import parse_rels, serialize_rels
from .model import (
    RELS_DS,
    RELS_MEDIA_TYPE,
    Datastream,
    DigitalObject,
    format_datestamp,
    parse_datestamp,
)

_XML_DECL = '<?xml version="1.0" encoding="UTF-8"?>\n'


def export_object(obj: DigitalObject) -> bytes:
    attrs = [
        ("pid", obj.pid),
        ("state", obj.state),
        ("version", str(obj.version)),
        ("lastModified", format_datestamp(obj.last_modified)),
    ]
    if obj.handle is not None:
        attrs.append(("handle", obj.handle))
    head = "<digitalObject" + _render_attrs(attrs)
    if obj.state == "deleted":
        return (_XML_DECL + head + "/>\n").encode("utf-8")

    lines = [head + ">"]
    rels_payload = None
    for ds in sorted(obj.datastreams, key=lambda d: d.ds_id):
        if ds.ds_id == RELS_DS:
            rels_payload = ds.payload
            continue
        ds_attrs = [("dsId", ds.ds_id), ("kind", ds.kind), ("mediaType", ds.media_type)]
        if ds.kind == "remote":
            ds_attrs.append(("url", ds.url))
            lines.append("  <datastream" + _render_attrs(ds_attrs) + "/>")
        else:
            encoded = base64.b64encode(ds.payload or b"").decode("ascii")
            lines.append(
                "  <datastream" + _render_attrs(ds_attrs) + ">" + encoded + "</datastream>")
    for name in sorted(obj.behaviors):
        lines.append("  <behavior" + _render_attrs([("name", name)]) + "/>")
    if rels_payload is not None:
        lines.append("  <rels>")
        # Re-serialize through the parsed triples so embedded markup stays
        # canonical regardless of how the stored fragment was formatted.
        fragment = serialize_rels(obj.pid, parse_rels(obj.pid, rels_payload))
        for raw in fragment.decode("utf-8").splitlines():
            lines.append("    " + raw if raw else "")
        lines.append("  </rels>")
    lines.append("</digitalObject>")
    return (_XML_DECL + "\n".join(lines) + "\n").encode("utf-8")


def import_object(doc: bytes) -> DigitalObject:
    """Parse a canonical document back into a DigitalObject.

    Malformed documents are rejected with the offending element named;
    structural invariants are re-validated by the caller's write path.
    """
    try:
        root = ET.fromstring(doc)
    except ET.ParseError as exc:
        raise ValidationError(f"canonical document is not well-formed XML: {exc}")
    if root.tag != "digitalObject":
        raise ValidationError(f"root element must be digitalObject, got {root.tag!r}")
    pid = _require(root, "pid")
    state = _require(root, "state")
    version = _require(root, "version")
    last_modified = _require(root, "lastModified")
    if not version.isdigit():
        raise ValidationError(f"{pid}: version must be a decimal integer")

    datastreams: list[Datastream] = []
    rels_seen = False
    for child in root:
        if child.tag == "datastream":
            datastreams.append(_parse_datastream(pid, child))
        elif child.tag == "behavior":
            pass
        elif child.tag == "rels":
            if rels_seen:
                raise ValidationError(f"{pid}: multiple rels elements")
            rels_seen = True
            rdf = list(child)
            if len(rdf) != 1:
                raise ValidationError(f"{pid}: rels must wrap one rdf:RDF element")
            fragment = ET.tostring(rdf[0], encoding="utf-8")
            # Normalize to the canonical fragment layout on the way in.
            fragment = serialize_rels(pid, parse_rels(pid, fragment))
            datastreams.append(
                Datastream(RELS_DS, "local", RELS_MEDIA_TYPE, payload=fragment))
        else:
            raise ValidationError(f"{pid}: unexpected element {child.tag!r}")

    behaviors = frozenset(
        _require(el, "name") for el in root if el.tag == "behavior")
    obj = DigitalObject(
        pid=pid,
        state=state,
        handle=root.get("handle"),
        datastreams=tuple(datastreams),
        behaviors=behaviors,
        last_modified=parse_datestamp(last_modified),
        version=int(version),
    )
    obj.validate()
    if obj.state == "deleted" and (obj.datastreams or obj.behaviors):
        raise ValidationError(f"{pid}: tombstone documents must be empty")
    return obj


def canonical_xml(data: bytes) -> bytes:
    """C14N form of an arbitrary XML document, for byte comparisons."""
    return ET.canonicalize(xml_data=data).encode("utf-8")


def _render_attrs(attrs) -> str:
    return "".join(f" {name}={quoteattr(value)}" for name, value in attrs)


def _require(el: ET.Element, name: str) -> str:
    value = el.get(name)
    if value is None:
        raise ValidationError(f"element {el.tag!r} is missing attribute {name!r}")
    return value


def _parse_datastream(pid: str, el: ET.Element) -> Datastream:
    ds_id = _require(el, "dsId")
    kind = _require(el, "kind")
    media_type = _require(el, "mediaType")
    if ds_id == RELS_DS:
        raise ValidationError(f"{pid}: the relationship stream belongs in <rels>")
    if kind == "remote":
        return Datastream(ds_id, "remote", media_type, url=_require(el, "url"))
    if kind == "local":
        text = "".join(el.itertext()).strip()
        try:
            payload = base64.b64decode(text.encode("ascii"), validate=True)
        except Exception:
            raise ValidationError(f"{pid}: datastream {ds_id} payload is not valid base64")
        return Datastream(ds_id, "local", media_type, payload=payload)
    raise ValidationError(f"{pid}: datastream {ds_id} has unknown kind {kind!r}")
