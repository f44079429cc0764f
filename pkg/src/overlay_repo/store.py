"""The repository: persistent digital objects joined to the relationship graph.

Writes are serialized behind one lock and commit the object record, its
graph assertions, and the secondary indexes as a single unit; readers see
immutable snapshots. Persistence is a directory of canonical XML records
plus a counters file; the triple index and all lookup tables are rebuilt
from those records on open.
"""

from __future__ import annotations

import json
import logging
import threading
import urllib.request
from dataclasses import replace
from datetime import datetime
from pathlib import Path
from typing import Callable, Iterator
from xml.sax.saxutils import quoteattr

from . import canonical
from .errors import (
    DisseminationError,
    NotFoundError,
    ObjectDeletedError,
    OperationNotSupportedError,
    RepositoryError,
    StoreError,
    ValidationError,
)
from .graph import TripleStore, parse_rels, serialize_rels
from .model import (
    CONTENT_DS,
    RELS_DS,
    RELS_MEDIA_TYPE,
    SOURCE_DS,
    Datastream,
    DigitalObject,
    Representation,
    format_datestamp,
    handle_suffix,
    make_handle,
    make_pid,
    parse_representation_uri,
    parse_source_doc,
    pid_number,
    utcnow_seconds,
)
from .ontology import expand_behaviors

log = logging.getLogger(__name__)

Clock = Callable[[], datetime]
UrlFetcher = Callable[[str, float], bytes]


def _default_fetcher(url: str, timeout: float) -> bytes:
    with urllib.request.urlopen(url, timeout=timeout) as response:
        return response.read()


class Repository:
    """Store of digital objects with minted pids, a local handle table,
    and dissemination of stored or computed representations."""

    def __init__(
        self,
        data_dir: str | Path | None = None,
        *,
        registry=None,
        clock: Clock | None = None,
        handle_prefix: str = "2200",
        url_fetcher: UrlFetcher | None = None,
        fetch_timeout: float = 10.0,
    ):
        self.data_dir = Path(data_dir) if data_dir is not None else None
        self.clock = clock or utcnow_seconds
        self.handle_prefix = handle_prefix
        self.fetch_timeout = fetch_timeout
        self._fetch = url_fetcher or _default_fetcher
        if registry is None:
            from .behaviors import default_registry

            registry = default_registry()
        self.registry = registry

        self._lock = threading.RLock()
        self._objects: dict[str, DigitalObject] = {}
        self._pid_counter = 0
        self._handle_counter = 0
        self._handles: dict[str, str] = {}
        self._content_by_url: dict[str, str] = {}
        self._sources: dict[tuple[str, str], str] = {}
        self.graph = TripleStore(type_oracle=self.behaviors_of)
        if self.data_dir is not None:
            self._open_data_dir()

    # ------------------------------------------------------------------
    # identifiers

    def mint_pid(self) -> str:
        """Next unused pid; the counter is persisted, so pids are never
        reused across deletions or restarts."""
        with self._lock:
            self._pid_counter += 1
            self._persist_counters()
            return make_pid(self._pid_counter)

    def resolve_handle(self, handle: str) -> str:
        """pid registered for a handle (tombstones keep their mapping)."""
        pid = self._handles.get(handle)
        if pid is None:
            raise NotFoundError(f"unknown handle {handle}")
        return pid

    def assign_handle(self, pid: str) -> str:
        """Handle of a resource object, minting and persisting one on
        first request."""
        with self._lock:
            obj = self.get_object(pid)
            if obj.state == "deleted":
                raise ObjectDeletedError(f"{pid} is deleted")
            if obj.handle is not None:
                return obj.handle
            if not obj.is_resource:
                raise OperationNotSupportedError(
                    f"{pid} binds no resource type, handles do not apply")
            self._handle_counter += 1
            handle = make_handle(self.handle_prefix, self._handle_counter)
            updated = replace(
                obj, handle=handle, version=obj.version + 1,
                last_modified=self.clock())
            self._write_record(updated)
            self._commit(updated, obj)
            self._persist_counters()
            return handle

    # ------------------------------------------------------------------
    # object lifecycle

    def put_object(self, obj: DigitalObject, *, strict: bool = True) -> int:
        """Create or update an object atomically with its graph assertions.

        Returns the new version. Any rejection (structure, relationship
        fragment, ontology) leaves both the object store and the graph
        untouched.
        """
        with self._lock:
            if pid_number(obj.pid) > self._pid_counter:
                raise ValidationError(f"{obj.pid} was never minted")
            old = self._objects.get(obj.pid)
            prepared = replace(
                obj,
                state="active",
                handle=obj.handle if obj.handle is not None
                else (old.handle if old else None),
                version=(old.version + 1) if old else 1,
                last_modified=self.clock(),
            )
            return self._store(prepared, old, strict=strict).version

    def restore_object(self, obj: DigitalObject, *, strict: bool = True) -> str:
        """Import path: preserves the document's version and datestamp
        (bumping the version only when a replaced object is already past
        it) and advances the pid/handle counters as needed."""
        with self._lock:
            old = self._objects.get(obj.pid)
            if old is not None and old.version >= obj.version:
                obj = replace(obj, version=old.version + 1)
            self._pid_counter = max(self._pid_counter, pid_number(obj.pid))
            if obj.handle is not None:
                self._absorb_handle(obj.handle)
            self._store(obj, old, strict=strict)
            self._persist_counters()
            return obj.pid

    def get_object(self, pid: str) -> DigitalObject:
        obj = self._objects.get(pid)
        if obj is None:
            raise NotFoundError(f"unknown pid {pid}")
        return obj

    def delete_object(self, pid: str) -> None:
        """Tombstone an object: datastreams, behaviors and asserted triples
        go away; pid, datestamp and handle mapping remain. Idempotent."""
        with self._lock:
            old = self.get_object(pid)
            if old.state == "deleted":
                return
            tomb = old.tombstone(self.clock())
            self._write_record(tomb)
            self._commit(tomb, old)

    def export_object(self, pid: str) -> bytes:
        return canonical.export_object(self.get_object(pid))

    def import_object(self, doc: bytes, *, strict: bool = True) -> str:
        return self.restore_object(canonical.import_object(doc), strict=strict)

    # ------------------------------------------------------------------
    # views

    def pids(self) -> list[str]:
        with self._lock:
            return sorted(self._objects, key=pid_number)

    def objects(self) -> Iterator[DigitalObject]:
        for pid in self.pids():
            yield self._objects[pid]

    def active_objects(self) -> Iterator[DigitalObject]:
        return (o for o in self.objects() if o.state == "active")

    def behaviors_of(self, pid: str) -> frozenset[str] | None:
        """Type oracle: behavior set of an active object, else None."""
        obj = self._objects.get(pid)
        if obj is None or obj.state == "deleted":
            return None
        return obj.behaviors

    def content_pid_for_url(self, url: str) -> str | None:
        return self._content_by_url.get(url)

    def source_pid(self, provider: str, oai_identifier: str) -> str | None:
        return self._sources.get((provider, oai_identifier))

    def fetch_remote(self, url: str) -> bytes:
        try:
            return self._fetch(url, self.fetch_timeout)
        except Exception as exc:
            raise DisseminationError(f"remote fetch of {url} failed: {exc}") from exc

    def rebuild_graph(self) -> None:
        """Drop and reconstruct the triple index from stored RELS."""
        with self._lock:
            self.graph.rebuild(
                (o.pid, o.rels()) for o in self.objects() if o.state == "active")

    def validate_graph(self) -> list[str]:
        """Domain/range violations across the whole joined graph; the
        post-staging check behind lenient bulk imports."""
        with self._lock:
            violations = []
            for obj in self.active_objects():
                violations.extend(self.graph.validate_fragment(
                    obj.pid, self.graph.triples_asserted_by(obj.pid),
                    pending_behaviors=obj.behaviors))
            return violations

    # ------------------------------------------------------------------
    # dissemination

    def resolve(self, uri: str, params: dict[str, str] | None = None) -> Representation:
        """Dereference an info URI: the object profile, or the output of
        the bound behavior operation. Stored and computed representations
        are indistinguishable here."""
        pid, op, uri_params = parse_representation_uri(uri)
        merged = dict(uri_params)
        merged.update(params or {})
        return self.disseminate(pid, op, merged)

    def disseminate(self, pid: str, op: str | None,
                    params: dict[str, str] | None = None) -> Representation:
        obj = self.get_object(pid)
        if obj.state == "deleted":
            raise ObjectDeletedError(f"{pid} is deleted")
        if op is None:
            return self._profile(obj)
        fn = self.registry.dispatch(expand_behaviors(obj.behaviors), op)
        if fn is None:
            raise OperationNotSupportedError(f"{pid} does not support {op}")
        try:
            return fn(self, pid, params or {})
        except RepositoryError:
            raise
        except Exception as exc:
            raise DisseminationError(f"{pid}/{op} failed: {exc}") from exc

    def _profile(self, obj: DigitalObject) -> Representation:
        attrs = [
            ("pid", obj.pid),
            ("state", obj.state),
            ("version", str(obj.version)),
            ("lastModified", format_datestamp(obj.last_modified)),
        ]
        if obj.handle is not None:
            attrs.append(("handle", obj.handle))
        lines = ["<objectProfile" + "".join(
            f" {k}={quoteattr(v)}" for k, v in attrs) + ">"]
        for ds in sorted(obj.datastreams, key=lambda d: d.ds_id):
            ds_attrs = f' dsId={quoteattr(ds.ds_id)} kind={quoteattr(ds.kind)}' \
                       f' mediaType={quoteattr(ds.media_type)}'
            lines.append(f"  <datastream{ds_attrs}/>")
        for name in sorted(obj.behaviors):
            lines.append(f"  <behavior name={quoteattr(name)}/>")
        lines.append("</objectProfile>")
        return Representation("application/xml", ("\n".join(lines) + "\n").encode("utf-8"))

    # ------------------------------------------------------------------
    # write path internals (lock held)

    def _store(self, obj: DigitalObject, old: DigitalObject | None,
               *, strict: bool) -> DigitalObject:
        obj.validate()
        if obj.state == "deleted":
            self._write_record(obj)
            self._commit(obj, old)
            return obj
        rels = obj.rels()
        triples = parse_rels(obj.pid, rels) if rels is not None else []
        if rels is not None:
            # Store the canonical form so exports and graph rebuilds are
            # byte-stable no matter how the fragment arrived.
            obj = obj.with_datastream(
                Datastream(RELS_DS, "local", RELS_MEDIA_TYPE,
                           payload=serialize_rels(obj.pid, triples)))
        violations = self.graph.validate_fragment(
            obj.pid, triples, pending_behaviors=obj.behaviors)
        if violations:
            if strict:
                raise ValidationError(
                    f"{obj.pid}: relationship fragment rejected", violations)
            for v in violations:
                log.warning("accepting despite ontology violation: %s", v)
        if old is not None and old.handle is not None and obj.handle != old.handle:
            raise ValidationError(
                f"{obj.pid}: handle {old.handle} is permanent and cannot "
                f"change to {obj.handle}")
        if obj.handle is not None:
            owner = self._handles.get(obj.handle)
            if owner is not None and owner != obj.pid:
                raise ValidationError(
                    f"{obj.pid}: handle {obj.handle} already registered to {owner}")
        self._write_record(obj)
        self._objects[obj.pid] = obj
        self.graph.replace_triples(obj.pid, triples)
        self._index(obj, old)
        return obj

    def _commit(self, obj: DigitalObject, old: DigitalObject | None) -> None:
        self._objects[obj.pid] = obj
        if obj.state == "deleted":
            self.graph.retract(obj.pid)
        self._index(obj, old)

    def _index(self, obj: DigitalObject, old: DigitalObject | None) -> None:
        if obj.handle is not None:
            self._handles[obj.handle] = obj.pid
        if old is not None:
            url = _content_url(old)
            if url is not None and self._content_by_url.get(url) == old.pid:
                del self._content_by_url[url]
            source = _source_key(old)
            if source is not None and self._sources.get(source) == old.pid:
                del self._sources[source]
        if obj.state == "active":
            url = _content_url(obj)
            if url is not None:
                self._content_by_url.setdefault(url, obj.pid)
            source = _source_key(obj)
            if source is not None:
                self._sources.setdefault(source, obj.pid)

    def _absorb_handle(self, handle: str) -> None:
        """Advance the handle counter past imported handles we minted."""
        prefix = f"hdl:{self.handle_prefix}/"
        if handle.startswith(prefix):
            suffix = handle_suffix(handle)
            if suffix.isdigit():
                self._handle_counter = max(self._handle_counter, int(suffix))

    # ------------------------------------------------------------------
    # persistence

    def _open_data_dir(self) -> None:
        assert self.data_dir is not None
        objects_dir = self.data_dir / "objects"
        try:
            objects_dir.mkdir(parents=True, exist_ok=True)
        except OSError as exc:
            raise StoreError(f"cannot initialize data directory: {exc}") from exc
        state_path = self.data_dir / "state.json"
        if state_path.exists():
            state = json.loads(state_path.read_text("utf-8"))
            self._pid_counter = int(state.get("pid_counter", 0))
            self._handle_counter = int(state.get("handle_counter", 0))
        records = sorted(objects_dir.glob("*.xml"),
                         key=lambda p: int(p.stem) if p.stem.isdigit() else 0)
        for path in records:
            try:
                obj = canonical.import_object(path.read_bytes())
            except ValidationError as exc:
                raise StoreError(f"corrupt object record {path.name}: {exc}") from exc
            self._objects[obj.pid] = obj
            self._pid_counter = max(self._pid_counter, pid_number(obj.pid))
            if obj.handle is not None:
                self._handles[obj.handle] = obj.pid
                self._absorb_handle(obj.handle)
            self._index(obj, None)
        self.rebuild_graph()

    def _persist_counters(self) -> None:
        if self.data_dir is None:
            return
        payload = json.dumps({
            "pid_counter": self._pid_counter,
            "handle_counter": self._handle_counter,
        })
        self._atomic_write(self.data_dir / "state.json", payload.encode("utf-8"))

    def _write_record(self, obj: DigitalObject) -> None:
        if self.data_dir is None:
            return
        path = self.data_dir / "objects" / f"{pid_number(obj.pid)}.xml"
        self._atomic_write(path, canonical.export_object(obj))

    @staticmethod
    def _atomic_write(path: Path, data: bytes) -> None:
        tmp = path.with_suffix(path.suffix + ".tmp")
        try:
            tmp.write_bytes(data)
            tmp.replace(path)
        except OSError as exc:
            raise StoreError(f"write to {path} failed: {exc}") from exc


def _content_url(obj: DigitalObject) -> str | None:
    ds = obj.datastream(CONTENT_DS)
    if ds is not None and ds.kind == "remote" and "Content" in obj.behaviors:
        return ds.url
    return None


def _source_key(obj: DigitalObject) -> tuple[str, str] | None:
    ds = obj.datastream(SOURCE_DS)
    if ds is None or ds.payload is None:
        return None
    try:
        provider, oai_id, _ = parse_source_doc(ds.payload)
    except ValidationError:
        return None
    return provider, oai_id
