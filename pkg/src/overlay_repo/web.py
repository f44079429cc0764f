"""REST gateway: dissemination URLs, object management, and graph queries.

Paths:

    GET    /objects/{pid}                   object profile
    GET    /objects/{pid}/methods/{op}      dissemination (query params pass through)
    PUT    /objects/{pid}                   create/replace from canonical XML
    POST   /objects                         create from canonical XML
    DELETE /objects/{pid}                   tombstone
    POST   /query                           textual graph query, rows out
    GET/POST /oai                           OAI-PMH endpoint

A dissemination response is byte-identical to resolve() on the same URI.
Handlers are stateless; management requests serialize through the
repository's write path, so reads stay responsive during harvests.
"""

from __future__ import annotations

import json
import os
import re
from dataclasses import dataclass, fields
from pathlib import Path
from urllib.parse import parse_qsl

from .errors import (
    BrandMissingError,
    DisseminationError,
    FormatUnavailableError,
    ModelIntegrityError,
    NoMetadataError,
    NotFoundError,
    NotRepresentedError,
    ObjectDeletedError,
    OperationNotSupportedError,
    QueryParseError,
    RepositoryError,
    ValidationError,
)
from .graph import parse_query
from .oai import OaiProvider

_OBJECT_RE = re.compile(r"^/objects/([^/]+)$")
_METHOD_RE = re.compile(r"^/objects/([^/]+)/methods/([^/]+)$")


@dataclass
class GatewayConfig:
    """Gateway settings; every field can come from a JSON config file and
    be overridden by an OVERLAY_-prefixed environment variable."""

    listen: str = "127.0.0.1:8080"
    data_dir: str | None = None
    page_size: int = 250
    repository_id: str = "overlay.local"
    repository_name: str = "Overlay Repository"
    admin_email: str = "admin@localhost"
    query_row_cap: int = 10000
    base_url: str | None = None

    @property
    def host(self) -> str:
        return self.listen.rsplit(":", 1)[0]

    @property
    def port(self) -> int:
        return int(self.listen.rsplit(":", 1)[1])

    def oai_base_url(self) -> str:
        return self.base_url or f"http://{self.listen}/oai"


def load_config(path: str | Path | None = None,
                env: dict | None = None) -> GatewayConfig:
    env = os.environ if env is None else env
    values: dict = {}
    if path is not None:
        values.update(json.loads(Path(path).read_text("utf-8")))
    for field_info in fields(GatewayConfig):
        key = "OVERLAY_" + field_info.name.upper()
        if key in env:
            raw = env[key]
            values[field_info.name] = int(raw) if field_info.type == "int" else raw
    known = {f.name for f in fields(GatewayConfig)}
    values.pop("providers", None)  # provider list is consumed by the CLI
    unknown = set(values) - known
    if unknown:
        raise ValueError(f"unknown config keys: {sorted(unknown)}")
    return GatewayConfig(**values)


class GatewayApp:
    """WSGI application tying the repository, the query surface, and the
    OAI provider together."""

    def __init__(self, repo, oai: OaiProvider | None = None,
                 query_row_cap: int = 10000):
        self.repo = repo
        self.oai = oai or OaiProvider(repo)
        self.query_row_cap = query_row_cap

    def __call__(self, environ, start_response):
        method = environ.get("REQUEST_METHOD", "GET")
        path = environ.get("PATH_INFO", "/")
        params = dict(parse_qsl(environ.get("QUERY_STRING", "")))
        try:
            status, content_type, body = self._route(method, path, params, environ)
        except RepositoryError as exc:
            status, content_type, body = self._error_response(exc)
        except Exception as exc:  # pragma: no cover - last-resort guard
            status, content_type, body = (
                "500 Internal Server Error", "text/plain", f"{exc}\n".encode())
        start_response(status, [
            ("Content-Type", content_type),
            ("Content-Length", str(len(body))),
        ])
        return [body]

    # ------------------------------------------------------------------

    def _route(self, method, path, params, environ):
        if path == "/oai" or path.startswith("/oai/"):
            return self._delegate_oai(environ)
        if path == "/query" and method == "POST":
            return self._query(params, _read_body(environ))
        match = _METHOD_RE.match(path)
        if match and method == "GET":
            rep = self.repo.disseminate(match.group(1), match.group(2), params)
            return "200 OK", rep.media_type, rep.body
        match = _OBJECT_RE.match(path)
        if match:
            return self._object(method, match.group(1), environ)
        if path == "/objects" and method == "POST":
            pid = self.repo.import_object(_read_body(environ))
            return ("201 Created", "text/plain", f"{pid}\n".encode())
        return "404 Not Found", "text/plain", b"no such route\n"

    def _object(self, method, pid, environ):
        if method == "GET":
            rep = self.repo.disseminate(pid, None)
            return "200 OK", rep.media_type, rep.body
        if method == "DELETE":
            self.repo.delete_object(pid)
            return "204 No Content", "text/plain", b""
        if method == "PUT":
            body = _read_body(environ)
            from .canonical import import_object as parse_object

            obj = parse_object(body)
            if obj.pid != pid:
                return ("409 Conflict", "text/plain",
                        f"body pid {obj.pid} does not match path pid {pid}\n".encode())
            exists = True
            try:
                self.repo.get_object(pid)
            except NotFoundError:
                exists = False
            self.repo.restore_object(obj)
            status = "200 OK" if exists else "201 Created"
            return status, "text/plain", f"{pid}\n".encode()
        return "405 Method Not Allowed", "text/plain", b"unsupported method\n"

    def _query(self, params, body):
        pattern = parse_query(body.decode("utf-8"))
        rows = self.repo.graph.query(pattern)
        paged = "offset" in params or "limit" in params
        if len(rows) > self.query_row_cap and not paged:
            message = (f"{len(rows)} rows exceed the cap of "
                       f"{self.query_row_cap}; pass offset/limit\n")
            return "413 Payload Too Large", "text/plain", message.encode()
        if paged:
            try:
                offset = int(params.get("offset", 0))
                limit = int(params["limit"]) if "limit" in params else None
            except ValueError:
                raise QueryParseError("offset and limit must be integers")
            end = None if limit is None else offset + limit
            rows = rows[offset:end]
        text = "".join("\t".join(row) + "\n" for row in rows)
        return "200 OK", "text/plain; charset=utf-8", text.encode("utf-8")

    def _delegate_oai(self, environ):
        captured = {}

        def capture(status, headers):
            captured["status"] = status
            captured["headers"] = headers

        chunks = self.oai.wsgi_app(environ, capture)
        body = b"".join(chunks)
        content_type = dict(captured["headers"]).get("Content-Type", "text/xml")
        return captured["status"], content_type, body

    @staticmethod
    def _error_response(exc: RepositoryError):
        status = _STATUS.get(type(exc), "500 Internal Server Error")
        lines = [str(exc)]
        if isinstance(exc, ValidationError):
            lines.extend(exc.violations)
        return status, "text/plain; charset=utf-8", ("\n".join(lines) + "\n").encode()


_STATUS = {
    NotFoundError: "404 Not Found",
    FormatUnavailableError: "404 Not Found",
    ObjectDeletedError: "410 Gone",
    OperationNotSupportedError: "501 Not Implemented",
    ValidationError: "422 Unprocessable Entity",
    QueryParseError: "400 Bad Request",
    ModelIntegrityError: "409 Conflict",
    NoMetadataError: "409 Conflict",
    BrandMissingError: "409 Conflict",
    NotRepresentedError: "409 Conflict",
    DisseminationError: "502 Bad Gateway",
}


def _read_body(environ) -> bytes:
    try:
        length = int(environ.get("CONTENT_LENGTH") or 0)
    except ValueError:
        length = 0
    return environ["wsgi.input"].read(length) if length else b""


def make_server(app, host: str, port: int):
    """Threaded WSGI server; reads stay responsive during long writes."""
    from socketserver import ThreadingMixIn
    from wsgiref.simple_server import WSGIServer, make_server as _make

    class ThreadingWSGIServer(ThreadingMixIn, WSGIServer):
        daemon_threads = True

    return _make(host, port, app, server_class=ThreadingWSGIServer)
