"""Joined triple store over all objects' relationship datastreams.

Each object asserts relationships about itself in its RELS datastream
(RDF/XML, one rdf:Description about the object's info URI). Fragments are
merged into one graph keyed by provenance, validated against the base
ontology, and queried with conjunctive triple patterns.
"""

from __future__ import annotations

import logging
import threading
from dataclasses import dataclass
from typing import Callable, Iterable
from xml.etree import ElementTree as ET

from . import ontology
from .errors import QueryParseError, ValidationError
from .model import INFO_URI_PREFIX, is_pid, pid_sort_key, representation_uri
from .ontology import BASE_NAMESPACE, Predicate, predicate_from_uri

log = logging.getLogger(__name__)

RDF_NS = "http://www.w3.org/1999/02/22-rdf-syntax-ns#"
_RDF_ROOT = f"{{{RDF_NS}}}RDF"
_RDF_DESCRIPTION = f"{{{RDF_NS}}}Description"
_RDF_ABOUT = f"{{{RDF_NS}}}about"
_RDF_RESOURCE = f"{{{RDF_NS}}}resource"

# pid -> behavior set of an active object, or None when absent/deleted.
TypeOracle = Callable[[str], "frozenset[str] | None"]


@dataclass(frozen=True, order=True)
class Triple:
    subject: str
    predicate: Predicate
    object: str
    provenance: str = ""

    def sort_key(self):
        return (
            pid_sort_key(self.subject),
            (self.predicate.namespace, self.predicate.name),
            pid_sort_key(self.object),
        )


@dataclass(frozen=True)
class Var:
    name: str

    def __str__(self) -> str:
        return "?" + self.name


@dataclass(frozen=True)
class QueryPattern:
    """Conjunctive pattern: ordered clauses plus the variables to project."""

    clauses: tuple[tuple[object, object, object], ...]
    select: tuple[str, ...]

    def validate(self) -> None:
        seen: set[str] = set()
        for s, p, o in self.clauses:
            for term in (s, p, o):
                if isinstance(term, Var):
                    seen.add(term.name)
        missing = [v for v in self.select if v not in seen]
        if missing:
            raise QueryParseError(
                f"selected variables not bound by any clause: {missing}")


# --------------------------------------------------------------------------
# RELS fragment wire format


def parse_rels(pid: str, fragment: bytes) -> list[Triple]:
    """Parse an object's RELS fragment into triples.

    The fragment must be RDF/XML with at most one rdf:Description, about
    the owning object; every property needs an rdf:resource pointing at
    another object's info URI.
    """
    try:
        root = ET.fromstring(fragment)
    except ET.ParseError as exc:
        raise ValidationError(f"{pid}: RELS fragment is not well-formed XML: {exc}")
    if root.tag != _RDF_ROOT:
        raise ValidationError(f"{pid}: RELS root must be rdf:RDF, got {root.tag}")
    descriptions = list(root)
    if not descriptions:
        return []
    if len(descriptions) > 1 or descriptions[0].tag != _RDF_DESCRIPTION:
        raise ValidationError(
            f"{pid}: RELS must contain exactly one rdf:Description")
    desc = descriptions[0]
    about = desc.get(_RDF_ABOUT, "")
    if about != representation_uri(pid):
        raise ValidationError(
            f"{pid}: RELS rdf:Description is about {about!r}, "
            f"not the owning object")
    triples = []
    for prop in desc:
        if not prop.tag.startswith("{"):
            raise ValidationError(f"{pid}: RELS property {prop.tag!r} has no namespace")
        ns, name = prop.tag[1:].split("}", 1)
        target = prop.get(_RDF_RESOURCE)
        if target is None:
            raise ValidationError(
                f"{pid}: RELS property {name} needs an rdf:resource object")
        if not target.startswith(INFO_URI_PREFIX):
            raise ValidationError(
                f"{pid}: RELS property {name} points outside the repository: {target!r}")
        obj = target[len(INFO_URI_PREFIX):]
        if not is_pid(obj):
            raise ValidationError(f"{pid}: RELS property {name} targets malformed pid {obj!r}")
        # Namespaces split by ElementTree lose their trailing separator.
        sep = "" if ns.endswith(("#", "/")) else "#"
        triples.append(Triple(pid, Predicate(ns + sep, name), obj, provenance=pid))
    return triples


def serialize_rels(pid: str, triples: Iterable[Triple]) -> bytes:
    """Deterministic RDF/XML for an object's assertions.

    Triples are ordered by (predicate, object); extension namespaces are
    assigned prefixes ext1, ext2, ... in first-use order.
    """
    ordered = sorted(
        triples,
        key=lambda t: ((t.predicate.namespace, t.predicate.name), pid_sort_key(t.object)),
    )
    prefixes = {RDF_NS: "rdf", BASE_NAMESPACE: "rel"}
    for t in ordered:
        ns = t.predicate.namespace
        if ns not in prefixes:
            prefixes[ns] = f"ext{len(prefixes) - 1}"
    decls = "".join(
        f' xmlns:{prefix}="{ns}"' for ns, prefix in prefixes.items()
    )
    lines = [f"<rdf:RDF{decls}>"]
    about = representation_uri(pid)
    if not ordered:
        lines.append(f'  <rdf:Description rdf:about="{about}"/>')
    else:
        lines.append(f'  <rdf:Description rdf:about="{about}">')
        for t in ordered:
            prefix = prefixes[t.predicate.namespace]
            target = representation_uri(t.object)
            lines.append(
                f'    <{prefix}:{t.predicate.name} rdf:resource="{target}"/>')
        lines.append("  </rdf:Description>")
    lines.append("</rdf:RDF>")
    return ("\n".join(lines) + "\n").encode("utf-8")


# --------------------------------------------------------------------------
# Store


class TripleStore:
    """In-memory joined graph with per-provenance replacement semantics.

    The index is always rebuildable from the objects' RELS datastreams;
    it is never persisted on its own. Mutations arrive only through the
    repository's serialized write path; an internal lock additionally
    keeps every read a consistent point-in-time view of the graph.
    """

    def __init__(self, type_oracle: TypeOracle | None = None):
        self._type_oracle = type_oracle or (lambda pid: None)
        self._mutex = threading.RLock()
        self._by_provenance: dict[str, list[Triple]] = {}
        self._by_s: dict[str, set[Triple]] = {}
        self._by_o: dict[str, set[Triple]] = {}
        self._by_p: dict[Predicate, set[Triple]] = {}
        self._by_sp: dict[tuple[str, Predicate], set[Triple]] = {}
        self._by_po: dict[tuple[Predicate, str], set[Triple]] = {}
        self._all: set[Triple] = set()

    def __len__(self) -> int:
        return len(self._all)

    # -- validation

    def validate_fragment(self, pid: str, triples: list[Triple],
                          pending_behaviors: "frozenset[str] | None" = None) -> list[str]:
        """All domain/range violations for a candidate assertion set.

        ``pending_behaviors`` is the behavior set the subject object will
        have once the surrounding write commits (the subject may not be in
        the store yet, or may be changing its bindings in the same write).
        """
        violations = []
        for t in triples:
            if t.subject != pid:
                violations.append(
                    f"triple subject {t.subject} differs from asserting object {pid}")
                continue
            subject_b = pending_behaviors
            object_b = pending_behaviors if t.object == pid else self._type_oracle(t.object)
            for problem in ontology.check_triple(t.predicate, subject_b, object_b):
                violations.append(f"({t.subject}, {t.predicate}, {t.object}): {problem}")
        return violations

    # -- mutation

    def merge_object_triples(self, pid: str, fragment: bytes, *, strict: bool = True,
                             pending_behaviors: "frozenset[str] | None" = None) -> int:
        """Replace pid's assertions with the parsed fragment; returns the
        inserted count. Strict mode rejects ontology violations listing all
        of them; lenient mode logs and accepts."""
        triples = parse_rels(pid, fragment)
        violations = self.validate_fragment(
            pid, triples,
            pending_behaviors if pending_behaviors is not None else self._type_oracle(pid),
        )
        if violations:
            if strict:
                raise ValidationError(
                    f"{pid}: relationship fragment rejected", violations)
            for v in violations:
                log.warning("accepting despite ontology violation: %s", v)
        self.replace_triples(pid, triples)
        return len(triples)

    def replace_triples(self, pid: str, triples: list[Triple]) -> None:
        with self._mutex:
            self.retract(pid)
            if triples:
                self._by_provenance[pid] = list(triples)
                for t in triples:
                    self._insert(t)

    def retract(self, pid: str) -> None:
        """Drop every triple asserted by pid."""
        with self._mutex:
            for t in self._by_provenance.pop(pid, ()):
                self._remove(t)

    def rebuild(self, fragments: Iterable[tuple[str, bytes | None]]) -> None:
        """Drop and reconstruct the whole index from stored RELS fragments.

        Aborts (leaving the current graph untouched) if any fragment fails
        to parse, naming the offending object.
        """
        rebuilt = TripleStore(self._type_oracle)
        for pid, fragment in fragments:
            if fragment is None:
                continue
            try:
                triples = parse_rels(pid, fragment)
            except ValidationError as exc:
                raise ValidationError(f"rebuild aborted at {pid}: {exc}")
            rebuilt.replace_triples(pid, triples)
        with self._mutex:
            state = dict(rebuilt.__dict__)
            state["_mutex"] = self._mutex
            self.__dict__.update(state)

    def _insert(self, t: Triple) -> None:
        self._all.add(t)
        self._by_s.setdefault(t.subject, set()).add(t)
        self._by_o.setdefault(t.object, set()).add(t)
        self._by_p.setdefault(t.predicate, set()).add(t)
        self._by_sp.setdefault((t.subject, t.predicate), set()).add(t)
        self._by_po.setdefault((t.predicate, t.object), set()).add(t)

    def _remove(self, t: Triple) -> None:
        for index, key in (
            (self._by_s, t.subject),
            (self._by_o, t.object),
            (self._by_p, t.predicate),
            (self._by_sp, (t.subject, t.predicate)),
            (self._by_po, (t.predicate, t.object)),
        ):
            bucket = index.get(key)
            if bucket is not None:
                bucket.discard(t)
                if not bucket:
                    del index[key]
        self._all.discard(t)

    # -- reads

    def dump(self) -> list[Triple]:
        """Every triple, totally ordered by (subject, predicate, object)."""
        with self._mutex:
            snapshot = list(self._all)
        return sorted(snapshot, key=Triple.sort_key)

    def triples_asserted_by(self, pid: str) -> list[Triple]:
        with self._mutex:
            return list(self._by_provenance.get(pid, ()))

    def lookup(self, s: str | None, p: Predicate | None, o: str | None) -> set[Triple]:
        """Triples matching a single pattern with None as wildcard."""
        with self._mutex:
            if s is not None and p is not None:
                candidates = set(self._by_sp.get((s, p), ()))
            elif p is not None and o is not None:
                candidates = set(self._by_po.get((p, o), ()))
            elif s is not None:
                candidates = set(self._by_s.get(s, ()))
            elif o is not None:
                candidates = set(self._by_o.get(o, ()))
            elif p is not None:
                candidates = set(self._by_p.get(p, ()))
            else:
                candidates = set(self._all)
        return {
            t for t in candidates
            if (s is None or t.subject == s)
            and (p is None or t.predicate == p)
            and (o is None or t.object == o)
        }

    def subjects_of(self, predicate_name: str, obj: str) -> list[str]:
        """Sorted subjects s with (s, base:predicate, obj); the inverse-
        relation query behind listMembers-style operations."""
        pred = ontology.base_predicate(predicate_name)
        with self._mutex:
            found = list(self._by_po.get((pred, obj), ()))
        return sorted({t.subject for t in found}, key=pid_sort_key)

    def objects_of(self, subj: str, predicate_name: str) -> list[str]:
        pred = ontology.base_predicate(predicate_name)
        with self._mutex:
            found = list(self._by_sp.get((subj, pred), ()))
        return sorted({t.object for t in found}, key=pid_sort_key)

    def query(self, pattern: QueryPattern) -> list[tuple[str, ...]]:
        """All satisfying assignments for the selected variables,
        deterministically ordered. Conjunctive semantics, no inference."""
        pattern.validate()
        with self._mutex:
            return self._evaluate(pattern)

    def _evaluate(self, pattern: QueryPattern) -> list[tuple[str, ...]]:
        bindings: list[dict[str, object]] = [{}]
        for clause in pattern.clauses:
            extended: list[dict[str, object]] = []
            for binding in bindings:
                s, p, o = (_resolve(term, binding) for term in clause)
                matches = self.lookup(
                    s if isinstance(s, str) else None,
                    p if isinstance(p, Predicate) else None,
                    o if isinstance(o, str) else None,
                )
                for t in matches:
                    new = _extend(binding, clause, t)
                    if new is not None:
                        extended.append(new)
            bindings = extended
            if not bindings:
                break
        rows = {
            tuple(_render(b[name]) for name in pattern.select)
            for b in bindings
        }
        return sorted(rows, key=lambda row: tuple(_row_key(v) for v in row))


def _resolve(term, binding):
    if isinstance(term, Var):
        return binding.get(term.name)
    return term


def _extend(binding: dict, clause, triple: Triple) -> dict | None:
    new = dict(binding)
    for term, value in zip(clause, (triple.subject, triple.predicate, triple.object)):
        if isinstance(term, Var):
            bound = new.get(term.name)
            if bound is not None and bound != value:
                return None
            new[term.name] = value
        elif term != value:
            return None
    return new


def _render(value) -> str:
    if isinstance(value, Predicate):
        return value.uri
    return value


def _row_key(value: str):
    if is_pid(value):
        return (0, pid_sort_key(value), "")
    return (1, 0, value)


# --------------------------------------------------------------------------
# Textual query form
#
#   select ?v where (?v <rel:memberOf> <info:nsdl/nsdl:2>) (...)


def parse_query(text: str) -> QueryPattern:
    tokens = _tokenize(text)
    pos = 0

    def expect(word: str):
        nonlocal pos
        if pos >= len(tokens) or tokens[pos].lower() != word:
            raise QueryParseError(f"expected {word!r} at token {pos + 1}")
        pos += 1

    expect("select")
    select: list[str] = []
    while pos < len(tokens) and tokens[pos].startswith("?"):
        name = tokens[pos][1:]
        if not name:
            raise QueryParseError("empty variable name")
        select.append(name)
        pos += 1
    if not select:
        raise QueryParseError("no variables selected")
    expect("where")
    clauses = []
    while pos < len(tokens):
        if tokens[pos] != "(":
            raise QueryParseError(f"expected clause at token {pos + 1}")
        pos += 1
        terms = []
        while pos < len(tokens) and tokens[pos] != ")":
            terms.append(tokens[pos])
            pos += 1
        if pos >= len(tokens):
            raise QueryParseError("unterminated clause")
        pos += 1
        if len(terms) != 3:
            raise QueryParseError(f"clause needs 3 terms, got {len(terms)}")
        clauses.append((
            _parse_node(terms[0]),
            _parse_predicate_term(terms[1]),
            _parse_node(terms[2]),
        ))
    if not clauses:
        raise QueryParseError("no clauses given")
    pattern = QueryPattern(tuple(clauses), tuple(select))
    pattern.validate()
    return pattern


def _tokenize(text: str) -> list[str]:
    return text.replace("(", " ( ").replace(")", " ) ").split()


def _parse_node(token: str):
    if token.startswith("?"):
        return Var(token[1:])
    if token.startswith("<") and token.endswith(">"):
        uri = token[1:-1]
        if uri.startswith(INFO_URI_PREFIX):
            pid = uri[len(INFO_URI_PREFIX):]
            if is_pid(pid):
                return pid
        raise QueryParseError(f"subject/object must be an info:nsdl URI: {token}")
    raise QueryParseError(f"malformed term {token!r}")


def _parse_predicate_term(token: str):
    if token.startswith("?"):
        return Var(token[1:])
    if token.startswith("<") and token.endswith(">"):
        uri = token[1:-1]
        if uri.startswith("rel:"):
            name = uri[len("rel:"):]
            return Predicate(BASE_NAMESPACE, name)
        return predicate_from_uri(uri)
    raise QueryParseError(f"malformed predicate {token!r}")
