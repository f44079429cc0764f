"""The relationship ontology: base predicates and their typing rules.

Eight base predicates carry fixed (domain, range) constraints checked at
write time against the behavior sets of the subject and object. Predicates
qualified by a foreign namespace are accepted unvalidated, so other
vocabularies can annotate the graph freely.
"""

from __future__ import annotations

from dataclasses import dataclass

BASE_NAMESPACE = "http://ns.nsdl.org/ontologies/relationships#"

# Abstract types expand to the concrete behavior names that realize them.
# An object "is a" Resource if it binds Agent or Content; it "is a" Role
# if it binds Role itself or one of the two role subtypes.
TYPE_EXPANSION: dict[str, frozenset[str]] = {
    "Metadata": frozenset({"Metadata"}),
    "Agent": frozenset({"Agent"}),
    "Content": frozenset({"Content"}),
    "Resource": frozenset({"Agent", "Content"}),
    "Role": frozenset({"Role", "Aggregator", "MetadataProvider"}),
    "Aggregator": frozenset({"Aggregator"}),
    "MetadataProvider": frozenset({"MetadataProvider"}),
}

# predicate name -> (domain type, range type)
DOMAIN_RANGE: dict[str, tuple[str, str]] = {
    "annotates": ("Content", "Resource"),
    "assertedBy": ("Role", "Agent"),
    "augments": ("Metadata", "Metadata"),
    "hasRole": ("Agent", "Role"),
    "metadataFor": ("Metadata", "Resource"),
    "memberOf": ("Resource", "Aggregator"),
    "providedBy": ("Metadata", "MetadataProvider"),
    "representedBy": ("Aggregator", "Content"),
}

BASE_PREDICATES = frozenset(DOMAIN_RANGE)

# Bound behaviors that imply a supertype's operation set.
IMPLIED_BEHAVIORS: dict[str, frozenset[str]] = {
    "Agent": frozenset({"Resource"}),
    "Content": frozenset({"Resource"}),
    "Aggregator": frozenset({"Role"}),
    "MetadataProvider": frozenset({"Role"}),
}


def expand_behaviors(behaviors: frozenset[str]) -> frozenset[str]:
    """Behavior set plus the abstract operation sets it inherits."""
    expanded = set(behaviors)
    for name in behaviors:
        expanded |= IMPLIED_BEHAVIORS.get(name, frozenset())
    return frozenset(expanded)


@dataclass(frozen=True, order=True)
class Predicate:
    """A relationship term: a base-ontology name or a namespaced extension."""

    namespace: str
    name: str

    @property
    def is_base(self) -> bool:
        return self.namespace == BASE_NAMESPACE

    @property
    def uri(self) -> str:
        return self.namespace + self.name

    def __str__(self) -> str:
        if self.is_base:
            return self.name
        return self.uri


def base_predicate(name: str) -> Predicate:
    if name not in BASE_PREDICATES:
        raise ValueError(f"{name!r} is not a base relationship term")
    return Predicate(BASE_NAMESPACE, name)


def predicate_from_uri(uri: str) -> Predicate:
    """Split a predicate URI on the last '#' or '/' separator."""
    for sep in ("#", "/"):
        if sep in uri:
            ns, _, name = uri.rpartition(sep)
            return Predicate(ns + sep, name)
    return Predicate("", uri)


def satisfies_type(behaviors: frozenset[str] | None, type_name: str) -> bool:
    """True when an object with the given behavior set counts as type_name.

    ``behaviors`` is None for objects that do not exist (or are deleted);
    those satisfy no type.
    """
    if behaviors is None:
        return False
    return bool(behaviors & TYPE_EXPANSION[type_name])


def check_triple(
    predicate: Predicate,
    subject_behaviors: frozenset[str] | None,
    object_behaviors: frozenset[str] | None,
) -> list[str]:
    """Domain/range violations for one triple; empty when it conforms.

    Extension predicates are never checked.
    """
    if not predicate.is_base:
        return []
    domain, range_ = DOMAIN_RANGE[predicate.name]
    problems = []
    if not satisfies_type(subject_behaviors, domain):
        problems.append(f"subject of {predicate.name} must be typed {domain}")
    if not satisfies_type(object_behaviors, range_):
        problems.append(f"object of {predicate.name} must be typed {range_}")
    return problems
