"""Finding ontology: concepts, triggers, and remap rules for report labeling.

An ontology is loaded from a single JSON file (see docs/ontology.md for the
schema) and is immutable afterwards, so one instance can be shared freely
across workers. The shipped default lives in the package data directory and
covers the full finding taxonomy plus common tubes, lines, and devices.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Mapping

from .errors import OntologyError

ANATOMICAL_CATEGORIES = frozenset({"lungs", "pleura", "mediastinum", "bones", "other"})
CATEGORIES = ANATOMICAL_CATEGORIES | {"exam_quality", "device"}

_TOP_LEVEL_KEYS = {
    "concepts",
    "remap_rules",
    "negation_triggers",
    "negation_post_triggers",
    "hypothetical_triggers",
    "hypothetical_post_triggers",
    "scope_terminators",
    "section_headers",
    "malposition_markers",
    "category_vocab",
}


@dataclass(frozen=True)
class FindingConcept:
    """One canonical finding (or device) and the surface phrases that name it."""

    id: str
    display_name: str
    category: str
    synonyms: tuple[str, ...]
    device_kind: str | None = None


@dataclass(frozen=True)
class RemapRule:
    """Reassigns a matched surface term to another concept in context.

    The rule fires when a token from the context category's vocabulary occurs
    within ``context_window_tokens`` word tokens of the matched span.
    """

    surface_term: str
    context_category: str
    target_concept: str
    context_window_tokens: int = 8


@dataclass(frozen=True)
class Ontology:
    """Validated, immutable bundle of concepts, triggers, and rules."""

    concepts: tuple[FindingConcept, ...]
    remap_rules: tuple[RemapRule, ...] = ()
    negation_triggers: tuple[str, ...] = ()
    negation_post_triggers: tuple[str, ...] = ()
    hypothetical_triggers: tuple[str, ...] = ()
    hypothetical_post_triggers: tuple[str, ...] = ()
    scope_terminators: tuple[str, ...] = ()
    history_headers: tuple[str, ...] = ()
    body_headers: tuple[str, ...] = ()
    malposition_markers: tuple[str, ...] = ()
    category_vocab: Mapping[str, tuple[str, ...]] = field(default_factory=dict)

    def __post_init__(self) -> None:
        _validate(self)

    def concept(self, concept_id: str) -> FindingConcept:
        return self._by_id[concept_id]

    @property
    def _by_id(self) -> dict[str, FindingConcept]:
        # dataclass is frozen; cache on first use via object.__setattr__
        cached = self.__dict__.get("_by_id_cache")
        if cached is None:
            cached = {c.id: c for c in self.concepts}
            object.__setattr__(self, "_by_id_cache", cached)
        return cached

    def vocabulary_for(self, category: str) -> tuple[str, ...]:
        """Context tokens for a category: configured list, else tokens drawn
        from the category's own synonyms and display names."""
        configured = self.category_vocab.get(category)
        if configured:
            return configured
        tokens: set[str] = set()
        for c in self.concepts:
            if c.category != category:
                continue
            for phrase in (*c.synonyms, c.display_name.lower()):
                tokens.update(t for t in phrase.replace("/", " ").split() if t.isalpha())
        return tuple(sorted(tokens))


def _require(condition: bool, message: str) -> None:
    if not condition:
        raise OntologyError(message)


def _validate(ont: Ontology) -> None:
    _require(len(ont.concepts) > 0, "concepts: at least one concept is required")

    seen_ids: set[str] = set()
    synonym_owner: dict[str, str] = {}
    duplicated_synonyms: set[str] = set()
    for c in ont.concepts:
        _require(bool(c.id), "concepts: concept id must be non-empty")
        _require(c.id not in seen_ids, f"concepts: duplicate concept id {c.id!r}")
        seen_ids.add(c.id)
        _require(c.category in CATEGORIES,
                 f"concepts[{c.id}].category: unknown category {c.category!r}")
        _require(len(c.synonyms) > 0, f"concepts[{c.id}].synonyms: must be non-empty")
        if c.category == "device":
            _require(c.device_kind is not None,
                     f"concepts[{c.id}].device_kind: required for device concepts")
        else:
            _require(c.device_kind is None,
                     f"concepts[{c.id}].device_kind: only device concepts may set it")
        for s in c.synonyms:
            _require(bool(s.strip()), f"concepts[{c.id}].synonyms: blank synonym")
            _require(s == s.lower(),
                     f"concepts[{c.id}].synonyms: {s!r} must be lowercase")
            owner = synonym_owner.setdefault(s, c.id)
            if owner != c.id:
                duplicated_synonyms.add(s)

    rule_surfaces = {r.surface_term for r in ont.remap_rules}
    for s in sorted(duplicated_synonyms):
        _require(s in rule_surfaces,
                 f"concepts: synonym {s!r} maps to two concepts with no remap rule")

    for i, r in enumerate(ont.remap_rules):
        _require(r.target_concept in seen_ids,
                 f"remap_rules[{i}].target_concept: unknown concept {r.target_concept!r}")
        _require(r.context_category in CATEGORIES,
                 f"remap_rules[{i}].context_category: unknown category {r.context_category!r}")
        _require(r.context_window_tokens >= 1,
                 f"remap_rules[{i}].context_window_tokens: must be >= 1")

    # Trigger classes must not claim the same phrase; forward and post lists
    # of one class may overlap ("resolved" acts in both positions).
    negation = set(ont.negation_triggers) | set(ont.negation_post_triggers)
    hypothetical = set(ont.hypothetical_triggers) | set(ont.hypothetical_post_triggers)
    terminators = set(ont.scope_terminators)
    clash = negation & hypothetical
    _require(not clash,
             f"negation/hypothetical triggers overlap: {sorted(clash)!r}")
    clash = terminators & (negation | hypothetical)
    _require(not clash,
             f"scope_terminators overlap other trigger lists: {sorted(clash)!r}")

    for category in ont.category_vocab:
        _require(category in CATEGORIES,
                 f"category_vocab: unknown category {category!r}")


def _string_list(raw: object, where: str) -> tuple[str, ...]:
    if not isinstance(raw, list) or not all(isinstance(x, str) for x in raw):
        raise OntologyError(f"{where}: expected a list of strings")
    return tuple(raw)


def _parse_concept(raw: object, index: int) -> FindingConcept:
    where = f"concepts[{index}]"
    if not isinstance(raw, dict):
        raise OntologyError(f"{where}: expected an object")
    unknown = set(raw) - {"id", "display_name", "category", "synonyms", "device_kind"}
    if unknown:
        raise OntologyError(f"{where}: unknown field {sorted(unknown)[0]!r}")
    for key in ("id", "display_name", "category"):
        if not isinstance(raw.get(key), str):
            raise OntologyError(f"{where}.{key}: expected a string")
    device_kind = raw.get("device_kind")
    if device_kind is not None and not isinstance(device_kind, str):
        raise OntologyError(f"{where}.device_kind: expected a string")
    return FindingConcept(
        id=raw["id"],
        display_name=raw["display_name"],
        category=raw["category"],
        synonyms=_string_list(raw.get("synonyms"), f"{where}.synonyms"),
        device_kind=device_kind,
    )


def _parse_rule(raw: object, index: int) -> RemapRule:
    where = f"remap_rules[{index}]"
    if not isinstance(raw, dict):
        raise OntologyError(f"{where}: expected an object")
    unknown = set(raw) - {"surface_term", "context_category", "target_concept",
                          "context_window_tokens"}
    if unknown:
        raise OntologyError(f"{where}: unknown field {sorted(unknown)[0]!r}")
    for key in ("surface_term", "context_category", "target_concept"):
        if not isinstance(raw.get(key), str):
            raise OntologyError(f"{where}.{key}: expected a string")
    window = raw.get("context_window_tokens", 8)
    if not isinstance(window, int) or isinstance(window, bool):
        raise OntologyError(f"{where}.context_window_tokens: expected an integer")
    return RemapRule(
        surface_term=raw["surface_term"],
        context_category=raw["context_category"],
        target_concept=raw["target_concept"],
        context_window_tokens=window,
    )


def parse_ontology(data: object) -> Ontology:
    """Build a validated Ontology from already-decoded JSON data."""
    if not isinstance(data, dict):
        raise OntologyError("ontology: top level must be an object")
    unknown = set(data) - _TOP_LEVEL_KEYS
    if unknown:
        raise OntologyError(f"ontology: unknown top-level key {sorted(unknown)[0]!r}")
    if "concepts" not in data:
        raise OntologyError("concepts: missing required key")
    raw_concepts = data["concepts"]
    if not isinstance(raw_concepts, list):
        raise OntologyError("concepts: expected a list")
    concepts = tuple(_parse_concept(c, i) for i, c in enumerate(raw_concepts))

    raw_rules = data.get("remap_rules", [])
    if not isinstance(raw_rules, list):
        raise OntologyError("remap_rules: expected a list")
    rules = tuple(_parse_rule(r, i) for i, r in enumerate(raw_rules))

    headers = data.get("section_headers", {})
    if not isinstance(headers, dict) or set(headers) - {"history_like", "body_like"}:
        raise OntologyError("section_headers: expected {'history_like', 'body_like'}")

    vocab_raw = data.get("category_vocab", {})
    if not isinstance(vocab_raw, dict):
        raise OntologyError("category_vocab: expected an object")
    vocab = {k: _string_list(v, f"category_vocab[{k}]") for k, v in vocab_raw.items()}

    return Ontology(
        concepts=concepts,
        remap_rules=rules,
        negation_triggers=_string_list(data.get("negation_triggers", []),
                                       "negation_triggers"),
        negation_post_triggers=_string_list(data.get("negation_post_triggers", []),
                                            "negation_post_triggers"),
        hypothetical_triggers=_string_list(data.get("hypothetical_triggers", []),
                                           "hypothetical_triggers"),
        hypothetical_post_triggers=_string_list(
            data.get("hypothetical_post_triggers", []), "hypothetical_post_triggers"),
        scope_terminators=_string_list(data.get("scope_terminators", []),
                                       "scope_terminators"),
        history_headers=_string_list(headers.get("history_like", []),
                                     "section_headers.history_like"),
        body_headers=_string_list(headers.get("body_like", []),
                                  "section_headers.body_like"),
        malposition_markers=_string_list(data.get("malposition_markers", []),
                                         "malposition_markers"),
        category_vocab=vocab,
    )


def load_ontology(path: str | Path) -> Ontology:
    """Load and validate an ontology JSON file.

    Raises OntologyError naming the offending field on any schema or
    invariant violation; I/O errors propagate as OSError.
    """
    with open(path, "r", encoding="utf-8") as fh:
        try:
            data = json.load(fh)
        except json.JSONDecodeError as exc:
            raise OntologyError(f"ontology: invalid JSON ({exc})") from exc
    return parse_ontology(data)


def default_ontology_path() -> Path:
    """Filesystem path of the ontology shipped inside the package."""
    return Path(resources.files("cxrtriage").joinpath("data/default_ontology.json"))


def load_default_ontology() -> Ontology:
    return load_ontology(default_ontology_path())
