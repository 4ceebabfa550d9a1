import copy
import json
from pathlib import Path

import pytest

from cxrtriage.errors import OntologyError
from cxrtriage.ontology import (
    ANATOMICAL_CATEGORIES,
    FindingConcept,
    Ontology,
    RemapRule,
    default_ontology_path,
    load_default_ontology,
    load_ontology,
    parse_ontology,
)

MINIMAL = {
    "concepts": [
        {
            "id": "pneumothorax",
            "display_name": "pneumothorax",
            "category": "pleura",
            "synonyms": ["pneumothorax"],
        },
    ],
}


def variant(**overrides):
    data = copy.deepcopy(MINIMAL)
    data.update(overrides)
    return data


# Display names grouped by category; the triage decision hinges on this
# exact finding inventory, so the shipped file is pinned label by label.
EXPECTED_LABELS = {
    "lungs": {
        "linear/patchy atelectasis",
        "lobar/segmental collapse",
        "consolidation",
        "pulmonary edema/hazy opacity",
        "not otherwise specified opacity",
        "mass/nodule",
        "azygous fissure",
        "cyst/bullae",
        "hyperaeration",
        "increased reticular markings/ild pattern",
        "lobectomy",
        "vascular redistribution",
    },
    "pleura": {
        "pneumothorax",
        "pleural effusion or thickening",
        "hydropneumothorax",
    },
    "mediastinum": {
        "enlarged cardiac silhouette",
        "superior mediastinal mass/enlargement",
        "pneumomediastinum",
        "mediastinal displacement",
        "enlarged hilum",
        "lymph node calcification",
        "vascular calcification",
        "not otherwise specified calcification",
        "tortuous aorta",
    },
    "bones": {
        "fracture",
        "spinal degenerative changes",
        "shoulder osteoarthritis",
        "bone lesion",
        "dislocation",
        "scoliosis",
        "diffuse osseous irregularity",
        "elevated humeral head",
        "osteotomy changes",
    },
    "other": {
        "hernia",
        "elevated hemidiaphragm",
        "subcutaneous air",
        "sub-diaphragmatic air",
        "bullet/foreign bodies",
        "contrast in the gi or gu tract",
        "dilated bowel",
        "other soft tissue abnormalities",
        "post-surgical changes",
    },
    "exam_quality": {"non-diagnostic cxr"},
}


class TestParseMinimal:
    def test_one_concept_no_rules(self):
        ont = parse_ontology(MINIMAL)
        assert len(ont.concepts) == 1
        assert ont.concepts[0].id == "pneumothorax"
        assert ont.remap_rules == ()

    def test_load_from_file(self, tmp_path):
        p = tmp_path / "ont.json"
        p.write_text(json.dumps(MINIMAL), encoding="utf-8")
        assert len(load_ontology(p).concepts) == 1

    def test_invalid_json(self, tmp_path):
        p = tmp_path / "ont.json"
        p.write_text("{not json", encoding="utf-8")
        with pytest.raises(OntologyError, match="invalid JSON"):
            load_ontology(p)

    def test_missing_file_is_io_error(self, tmp_path):
        with pytest.raises(OSError):
            load_ontology(tmp_path / "absent.json")


class TestSchemaErrors:
    def test_unknown_top_level_key(self):
        with pytest.raises(OntologyError, match="unknown top-level key 'extras'"):
            parse_ontology(variant(extras=[]))

    def test_missing_concepts(self):
        with pytest.raises(OntologyError, match="concepts"):
            parse_ontology({})

    def test_unknown_concept_field(self):
        data = variant()
        data["concepts"][0]["weight"] = 3
        with pytest.raises(OntologyError, match="'weight'"):
            parse_ontology(data)

    def test_synonyms_must_be_strings(self):
        data = variant()
        data["concepts"][0]["synonyms"] = ["ok", 5]
        with pytest.raises(OntologyError, match="synonyms"):
            parse_ontology(data)

    def test_bad_section_headers_shape(self):
        with pytest.raises(OntologyError, match="section_headers"):
            parse_ontology(variant(section_headers={"preamble": []}))

    def test_rule_window_must_be_integer(self):
        data = variant(remap_rules=[{
            "surface_term": "pneumothorax",
            "context_category": "pleura",
            "target_concept": "pneumothorax",
            "context_window_tokens": "8",
        }])
        with pytest.raises(OntologyError, match="context_window_tokens"):
            parse_ontology(data)


class TestValidation:
    def test_duplicate_concept_id(self):
        data = variant()
        data["concepts"].append(dict(data["concepts"][0]))
        with pytest.raises(OntologyError, match="duplicate concept id"):
            parse_ontology(data)

    def test_unknown_category(self):
        data = variant()
        data["concepts"][0]["category"] = "thorax"
        with pytest.raises(OntologyError, match="unknown category 'thorax'"):
            parse_ontology(data)

    def test_empty_synonyms(self):
        data = variant()
        data["concepts"][0]["synonyms"] = []
        with pytest.raises(OntologyError, match="non-empty"):
            parse_ontology(data)

    def test_uppercase_synonym(self):
        data = variant()
        data["concepts"][0]["synonyms"] = ["Pneumothorax"]
        with pytest.raises(OntologyError, match="lowercase"):
            parse_ontology(data)

    def test_device_kind_required_on_devices(self):
        data = variant()
        data["concepts"][0]["category"] = "device"
        with pytest.raises(OntologyError, match="device_kind"):
            parse_ontology(data)

    def test_device_kind_forbidden_elsewhere(self):
        data = variant()
        data["concepts"][0]["device_kind"] = "tube"
        with pytest.raises(OntologyError, match="device_kind"):
            parse_ontology(data)

    def test_shared_synonym_needs_remap_rule(self):
        data = variant()
        data["concepts"].append({
            "id": "hydropneumothorax",
            "display_name": "hydropneumothorax",
            "category": "pleura",
            "synonyms": ["pneumothorax"],
        })
        with pytest.raises(OntologyError, match="no remap rule"):
            parse_ontology(data)
        # A rule for that surface makes the same data valid.
        data["remap_rules"] = [{
            "surface_term": "pneumothorax",
            "context_category": "pleura",
            "target_concept": "hydropneumothorax",
        }]
        assert len(parse_ontology(data).concepts) == 2

    def test_rule_target_must_exist(self):
        data = variant(remap_rules=[{
            "surface_term": "pneumothorax",
            "context_category": "pleura",
            "target_concept": "ghost",
        }])
        with pytest.raises(OntologyError, match="unknown concept 'ghost'"):
            parse_ontology(data)

    def test_rule_window_at_least_one(self):
        data = variant(remap_rules=[{
            "surface_term": "pneumothorax",
            "context_category": "pleura",
            "target_concept": "pneumothorax",
            "context_window_tokens": 0,
        }])
        with pytest.raises(OntologyError, match=">= 1"):
            parse_ontology(data)

    def test_negation_hypothetical_must_not_share_phrases(self):
        data = variant(negation_triggers=["no"], hypothetical_triggers=["no"])
        with pytest.raises(OntologyError, match="overlap"):
            parse_ontology(data)

    def test_terminator_must_not_be_a_trigger(self):
        data = variant(negation_triggers=["but"], scope_terminators=["but"])
        with pytest.raises(OntologyError, match="overlap"):
            parse_ontology(data)

    def test_same_class_pre_and_post_may_share(self):
        data = variant(negation_triggers=["resolved"],
                       negation_post_triggers=["resolved"])
        assert parse_ontology(data).negation_triggers == ("resolved",)

    def test_unknown_vocab_category(self):
        data = variant(category_vocab={"thorax": ["rib"]})
        with pytest.raises(OntologyError, match="category_vocab"):
            parse_ontology(data)


class TestOntologyApi:
    def test_concept_lookup(self):
        ont = parse_ontology(MINIMAL)
        assert ont.concept("pneumothorax").category == "pleura"
        with pytest.raises(KeyError):
            ont.concept("ghost")

    def test_vocabulary_falls_back_to_synonyms(self):
        ont = Ontology(concepts=(
            FindingConcept("fracture", "fracture", "bones",
                           ("fracture", "rib fracture")),
        ))
        assert ont.vocabulary_for("bones") == ("fracture", "rib")

    def test_configured_vocabulary_wins(self):
        ont = Ontology(
            concepts=(FindingConcept("fracture", "fracture", "bones", ("fracture",)),),
            category_vocab={"bones": ("rib", "spine")},
        )
        assert ont.vocabulary_for("bones") == ("rib", "spine")

    def test_direct_construction_validates(self):
        with pytest.raises(OntologyError, match="at least one"):
            Ontology(concepts=())
        with pytest.raises(OntologyError, match="lowercase"):
            Ontology(concepts=(
                FindingConcept("x", "x", "lungs", ("Loud",)),
            ))

    def test_remap_rule_default_window(self):
        rule = RemapRule("collapse", "bones", "fracture")
        assert rule.context_window_tokens == 8


class TestDefaultOntology:
    def test_ships_inside_package(self):
        assert default_ontology_path().is_file()

    def test_covers_every_expected_label(self):
        ont = load_default_ontology()
        got = {}
        for c in ont.concepts:
            if c.category != "device":
                got.setdefault(c.category, set()).add(c.display_name)
        assert got == EXPECTED_LABELS

    def test_size_and_categories(self):
        ont = load_default_ontology()
        categories = {c.category for c in ont.concepts}
        assert len(ont.concepts) >= 40
        assert ANATOMICAL_CATEGORIES <= categories
        assert "exam_quality" in categories and "device" in categories

    def test_devices_have_kinds(self):
        ont = load_default_ontology()
        devices = [c for c in ont.concepts if c.category == "device"]
        assert devices
        assert all(c.device_kind for c in devices)

    def test_default_triggers_present(self):
        ont = load_default_ontology()
        assert set(ont.negation_triggers) == {
            "no", "without", "free of", "negative for", "resolved",
            "absence of", "none"}
        assert set(ont.hypothetical_triggers) == {
            "rule out", "concern for", "evaluate for", "possible",
            "questionable", "if"}
        assert set(ont.scope_terminators) == {"but", "however", "although", ";"}

    def test_repo_copy_matches_packaged_copy(self):
        repo = Path(__file__).resolve().parent.parent / "data" / "default_ontology.json"
        assert repo.read_bytes() == default_ontology_path().read_bytes()
