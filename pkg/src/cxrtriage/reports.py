"""Rule-based labeling of free-text radiograph reports.

The pipeline turns one report plus an :class:`~cxrtriage.ontology.Ontology`
into a study-level normal/abnormal verdict:

1. ``tokenize_sentences`` splits text on sentence-final punctuation with an
   abbreviation exception list.
2. ``segment_sections`` groups sentences under the nearest preceding section
   header and drops history/indication sections from the body.
3. ``extract_mentions`` runs longest-match synonym matching over each body
   sentence.
4. ``apply_remap_rules`` reassigns context-dependent surface terms (the
   classic one: "collapse" near bones vocabulary means a fracture).
5. ``resolve_polarity`` marks each mention positive, negated, or hypothetical
   from trigger phrases scoped within the sentence.
6. ``label_study`` takes, per concept, the polarity of its last mention and
   derives the verdict: normal means no positive anatomical finding, a
   diagnostic-quality exam, and no malpositioned device.

Everything here is a pure function of (text, ontology); spans index into the
original report text.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Iterable, Mapping

from .ontology import ANATOMICAL_CATEGORIES, Ontology

POSITIVE = "positive"
NEGATED = "negated"
HYPOTHETICAL = "hypothetical"

NORMAL = "normal"
ABNORMAL = "abnormal"

LABEL_CSV_HEADER = "study_id,verdict,nondiagnostic,device_misplaced,positive_findings"

# Sentence-final periods are suppressed after these tokens.
ABBREVIATIONS = frozenset({
    "dr.", "mr.", "mrs.", "st.", "a.p.", "p.a.", "e.g.", "i.e.", "vs.", "etc.",
})

_WORD = re.compile(r"\w+")


@dataclass(frozen=True)
class Sentence:
    """One sentence and its character range in the original report text."""

    text: str
    start: int
    end: int


@dataclass(frozen=True)
class ReportDoc:
    """A report segmented into sections; body_sentences excludes history."""

    study_id: str
    raw_text: str
    sections: tuple[tuple[str | None, tuple[Sentence, ...]], ...]
    body_sentences: tuple[Sentence, ...]


@dataclass(frozen=True)
class FindingMention:
    """A matched synonym occurrence inside one body sentence.

    ``surface`` is the canonical (lowercase) synonym that matched; ``start``
    and ``end`` index into the original report text.
    """

    concept_id: str
    sentence_index: int
    start: int
    end: int
    surface: str
    polarity: str = POSITIVE


@dataclass(frozen=True)
class StudyLabel:
    """Study-level verdict with the evidence that produced it."""

    study_id: str
    verdict: str
    positive_findings: tuple[str, ...]
    evidence: Mapping[str, tuple[str, str]]
    nondiagnostic: bool
    device_misplaced: bool


def tokenize_sentences(text: str) -> list[Sentence]:
    """Split text into sentences on terminal punctuation.

    A period ends a sentence only when followed by whitespace or end of text
    and the token it closes is not a known abbreviation; decimals such as
    "3.4" never split because the period is not followed by whitespace.
    """
    sentences: list[Sentence] = []

    def flush(lo: int, hi: int) -> None:
        piece = text[lo:hi]
        stripped = piece.strip()
        if stripped:
            at = lo + (len(piece) - len(piece.lstrip()))
            sentences.append(Sentence(stripped, at, at + len(stripped)))

    start = 0
    for i, ch in enumerate(text):
        if ch not in ".!?":
            continue
        if i + 1 < len(text) and not text[i + 1].isspace():
            continue
        if ch == ".":
            j = i
            while j > start and not text[j - 1].isspace():
                j -= 1
            if text[j:i + 1].lower() in ABBREVIATIONS:
                continue
        flush(start, i + 1)
        start = i + 1
    flush(start, len(text))
    return sentences


def _shifted(sentences: Iterable[Sentence], offset: int) -> tuple[Sentence, ...]:
    return tuple(Sentence(s.text, s.start + offset, s.end + offset) for s in sentences)


def segment_sections(text: str, ontology: Ontology, study_id: str = "") -> ReportDoc:
    """Group sentences under section headers and drop history-like sections.

    Headers are matched case-insensitively as ``NAME:`` anywhere in the text;
    text before the first header (or all of it, with no headers) is body.
    """
    headers = tuple(ontology.history_headers) + tuple(ontology.body_headers)
    boundaries: list[tuple[str | None, int, int]] = []
    if headers:
        alternation = "|".join(
            re.escape(h) for h in sorted(headers, key=len, reverse=True))
        pattern = re.compile(rf"(?<!\w)({alternation})\s*:", re.IGNORECASE)
        prev_header: str | None = None
        prev_end = 0
        for m in pattern.finditer(text):
            boundaries.append((prev_header, prev_end, m.start()))
            prev_header = m.group(1).lower()
            prev_end = m.end()
        boundaries.append((prev_header, prev_end, len(text)))
    else:
        boundaries.append((None, 0, len(text)))

    history = {h.lower() for h in ontology.history_headers}
    sections: list[tuple[str | None, tuple[Sentence, ...]]] = []
    body: list[Sentence] = []
    for header, lo, hi in boundaries:
        sents = _shifted(tokenize_sentences(text[lo:hi]), lo)
        if not sents:
            continue
        sections.append((header, sents))
        if header not in history:
            body.extend(sents)
    return ReportDoc(study_id, text, tuple(sections), tuple(body))


def _phrase_pattern(phrase: str) -> re.Pattern[str]:
    # \w guards only at edges that are word characters, so punctuation
    # phrases like ";" still match adjacent to words.
    body = r"\s+".join(re.escape(word) for word in phrase.split())
    prefix = r"(?<!\w)" if (phrase[:1].isalnum() or phrase[:1] == "_") else ""
    suffix = r"(?!\w)" if (phrase[-1:].isalnum() or phrase[-1:] == "_") else ""
    return re.compile(prefix + body + suffix, re.IGNORECASE)


class _CompiledOntology:
    """Regexes for one ontology, built once and cached on the instance."""

    def __init__(self, ontology: Ontology) -> None:
        self.synonyms = [
            (_phrase_pattern(s), concept.id, s)
            for concept in ontology.concepts
            for s in concept.synonyms
        ]
        self.triggers = {
            kind: [(_phrase_pattern(p), p) for p in phrases]
            for kind, phrases in (
                ("neg_pre", ontology.negation_triggers),
                ("neg_post", ontology.negation_post_triggers),
                ("hyp_pre", ontology.hypothetical_triggers),
                ("hyp_post", ontology.hypothetical_post_triggers),
                ("terminator", ontology.scope_terminators),
            )
        }
        self.markers = [_phrase_pattern(p) for p in ontology.malposition_markers]


def _compiled(ontology: Ontology) -> _CompiledOntology:
    cached = ontology.__dict__.get("_compiled_cache")
    if cached is None:
        cached = _CompiledOntology(ontology)
        object.__setattr__(ontology, "_compiled_cache", cached)
    return cached


def _longest_match_filter(
    candidates: list[tuple[int, int, str, str]],
) -> list[tuple[int, int, str, str]]:
    """Keep a maximal set of non-overlapping spans, longest first."""
    ordered = sorted(candidates, key=lambda c: (c[0] - c[1], c[0], c[2], c[3]))
    taken: list[tuple[int, int, str, str]] = []
    for cand in ordered:
        if all(cand[1] <= t[0] or t[1] <= cand[0] for t in taken):
            taken.append(cand)
    taken.sort(key=lambda c: c[0])
    return taken


def extract_mentions(doc: ReportDoc, ontology: Ontology) -> list[FindingMention]:
    """Longest-match synonym matching over body sentences.

    Overlapping shorter matches are suppressed, so a span never sits strictly
    inside another returned span of the same sentence. All mentions come back
    positive; polarity is assigned by :func:`resolve_polarity`.
    """
    compiled = _compiled(ontology)
    mentions: list[FindingMention] = []
    for index, sentence in enumerate(doc.body_sentences):
        candidates = [
            (m.start(), m.end(), concept_id, synonym)
            for pattern, concept_id, synonym in compiled.synonyms
            for m in pattern.finditer(sentence.text)
        ]
        for start, end, concept_id, synonym in _longest_match_filter(candidates):
            mentions.append(FindingMention(
                concept_id=concept_id,
                sentence_index=index,
                start=sentence.start + start,
                end=sentence.start + end,
                surface=synonym,
            ))
    return mentions


def _trigger_occurrences(
    sentence: Sentence, compiled: _CompiledOntology,
) -> list[tuple[int, int, str]]:
    """All trigger spans in a sentence (absolute offsets), longest match wins
    so "cannot be ruled out" suppresses its inner "ruled out". Suppression is
    by span: a word listed as both a forward and a post-position trigger
    yields one occurrence per role at the same span.
    """
    found = {
        (m.start(), m.end(), kind)
        for kind, patterns in compiled.triggers.items()
        for pattern, _ in patterns
        for m in pattern.finditer(sentence.text)
    }
    spans = [(start, end, "", "") for start, end in {f[:2] for f in found}]
    kept = {c[:2] for c in _longest_match_filter(spans)}
    return sorted(
        (sentence.start + start, sentence.start + end, kind)
        for start, end, kind in found
        if (start, end) in kept
    )


def resolve_polarity(
    doc: ReportDoc, mentions: list[FindingMention], ontology: Ontology,
) -> list[FindingMention]:
    """Assign positive/negated/hypothetical polarity to every mention.

    A trigger before the mention scopes forward to the sentence end, a
    post-position trigger scopes backward, and either scope is cut by an
    intervening terminator. Negation beats hypothetical when both apply.
    Downstream, only the last mention of each concept decides its polarity
    (see :func:`final_polarities`).
    """
    compiled = _compiled(ontology)
    occurrences: dict[int, list[tuple[int, int, str]]] = {}
    resolved: list[FindingMention] = []
    for mention in mentions:
        index = mention.sentence_index
        if index not in occurrences:
            occurrences[index] = _trigger_occurrences(
                doc.body_sentences[index], compiled)
        occs = occurrences[index]
        terminators = [o for o in occs if o[2] == "terminator"]

        def clear(lo: int, hi: int) -> bool:
            return not any(lo <= t[0] and t[1] <= hi for t in terminators)

        def applies(pre_kind: str, post_kind: str) -> bool:
            for start, end, kind in occs:
                if kind == pre_kind and end <= mention.start and clear(end, mention.start):
                    return True
                if kind == post_kind and start >= mention.end and clear(mention.end, start):
                    return True
            return False

        if applies("neg_pre", "neg_post"):
            polarity = NEGATED
        elif applies("hyp_pre", "hyp_post"):
            polarity = HYPOTHETICAL
        else:
            polarity = POSITIVE
        resolved.append(replace(mention, polarity=polarity))
    return resolved


def apply_remap_rules(
    doc: ReportDoc, mentions: list[FindingMention], ontology: Ontology,
) -> list[FindingMention]:
    """Reassign mentions whose surface term has a matching context rule.

    Rules are tried in ontology order; the first whose context category
    vocabulary appears within the rule's token window wins. Mentions with no
    applicable rule pass through unchanged.
    """
    rules_by_surface: dict[str, list] = {}
    for rule in ontology.remap_rules:
        rules_by_surface.setdefault(rule.surface_term, []).append(rule)
    if not rules_by_surface:
        return list(mentions)

    out: list[FindingMention] = []
    for mention in mentions:
        rules = rules_by_surface.get(mention.surface)
        if not rules:
            out.append(mention)
            continue
        sentence = doc.body_sentences[mention.sentence_index]
        tokens = [
            (sentence.start + m.start(), sentence.start + m.end(), m.group(0).lower())
            for m in _WORD.finditer(sentence.text)
        ]
        inside = [k for k, (lo, hi, _) in enumerate(tokens)
                  if lo < mention.end and hi > mention.start]
        first, last = min(inside), max(inside)
        new_concept = mention.concept_id
        for rule in rules:
            vocab = set(ontology.vocabulary_for(rule.context_category))
            window = rule.context_window_tokens
            hit = any(
                tok in vocab and (first - k if k < first else k - last) <= window
                for k, (_, _, tok) in enumerate(tokens)
                if k < first or k > last
            )
            if hit:
                new_concept = rule.target_concept
                break
        out.append(replace(mention, concept_id=new_concept))
    return out


def final_polarities(mentions: list[FindingMention]) -> dict[str, FindingMention]:
    """Last mention of each concept in document order; that mention's
    polarity is the concept's final polarity."""
    final: dict[str, FindingMention] = {}
    for mention in sorted(mentions, key=lambda m: (m.sentence_index, m.start)):
        final[mention.concept_id] = mention
    return final


def label_study(doc: ReportDoc, ontology: Ontology) -> StudyLabel:
    """Run extraction, remapping, and polarity over a segmented report.

    The verdict is normal iff no anatomical concept is positively present,
    the exam is not flagged non-diagnostic, and no positively-present device
    shares a sentence with a malposition marker. positive_findings lists
    every positive concept, devices and exam-quality included.
    """
    mentions = extract_mentions(doc, ontology)
    mentions = apply_remap_rules(doc, mentions, ontology)
    mentions = resolve_polarity(doc, mentions, ontology)
    final = final_polarities(mentions)

    compiled = _compiled(ontology)
    positive = {cid: m for cid, m in final.items() if m.polarity == POSITIVE}
    nondiagnostic = False
    device_misplaced = False
    abnormal_finding = False
    evidence: dict[str, tuple[str, str]] = {}
    for cid, mention in sorted(final.items()):
        sentence = doc.body_sentences[mention.sentence_index]
        if cid in positive:
            evidence[cid] = (sentence.text, mention.polarity)
        category = ontology.concept(cid).category
        if cid in positive and category == "exam_quality":
            nondiagnostic = True
        if cid in positive and category in ANATOMICAL_CATEGORIES:
            abnormal_finding = True
        if cid in positive and category == "device":
            if any(p.search(sentence.text) for p in compiled.markers):
                device_misplaced = True

    verdict = NORMAL
    if abnormal_finding or nondiagnostic or device_misplaced:
        verdict = ABNORMAL
    return StudyLabel(
        study_id=doc.study_id,
        verdict=verdict,
        positive_findings=tuple(sorted(positive)),
        evidence=evidence,
        nondiagnostic=nondiagnostic,
        device_misplaced=device_misplaced,
    )


def label_text(study_id: str, text: str, ontology: Ontology) -> StudyLabel:
    """Label one raw report text end to end."""
    return label_study(segment_sections(text, ontology, study_id=study_id), ontology)


def read_reports_jsonl(path: str | Path) -> list[tuple[str, str]]:
    """Read a JSON Lines corpus of {"study_id": ..., "text": ...} records."""
    records: list[tuple[str, str]] = []
    with open(path, "r", encoding="utf-8") as fh:
        for number, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ValueError(f"line {number}: invalid JSON ({exc})") from exc
            if not isinstance(record, dict) or not isinstance(record.get("study_id"), str) \
                    or not isinstance(record.get("text"), str):
                raise ValueError(f"line {number}: expected study_id and text strings")
            records.append((record["study_id"], record["text"]))
    return records


def labels_csv_rows(labels: Iterable[StudyLabel]) -> list[str]:
    rows = [LABEL_CSV_HEADER]
    for label in labels:
        rows.append(",".join((
            label.study_id,
            label.verdict,
            "true" if label.nondiagnostic else "false",
            "true" if label.device_misplaced else "false",
            "|".join(label.positive_findings),
        )))
    return rows


def write_labels_csv(labels: Iterable[StudyLabel], path: str | Path) -> None:
    Path(path).write_text("\n".join(labels_csv_rows(labels)) + "\n", encoding="utf-8")


def write_evidence_json(labels: Iterable[StudyLabel], path: str | Path) -> None:
    """Companion file mapping study -> concept -> deciding sentence."""
    payload = {
        label.study_id: {
            cid: {"sentence": sentence, "polarity": polarity}
            for cid, (sentence, polarity) in sorted(label.evidence.items())
        }
        for label in labels
    }
    Path(path).write_text(
        json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")
