"""
Labeling free-text chest X-ray reports
======================================

Walks a handful of reports through the rule-based labeler and prints the
verdict plus the sentence that decided each finding.
"""

from pathlib import Path

from cxrtriage.ontology import load_default_ontology
from cxrtriage.reports import label_text, write_labels_csv

ONT = load_default_ontology()

# Each report exercises one labeling behavior.
REPORTS = [
    ("clean", "FINDINGS: The lungs are clear. Heart size is normal. "
     "IMPRESSION: No acute cardiopulmonary abnormality."),
    # Plain negation: the finding is mentioned but ruled out.
    ("negated", "FINDINGS: No pleural effusion or pneumothorax. "
     "IMPRESSION: Clear lungs."),
    # Hypothetical context does not make a finding positive.
    ("hypothetical", "INDICATION: Rule out pneumonia. "
     "FINDINGS: Lungs are clear. IMPRESSION: No pneumonia."),
    # The last sentence mentioning a finding wins.
    ("precedence", "FINDINGS: There is a right pleural effusion. "
     "IMPRESSION: Effusion has resolved."),
    # A positive anatomical finding makes the study abnormal.
    ("positive", "FINDINGS: Right lower lobe consolidation. "
     "IMPRESSION: Pneumonia."),
    # Devices are fine unless a malposition marker shares the sentence.
    ("device_ok", "FINDINGS: Endotracheal tube in standard position. "
     "IMPRESSION: Lines and tubes appropriately positioned."),
    ("device_bad", "FINDINGS: Endotracheal tube terminates in the right "
     "mainstem bronchus. IMPRESSION: Malpositioned ETT."),
    # Non-diagnostic exams are never called normal.
    ("limited", "FINDINGS: Lungs are grossly clear. IMPRESSION: Technically "
     "limited study due to patient rotation."),
]

labels = []
for study_id, text in REPORTS:
    label = label_text(study_id, text, ONT)
    labels.append(label)
    print(f"{study_id:>12}: {label.verdict:<8}", end="")
    if label.nondiagnostic:
        print(" [non-diagnostic]", end="")
    if label.device_misplaced:
        print(" [device misplaced]", end="")
    print()
    # The evidence map names the sentence that decided each concept.
    for concept, (sentence, polarity) in sorted(label.evidence.items()):
        print(f"{'':>14}{concept}: {polarity} <- {sentence!r}")

# The same labels serialize to the CSV the CLI emits.
out = Path("out")
out.mkdir(exist_ok=True)
write_labels_csv(labels, out / "demo_labels.csv")
print(f"\nwrote {out / 'demo_labels.csv'}")
