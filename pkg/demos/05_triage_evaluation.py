"""
From scores to a zero-miss triage decision
==========================================

The evaluation kit's whole point: pick the threshold that removes as many
normal studies as possible from the reading worklist while letting zero
abnormal studies through, and report how much work that saves.
"""

from pathlib import Path

from cxrtriage.evalkit import (
    ConsensusRecord,
    ScoreTable,
    consensus_partition,
    emit_roc_artifacts,
    pr_curve,
    roc_curve,
    zero_miss_operating_point,
)

# A small hand-made score table. Higher score = more confidently normal.
ROWS = [
    ("n01", 0.97, "normal"), ("n02", 0.94, "normal"), ("n03", 0.91, "normal"),
    ("n04", 0.88, "normal"), ("n05", 0.82, "normal"), ("n06", 0.74, "normal"),
    ("a01", 0.61, "abnormal"),
    ("n07", 0.55, "normal"), ("n08", 0.49, "normal"),
    ("a02", 0.42, "abnormal"), ("a03", 0.33, "abnormal"),
    ("n09", 0.28, "normal"),
    ("a04", 0.15, "abnormal"), ("a05", 0.07, "abnormal"),
]
table = ScoreTable.from_arrays(*zip(*ROWS))

roc = roc_curve(table)
pr = pr_curve(table)
print(f"{len(table)} studies: ROC AUC {roc.auc:.4f}, PR area {pr.area:.4f}")

# The zero-miss operating point sits just above the best-scored abnormal:
# every study above it is safe to auto-clear.
op = zero_miss_operating_point(table)
cleared = int(round(op.normal_yield * 9))
print(f"threshold {op.threshold}: {cleared}/9 normals auto-cleared "
      f"({op.normal_yield:.0%} yield), {op.abnormal_miss} abnormals missed")

# Stricter ground truth: keep only studies where three independent reads
# agree. The majority table keeps every study with the 2-of-3 label.
records = [
    ConsensusRecord("n01", "normal", "normal", "normal"),
    ConsensusRecord("n02", "normal", "normal", "abnormal"),
    ConsensusRecord("n03", "normal", "normal", "normal"),
    ConsensusRecord("a01", "abnormal", "abnormal", "abnormal"),
    ConsensusRecord("a02", "abnormal", "normal", "abnormal"),
]
triple, majority = consensus_partition(records)
print(f"\nconsensus: {len(triple)} unanimous of {len(majority)} studies")
print("unanimous:", [sid for sid, _ in triple])

# Shareable artifacts: the ROC as CSV plus a standalone SVG plot.
out = Path("out")
out.mkdir(exist_ok=True)
emit_roc_artifacts(roc, out / "demo_roc.csv", out / "demo_roc.svg")
print(f"\nwrote {out / 'demo_roc.csv'} and {out / 'demo_roc.svg'}")
