"""Normalcy-score evaluation: ROC/PR curves, consensus ground truth, and the
zero-false-negative triage operating point.

The positive class throughout this module is **normal** (sensitivity is
defined for normalcy). This inverts the usual medical convention on purpose:
the classifier scores how confidently a study can be removed from the reading
worklist, so the curves and the operating point are all phrased in terms of
how many normals are caught and how many abnormals would slip through.

Threshold convention: a study is predicted normal when its score is *strictly
greater* than the threshold. Strict inequality is sensitivity-protective at
the zero-miss operating point (a tie at the threshold stays in the worklist).
"""

from __future__ import annotations

import csv
import json
import math
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DegenerateDataError

NORMAL = "normal"
ABNORMAL = "abnormal"
_LABELS = (NORMAL, ABNORMAL)


@dataclass(frozen=True)
class ScoreRow:
    study_id: str
    score: float
    label: str


@dataclass
class ScoreTable:
    """Per-study normalcy scores with ground-truth labels.

    Study ids are unique, scores finite, labels one of "normal"/"abnormal".
    """

    rows: list[ScoreRow] = field(default_factory=list)

    def __post_init__(self) -> None:
        seen: set[str] = set()
        for row in self.rows:
            if row.study_id in seen:
                raise ValueError(f"duplicate study_id {row.study_id!r}")
            seen.add(row.study_id)
            if not math.isfinite(row.score):
                raise ValueError(f"non-finite score for {row.study_id!r}")
            if row.label not in _LABELS:
                raise ValueError(f"label {row.label!r} not in {_LABELS}")

    def __len__(self) -> int:
        return len(self.rows)

    @property
    def scores(self) -> np.ndarray:
        return np.array([r.score for r in self.rows], dtype=np.float64)

    @property
    def is_normal(self) -> np.ndarray:
        return np.array([r.label == NORMAL for r in self.rows], dtype=bool)

    @classmethod
    def from_arrays(cls, study_ids, scores, labels) -> "ScoreTable":
        return cls([ScoreRow(str(i), float(s), str(l))
                    for i, s, l in zip(study_ids, scores, labels, strict=True)])

    @classmethod
    def from_csv(cls, path: str | Path) -> "ScoreTable":
        rows = []
        with open(path, newline="") as fh:
            for rec in csv.DictReader(fh):
                rows.append(ScoreRow(rec["study_id"], float(rec["score"]), rec["label"]))
        return cls(rows)

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["study_id", "score", "label"])
            for r in self.rows:
                w.writerow([r.study_id, repr(r.score), r.label])


@dataclass
class RocCurve:
    """ROC points from the descending threshold sweep, normal as positive.

    Point i holds the rates of "predict normal when score > thresholds[i]";
    the sweep starts at the maximum score (0, 0) and ends at -inf (1, 1).
    Tied scores enter together, producing a single point per distinct score.
    """

    thresholds: np.ndarray
    fpr: np.ndarray
    tpr: np.ndarray
    auc: float


@dataclass
class PrCurve:
    """Precision/recall for the normal class over the same threshold sweep.

    The recall-0 anchor carries the precision of the highest-scored block
    (the curve has no defined precision before any prediction is made).
    """

    thresholds: np.ndarray
    recall: np.ndarray
    precision: np.ndarray
    area: float


@dataclass
class OperatingPoint:
    """Zero-miss triage threshold: abnormal_miss is 0 by construction and
    normal_yield is the largest fraction of normals scoring strictly above."""

    threshold: float
    normal_yield: float
    abnormal_miss: int

    def to_json(self, path: str | Path) -> None:
        payload = {
            "threshold": self.threshold,
            "normal_yield": self.normal_yield,
            "abnormal_miss": self.abnormal_miss,
        }
        Path(path).write_text(json.dumps(payload, indent=2) + "\n")


@dataclass(frozen=True)
class ConsensusRecord:
    """One study with three independent reads (two radiologist-style labels
    plus the on-site clinical decision)."""

    study_id: str
    r1: str
    r2: str
    r3: str

    def __post_init__(self) -> None:
        for r in (self.r1, self.r2, self.r3):
            if r not in _LABELS:
                raise ValueError(f"reader label {r!r} not in {_LABELS}")

    @property
    def readers(self) -> tuple[str, str, str]:
        return (self.r1, self.r2, self.r3)


def _sweep_blocks(table: ScoreTable) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Distinct scores descending plus per-block normal/abnormal counts."""
    scores = table.scores
    normal = table.is_normal
    order = np.argsort(-scores, kind="stable")
    s = scores[order]
    n = normal[order]
    distinct, starts = np.unique(-s, return_index=True)
    distinct = -distinct  # descending
    bounds = np.append(starts, len(s))
    tp_blocks = np.array([n[bounds[i]:bounds[i + 1]].sum() for i in range(len(distinct))])
    fp_blocks = np.array([(~n[bounds[i]:bounds[i + 1]]).sum() for i in range(len(distinct))])
    return distinct, tp_blocks.astype(np.float64), fp_blocks.astype(np.float64)


def _require_both_classes(table: ScoreTable) -> tuple[int, int]:
    pos = int(table.is_normal.sum())
    neg = len(table) - pos
    if pos == 0 or neg == 0:
        raise DegenerateDataError(
            f"need at least one normal and one abnormal row, got {pos} normal / {neg} abnormal")
    return pos, neg


def roc_curve(table: ScoreTable) -> RocCurve:
    """ROC curve and trapezoidal AUC with normal as the positive class."""
    pos, neg = _require_both_classes(table)
    distinct, tp_blocks, fp_blocks = _sweep_blocks(table)
    cum_tp = np.concatenate([[0.0], np.cumsum(tp_blocks)])
    cum_fp = np.concatenate([[0.0], np.cumsum(fp_blocks)])
    thresholds = np.concatenate([distinct, [-np.inf]])
    tpr = cum_tp / pos
    fpr = cum_fp / neg
    auc = float(np.trapezoid(tpr, fpr))
    return RocCurve(thresholds=thresholds, fpr=fpr, tpr=tpr, auc=auc)


def pr_curve(table: ScoreTable) -> PrCurve:
    """Precision/recall curve and trapezoidal area over recall."""
    pos, _ = _require_both_classes(table)
    distinct, tp_blocks, fp_blocks = _sweep_blocks(table)
    cum_tp = np.cumsum(tp_blocks)
    cum_fp = np.cumsum(fp_blocks)
    recall = cum_tp / pos
    precision = cum_tp / (cum_tp + cum_fp)
    # Anchor at recall 0 with the first block's precision, then one point per
    # distinct score; the final point (threshold -inf) admits every row.
    thresholds = np.concatenate([[distinct[0]], distinct[1:], [-np.inf]])
    recall = np.concatenate([[0.0], recall])
    precision = np.concatenate([[precision[0]], precision])
    area = float(np.trapezoid(precision, recall))
    return PrCurve(thresholds=thresholds, recall=recall, precision=precision, area=area)


def zero_miss_operating_point(table: ScoreTable) -> OperatingPoint:
    """Highest-yield threshold that lets zero abnormal studies through.

    The threshold is the maximum abnormal score; only normals scoring
    strictly above it are filtered, so a normal tied with that abnormal
    stays in the worklist.
    """
    scores = table.scores
    normal = table.is_normal
    abnormal_scores = scores[~normal]
    if abnormal_scores.size == 0:
        raise DegenerateDataError("need at least one abnormal row to place the threshold")
    threshold = float(abnormal_scores.max())
    normal_scores = scores[normal]
    if normal_scores.size == 0:
        yield_frac = 0.0
    else:
        yield_frac = float((normal_scores > threshold).mean())
    miss = int((abnormal_scores > threshold).sum())
    return OperatingPoint(threshold=threshold, normal_yield=yield_frac, abnormal_miss=miss)


def consensus_partition(
    records: list[ConsensusRecord],
) -> tuple[list[tuple[str, str]], list[tuple[str, str]]]:
    """Split three-reader records into unanimous and 2-of-3 label tables.

    Returns (triple_consensus, majority): the first holds only records where
    all three reads agree, labeled by the unanimous value; the second holds
    every record, labeled by the majority vote. The triple-consensus ids are
    a subset of the majority ids, and both preserve record order.
    """
    triple: list[tuple[str, str]] = []
    majority: list[tuple[str, str]] = []
    for rec in records:
        votes = rec.readers
        n_normal = sum(1 for v in votes if v == NORMAL)
        maj = NORMAL if n_normal >= 2 else ABNORMAL
        majority.append((rec.study_id, maj))
        if votes[0] == votes[1] == votes[2]:
            triple.append((rec.study_id, votes[0]))
    return triple, majority


def read_consensus_csv(path: str | Path) -> list[ConsensusRecord]:
    records = []
    with open(path, newline="") as fh:
        for rec in csv.DictReader(fh):
            records.append(ConsensusRecord(rec["study_id"], rec["r1"], rec["r2"], rec["r3"]))
    return records


def make_synthetic_dataset(
    n_per_class: int,
    size: tuple[int, int] = (64, 64),
    seed: int = 0,
) -> list[tuple[np.ndarray, int]]:
    """Deterministic desk-scale image set: blob-bearing vs background-only.

    "Abnormal" images carry 1-3 additive Gaussian blobs (opacity surrogates)
    on a textured background; "normal" images are background only. Labels use
    1 = normal, 0 = abnormal, matching the classifier's normalcy score.
    Images are (1, H, W) float64 in [0, 1].
    """
    if n_per_class < 1:
        raise ValueError("n_per_class must be >= 1")
    h, w = size
    rng = np.random.default_rng(seed)
    yy, xx = np.meshgrid(np.arange(h, dtype=np.float64),
                         np.arange(w, dtype=np.float64), indexing="ij")
    out: list[tuple[np.ndarray, int]] = []

    def background() -> np.ndarray:
        # Smooth low-frequency field (random coarse grid, bilinear blowup)
        # plus mild pixel noise, kept well inside [0, 1].
        coarse = rng.uniform(0.25, 0.55, size=(4, 4))
        ys = np.linspace(0, 3, h)
        xs = np.linspace(0, 3, w)
        y0 = np.clip(ys.astype(int), 0, 2)
        x0 = np.clip(xs.astype(int), 0, 2)
        fy = (ys - y0)[:, None]
        fx = xs - x0
        top = coarse[y0][:, x0] * (1 - fx) + coarse[y0][:, x0 + 1] * fx
        bot = coarse[y0 + 1][:, x0] * (1 - fx) + coarse[y0 + 1][:, x0 + 1] * fx
        field_ = top * (1 - fy) + bot * fy
        noise = rng.normal(0.0, 0.02, size=(h, w))
        return np.clip(field_ + noise, 0.0, 1.0)

    def add_blobs(img: np.ndarray) -> np.ndarray:
        n_blobs = int(rng.integers(1, 4))
        for _ in range(n_blobs):
            cy = rng.uniform(0.2 * h, 0.8 * h)
            cx = rng.uniform(0.2 * w, 0.8 * w)
            sigma = rng.uniform(h / 16, h / 8)
            amp = rng.uniform(0.3, 0.6)
            img = img + amp * np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2 * sigma ** 2))
        return np.clip(img, 0.0, 1.0)

    for _ in range(n_per_class):
        out.append((background()[None, :, :], 1))
        out.append((add_blobs(background())[None, :, :], 0))
    return out


def write_roc_csv(curve: RocCurve, path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["threshold", "fpr", "tpr"])
        for t, f, tp in zip(curve.thresholds, curve.fpr, curve.tpr):
            w.writerow([repr(float(t)), repr(float(f)), repr(float(tp))])


def read_roc_csv(path: str | Path) -> RocCurve:
    thr, fpr, tpr = [], [], []
    with open(path, newline="") as fh:
        for rec in csv.DictReader(fh):
            thr.append(float(rec["threshold"]))
            fpr.append(float(rec["fpr"]))
            tpr.append(float(rec["tpr"]))
    fpr_a = np.array(fpr)
    tpr_a = np.array(tpr)
    return RocCurve(np.array(thr), fpr_a, tpr_a, float(np.trapezoid(tpr_a, fpr_a)))


def write_pr_csv(curve: PrCurve, path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["threshold", "recall", "precision"])
        for t, r, p in zip(curve.thresholds, curve.recall, curve.precision):
            w.writerow([repr(float(t)), repr(float(r)), repr(float(p))])


def roc_svg(curve: RocCurve, title: str = "Normalcy ROC") -> str:
    """Standalone SVG of the ROC curve on the unit square, AUC annotated."""
    size, margin = 360, 48
    span = size - 2 * margin

    def px(x: float) -> float:
        return margin + x * span

    def py(y: float) -> float:
        return size - margin - y * span

    pts = " ".join(f"{px(f):.2f},{py(t):.2f}" for f, t in zip(curve.fpr, curve.tpr))
    ticks = []
    for v in (0.0, 0.25, 0.5, 0.75, 1.0):
        ticks.append(f'<text x="{px(v):.0f}" y="{size - margin + 16}" font-size="10" '
                     f'text-anchor="middle">{v:g}</text>')
        ticks.append(f'<text x="{margin - 8}" y="{py(v) + 3:.0f}" font-size="10" '
                     f'text-anchor="end">{v:g}</text>')
    return (
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size}" '
        f'viewBox="0 0 {size} {size}">\n'
        f'<rect width="{size}" height="{size}" fill="white"/>\n'
        f'<rect x="{margin}" y="{margin}" width="{span}" height="{span}" '
        f'fill="none" stroke="#444"/>\n'
        f'<line x1="{px(0):.1f}" y1="{py(0):.1f}" x2="{px(1):.1f}" y2="{py(1):.1f}" '
        f'stroke="#bbb" stroke-dasharray="4 3"/>\n'
        f'<polyline points="{pts}" fill="none" stroke="#1565c0" stroke-width="1.6"/>\n'
        f'<text x="{size / 2:.0f}" y="{margin - 12}" font-size="13" '
        f'text-anchor="middle">{title}</text>\n'
        f'<text x="{px(0.62):.0f}" y="{py(0.08):.0f}" font-size="12">'
        f'AUC = {curve.auc:.4f}</text>\n'
        f'<text x="{size / 2:.0f}" y="{size - 10}" font-size="11" '
        f'text-anchor="middle">false positive rate (abnormal filtered)</text>\n'
        f'<text x="14" y="{size / 2:.0f}" font-size="11" text-anchor="middle" '
        f'transform="rotate(-90 14 {size / 2:.0f})">sensitivity for normalcy</text>\n'
        f'{"".join(ticks)}\n'
        f'</svg>\n'
    )


def emit_roc_artifacts(curve: RocCurve, csv_path: str | Path, svg_path: str | Path) -> None:
    """Write roc.csv (threshold,fpr,tpr) and a standalone SVG plot."""
    write_roc_csv(curve, csv_path)
    _atomic_write_text(svg_path, roc_svg(curve))


def _atomic_write_text(path: str | Path, text: str) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text)
    os.replace(tmp, path)
