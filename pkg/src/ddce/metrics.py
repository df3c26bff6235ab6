"""Clustering quality and outlier-awareness metrics.

NMI is normalized by the geometric mean of the two entropies; ARI is the
pair-counting index corrected for chance. The outlier label -1 is treated
as an ordinary label by both. The combined score is the harmonic mean of
non-outlier recall and ARI clamped at zero.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from math import comb, log, sqrt

import numpy as np

from .errors import AlignmentError, DdceError, MissingGroundTruthError
from .optics import Partition

OUTLIER_TRUTH_LABEL = -2  # ground-truth class shared by all injected outliers


def _relabel_all(labels: np.ndarray) -> np.ndarray:
    """Renumber every distinct label (including -1, which is an ordinary
    label to these metrics) by first appearance, for identity checks."""
    mapping: dict[int, int] = {}
    out = np.empty(len(labels), dtype=int)
    for i, lab in enumerate(labels):
        out[i] = mapping.setdefault(int(lab), len(mapping))
    return out


@dataclass(frozen=True)
class ContingencyTable:
    counts: np.ndarray
    row_totals: np.ndarray
    col_totals: np.ndarray
    n: int

    @staticmethod
    def from_labels(a: np.ndarray, b: np.ndarray) -> "ContingencyTable":
        a_vals, a_idx = np.unique(a, return_inverse=True)
        b_vals, b_idx = np.unique(b, return_inverse=True)
        counts = np.zeros((len(a_vals), len(b_vals)), dtype=np.int64)
        np.add.at(counts, (a_idx, b_idx), 1)
        return ContingencyTable(
            counts=counts,
            row_totals=counts.sum(axis=1),
            col_totals=counts.sum(axis=0),
            n=int(len(a)),
        )


def _require_aligned(p: Partition, q: Partition) -> None:
    if p.n != q.n:
        raise AlignmentError(f"partition lengths differ: {p.n} vs {q.n}")
    if p.ids != q.ids:
        raise AlignmentError("partition ids are not aligned")


def _entropy(totals: np.ndarray, n: int) -> float:
    probs = totals[totals > 0] / n
    return float(-(probs * np.log(probs)).sum())


def nmi_labels(a: np.ndarray, b: np.ndarray) -> float:
    """NMI of two label arrays; exactly 1.0 when the induced groupings are
    identical, 0.0 when either side is degenerate and they differ."""
    a = np.asarray(a)
    b = np.asarray(b)
    if len(a) != len(b):
        raise AlignmentError(f"label arrays differ in length: {len(a)} vs {len(b)}")
    if np.array_equal(_relabel_all(a), _relabel_all(b)):
        return 1.0
    table = ContingencyTable.from_labels(a, b)
    ha = _entropy(table.row_totals, table.n)
    hb = _entropy(table.col_totals, table.n)
    if ha == 0.0 or hb == 0.0:
        return 0.0
    info = 0.0
    n = table.n
    for i, j in zip(*np.nonzero(table.counts)):
        nij = int(table.counts[i, j])
        info += (nij / n) * log(nij * n / (int(table.row_totals[i]) * int(table.col_totals[j])))
    return min(1.0, max(0.0, info / sqrt(ha * hb)))


def nmi(p: Partition, q: Partition) -> float:
    _require_aligned(p, q)
    return nmi_labels(p.labels, q.labels)


def ari_labels(truth: np.ndarray, pred: np.ndarray) -> float:
    """Adjusted Rand index by pair counting; degenerate cases resolve to
    1.0 for identical groupings and 0.0 otherwise."""
    truth = np.asarray(truth)
    pred = np.asarray(pred)
    if len(truth) != len(pred):
        raise AlignmentError(f"label arrays differ in length: {len(truth)} vs {len(pred)}")
    if len(truth) < 2:
        raise DdceError(f"ARI needs at least 2 samples, got {len(truth)}")
    table = ContingencyTable.from_labels(truth, pred)
    index = sum(comb(int(v), 2) for v in table.counts.flat if v >= 2)
    sum_a = sum(comb(int(v), 2) for v in table.row_totals)
    sum_b = sum(comb(int(v), 2) for v in table.col_totals)
    pairs = comb(table.n, 2)
    expected = sum_a * sum_b / pairs
    maximum = (sum_a + sum_b) / 2.0
    if maximum == expected:
        same = np.array_equal(_relabel_all(truth), _relabel_all(pred))
        return 1.0 if same else 0.0
    return (index - expected) / (maximum - expected)


def ari(truth: Partition, pred: Partition) -> float:
    _require_aligned(truth, pred)
    return ari_labels(truth.labels, pred.labels)


def nonoutlier_recall(truth_outlier_flags: list[bool], pred: Partition) -> float:
    """Fraction of true non-outliers assigned to some cluster; vacuously 1.0
    when every sample is a true outlier."""
    if len(truth_outlier_flags) != pred.n:
        raise AlignmentError(
            f"{len(truth_outlier_flags)} flags but {pred.n} predictions"
        )
    flags = np.asarray(truth_outlier_flags, dtype=bool)
    n_true = int((~flags).sum())
    if n_true == 0:
        return 1.0
    caught = int(((~flags) & (np.asarray(pred.labels) != -1)).sum())
    return caught / n_true


@dataclass(frozen=True)
class Scores:
    score_c: float
    score_ari: float
    score: float

    def to_json(self) -> str:
        return json.dumps(asdict(self))

    @staticmethod
    def from_parts(score_c: float, score_ari: float) -> "Scores":
        return Scores(score_c=score_c, score_ari=score_ari,
                      score=harmonic_score(score_c, score_ari))


def harmonic_score(score_c: float, score_ari: float) -> float:
    """Harmonic mean of recall and ARI clamped at zero; 0 when both vanish."""
    a = score_c
    b = max(score_ari, 0.0)
    if a + b == 0.0:
        return 0.0
    return 2.0 * a * b / (a + b)


def ground_truth_labels(d_truth, pred_ids: list[str]) -> tuple[np.ndarray, list[bool]]:
    """Ground-truth label array aligned to ``pred_ids``: each intent is its
    own class, every injected outlier shares one class. Also returns the
    per-sample outlier flags."""
    by_id = {r.id: r for r in d_truth.rows}
    labels = np.empty(len(pred_ids), dtype=int)
    flags = []
    intent_ids: dict[str, int] = {}
    for i, rid in enumerate(pred_ids):
        row = by_id.get(rid)
        if row is None:
            raise AlignmentError(f"predicted id {rid!r} not present in ground truth")
        if row.is_injected_outlier:
            labels[i] = OUTLIER_TRUTH_LABEL
            flags.append(True)
        elif row.intent is not None:
            labels[i] = intent_ids.setdefault(row.intent, len(intent_ids))
            flags.append(False)
        else:
            raise MissingGroundTruthError(
                f"row {rid!r} has neither an intent nor an outlier flag"
            )
    return labels, flags


def score(d_truth, pred: Partition) -> Scores:
    """Score a predicted partition against a dataset carrying ground truth."""
    truth_labels, flags = ground_truth_labels(d_truth, pred.ids)
    score_c = nonoutlier_recall(flags, pred)
    score_ari = ari_labels(truth_labels, np.asarray(pred.labels))
    return Scores.from_parts(score_c, score_ari)
