"""Consensus functions over K aligned base partitions.

Three label-correspondence-free combiners (co-association CSPA, hypergraph
HGPA, meta-clustering MCLA), their agreement-maximizing selector, best-of-K
selection by mutual information, and best-of-K with per-sample outlier
voting gated on the base models' validation recall.

The classic hypergraph partitioners are replaced by deterministic,
dependency-free stand-ins: average-linkage agglomeration (CSPA, MCLA) and
a greedy balanced min-hyperedge-cut (HGPA). Ties always break toward the
smallest index.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import AlignmentError, DdceError
from .metrics import nmi_labels
from .optics import Partition, canonicalize_labels
from .util import round_half_up, substream


@dataclass(frozen=True)
class PartitionSet:
    """K aligned partitions plus each base model's validation recall."""

    partitions: list[Partition]
    val_recalls: list[float] | None = None

    def __post_init__(self):
        if not self.partitions:
            raise DdceError("PartitionSet needs at least one partition")
        ids = self.partitions[0].ids
        for p in self.partitions[1:]:
            if p.ids != ids:
                raise AlignmentError("base partitions are not aligned on ids")
        if self.val_recalls is not None and len(self.val_recalls) != len(self.partitions):
            raise DdceError(
                f"{len(self.val_recalls)} recalls for {len(self.partitions)} partitions"
            )

    @property
    def k(self) -> int:
        return len(self.partitions)

    @property
    def n(self) -> int:
        return self.partitions[0].n

    @property
    def ids(self) -> list[str]:
        return self.partitions[0].ids


@dataclass(frozen=True)
class OutlierVote:
    u: np.ndarray
    i_out: np.ndarray
    i_nout: np.ndarray


def k_target(ts: PartitionSet) -> int:
    """Consensus cluster count: median of the base partitions' non-outlier
    cluster counts, halves rounded up, never below 1."""
    counts = sorted(p.cluster_count() for p in ts.partitions)
    mid = len(counts) // 2
    if len(counts) % 2 == 1:
        median = float(counts[mid])
    else:
        median = (counts[mid - 1] + counts[mid]) / 2.0
    return max(1, round_half_up(median))


def average_linkage_labels(D: np.ndarray, k: int) -> np.ndarray:
    """Agglomerative clustering with average linkage on a precomputed
    distance matrix, cut at k clusters. Merge ties take the smallest
    (row, column) pair; output labels are numbered by first appearance."""
    n = D.shape[0]
    if n == 0:
        return np.empty(0, dtype=int)
    k = max(1, min(k, n))
    gd = np.array(D, dtype=float)
    np.fill_diagonal(gd, np.inf)
    sizes = np.ones(n)
    group_of = np.arange(n)
    for _ in range(n - k):
        flat = int(np.argmin(gd))
        i, j = divmod(flat, n)
        if i > j:
            i, j = j, i
        wi, wj = sizes[i], sizes[j]
        merged = (wi * gd[i] + wj * gd[j]) / (wi + wj)
        gd[i, :] = merged
        gd[:, i] = merged
        gd[i, i] = np.inf
        gd[j, :] = np.inf
        gd[:, j] = np.inf
        sizes[i] = wi + wj
        group_of[group_of == j] = i
    return canonicalize_labels(group_of)


def co_association(ts: PartitionSet) -> np.ndarray:
    """n x n matrix of fractions of base models co-clustering each pair;
    outlier labels never co-associate."""
    n = ts.n
    S = np.zeros((n, n))
    for p in ts.partitions:
        lab = np.asarray(p.labels)
        valid = lab != -1
        S += (lab[:, None] == lab[None, :]) & valid[:, None] & valid[None, :]
    return S / ts.k


def cspa(ts: PartitionSet, k: int | None = None) -> Partition:
    """Cluster-based similarity partitioning: average-linkage consensus on
    the co-association matrix. Samples co-clustered with nobody in any
    model become outliers."""
    n = ts.n
    S = co_association(ts)
    off = S.copy()
    np.fill_diagonal(off, 0.0)
    isolated = off.sum(axis=1) == 0.0
    labels = np.full(n, -1, dtype=int)
    rest = np.flatnonzero(~isolated)
    if len(rest):
        sub = 1.0 - S[np.ix_(rest, rest)]
        labels[rest] = average_linkage_labels(sub, k_target(ts) if k is None else k)
    return Partition(labels=canonicalize_labels(labels), ids=ts.ids)


def _hyperedges(ts: PartitionSet) -> list[np.ndarray]:
    """All non-outlier clusters across partitions as member-index arrays,
    in (partition, label value) order."""
    edges = []
    for p in ts.partitions:
        lab = np.asarray(p.labels)
        for value in np.unique(lab[lab != -1]):
            edges.append(np.flatnonzero(lab == value))
    return edges


def _hgpa_descend(n, k, edges, edges_of, part):
    """Best-improvement single-vertex moves until no move reduces the cut;
    mutates ``part`` in place and returns the final cut."""
    counts = np.zeros((len(edges), k), dtype=int)
    for e_idx, members in enumerate(edges):
        for v in members:
            counts[e_idx, part[v]] += 1
    sizes = np.bincount(part, minlength=k)
    target = n / k

    def move_delta(v: int, dst: int) -> int:
        src = part[v]
        delta = 0
        for e_idx in edges_of[v]:
            row = counts[e_idx]
            before = int(np.count_nonzero(row))
            after = before
            if row[src] == 1:
                after -= 1
            if row[dst] == 0:
                after += 1
            delta += (after > 1) - (before > 1)
        return delta

    while True:
        best = None
        for v in range(n):
            src = part[v]
            if abs(sizes[src] - 1 - target) > 1:
                continue
            for dst in range(k):
                if dst == src or abs(sizes[dst] + 1 - target) > 1:
                    continue
                delta = move_delta(v, dst)
                if delta < 0 and (best is None or delta < best[0]):
                    best = (delta, v, dst)
        if best is None:
            break
        _, v, dst = best
        src = part[v]
        for e_idx in edges_of[v]:
            counts[e_idx, src] -= 1
            counts[e_idx, dst] += 1
        sizes[src] -= 1
        sizes[dst] += 1
        part[v] = dst
    return int(sum(1 for row in counts if np.count_nonzero(row) > 1))


def hgpa(ts: PartitionSet, seed: int = 0, k: int | None = None, restarts: int = 8) -> Partition:
    """Hypergraph partitioning consensus: greedy balanced minimum
    hyperedge cut into k parts (the consensus cluster count by default).

    Each restart draws a random balanced assignment from a stream derived
    from the seed, then applies best-improvement single-vertex moves
    (keeping every part within one of n / k) until no move reduces the
    number of cut hyperedges; the lowest-cut restart wins, earliest on
    ties. Purely greedy descent can stall on symmetric mixes, hence the
    restarts.
    """
    n = ts.n
    if n == 0:
        return Partition(labels=np.empty(0, dtype=int), ids=ts.ids)
    k = min(k_target(ts) if k is None else k, n)
    edges = _hyperedges(ts)
    if k <= 1 or not edges:
        part = np.empty(n, dtype=int)
        part[substream(seed, "hgpa", 0).permutation(n)] = np.arange(n) % k
        return Partition(labels=canonicalize_labels(part), ids=ts.ids)
    edges_of = [[] for _ in range(n)]
    for e_idx, members in enumerate(edges):
        for v in members:
            edges_of[v].append(e_idx)
    best_part = None
    best_cut = None
    for r in range(restarts):
        part = np.empty(n, dtype=int)
        part[substream(seed, "hgpa", r).permutation(n)] = np.arange(n) % k
        cut = _hgpa_descend(n, k, edges, edges_of, part)
        if best_cut is None or cut < best_cut:
            best_part, best_cut = part, cut
        if best_cut == 0:
            break
    return Partition(labels=canonicalize_labels(best_part), ids=ts.ids)


def hyperedge_cut(ts: PartitionSet, labels: np.ndarray) -> int:
    """Number of hyperedges spanning more than one part under ``labels``."""
    cut = 0
    for members in _hyperedges(ts):
        if len(np.unique(labels[members])) > 1:
            cut += 1
    return cut


def mcla(ts: PartitionSet, k: int | None = None) -> Partition:
    """Meta-clustering consensus: group the clusters themselves by Jaccard
    similarity into k_target meta-clusters, then give each sample the
    meta-cluster holding the largest fraction of its K labels."""
    n = ts.n
    edges = _hyperedges(ts)
    labels = np.full(n, -1, dtype=int)
    if not edges:
        return Partition(labels=labels, ids=ts.ids)
    m = len(edges)
    sets = [set(map(int, e)) for e in edges]
    jd = np.zeros((m, m))
    for i in range(m):
        for j in range(i + 1, m):
            inter = len(sets[i] & sets[j])
            union = len(sets[i] | sets[j])
            jd[i, j] = jd[j, i] = 1.0 - inter / union
    meta = average_linkage_labels(jd, min(k_target(ts) if k is None else k, m))
    n_meta = int(meta.max()) + 1
    assoc = np.zeros((n, n_meta))
    for e_idx, members in enumerate(edges):
        assoc[members, meta[e_idx]] += 1.0
    assoc /= ts.k
    has_any = assoc.sum(axis=1) > 0.0
    labels[has_any] = np.argmax(assoc[has_any], axis=1)
    return Partition(labels=canonicalize_labels(labels), ids=ts.ids)


def nmi_sum(labels: np.ndarray, ts: PartitionSet) -> float:
    """Total agreement of a candidate labeling with every base partition."""
    return float(sum(nmi_labels(labels, np.asarray(p.labels)) for p in ts.partitions))


def chm_with_details(ts: PartitionSet, seed: int = 0) -> tuple[Partition, dict]:
    candidates = [
        ("CSPA", cspa(ts)),
        ("HGPA", hgpa(ts, seed=seed)),
        ("MCLA", mcla(ts)),
    ]
    sums = {name: nmi_sum(np.asarray(p.labels), ts) for name, p in candidates}
    best_name, best_p = candidates[0]
    for name, p in candidates[1:]:
        if sums[name] > sums[best_name]:
            best_name, best_p = name, p
    return best_p, {"candidate_nmi_sums": sums, "chosen_candidate": best_name}


def chm(ts: PartitionSet, seed: int = 0) -> Partition:
    """Run all three combiners and return the one agreeing most with the
    base partitions (ties prefer CSPA, then HGPA, then MCLA)."""
    best_p, _ = chm_with_details(ts, seed=seed)
    return best_p


def _bok_index(ts: PartitionSet) -> tuple[int, list[float]]:
    sums = [nmi_sum(np.asarray(p.labels), ts) for p in ts.partitions]
    return int(np.argmax(sums)), sums


def bok(ts: PartitionSet) -> Partition:
    """Best of K: the base partition with the highest total agreement with
    all base partitions (lowest model index on ties)."""
    idx, _ = _bok_index(ts)
    return ts.partitions[idx]


def outlier_vote(ts: PartitionSet) -> OutlierVote:
    """Per-sample majority vote on outlier status: a sample is voted
    outlier when strictly more than half the models label it -1."""
    votes = np.zeros(ts.n, dtype=int)
    for p in ts.partitions:
        votes += np.asarray(p.labels) == -1
    u = votes * 2 > ts.k
    return OutlierVote(u=u, i_out=np.flatnonzero(u), i_nout=np.flatnonzero(~u))


def bokv_with_details(ts: PartitionSet) -> tuple[Partition, dict]:
    if ts.val_recalls is None:
        raise DdceError("bokv requires the base models' validation recalls")
    gate_open = sum(1 for r in ts.val_recalls if r > 0.5) * 2 > ts.k
    if not gate_open:
        idx, sums = _bok_index(ts)
        return ts.partitions[idx], {
            "gate_open": False, "degraded_to_bok": True,
            "winner_index": idx, "nmi_sums": sums, "n_voted_outliers": None,
        }
    vote = outlier_vote(ts)
    if len(vote.i_nout) == 0:
        labels = np.full(ts.n, -1, dtype=int)
        return Partition(labels=labels, ids=ts.ids), {
            "gate_open": True, "degraded_to_bok": False,
            "winner_index": None, "nmi_sums": None,
            "n_voted_outliers": int(len(vote.i_out)),
        }
    restricted = [np.asarray(p.labels)[vote.i_nout] for p in ts.partitions]
    sums = [
        float(sum(nmi_labels(r, other) for other in restricted)) for r in restricted
    ]
    winner = int(np.argmax(sums))
    labels = np.asarray(ts.partitions[winner].labels).copy()
    labels[vote.i_out] = -1
    return Partition(labels=labels, ids=ts.ids), {
        "gate_open": True, "degraded_to_bok": False,
        "winner_index": winner, "nmi_sums": sums,
        "n_voted_outliers": int(len(vote.i_out)),
    }


def bokv(ts: PartitionSet) -> Partition:
    """Best of K with outlier voting. When more than half the base models
    clear 0.5 validation recall, outlier status is decided by majority
    vote and the best base partition (by agreement restricted to voted
    non-outliers) labels the rest; otherwise falls back to plain best-of-K.
    """
    best_p, _ = bokv_with_details(ts)
    return best_p


CONSENSUS_FUNCTIONS = ("CHM", "BOK", "BOKV")


def run_consensus(name: str, ts: PartitionSet, seed: int = 0) -> tuple[Partition, dict]:
    """Dispatch by consensus function name, returning the partition and a
    diagnostics dict for reporting."""
    if name == "CHM":
        part, details = chm_with_details(ts, seed=seed)
    elif name == "BOK":
        idx, sums = _bok_index(ts)
        part, details = ts.partitions[idx], {"winner_index": idx, "nmi_sums": sums}
    elif name == "BOKV":
        part, details = bokv_with_details(ts)
    else:
        raise DdceError(f"unknown consensus function {name!r}, expected one of {CONSENSUS_FUNCTIONS}")
    return part, details
