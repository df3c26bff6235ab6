"""Density-based clustering: OPTICS reachability ordering, xi-cluster
extraction from the reachability plot, and the minimum-cluster-size
outlier rule.

All tie-breaking is deterministic (smallest index wins) so ensemble runs
are exactly reproducible. Neighbor search is brute force; the intended
scale is thousands of points, not millions.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .embed import EmbeddingMatrix
from .errors import DdceError
from .util import atomic_write_text

METRICS = ("cosine", "euclidean")


@dataclass(frozen=True)
class OpticsParams:
    max_eps: float
    xi: float
    min_samples: int

    def __post_init__(self):
        if not (np.isfinite(self.max_eps) and self.max_eps > 0):
            raise DdceError(f"max_eps must be finite and > 0, got {self.max_eps}")
        if not 0.0 < self.xi < 1.0:
            raise DdceError(f"xi must be in (0, 1), got {self.xi}")
        if self.min_samples < 2:
            raise DdceError(f"min_samples must be >= 2, got {self.min_samples}")


@dataclass(frozen=True)
class ReachabilityOrdering:
    """OPTICS output: a processing order plus per-sample reachability,
    core distance and predecessor (-1 where undefined)."""

    order: np.ndarray
    reachability: np.ndarray
    core_distance: np.ndarray
    predecessor: np.ndarray
    ids: list[str]


@dataclass(frozen=True)
class Partition:
    """Per-sample integer cluster labels; -1 marks outliers."""

    labels: np.ndarray
    ids: list[str]

    def __post_init__(self):
        if len(self.labels) != len(self.ids):
            raise DdceError(f"{len(self.labels)} labels but {len(self.ids)} ids")

    @property
    def n(self) -> int:
        return len(self.ids)

    def cluster_count(self) -> int:
        return len({int(v) for v in self.labels if v != -1})


def canonicalize_labels(labels: np.ndarray) -> np.ndarray:
    """Renumber non-outlier labels to 0..C-1 in order of first appearance."""
    mapping: dict[int, int] = {}
    out = np.full(len(labels), -1, dtype=int)
    for i, lab in enumerate(labels):
        lab = int(lab)
        if lab == -1:
            continue
        if lab not in mapping:
            mapping[lab] = len(mapping)
        out[i] = mapping[lab]
    return out


def pairwise_distances(x: np.ndarray, metric: str) -> np.ndarray:
    """Dense distance matrix. Cosine is 1 - dot of L2-normalized rows
    (clamped at 0, self-distance forced to 0); euclidean is the usual norm.
    """
    if metric not in METRICS:
        raise DdceError(f"unknown metric {metric!r}, expected one of {METRICS}")
    n = x.shape[0]
    D = np.empty((n, n))
    if metric == "cosine":
        norms = np.linalg.norm(x, axis=1, keepdims=True)
        xn = x / np.where(norms == 0.0, 1.0, norms)
        for i in range(n):
            D[i] = np.maximum(0.0, 1.0 - (xn * xn[i]).sum(axis=1))
        np.fill_diagonal(D, 0.0)
    else:
        for i in range(n):
            D[i] = np.sqrt(((x - x[i]) ** 2).sum(axis=1))
    return D


def _ordering_from_distances(
    D: np.ndarray,
    ids: list[str],
    params: OpticsParams,
    sorted_d: np.ndarray | None = None,
) -> ReachabilityOrdering:
    n = D.shape[0]
    if n == 0:
        empty_f = np.empty(0)
        empty_i = np.empty(0, dtype=int)
        return ReachabilityOrdering(
            order=empty_i, reachability=empty_f, core_distance=empty_f,
            predecessor=empty_i, ids=list(ids),
        )
    # Core distance counts the point itself among its neighbors.
    if params.min_samples > n:
        core = np.full(n, np.inf)
    else:
        if sorted_d is None:
            kth = np.partition(D, params.min_samples - 1, axis=1)[:, params.min_samples - 1]
        else:
            kth = sorted_d[:, params.min_samples - 1]
        core = np.where(kth <= params.max_eps, kth, np.inf)

    reach = np.full(n, np.inf)
    pred = np.full(n, -1, dtype=int)
    processed = np.zeros(n, dtype=bool)
    order = np.empty(n, dtype=int)
    pos = 0
    for start in range(n):
        if processed[start]:
            continue
        current = start
        while current != -1:
            processed[current] = True
            order[pos] = current
            pos += 1
            if np.isfinite(core[current]):
                drow = D[current]
                mask = (~processed) & (drow <= params.max_eps)
                if mask.any():
                    idx = np.flatnonzero(mask)
                    cand = np.maximum(core[current], drow[idx])
                    better = cand < reach[idx]
                    upd = idx[better]
                    reach[upd] = cand[better]
                    pred[upd] = current
            masked = np.where(processed, np.inf, reach)
            nxt = int(np.argmin(masked))
            current = nxt if np.isfinite(masked[nxt]) else -1
    return ReachabilityOrdering(
        order=order, reachability=reach, core_distance=core, predecessor=pred, ids=list(ids)
    )


def compute_ordering(
    x: EmbeddingMatrix, params: OpticsParams, metric: str = "cosine"
) -> ReachabilityOrdering:
    """Standard OPTICS: expand from each unprocessed point (index order),
    repeatedly processing the unreached point with the smallest tentative
    reachability, ties broken by smallest index."""
    D = pairwise_distances(x.data, metric)
    return _ordering_from_distances(D, x.row_ids, params)


def _extend_region(steep: np.ndarray, xward: np.ndarray, start: int, min_samples: int) -> int:
    """Grow a steep area from ``start``: ends at the last steep point before
    either a point moving the wrong way or more than min_samples
    consecutive flat points."""
    n = len(steep)
    index = start
    end = start
    non_xward = 0
    while index < n:
        if steep[index]:
            non_xward = 0
            end = index
        elif not xward[index]:
            non_xward += 1
            if non_xward > min_samples:
                break
        else:
            return end
        index += 1
    return end


def _filter_sdas(r: np.ndarray, sdas: list[dict], mib: float, xi_complement: float) -> list[dict]:
    if np.isinf(mib):
        return []
    kept = [sda for sda in sdas if mib <= r[sda["start"]] * xi_complement]
    for sda in kept:
        sda["mib"] = max(sda["mib"], mib)
    return kept


def _xi_candidate_clusters(r: np.ndarray, xi: float, min_samples: int) -> list[tuple[int, int]]:
    """Candidate cluster intervals (inclusive, in ordering positions) from
    the reachability plot, per the steep up/down area construction."""
    xi_complement = 1.0 - xi
    r = np.hstack([r, np.inf])
    with np.errstate(invalid="ignore", divide="ignore"):
        ratio = r[:-1] / r[1:]
        steep_up = ratio <= xi_complement
        steep_down = ratio >= 1.0 / xi_complement
        upward = ratio < 1.0
        downward = ratio > 1.0

    clusters: list[tuple[int, int]] = []
    sdas: list[dict] = []
    index = 0
    mib = 0.0
    for steep_index in np.flatnonzero(steep_up | steep_down):
        steep_index = int(steep_index)
        if steep_index < index:
            continue
        mib = max(mib, float(np.max(r[index : steep_index + 1])))
        if steep_down[steep_index]:
            sdas = _filter_sdas(r, sdas, mib, xi_complement)
            d_start = steep_index
            d_end = _extend_region(steep_down, upward, d_start, min_samples)
            sdas.append({"start": d_start, "end": d_end, "mib": 0.0})
            index = d_end + 1
            mib = float(r[index])
        else:
            sdas = _filter_sdas(r, sdas, mib, xi_complement)
            u_start = steep_index
            u_end = _extend_region(steep_up, downward, u_start, min_samples)
            index = u_end + 1
            mib = float(r[index])
            for sda in sdas:
                c_start = sda["start"]
                c_end = u_end
                # Cluster must dip below both of its shoulders.
                if r[c_end + 1] * xi_complement < sda["mib"]:
                    continue
                d_max = r[sda["start"]]
                if d_max * xi_complement >= r[c_end + 1]:
                    # Left shoulder higher: trim the start down to the end's level.
                    while r[c_start + 1] > r[c_end + 1] and c_start < sda["end"]:
                        c_start += 1
                elif r[c_end + 1] * xi_complement >= d_max:
                    # Right shoulder higher: trim the end down to the start's level.
                    while r[c_end - 1] > d_max and c_end > u_start:
                        c_end -= 1
                if c_end - c_start + 1 < min_samples:
                    continue
                if c_start > sda["end"]:
                    continue
                if c_end < u_start:
                    continue
                clusters.append((c_start, c_end))
    return clusters


def extract_xi_clusters(ordering: ReachabilityOrdering, xi: float, min_samples: int) -> Partition:
    """Extract clusters as valleys between steep-down and steep-up areas of
    the reachability plot. Each point is assigned to the smallest candidate
    interval containing it; points in no candidate become outliers."""
    if not 0.0 < xi < 1.0:
        raise DdceError(f"xi must be in (0, 1), got {xi}")
    n = len(ordering.order)
    labels = np.full(n, -1, dtype=int)
    if n > 0:
        r = ordering.reachability[ordering.order]
        cands = _xi_candidate_clusters(r, xi, min_samples)
        by_size = sorted(cands, key=lambda c: c[1] - c[0], reverse=True)
        pos_labels = np.full(n, -1, dtype=int)
        for lab, (s, e) in enumerate(by_size):
            pos_labels[s : e + 1] = lab
        labels[ordering.order] = pos_labels
    return Partition(labels=canonicalize_labels(labels), ids=list(ordering.ids))


def filter_small_clusters(p: Partition, s_min: int) -> Partition:
    """Relabel every cluster smaller than ``s_min`` as outliers and
    renumber the survivors by first appearance."""
    if s_min < 1:
        raise DdceError(f"s_min must be >= 1, got {s_min}")
    labels = np.asarray(p.labels).copy()
    values, counts = np.unique(labels[labels != -1], return_counts=True)
    small = {int(v) for v, c in zip(values, counts) if c < s_min}
    if small:
        labels = np.array([-1 if int(v) in small else int(v) for v in labels], dtype=int)
    return Partition(labels=canonicalize_labels(labels), ids=list(p.ids))


def cluster(
    x: EmbeddingMatrix, params: OpticsParams, s_min: int, metric: str = "cosine"
) -> Partition:
    """Full density clustering pass: ordering, xi extraction, small-cluster
    outlier filtering."""
    if x.n == 0:
        return Partition(labels=np.empty(0, dtype=int), ids=list(x.row_ids))
    ordering = compute_ordering(x, params, metric)
    extracted = extract_xi_clusters(ordering, params.xi, params.min_samples)
    return filter_small_clusters(extracted, s_min)


def cluster_with_distances(
    D: np.ndarray,
    ids: list[str],
    params: OpticsParams,
    s_min: int,
    sorted_d: np.ndarray | None = None,
) -> Partition:
    """As :func:`cluster` but on a precomputed distance matrix, optionally
    with its row-sorted copy; lets a hyperparameter search reuse both."""
    if D.shape[0] == 0:
        return Partition(labels=np.empty(0, dtype=int), ids=list(ids))
    ordering = _ordering_from_distances(D, ids, params, sorted_d=sorted_d)
    extracted = extract_xi_clusters(ordering, params.xi, params.min_samples)
    return filter_small_clusters(extracted, s_min)


def save_partition_jsonl(p: Partition, path: str) -> None:
    lines = [
        json.dumps({"id": rid, "cluster": int(lab)}, ensure_ascii=False)
        for rid, lab in zip(p.ids, p.labels)
    ]
    atomic_write_text(path, "\n".join(lines) + ("\n" if lines else ""))


def load_partition_jsonl(path: str) -> Partition:
    ids = []
    labels = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
                ids.append(str(obj["id"]))
                labels.append(int(obj["cluster"]))
            except (json.JSONDecodeError, KeyError, ValueError) as exc:
                raise DdceError(f"{path}:{lineno}: bad partition row: {exc}") from exc
    return Partition(labels=np.array(labels, dtype=int), ids=ids)
