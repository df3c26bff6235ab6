"""Random search over OPTICS hyperparameters, scored on a held-out split
with injected outliers."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np

from . import metrics, optics
from .embed import EmbeddingMatrix
from .errors import AlignmentError, DdceError, EmptySearchError
from .util import atomic_write_text, substream


@dataclass(frozen=True)
class SearchSpace:
    max_eps_range: tuple[float, float] = (0.0, 0.5)
    xi_range: tuple[float, float] = (0.0, 0.5)
    min_samples_range: tuple[int, int] = (2, 20)
    n_trials: int = 100

    def __post_init__(self):
        if not self.max_eps_range[0] < self.max_eps_range[1]:
            raise DdceError(f"empty max_eps range {self.max_eps_range}")
        if not self.xi_range[0] < self.xi_range[1]:
            raise DdceError(f"empty xi range {self.xi_range}")
        if self.min_samples_range[0] > self.min_samples_range[1]:
            raise DdceError(f"empty min_samples range {self.min_samples_range}")
        if self.min_samples_range[0] < 2:
            raise DdceError("min_samples must be >= 2")


@dataclass(frozen=True)
class Trial:
    index: int
    params: optics.OpticsParams
    scores: metrics.Scores


@dataclass(frozen=True)
class SearchResult:
    best_params: optics.OpticsParams
    best_scores: metrics.Scores
    trials: list[Trial] = field(default_factory=list)


def _open_uniform(rng: np.random.Generator, lo: float, hi: float) -> float:
    # rng.uniform samples the half-open [lo, hi); reject the endpoint so the
    # result lies strictly inside the open interval.
    value = rng.uniform(lo, hi)
    while value <= lo:
        value = rng.uniform(lo, hi)
    return float(value)


def sample_params(space: SearchSpace, rng: np.random.Generator) -> optics.OpticsParams:
    """One uniform draw from the space: reals on open intervals, the
    min-samples count on its inclusive integer interval."""
    max_eps = _open_uniform(rng, *space.max_eps_range)
    xi = _open_uniform(rng, *space.xi_range)
    lo, hi = space.min_samples_range
    min_samples = int(rng.integers(lo, hi + 1))
    return optics.OpticsParams(max_eps=max_eps, xi=xi, min_samples=min_samples)


def random_search(
    e_hs: EmbeddingMatrix,
    truth,
    space: SearchSpace,
    s_min: int,
    seed: int,
    metric: str = "cosine",
) -> SearchResult:
    """Run ``space.n_trials`` independent trials of sample/cluster/score and
    keep the highest-scoring parameters (earliest trial on ties).

    Each trial draws from its own stream derived from (seed, trial index),
    so results do not depend on evaluation order. The distance matrix is
    shared across trials since the embeddings never change.
    """
    if space.n_trials < 1:
        raise EmptySearchError("random search needs at least 1 trial")
    truth_ids = [r.id for r in truth.rows]
    if e_hs.row_ids != truth_ids:
        raise AlignmentError("embedding rows are not aligned with the validation rows")
    D = optics.pairwise_distances(e_hs.data, metric)
    sorted_d = np.sort(D, axis=1)
    trials = []
    best: Trial | None = None
    for t in range(space.n_trials):
        params = sample_params(space, substream(seed, "trial", t))
        part = optics.cluster_with_distances(D, e_hs.row_ids, params, s_min, sorted_d=sorted_d)
        scores = metrics.score(truth, part)
        trial = Trial(index=t, params=params, scores=scores)
        trials.append(trial)
        if best is None or trial.scores.score > best.scores.score:
            best = trial
    return SearchResult(best_params=best.params, best_scores=best.scores, trials=trials)


def trials_to_csv(result: SearchResult) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["trial_idx", "max_eps", "xi", "min_samples", "score_c", "score_ari", "score"])
    for t in result.trials:
        writer.writerow([
            t.index, t.params.max_eps, t.params.xi, t.params.min_samples,
            t.scores.score_c, t.scores.score_ari, t.scores.score,
        ])
    return buf.getvalue()


def save_trial_log(result: SearchResult, path: str) -> None:
    atomic_write_text(path, trials_to_csv(result))
