"""Pairwise view scores and the two source-selection policies.

The score of a view pair accumulates, over co-visible surface anchors, a
piecewise Gaussian of the baseline angle at the anchor: exp(-(theta -
theta0)^2 / (2 sigma1^2)) for theta <= theta0, else with sigma2, using
theta0 = 5 degrees, sigma1 = 1, sigma2 = 10. Anchors come from the
synthetic scene generator or an anchor-point file; sparse SfM points would
fill the same role on real data.

Selection is asymmetric by design: the teacher branch takes the top-K
scored sources deterministically, the student branch samples sources with
probability proportional to score (sequential draws without replacement).
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .errors import ContractError
from .geometry import Camera

THETA0_DEG = 5.0
SIGMA1 = 1.0
SIGMA2 = 10.0


@dataclass(frozen=True)
class ViewScoreMatrix:
    """Symmetric-by-construction pairwise scores with a zero diagonal."""

    score: np.ndarray

    def __post_init__(self):
        s = np.asarray(self.score, dtype=np.float64)
        if s.ndim != 2 or s.shape[0] != s.shape[1]:
            raise ContractError("score matrix must be square")
        if not np.isfinite(s).all() or (s < 0).any():
            raise ContractError("scores must be finite and nonnegative")
        if np.any(np.diag(s) != 0):
            raise ContractError("diagonal scores must be zero")
        object.__setattr__(self, "score", s)
        self.score.setflags(write=False)

    @property
    def n_views(self) -> int:
        return self.score.shape[0]


def piecewise_gaussian(theta_deg):
    """MVSNet-style angle kernel, peaked at theta0 with asymmetric falloff."""
    theta_deg = np.asarray(theta_deg, dtype=np.float64)
    sigma = np.where(theta_deg <= THETA0_DEG, SIGMA1, SIGMA2)
    return np.exp(-((theta_deg - THETA0_DEG) ** 2) / (2.0 * sigma**2))


def compute_view_scores(cams, anchors, visibility) -> ViewScoreMatrix:
    """Score every view pair from baseline angles at co-visible anchors.

    Parameters
    ----------
    cams : sequence of Camera
    anchors : (A, 3) array of surface points
    visibility : (A, n_views) bool array

    Pairs with no co-visible anchor score 0.
    """
    cams = list(cams)
    n = len(cams)
    if n < 2:
        raise ContractError("need at least 2 views")
    anchors = np.asarray(anchors, dtype=np.float64)
    vis = np.asarray(visibility, dtype=bool)
    if anchors.ndim != 2 or anchors.shape[1] != 3 or vis.shape != (len(anchors), n):
        raise ContractError("anchors must be (A, 3) with (A, n_views) visibility")
    if not (vis.sum(axis=1) >= 2).any():
        raise ContractError("need at least one anchor visible in >= 2 views")

    centers = np.stack([c.center for c in cams])
    score = np.zeros((n, n))
    for i in range(n):
        for j in range(i + 1, n):
            co = vis[:, i] & vis[:, j]
            if not co.any():
                continue
            p = anchors[co]
            v1 = centers[i] - p
            v2 = centers[j] - p
            # atan2 of (|cross|, dot) stays well conditioned near 0 and 180.
            cross = np.linalg.norm(np.cross(v1, v2), axis=1)
            dot = np.sum(v1 * v2, axis=1)
            theta = np.degrees(np.arctan2(cross, dot))
            s = float(piecewise_gaussian(theta).sum())
            score[i, j] = s
            score[j, i] = s
    return ViewScoreMatrix(score)


def select_top_k(scores: ViewScoreMatrix, ref: int, k: int) -> list[int]:
    """The k best-scored sources for ``ref``, descending, ties by ascending id."""
    n = scores.n_views
    if not (1 <= k <= n - 1):
        raise ContractError(f"k must be in [1, {n - 1}], got {k}")
    if not (0 <= ref < n):
        raise ContractError(f"reference index {ref} out of range")
    candidates = [j for j in range(n) if j != ref]
    candidates.sort(key=lambda j: (-scores.score[ref, j], j))
    return candidates[:k]


def sample_by_score(scores: ViewScoreMatrix, ref: int, k: int, rng) -> list[int]:
    """Draw k distinct sources, each with probability proportional to score.

    Draws are sequential without replacement over the remaining candidates,
    reproducible from the seed. If fewer than k sources have positive score,
    all positive ones are taken and the rest filled uniformly from the
    zero-score sources (degenerate case, warned).
    """
    n = scores.n_views
    if not (1 <= k <= n - 1):
        raise ContractError(f"k must be in [1, {n - 1}], got {k}")
    if not (0 <= ref < n):
        raise ContractError(f"reference index {ref} out of range")
    rng = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)

    candidates = np.array([j for j in range(n) if j != ref])
    weights = scores.score[ref, candidates].astype(np.float64).copy()
    positive = weights > 0

    if int(positive.sum()) < k:
        warnings.warn(
            f"only {int(positive.sum())} sources have positive score for ref {ref}; "
            f"filling up to k={k} uniformly from zero-score sources",
            RuntimeWarning,
            stacklevel=2,
        )
        chosen = list(candidates[positive])
        zeros = candidates[~positive]
        extra = rng.choice(zeros, size=k - len(chosen), replace=False)
        return chosen + [int(v) for v in extra]

    chosen = []
    for _ in range(k):
        p = weights / weights.sum()
        idx = int(rng.choice(len(candidates), p=p))
        chosen.append(int(candidates[idx]))
        candidates = np.delete(candidates, idx)
        weights = np.delete(weights, idx)
    return chosen
