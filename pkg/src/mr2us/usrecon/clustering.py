"""DBSCAN density clustering and displacement-consensus filtering.

Matched point pairs between two frames should share one displacement when the
inter-frame motion is pure translation. Clustering the displacement vectors
and keeping the largest cluster rejects outlier matches without choosing the
number of clusters in advance.
"""

from __future__ import annotations

import numpy as np

from ..errors import NoConsensusError, ValidationError
from ..types import ConsensusResult, MatchSet

NOISE = -1


def dbscan(points, eps: float, min_pts: int):
    """Labels per point: cluster id >= 0 or -1 for noise.

    Core points have >= min_pts neighbors (incl. themselves) within eps;
    clusters are maximal density-connected sets.
    """
    if eps <= 0:
        raise ValidationError("eps must be > 0")
    if min_pts < 1:
        raise ValidationError("min_pts must be >= 1")
    pts = np.asarray(points, dtype=float)
    n = len(pts)
    if n == 0:
        return []
    d2 = ((pts[:, None, :] - pts[None, :, :]) ** 2).sum(axis=2)
    neighbors = [np.nonzero(d2[i] <= eps**2)[0] for i in range(n)]
    is_core = np.array([len(nb) >= min_pts for nb in neighbors])

    labels = np.full(n, NOISE, dtype=int)
    cluster = 0
    for i in range(n):
        if labels[i] != NOISE or not is_core[i]:
            continue
        # grow a new cluster from this unvisited core point
        labels[i] = cluster
        frontier = list(neighbors[i])
        while frontier:
            j = frontier.pop()
            if labels[j] == NOISE:
                labels[j] = cluster
                if is_core[j]:
                    frontier.extend(k for k in neighbors[j] if labels[k] == NOISE)
        cluster += 1
    return labels.tolist()


def consensus_filter(m: MatchSet, eps: float, min_pts: int) -> ConsensusResult:
    """Keep the largest displacement cluster of a MatchSet as inliers.

    Ties between equally sized clusters go to the one with the lowest
    within-cluster displacement variance, then the lowest cluster id.
    Raises NoConsensusError when every displacement is labeled noise.
    """
    if len(m) == 0:
        raise ValidationError("consensus_filter requires a nonempty MatchSet")
    disp = m.displacements()
    labels = np.asarray(dbscan(disp, eps, min_pts))
    cluster_ids = [c for c in np.unique(labels) if c != NOISE]
    if not cluster_ids:
        raise NoConsensusError(
            f"no dense displacement cluster among {len(m)} matches (eps={eps})"
        )

    def key(c):
        members = disp[labels == c]
        return (-len(members), float(members.var(axis=0).mean()), c)

    best = min(cluster_ids, key=key)
    idx = np.nonzero(labels == best)[0]
    inliers = [m.pairs[i] for i in idx]
    mean_disp = disp[idx].mean(axis=0)
    return ConsensusResult(
        inliers=inliers,
        mean_displacement=(float(mean_disp[0]), float(mean_disp[1])),
        cluster_size=len(idx),
        rejected=len(m) - len(idx),
    )
