"""Neighbor feature atoms and importance-weighted neighborhood measures."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import EmptyNeighborhood, NotNeighbor
from .graph import DirectedSocialGraph, Label, ego_neighborhood

MUTUAL, FOLLOWER, FOLLOWEE = 0, 1, 2

# column offsets inside an atom
COL_TYPE, COL_DEG_IN, COL_DEG_OUT, COL_ROLE, COL_CONTENT = 0, 1, 2, 3, 4


def atom_dim(content_dim: int) -> int:
    return 4 + content_dim + 2


def age_col(dim: int) -> int:
    return dim - 2


@dataclass(frozen=True)
class MeasureParams:
    alpha_deg: float = 0.8
    alpha_time: float = 0.2

    def __post_init__(self):
        if self.alpha_deg < 0 or self.alpha_time < 0:
            raise ValueError("importance exponents must be nonnegative")


@dataclass
class NeighborMeasure:
    """Weighted point cloud of neighbor atoms, one row per neighbor."""

    node: int
    neighbors: np.ndarray  # int64, ascending
    atoms: np.ndarray  # (k, d)
    weights: np.ndarray  # (k,), positive, sums to 1

    def __len__(self):
        return len(self.neighbors)


def edge_role(g: DirectedSocialGraph, v: int, u: int) -> int:
    """Role of ``u`` relative to ``v``: 1 follower, 2 followee, 0 mutual."""
    g._check(v)
    g._check(u)
    follower = g.has_edge(u, v)
    followee = g.has_edge(v, u)
    if follower and followee:
        return MUTUAL
    if follower:
        return FOLLOWER
    if followee:
        return FOLLOWEE
    raise NotNeighbor(f"{u} is not adjacent to {v}")


def neighbor_features(g: DirectedSocialGraph, v: int, u: int) -> np.ndarray:
    role = edge_role(g, v, u)
    rec_u, rec_v = g.record(u), g.record(v)
    deg_in, deg_out = g.deg_counts(u)
    return np.concatenate((
        [1.0 if rec_u.label == Label.BOT else 0.0, deg_in, deg_out, role],
        rec_u.content,
        [rec_u.age_norm, rec_u.age_norm - rec_v.age_norm],
    ))


def _score(deg_raw: float, age: float, p: MeasureParams) -> float:
    return (1.0 + p.alpha_deg * math.log1p(deg_raw)) * (1.0 + p.alpha_time * age)


def importance_score(g: DirectedSocialGraph, v: int, u: int, p: MeasureParams = MeasureParams()) -> float:
    edge_role(g, v, u)  # adjacency check
    deg_in, deg_out = g.deg_counts(u)
    return _score(deg_in + deg_out, g.record(u).age_norm, p)


def normalize_scores(scores) -> np.ndarray:
    s = np.asarray(scores, dtype=np.float64)
    return s / s.sum()


def neighborhood_measure(g: DirectedSocialGraph, v: int, p: MeasureParams = MeasureParams()) -> NeighborMeasure:
    nbrs = ego_neighborhood(g, v, 1)
    if not nbrs:
        raise EmptyNeighborhood(f"node {v} has no neighbors")
    atoms = np.stack([neighbor_features(g, v, u) for u in nbrs])
    a = age_col(atoms.shape[1])
    scores = [_score(row[COL_DEG_IN] + row[COL_DEG_OUT], row[a], p) for row in atoms]
    return NeighborMeasure(v, np.array(nbrs, dtype=np.int64), atoms, normalize_scores(scores))


class MeasureCache:
    """Memo of neighborhood measures keyed by graph version.

    Entries for the baseline version survive edits and resets; entries for
    any other version are dropped as soon as the graph moves on.
    """

    def __init__(self, params: MeasureParams = MeasureParams()):
        self.params = params
        self._memo: dict[int, dict[int, NeighborMeasure]] = {}

    def get(self, g: DirectedSocialGraph, v: int) -> NeighborMeasure:
        memo = self._memo.get(g.version)
        if memo is None:
            keep = g.baseline_version
            self._memo = {k: d for k, d in self._memo.items() if k == keep}
            memo = self._memo[g.version] = {}
        m = memo.get(v)
        if m is None:
            m = memo[v] = neighborhood_measure(g, v, self.params)
        return m
