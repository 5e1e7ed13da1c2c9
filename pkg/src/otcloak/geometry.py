"""OT distances between node neighborhoods, margins and boundary cloaks."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, NamedTuple

import numpy as np

from .cost_model import OtGeometry, pairwise_sq, project
from .errors import EmptyNeighborhood
from .features import MeasureCache, MeasureParams, NeighborMeasure
from .graph import DirectedSocialGraph, Label
from .ot import CostMatrix, SinkhornConfig, TransportPlan, sinkhorn_batch

TOP_BOUNDARY = 50


class DistanceCache:
    """Memo of D(v, xi) keyed on ordered node pairs.

    Entries are tied to a graph version and a geometry object. Baseline
    entries survive edit/reset cycles; everything else is dropped as soon as
    the graph or geometry changes. The geometry must not be mutated in place
    while a cache refers to it.
    """

    def __init__(self, measure_params: MeasureParams = MeasureParams()):
        self.measures = MeasureCache(measure_params)
        self.hits = 0
        self.misses = 0
        self._store: dict = {}

    def _slot(self, g: DirectedSocialGraph, geo: OtGeometry, cfg: SinkhornConfig) -> dict:
        key = (g.version, id(geo), cfg)
        slot = self._store.get(key)
        if slot is None:
            keep = g.baseline_version
            self._store = {k: s for k, s in self._store.items() if k[0] == keep and k[1] == id(geo)}
            slot = self._store[key] = {"dist": {}, "proj": {}}
        return slot

    def clear(self):
        self._store = {}

    def __len__(self):
        return sum(len(s["dist"]) for s in self._store.values())


def _projections(geo, g, nodes, measures: MeasureCache, proj_memo: dict | None):
    out = {}
    todo = []
    for n in nodes:
        if proj_memo is not None and n in proj_memo:
            out[n] = proj_memo[n]
        else:
            todo.append(n)
    if todo:
        mus = [measures.get(g, n) for n in todo]
        Q = project(geo, np.concatenate([m.atoms for m in mus]))
        off = 0
        for n, m in zip(todo, mus):
            out[n] = Q[off:off + len(m)]
            off += len(m)
            if proj_memo is not None:
                proj_memo[n] = out[n]
    return out


def ot_costs(geo: OtGeometry, g: DirectedSocialGraph, v: int, others: Iterable[int],
             measures: MeasureCache, proj_memo: dict | None = None) -> list[CostMatrix]:
    others = list(others)
    proj = _projections(geo, g, [v] + others, measures, proj_memo)
    mu_v = measures.get(g, v)
    if not others:
        return []
    Qo = np.concatenate([proj[x] for x in others])
    big = pairwise_sq(proj[v], Qo)
    costs, off = [], 0
    for x in others:
        k = len(proj[x])
        costs.append(CostMatrix(big[:, off:off + k], mu_v.weights, measures.get(g, x).weights))
        off += k
    return costs


def ot_plans(geo, g, v, others, cfg: SinkhornConfig = SinkhornConfig(),
             measures: MeasureCache | None = None) -> list[TransportPlan]:
    measures = measures or MeasureCache()
    return sinkhorn_batch(ot_costs(geo, g, v, others, measures), cfg)


def ot_distances(geo: OtGeometry, g: DirectedSocialGraph, v: int, others: Iterable[int],
                 cfg: SinkhornConfig = SinkhornConfig(), cache: DistanceCache | None = None) -> np.ndarray:
    """D(v, x) = <P*, C> for each x, solved as one batch."""
    others = list(others)
    if cache is None:
        measures, dist, proj = MeasureCache(), None, None
    else:
        slot = cache._slot(g, geo, cfg)
        measures, dist, proj = cache.measures, slot["dist"], slot["proj"]
    out = np.empty(len(others))
    todo = []
    for k, x in enumerate(others):
        if dist is not None and (v, x) in dist:
            out[k] = dist[(v, x)]
            cache.hits += 1
        else:
            todo.append(k)
    if todo:
        plans = sinkhorn_batch(ot_costs(geo, g, v, [others[k] for k in todo], measures, proj), cfg)
        for k, plan in zip(todo, plans):
            out[k] = plan.cost
            if dist is not None:
                dist[(v, others[k])] = plan.cost
                cache.misses += 1
    return out


def ot_distance(geo, g, v, xi, cfg: SinkhornConfig = SinkhornConfig(), cache: DistanceCache | None = None) -> float:
    return float(ot_distances(geo, g, v, [xi], cfg, cache)[0])


def has_neighbors(g: DirectedSocialGraph, v: int) -> bool:
    g._check(v)
    return bool(g._out[v]) or bool(g._in[v])


def margin(geo, g, v, humans, bots, cfg: SinkhornConfig = SinkhornConfig(), cache: DistanceCache | None = None):
    from .training import mine_nearest
    return mine_nearest(geo, g, v, humans, bots, cfg, cache)


class CloakCandidate(NamedTuple):
    node: int
    margin: float
    rank: int

    def to_json(self):
        return {"node": int(self.node), "margin": float(self.margin), "rank": int(self.rank)}


def boundary_candidates(geo, g, labels=None, predictions=None, tau_bdry: float = 0.1,
                        degree_cap: float = 1, cfg: SinkhornConfig = SinkhornConfig(),
                        cache: DistanceCache | None = None, humans=None, bots=None,
                        top: int | None = TOP_BOUNDARY) -> list[CloakCandidate]:
    """Misclassified true bots near the human side of the OT margin.

    Bots with total degree above ``degree_cap`` are skipped, as are bots with
    no neighbors (the margin is undefined for them). Candidates are sorted by
    ascending margin, ties by node id, truncated to ``top``.
    """
    labels = g.labels() if labels is None else labels
    predictions = predictions or {}
    if humans is None:
        humans = [n for n in g.nodes() if labels.get(n) == Label.HUMAN and has_neighbors(g, n)]
    if bots is None:
        bots = [n for n in g.nodes() if labels.get(n) == Label.BOT and has_neighbors(g, n)]
    out = []
    for b in g.nodes():
        if labels.get(b) != Label.BOT or predictions.get(b) != Label.HUMAN:
            continue
        if sum(g.deg_counts(b)) > degree_cap or not has_neighbors(g, b):
            continue
        rec = margin(geo, g, b, humans, bots, cfg, cache)
        if rec.margin <= tau_bdry:
            out.append((rec.margin, b))
    out.sort()
    if top is not None:
        out = out[:top]
    return [CloakCandidate(b, m, r) for r, (m, b) in enumerate(out)]
