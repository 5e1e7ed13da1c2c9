"""Cloak-based evasion: neighbor restriction, cloning and the trial drivers."""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field, replace
from typing import Callable, NamedTuple

import numpy as np

from .features import MeasureCache
from .errors import ConstraintViolation, EmptyNeighborhood, EmptyPool, InvalidParams
from .geometry import (TOP_BOUNDARY, CloakCandidate, DistanceCache, boundary_candidates, has_neighbors,
                       ot_distances, ot_plans)
from .graph import FOLLOW, DirectedSocialGraph, EdgeEdit, Label, apply_edits
from .ot import SinkhornConfig, row_masses
from .sampler import cloak_profile, importance_weights, sample_cloak

log = logging.getLogger(__name__)

SUCCESS, FAILURE, BUDGET_EXCEEDED = "success", "failure", "budget_exceeded"
FRESH_AGE_MAX = 0.1


@dataclass(frozen=True)
class AttackConfig:
    budget_delta: int = 5
    top_k: int | None = None  # None: same as budget_delta
    reuse_cap: int = 3
    flag_hb: bool = True
    trials: int = 50
    sinkhorn: SinkhornConfig = SinkhornConfig()
    tau_bdry: float = 0.1
    degree_cap: float | None = None  # None: same as budget_delta
    top_boundary: int = TOP_BOUNDARY
    human_pool_size: int = 200
    reset_on_saturation: bool = False
    seed: int = 0

    def __post_init__(self):
        if self.budget_delta < 0:
            raise InvalidParams("budget_delta must be >= 0")
        if self.top_k is not None and self.top_k < 0:
            raise InvalidParams("top_k must be >= 0")
        if self.reuse_cap < 1 or self.trials < 0:
            raise InvalidParams("reuse_cap >= 1 and trials >= 0 required")

    @property
    def effective_top_k(self) -> int:
        return self.budget_delta if self.top_k is None else self.top_k

    @property
    def effective_degree_cap(self) -> float:
        return self.budget_delta if self.degree_cap is None else self.degree_cap

    def resolved(self) -> dict:
        d = asdict(self)
        d["top_k"] = self.effective_top_k
        d["degree_cap"] = self.effective_degree_cap
        return d

    @classmethod
    def from_json(cls, d: dict) -> "AttackConfig":
        d = dict(d)
        if isinstance(d.get("sinkhorn"), dict):
            d["sinkhorn"] = SinkhornConfig(**d["sinkhorn"])
        return cls(**d)


@dataclass(frozen=True)
class AttackTrace:
    trial: int
    target: int
    cloak: int | None
    edits: tuple
    outcome: str
    detector_before: Label
    detector_after: Label | None
    mode: str = "edit"
    fallback: bool = False

    @property
    def adds(self) -> int:
        return sum(1 for e in self.edits if e.op == "add")

    @property
    def deletes(self) -> int:
        return sum(1 for e in self.edits if e.op == "delete")

    def to_json(self) -> dict:
        return {
            "trial": self.trial,
            "target": int(self.target),
            "cloak": None if self.cloak is None else int(self.cloak),
            "edits": [e.to_json() for e in self.edits],
            "outcome": self.outcome,
            "detector_before": str(self.detector_before),
            "detector_after": None if self.detector_after is None else str(self.detector_after),
            "mode": self.mode,
            "fallback": self.fallback,
        }


# -- OT-guided neighbor restriction ---------------------------------------------

def select_top_rows(neighbors, rho, allowed, top_k: int) -> frozenset:
    """Top-k allowed neighbors by row mass, ties to the lower node id."""
    rows = [(-float(r), int(n)) for n, r in zip(neighbors, rho) if n in allowed]
    rows.sort()
    return frozenset(n for _, n in rows[:top_k])


def nearest_humans(geo, g, v, humans, cfg: SinkhornConfig, cache=None) -> list[tuple[float, int]]:
    hs = [h for h in humans if h != v and has_neighbors(g, h)]
    if not hs:
        raise EmptyPool("no humans with neighbors")
    d = ot_distances(geo, g, v, hs, cfg, cache)
    return sorted((float(x), h) for x, h in zip(d, hs))


def ot_guided_neighbors(geo, g: DirectedSocialGraph, t: int, epsilon: float, top_k: int,
                        cache: DistanceCache | None = None, humans=None,
                        sinkhorn: SinkhornConfig = SinkhornConfig(), labels=None):
    """Out-neighbors of ``t`` that carry the most plan mass toward its nearest human.

    Returns None for "no restriction".
    """
    g._check(t)
    if epsilon <= 0 or top_k <= 0:
        return None
    if not has_neighbors(g, t):
        raise EmptyNeighborhood(f"cloak {t} has no neighbors")
    labels = g.labels() if labels is None else labels
    if humans is None:
        humans = [n for n in g.nodes() if labels.get(n) == Label.HUMAN]
    cfg = replace(sinkhorn, epsilon=float(epsilon))
    _, h_star = nearest_humans(geo, g, t, humans, cfg, cache)[0]
    measures = cache.measures if cache is not None else MeasureCache()
    plan = ot_plans(geo, g, t, [h_star], cfg, measures)[0]
    mu_t = measures.get(g, t)
    return select_top_rows(mu_t.neighbors.tolist(), row_masses(plan), set(g._out[t]), top_k)


# -- cloning a cloak onto the target ----------------------------------------------

class ClonePlan(NamedTuple):
    edits: tuple
    content: np.ndarray
    age_norm: float

    @property
    def adds(self) -> int:
        return sum(1 for e in self.edits if e.op == "add")


def clone_cloak(g: DirectedSocialGraph, v_tar: int, t: int, restriction, flag_hb: bool = True,
                labels=None, age_norm: float = 0.0, mode: str = "edit") -> ClonePlan:
    """Edit plan that gives ``v_tar`` the follow neighborhood of ``t``.

    In ``edit`` mode the target's current neighborhood is replaced: incident
    edges not in the cloned set are deleted and only missing edges are added.
    In ``inject`` mode only additions are produced. Nothing is mutated here.
    """
    if t == v_tar:
        raise InvalidParams("cloak and target must differ")
    g._check(v_tar)
    labels = g.labels() if labels is None else labels
    outs = sorted(x for x, rels in g._out[t].items() if FOLLOW in rels)
    allowed = outs
    if restriction is not None:
        allowed = [x for x in outs if x in restriction] or outs
    want = [(v_tar, x) for x in allowed if x != v_tar]
    for x in sorted(x for x, rels in g._in[t].items() if FOLLOW in rels):
        if x == v_tar or (flag_hb and labels.get(x) == Label.HUMAN):
            continue
        want.append((x, v_tar))
    want_set = set(want)
    edits = []
    if mode == "edit":
        for u, v, r in g.edge_triples_of(v_tar):
            if r != FOLLOW or (u, v) not in want_set:
                edits.append(EdgeEdit("delete", u, v, r))
    elif mode != "inject":
        raise InvalidParams(f"unknown mode {mode!r}")
    edits += [EdgeEdit("add", u, v, FOLLOW) for u, v in want if not g.has_edge(u, v, FOLLOW)]
    for e in edits:
        if (e.src == v_tar) == (e.dst == v_tar):
            raise ConstraintViolation(f"edit {e} not incident to {v_tar}")
    return ClonePlan(tuple(edits), g.record(t).content.copy(), float(age_norm))


def apply_clone(g: DirectedSocialGraph, v_tar: int, plan: ClonePlan):
    g.set_record(v_tar, age_norm=plan.age_norm, content=plan.content)
    return apply_edits(g, plan.edits, v_tar)


# -- drivers ----------------------------------------------------------------------------

def _flipped(mode: str, before, after) -> bool:
    # an injected node has no meaningful "before"; it only has to pass as human
    if mode == "inject":
        return after == Label.HUMAN
    return before == Label.BOT and after == Label.HUMAN


class BoCloak:
    """Shared state for attacking many targets on one baseline graph.

    Candidates, sampling weights, OT restrictions and the human ordering are
    computed on the baseline graph once and reused across targets.
    """

    def __init__(self, g: DirectedSocialGraph, labels, predictions, geo, detector,
                 cfg: AttackConfig = AttackConfig(), cache: DistanceCache | None = None,
                 observer: Callable | None = None):
        if not g.has_baseline:
            g.snapshot()
        self.g = g
        self.labels = g.labels() if labels is None else labels
        self.predictions = predictions or {}
        self.geo = geo
        self.detector = detector
        self.cfg = cfg
        self.cache = cache if cache is not None else DistanceCache()
        self.observer = observer
        self._candidates = None
        self._weights = None
        self._restrictions: dict = {}
        self._humans = sorted(v for v in g.nodes() if self.labels.get(v) == Label.HUMAN)

    # baseline preparations ---------------------------------------------------------

    @property
    def candidates(self) -> list[CloakCandidate]:
        if self._candidates is None:
            self.g.reset()
            self._candidates = boundary_candidates(
                self.geo, self.g, self.labels, self.predictions, self.cfg.tau_bdry,
                self.cfg.effective_degree_cap, self.cfg.sinkhorn, self.cache, top=self.cfg.top_boundary)
        return self._candidates

    @property
    def weights(self):
        if self._weights is None and self.candidates:
            profiles = [cloak_profile(self.g, c.node, c.rank, self.labels) for c in self.candidates]
            self._weights = importance_weights(profiles)
        return self._weights

    def restriction(self, t: int):
        if t not in self._restrictions:
            self.g.reset()
            self._restrictions[t] = ot_guided_neighbors(
                self.geo, self.g, t, self.cfg.sinkhorn.epsilon, self.cfg.effective_top_k, self.cache,
                self._humans, self.cfg.sinkhorn, self.labels)
        return self._restrictions[t]

    def _rng(self, key):
        return np.random.default_rng([self.cfg.seed, key])

    def _fresh_age(self, rng) -> float:
        return float(rng.uniform(0.0, FRESH_AGE_MAX))

    def _new_node(self) -> int:
        return self.g.add_node(label=Label.BOT, age_norm=0.0)

    def _finish_trial(self, trace):
        self.g.reset()
        if self.observer is not None:
            self.observer(trace, self.g)
        return trace

    def _run_clone(self, trial, v_tar, cloak, restriction, mode, before, rng, fallback=False):
        """Plan, budget-check, apply and query once. Graph is reset afterwards."""
        plan = clone_cloak(self.g, v_tar, cloak, restriction, self.cfg.flag_hb, self.labels,
                           self._fresh_age(rng), mode)
        if plan.adds > self.cfg.budget_delta:
            return self._finish_trial(AttackTrace(trial, v_tar, cloak, plan.edits, BUDGET_EXCEEDED,
                                                  before, None, mode, fallback))
        if plan.adds == 0:
            # nothing of the cloak survives the constraints; not a real edit
            return self._finish_trial(AttackTrace(trial, v_tar, cloak, (), FAILURE, before, None,
                                                  mode, fallback))
        applied = apply_clone(self.g, v_tar, plan)
        after = self.detector.predict(self.g, v_tar)
        ok = _flipped(mode, before, after)
        return self._finish_trial(AttackTrace(trial, v_tar, cloak, applied.effective,
                                              SUCCESS if ok else FAILURE, before, after, mode, fallback))

    def _target(self, mode, v_tar):
        """Returns (target id, prediction before) on a freshly reset graph."""
        self.g.reset()
        if mode == "inject":
            v_tar = self._new_node()
        elif self.labels.get(v_tar) != Label.BOT:
            raise InvalidParams(f"target {v_tar} is not a labeled bot")
        return v_tar, self.detector.predict(self.g, v_tar)

    # public drivers -------------------------------------------------------------------

    def attack(self, v_tar: int | None = None, mode: str = "edit", key: int | None = None) -> list[AttackTrace]:
        """Run the configured number of trials against one target.

        In ``inject`` mode a fresh bot node is created for each trial and
        ``v_tar`` is ignored; ``key`` seeds the per-target random stream.
        """
        if self.cfg.trials == 0:
            return []
        key = (v_tar if v_tar is not None else 0) if key is None else key
        cands = [c.node for c in self.candidates if c.node != v_tar]
        if not cands:
            return self.human_fallback(v_tar, mode, key)
        rng = self._rng(key)
        use_counts = {t: 0 for t in cands}
        traces = []
        for trial in range(self.cfg.trials):
            cloak = sample_cloak(cands, self.weights, use_counts, self.cfg.reuse_cap, rng,
                                 self.cfg.reset_on_saturation)
            restriction = self.restriction(cloak)
            tgt, before = self._target(mode, v_tar)
            tr = self._run_clone(trial, tgt, cloak, restriction, mode, before, rng)
            if tr.outcome == SUCCESS:
                use_counts[cloak] += 1
            traces.append(tr)
        return traces

    def human_order(self, v_tar: int | None) -> list[int]:
        """Humans in fallback order.

        By OT distance when the target has neighbors, otherwise (isolated or
        freshly injected target) by total degree; ties go to the lower id.
        """
        g = self.g
        g.reset()
        pool = [h for h in self._humans if has_neighbors(g, h)][: self.cfg.human_pool_size]
        if v_tar is not None and v_tar in g and has_neighbors(g, v_tar):
            return [h for _, h in nearest_humans(self.geo, g, v_tar, pool, self.cfg.sinkhorn, self.cache)]
        return sorted(pool, key=lambda h: (sum(g.deg_counts(h)), h))

    def human_fallback(self, v_tar: int | None, mode: str = "edit", key: int | None = None) -> list[AttackTrace]:
        if self.cfg.trials == 0:
            return []
        key = (v_tar if v_tar is not None else 0) if key is None else key
        rng = self._rng(key)
        order = self.human_order(v_tar if mode == "edit" else None)
        traces = []
        pos = 0
        for trial in range(self.cfg.trials):
            tgt, before = self._target(mode, v_tar)
            chosen = None
            while pos < len(order) and chosen is None:
                h = order[pos]
                pos += 1
                if h == tgt:
                    continue
                plan = clone_cloak(self.g, tgt, h, None, self.cfg.flag_hb, self.labels, 0.0, mode)
                if 0 < plan.adds <= self.cfg.budget_delta:
                    chosen = h
            if chosen is None:
                if traces and any(t.cloak is not None for t in traces):
                    # pool exhausted: cycle over the humans that fit
                    fits = [t.cloak for t in traces if t.cloak is not None]
                    chosen = fits[trial % len(fits)]
                else:
                    traces.append(self._finish_trial(AttackTrace(trial, tgt, None, (), FAILURE, before, None,
                                                                 mode, True)))
                    continue
            traces.append(self._run_clone(trial, tgt, chosen, None, mode, before, rng, fallback=True))
        return traces


def bocloak_edit(g, labels, predictions, geo, detector, v_tar, cfg: AttackConfig = AttackConfig(),
                 cache=None, observer=None) -> list[AttackTrace]:
    return BoCloak(g, labels, predictions, geo, detector, cfg, cache, observer).attack(v_tar, "edit")


def bocloak_inject(g, labels, predictions, geo, detector, cfg: AttackConfig = AttackConfig(),
                   cache=None, observer=None, key: int = 0) -> list[AttackTrace]:
    return BoCloak(g, labels, predictions, geo, detector, cfg, cache, observer).attack(None, "inject", key)


def human_fallback(g, labels, geo, detector, v_tar, cfg: AttackConfig = AttackConfig(),
                   cache=None, observer=None, mode: str = "edit") -> list[AttackTrace]:
    return BoCloak(g, labels, {}, geo, detector, cfg, cache, observer).human_fallback(v_tar, mode)


def random_attack(g: DirectedSocialGraph, labels, detector, v_tar: int | None, cfg: AttackConfig = AttackConfig(),
                  mode: str = "edit", key: int | None = None, observer=None) -> list[AttackTrace]:
    """Constrained random baseline: ``budget_delta`` uniformly drawn feasible adds.

    Feasible edges are incident to the target, absent from the graph, and
    never human -> target when ``flag_hb`` is on. An injected node gets a
    fresh age and the content of a uniformly drawn labeled bot.
    """
    if not g.has_baseline:
        g.snapshot()
    labels = g.labels() if labels is None else labels
    key = (v_tar if v_tar is not None else 0) if key is None else key
    rng = np.random.default_rng([cfg.seed, key, 1])
    g.reset()
    bots = [v for v in g.nodes() if labels.get(v) == Label.BOT]
    traces = []
    for trial in range(cfg.trials):
        g.reset()
        tgt = g.add_node(label=Label.BOT, age_norm=0.0) if mode == "inject" else v_tar
        if mode == "inject":
            # a new account posts like some existing bot picked at random
            content = g.record(bots[int(rng.integers(len(bots)))]).content if bots else None
            g.set_record(tgt, age_norm=float(rng.uniform(0.0, FRESH_AGE_MAX)), content=content)
        before = detector.predict(g, tgt)
        feasible = [(tgt, x) for x in g.nodes() if x != tgt and not g.has_edge(tgt, x, FOLLOW)]
        feasible += [(x, tgt) for x in g.nodes() if x != tgt and not g.has_edge(x, tgt, FOLLOW)
                     and not (cfg.flag_hb and labels.get(x) == Label.HUMAN)]
        k = min(cfg.budget_delta, len(feasible))
        pick = sorted(rng.choice(len(feasible), size=k, replace=False).tolist()) if k else []
        edits = tuple(EdgeEdit("add", *feasible[i], FOLLOW) for i in pick)
        if not edits:
            after = before
        else:
            apply_edits(g, edits, tgt)
            after = detector.predict(g, tgt)
        ok = bool(edits) and _flipped(mode, before, after)
        tr = AttackTrace(trial, tgt, None, edits, SUCCESS if ok else FAILURE, before, after, mode)
        g.reset()
        if observer is not None:
            observer(tr, g)
        traces.append(tr)
    return traces
