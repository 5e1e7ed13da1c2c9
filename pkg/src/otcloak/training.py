"""Offline training of the OT geometry from detector feedback."""

from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .cost_model import (CostGradients, OtGeometry, apply_step, backward_atoms, block_atom_grads,
                         init_geometry, pairwise_sq, project, standardization)
from .errors import EmptyNeighborhood, EmptyPool, EmptyTrainingSet, ShapeError
from .features import COL_DEG_IN, COL_DEG_OUT, MeasureCache, MeasureParams, NeighborMeasure, age_col
from .geometry import DistanceCache, has_neighbors, ot_distances
from .graph import DirectedSocialGraph, Label
from .ot import CostMatrix, SinkhornConfig, TransportPlan, conditional_entropies, sinkhorn_batch

log = logging.getLogger(__name__)

PROB_CLAMP = 1e-12


@dataclass(frozen=True)
class TrainConfig:
    lambda_bce: float = 2.0
    lambda_sp: float = 0.05
    lambda_pl: float = 0.10
    tau_bce: float = 0.01
    tau_bdry: float = 0.1
    alpha_deg_pl: float = 0.8
    alpha_age_pl: float = 0.2
    batch_size: int = 128
    epochs: int = 20
    learning_rate: float = 1e-3
    human_pool_size: int = 200
    bot_pool_size: int = 200
    hidden_dim: int = 128
    embed_dim: int = 256
    gamma: float = 1e-3  # contrastive margin; recorded but not optimized
    seed: int = 0
    sinkhorn: SinkhornConfig = SinkhornConfig()
    measure: MeasureParams = MeasureParams()

    def __post_init__(self):
        if min(self.lambda_bce, self.lambda_sp, self.lambda_pl) < 0:
            raise ValueError("loss weights must be nonnegative")
        if not self.tau_bce > 0:
            raise ValueError("tau_bce must be positive")
        if self.batch_size < 1 or self.epochs < 0:
            raise ValueError("batch_size >= 1 and epochs >= 0 required")

    def to_json(self) -> dict:
        return asdict(self)

    @classmethod
    def from_json(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        if isinstance(d.get("sinkhorn"), dict):
            d["sinkhorn"] = SinkhornConfig(**d["sinkhorn"])
        if isinstance(d.get("measure"), dict):
            d["measure"] = MeasureParams(**d["measure"])
        return cls(**d)


@dataclass(frozen=True)
class MarginRecord:
    node: int
    d_hum: float
    d_bot: float
    margin: float
    nearest_human: int
    nearest_bot: int
    mislabeled: bool = False


def _argmin(nodes, dists):
    """Smallest distance, ties to the lowest node id."""
    best = None
    for n, d in sorted(zip(nodes, dists), key=lambda t: (t[1], t[0])):
        best = (n, float(d))
        break
    return best


def mine_nearest(geo: OtGeometry, g: DirectedSocialGraph, v: int, humans, bots,
                 cfg: SinkhornConfig = SinkhornConfig(), cache: DistanceCache | None = None,
                 predictions=None) -> MarginRecord:
    if not has_neighbors(g, v):
        raise EmptyNeighborhood(f"node {v} has no neighbors")
    hs = [h for h in humans if h != v and has_neighbors(g, h)]
    bs = [b for b in bots if b != v and has_neighbors(g, b)]
    if not hs:
        raise EmptyPool("no humans with neighbors in the pool")
    if not bs:
        raise EmptyPool("no other bots with neighbors in the pool")
    d = ot_distances(geo, g, v, hs + bs, cfg, cache)
    h_star, d_h = _argmin(hs, d[:len(hs)])
    b_star, d_b = _argmin(bs, d[len(hs):])
    y = bool(predictions and predictions.get(v) == Label.HUMAN)
    return MarginRecord(v, d_h, d_b, d_h - d_b, h_star, b_star, y)


def sigmoid(x: float) -> float:
    if x >= 0:
        return 1.0 / (1.0 + math.exp(-x))
    e = math.exp(x)
    return e / (1.0 + e)


def loss_bce(margin: float, y: int, tau_bce: float = 0.01) -> float:
    """Binary cross-entropy of sigmoid(-m / tau) against y (1 = looks human)."""
    p = min(max(sigmoid(-margin / tau_bce), PROB_CLAMP), 1.0 - PROB_CLAMP)
    return -math.log(p) if y else -math.log(1.0 - p)


def loss_bce_grad(margin: float, y: int, tau_bce: float = 0.01) -> float:
    """d loss_bce / d margin, from the unclamped sigmoid."""
    return (y - sigmoid(-margin / tau_bce)) / tau_bce


def loss_sparsity(plan) -> float:
    h_row, h_col = conditional_entropies(plan)
    return h_row + h_col


def _deg_age(atoms: np.ndarray):
    atoms = np.atleast_2d(atoms)
    return atoms[:, COL_DEG_IN] + atoms[:, COL_DEG_OUT], atoms[:, age_col(atoms.shape[1])]


def plausibility_cost(atom_i, atom_j, alpha_deg_pl: float = 0.8, alpha_age_pl: float = 0.2) -> float:
    (di,), (ai,) = _deg_age(np.asarray(atom_i, dtype=np.float64))
    (dj,), (aj,) = _deg_age(np.asarray(atom_j, dtype=np.float64))
    return alpha_deg_pl * abs(di - dj) + alpha_age_pl * abs(ai - aj)


def plausibility_matrix(atoms_a, atoms_b, alpha_deg_pl=0.8, alpha_age_pl=0.2) -> np.ndarray:
    da, aa = _deg_age(atoms_a)
    db, ab = _deg_age(atoms_b)
    return alpha_deg_pl * np.abs(da[:, None] - db[None, :]) + alpha_age_pl * np.abs(aa[:, None] - ab[None, :])


def loss_plausibility(plan, mu_a: NeighborMeasure, mu_b: NeighborMeasure, cfg: TrainConfig = TrainConfig()) -> float:
    P = plan.P if isinstance(plan, TransportPlan) else np.asarray(plan, dtype=np.float64)
    if P.shape != (len(mu_a), len(mu_b)):
        raise ShapeError(f"plan {P.shape} vs measures ({len(mu_a)}, {len(mu_b)})")
    return float(np.sum(P * plausibility_matrix(mu_a.atoms, mu_b.atoms, cfg.alpha_deg_pl, cfg.alpha_age_pl)))


@dataclass
class TrainResult:
    geometry: OtGeometry
    history: list = field(default_factory=list)


class _Step:
    """All atoms of the eligible nodes, embedded once per parameter step."""

    def __init__(self, geo, nodes, measures: dict):
        self.nodes = nodes
        self.offsets = {}
        off = 0
        for n in nodes:
            self.offsets[n] = (off, off + len(measures[n]))
            off += len(measures[n])
        self.X = np.concatenate([measures[n].atoms for n in nodes])
        self.Q = project(geo, self.X)
        self.G = np.zeros_like(self.Q)

    def q(self, n):
        lo, hi = self.offsets[n]
        return self.Q[lo:hi]

    def add_grad(self, n, gq):
        lo, hi = self.offsets[n]
        self.G[lo:hi] += gq


def _pool(rng, nodes, cap):
    if len(nodes) <= cap:
        return list(nodes)
    idx = rng.choice(len(nodes), size=cap, replace=False)
    return sorted(nodes[i] for i in idx)


def _batch_losses(geo, step: _Step, batch, measures, humans, bots, predictions, cfg: TrainConfig):
    """Per-bot loss terms; accumulates atom gradients into ``step.G``."""
    scfg = cfg.sinkhorn
    rows = []
    for v in batch:
        hs = [h for h in humans if h != v]
        bs = [b for b in bots if b != v]
        Qv = step.q(v)
        costs = []
        for x in hs + bs:
            costs.append(CostMatrix(pairwise_sq(Qv, step.q(x)), measures[v].weights, measures[x].weights))
        plans = sinkhorn_batch(costs, scfg)
        d = np.array([p.cost for p in plans])
        h_star, d_h = _argmin(hs, d[:len(hs)])
        b_star, d_b = _argmin(bs, d[len(hs):])
        plan_h = plans[hs.index(h_star)]
        plan_b = plans[len(hs) + bs.index(b_star)]
        m = d_h - d_b
        y = 1 if predictions.get(v) == Label.HUMAN else 0
        l_bce = loss_bce(m, y, cfg.tau_bce)
        l_sp = loss_sparsity(plan_h)
        l_pl = loss_plausibility(plan_h, measures[v], measures[h_star], cfg)
        total = cfg.lambda_bce * l_bce + cfg.lambda_sp * l_sp + cfg.lambda_pl * l_pl
        # envelope route: dD/dC = P*, nearest neighbors held fixed
        gm = cfg.lambda_bce * loss_bce_grad(m, y, cfg.tau_bce) / len(batch)
        if gm != 0.0:
            for other, plan, sign in ((h_star, plan_h, 1.0), (b_star, plan_b, -1.0)):
                ga, gb = block_atom_grads(Qv, step.q(other), sign * gm * plan.P)
                step.add_grad(v, ga)
                step.add_grad(other, gb)
        rows.append((total, l_bce, l_sp, l_pl, m))
    return rows


def train_geometry(g: DirectedSocialGraph, labels=None, predictions=None, cfg: TrainConfig = TrainConfig(),
                   log_path=None, geometry: OtGeometry | None = None) -> TrainResult:
    """Fit the ground-cost parameters by minibatch gradient descent.

    Every epoch visits the eligible bots (labeled bots with at least one
    neighbor) in a shuffled order. The per-epoch log entry averages the loss
    terms as evaluated just before each minibatch step.
    """
    labels = g.labels() if labels is None else labels
    predictions = predictions or {}
    rng = np.random.default_rng(cfg.seed)
    mc = MeasureCache(cfg.measure)
    humans_all = [n for n in g.nodes() if labels.get(n) == Label.HUMAN and has_neighbors(g, n)]
    bots_all = [n for n in g.nodes() if labels.get(n) == Label.BOT and has_neighbors(g, n)]
    if not humans_all or len(bots_all) < 2:
        raise EmptyTrainingSet("need >= 1 human and >= 2 bots with neighbors")
    measures = {n: mc.get(g, n) for n in humans_all + bots_all}
    if geometry is None:
        mean, scale = standardization(np.concatenate([measures[n].atoms for n in sorted(measures)]))
        geometry = init_geometry(next(iter(measures.values())).atoms.shape[1], cfg.hidden_dim,
                                 cfg.embed_dim, cfg.seed, mean, scale)
    geo = geometry.copy()
    humans = _pool(rng, humans_all, cfg.human_pool_size)
    bots = _pool(rng, bots_all, cfg.bot_pool_size)
    train_bots = bots_all
    nodes = sorted(set(humans) | set(bots) | set(train_bots))
    history = []
    fh = open(log_path, "w") if log_path else None
    try:
        for epoch in range(cfg.epochs):
            order = [train_bots[i] for i in rng.permutation(len(train_bots))]
            rows = []
            for start in range(0, len(order), cfg.batch_size):
                batch = order[start:start + cfg.batch_size]
                step = _Step(geo, nodes, measures)
                rows += _batch_losses(geo, step, batch, measures, humans, bots, predictions, cfg)
                if cfg.lambda_bce > 0 and np.any(step.G):
                    apply_step(geo, backward_atoms(geo, step.X, step.G), cfg.learning_rate)
            arr = np.array(rows)
            entry = {
                "epoch": epoch,
                "loss_total": float(arr[:, 0].mean()),
                "loss_bce": float(arr[:, 1].mean()),
                "loss_sp": float(arr[:, 2].mean()),
                "loss_pl": float(arr[:, 3].mean()),
                "mean_margin": float(arr[:, 4].mean()),
            }
            history.append(entry)
            log.info("epoch %d loss %.6f", epoch, entry["loss_total"])
            if fh:
                fh.write(json.dumps(entry, sort_keys=True) + "\n")
    finally:
        if fh:
            fh.close()
    return TrainResult(geo, history)


def evaluate_loss(geo, g, labels=None, predictions=None, cfg: TrainConfig = TrainConfig()) -> dict:
    """Mean loss terms over all eligible bots at a fixed geometry (full pools)."""
    labels = g.labels() if labels is None else labels
    predictions = predictions or {}
    mc = MeasureCache(cfg.measure)
    humans = [n for n in g.nodes() if labels.get(n) == Label.HUMAN and has_neighbors(g, n)]
    bots = [n for n in g.nodes() if labels.get(n) == Label.BOT and has_neighbors(g, n)]
    if not humans or len(bots) < 2:
        raise EmptyTrainingSet("need >= 1 human and >= 2 bots with neighbors")
    measures = {n: mc.get(g, n) for n in humans + bots}
    step = _Step(geo, sorted(measures), measures)
    arr = np.array(_batch_losses(geo, step, bots, measures, humans, bots, predictions, cfg))
    return {"loss_total": float(arr[:, 0].mean()), "loss_bce": float(arr[:, 1].mean()),
            "loss_sp": float(arr[:, 2].mean()), "loss_pl": float(arr[:, 3].mean())}
