"""Synthetic labeled follow graphs with a planted human/bot structure.

Three node groups are generated: humans, regular bots and a small set of
planted bots. Planted bots follow humans and are followed by helper bots,
so their neighborhoods look human from the outside while their incoming
edges stay clonable without human follow-backs. With camouflage on they
also draw content and age from the human distributions. Regular bots spend the rest
of the bot degree budget on sparse bot-to-bot rings plus a few cross edges
to humans. Edge endpoints inside each block are placed Chung-Lu style,
proportional to per-node weights drawn around the requested mean degree.
Mean degree means mean total degree (in + out) per class.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, replace

import numpy as np

from .errors import InvalidParams
from .graph import DirectedSocialGraph, Label


@dataclass(frozen=True)
class GenParams:
    n_humans: int = 195
    n_bots: int = 335
    human_mean_degree: float = 5.18
    bot_mean_degree: float = 0.22
    homophily: float = 0.9  # share of regular-bot edges that stay among bots
    content_dim: int = 4
    content_sep: float = 2.0
    human_age: tuple = (5.0, 2.0)  # Beta(a, b) of age_norm
    bot_age: tuple = (2.0, 5.0)
    planted_fraction: float = 0.06
    planted_out_degree: float = 2.0  # planted -> human edges per planted bot
    planted_in_degree: float = 0.5  # helper bot -> planted edges per planted bot
    planted_camouflage: bool = True  # planted bots draw content and age like humans
    degree_dispersion: float = 2.0  # Gamma shape of per-node weights
    bot_to_human: float = 1.0  # share of cross edges oriented bot -> human
    seed: int = 0

    def to_json(self) -> dict:
        d = asdict(self)
        d["human_age"] = list(self.human_age)
        d["bot_age"] = list(self.bot_age)
        return d

    @classmethod
    def from_json(cls, d: dict) -> "GenParams":
        d = dict(d)
        for k in ("human_age", "bot_age"):
            if k in d:
                d[k] = tuple(d[k])
        return cls(**d)


PRESETS = {
    # class sizes scaled down from the published dataset statistics
    "cresci-like": GenParams(n_humans=195, n_bots=335, human_mean_degree=5.18, bot_mean_degree=0.22),
    "twibot-like": GenParams(n_humans=860, n_bots=140, human_mean_degree=7.00, bot_mean_degree=3.56,
                             homophily=0.7, content_sep=0.8, planted_fraction=0.1,
                             planted_out_degree=2.0, planted_in_degree=2.0),
    "botsim-like": GenParams(n_humans=191, n_bots=100, human_mean_degree=59.12, bot_mean_degree=19.23,
                             homophily=0.6, content_sep=0.4, planted_fraction=0.1,
                             planted_out_degree=3.0, planted_in_degree=2.0),
}


def preset(name: str, **overrides) -> GenParams:
    try:
        base = PRESETS[name]
    except KeyError:
        raise InvalidParams(f"unknown preset {name!r}; choose from {sorted(PRESETS)}") from None
    return replace(base, **overrides)


def _validate(p: GenParams):
    if p.n_humans < 2 or p.n_bots < 2:
        raise InvalidParams("need at least 2 nodes per class")
    n = p.n_humans + p.n_bots
    for name in ("human_mean_degree", "bot_mean_degree", "planted_out_degree", "planted_in_degree"):
        d = getattr(p, name)
        if d < 0:
            raise InvalidParams(f"{name} must be nonnegative")
        if d > n - 1:
            raise InvalidParams(f"{name}={d} exceeds n-1={n - 1}")
    if not 0.0 <= p.homophily <= 1.0:
        raise InvalidParams("homophily must lie in [0, 1]")
    if not 0.0 <= p.planted_fraction <= 1.0 or not 0.0 <= p.bot_to_human <= 1.0:
        raise InvalidParams("fractions must lie in [0, 1]")
    if p.content_dim < 0 or p.degree_dispersion <= 0:
        raise InvalidParams("content_dim >= 0 and degree_dispersion > 0 required")


def _draw_edges(rng, src_pool, src_w, dst_pool, dst_w, count, taken, max_rounds=200):
    """Draw ``count`` distinct directed edges with weighted endpoints."""
    out = []
    if count <= 0 or len(src_pool) == 0 or len(dst_pool) == 0:
        return out
    ps = src_w / src_w.sum()
    pd = dst_w / dst_w.sum()
    for _ in range(max_rounds):
        need = count - len(out)
        if need <= 0:
            break
        k = 2 * need + 8
        s = src_pool[rng.choice(len(src_pool), size=k, p=ps)]
        d = dst_pool[rng.choice(len(dst_pool), size=k, p=pd)]
        for u, v in zip(s.tolist(), d.tolist()):
            if u == v or (u, v) in taken:
                continue
            taken.add((u, v))
            out.append((u, v))
            if len(out) == count:
                break
    return out


def generate(params: GenParams) -> tuple[DirectedSocialGraph, dict]:
    """Build a graph and its label map; deterministic under ``params.seed``."""
    p = params
    _validate(p)
    rng = np.random.default_rng(p.seed)
    n_h, n_b = p.n_humans, p.n_bots
    humans = np.arange(n_h, dtype=np.int64)
    bots = np.arange(n_h, n_h + n_b, dtype=np.int64)

    # a planted bot costs out + 2 * in units of the bot degree budget
    # (helper edges have a bot at both ends)
    bot_sum = n_b * p.bot_mean_degree
    unit = p.planted_out_degree + 2.0 * p.planted_in_degree
    n_plant = int(round(p.planted_fraction * n_b))
    if unit > 0:
        n_plant = min(n_plant, int(bot_sum // unit))
    n_plant = max(0, min(n_plant, n_b - 1))
    planted = np.sort(rng.choice(bots, size=n_plant, replace=False)) if n_plant else np.zeros(0, np.int64)
    regular = np.setdiff1d(bots, planted)

    k = p.degree_dispersion

    def weights(n, mean=1.0):
        return mean * rng.gamma(k, 1.0 / k, size=n) if n else np.zeros(0)

    w_h = weights(n_h)
    w_r = weights(len(regular))
    w_po = weights(n_plant)
    w_pi = weights(n_plant)

    e_ph = int(round(n_plant * p.planted_out_degree))
    e_rp = int(round(n_plant * p.planted_in_degree))
    free = max(bot_sum - n_plant * unit, 0.0)
    e_cross = int(round((1.0 - p.homophily) * free))
    e_rr = int(round((free - e_cross) / 2))
    e_hh = int(round(max(n_h * p.human_mean_degree - e_ph - e_cross, 0.0) / 2))

    taken: set = set()
    edges = []
    edges += _draw_edges(rng, humans, w_h, humans, w_h, e_hh, taken)
    edges += _draw_edges(rng, planted, w_po, humans, w_h, e_ph, taken)
    edges += _draw_edges(rng, regular, w_r, planted, w_pi, e_rp, taken)
    edges += _draw_edges(rng, regular, w_r, regular, w_r, e_rr, taken)
    if e_cross:
        n_bh = int(rng.binomial(e_cross, p.bot_to_human))
        edges += _draw_edges(rng, regular, w_r, humans, w_h, n_bh, taken)
        edges += _draw_edges(rng, humans, w_h, regular, w_r, e_cross - n_bh, taken)

    g = DirectedSocialGraph(p.content_dim)
    labels = {}
    sep = p.content_sep / 2.0
    disguised = set(planted.tolist()) if p.planted_camouflage else set()
    for v in range(n_h + n_b):
        lab = Label.HUMAN if v < n_h else Label.BOT
        looks_human = lab == Label.HUMAN or v in disguised
        mu = sep if looks_human else -sep
        a, b = p.human_age if looks_human else p.bot_age
        content = rng.normal(mu, 1.0, size=p.content_dim)
        g.add_node(v, label=lab, age_norm=float(rng.beta(a, b)), content=content)
        labels[v] = lab
    for u, v in sorted(edges):
        g.add_edge(int(u), int(v))
    g.snapshot()
    return g, labels


def class_mean_degrees(g: DirectedSocialGraph, labels: dict) -> dict:
    out = {}
    for c in (Label.HUMAN, Label.BOT):
        degs = [sum(g.deg_counts(v)) for v in g.nodes() if labels[v] == c]
        out[str(c)] = float(np.mean(degs)) if degs else 0.0
    return out
