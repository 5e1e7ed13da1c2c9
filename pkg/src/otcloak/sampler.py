"""Structural categories, cloak importance weights and reuse-capped sampling."""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .graph import DirectedSocialGraph, Label

AXIS = ("humans", "bots", "both", "nobody")


class StructuralCategory(NamedTuple):
    outgoing: str
    incoming: str

    def __str__(self):
        return f"out:{self.outgoing}/in:{self.incoming}"


ALL_CATEGORIES = tuple(StructuralCategory(o, i) for o in AXIS for i in AXIS)


def _axis(n_h: int, n_b: int) -> str:
    if n_h and n_b:
        return "both"
    if n_h:
        return "humans"
    if n_b:
        return "bots"
    return "nobody"


def edge_counts(g: DirectedSocialGraph, t: int, labels=None) -> tuple[int, int, int, int]:
    """(in_h, in_b, out_h, out_b) counted over edges of every relation tag."""
    labels = g.labels() if labels is None else labels
    g._check(t)
    in_h = in_b = out_h = out_b = 0
    for u, rels in g._in[t].items():
        if labels[u] == Label.HUMAN:
            in_h += len(rels)
        else:
            in_b += len(rels)
    for v, rels in g._out[t].items():
        if labels[v] == Label.HUMAN:
            out_h += len(rels)
        else:
            out_b += len(rels)
    return in_h, in_b, out_h, out_b


def structural_category(g: DirectedSocialGraph, t: int, labels=None) -> StructuralCategory:
    in_h, in_b, out_h, out_b = edge_counts(g, t, labels)
    return StructuralCategory(_axis(out_h, out_b), _axis(in_h, in_b))


@dataclass(frozen=True)
class CloakProfile:
    node: int
    category: StructuralCategory
    in_h: int
    in_b: int
    out_h: int
    out_b: int
    rank: int

    @property
    def e(self) -> int:
        return self.in_h + self.in_b + self.out_h + self.out_b

    @property
    def eta(self) -> int:
        return int(self.in_h > 0)


def cloak_profile(g: DirectedSocialGraph, t: int, rank: int, labels=None) -> CloakProfile:
    in_h, in_b, out_h, out_b = edge_counts(g, t, labels)
    return CloakProfile(t, StructuralCategory(_axis(out_h, out_b), _axis(in_h, in_b)),
                        in_h, in_b, out_h, out_b, rank)


@dataclass
class SamplingWeights:
    p_category: dict  # category -> prob
    p_cloak: dict  # category -> {node: prob}

    def categories(self) -> list:
        return [c for c in ALL_CATEGORIES if c in self.p_category]

    def cloak_marginal(self) -> dict:
        out = {}
        for c, pc in self.p_category.items():
            for t, pt in self.p_cloak[c].items():
                out[t] = out.get(t, 0.0) + pc * pt
        return out


def importance_weights(profiles) -> SamplingWeights:
    profiles = list(profiles)
    if not profiles:
        raise ValueError("no cloak profiles")
    M = len(profiles)
    e_min = min(p.e for p in profiles)
    r_max = max(max(p.rank for p in profiles), 1)
    by_cat: dict = {}
    for p in profiles:
        by_cat.setdefault(p.category, []).append(p)
    w_cat, p_cloak = {}, {}
    for c in ALL_CATEGORIES:
        members = by_cat.get(c)
        if not members:
            continue
        e_bar = float(np.mean([p.e for p in members]))
        r_bar = float(np.mean([p.rank for p in members]))
        w_cat[c] = (e_min / max(e_bar, 1e-6)) ** 2 / (1.0 + r_bar / M)
        w = {p.node: (1.0 / (1.0 + p.e)) * (1.0 / (1.0 + p.rank / r_max)) * (0.5 if p.eta else 1.0)
             for p in sorted(members, key=lambda p: p.node)}
        s = sum(w.values())
        p_cloak[c] = {t: x / s for t, x in w.items()}
    total = sum(w_cat.values())
    if total <= 0:
        # only reachable when some cloak has no edges at all (e_min = 0)
        p_category = {c: 1.0 / len(w_cat) for c in w_cat}
    else:
        p_category = {c: w / total for c, w in w_cat.items()}
    return SamplingWeights(p_category, p_cloak)


def _draw(rng, items, probs):
    probs = np.asarray(probs, dtype=np.float64)
    cdf = np.cumsum(probs)
    x = rng.random() * cdf[-1]
    k = int(np.searchsorted(cdf, x, side="right"))
    return items[min(k, len(items) - 1)]


def sample_cloak(candidates, weights: SamplingWeights, use_counts: dict, R: int, rng,
                 reset_on_saturation: bool = False):
    """Draw a cloak, preferring templates used fewer than ``R`` times.

    Returns the chosen node. When no candidate is under the cap the draw
    comes from the unrestricted distributions (or, with
    ``reset_on_saturation``, the counters are zeroed first).
    """
    cand = set(int(c) for c in candidates)
    if not cand:
        raise ValueError("no candidates")
    if R < 1:
        raise ValueError("reuse cap must be >= 1")
    cats = [c for c in weights.categories() if any(t in cand for t in weights.p_cloak[c])]

    def alpha(c):
        return sum(p for t, p in weights.p_cloak[c].items() if t in cand and use_counts.get(t, 0) < R)

    alphas = [alpha(c) for c in cats]
    mass = sum(weights.p_category[c] * a for c, a in zip(cats, alphas))
    if mass <= 0 and reset_on_saturation:
        for t in cand:
            use_counts[t] = 0
        alphas = [alpha(c) for c in cats]
        mass = sum(weights.p_category[c] * a for c, a in zip(cats, alphas))
    if mass > 0:
        c = _draw(rng, cats, [weights.p_category[c] * a for c, a in zip(cats, alphas)])
        members = [(t, p) for t, p in weights.p_cloak[c].items() if t in cand and use_counts.get(t, 0) < R]
    else:
        c = _draw(rng, cats, [weights.p_category[c] for c in cats])
        members = [(t, p) for t, p in weights.p_cloak[c].items() if t in cand]
    return _draw(rng, [t for t, _ in members], [p for _, p in members])
