"""Black-box victim models.

``MessagePassingDetector`` is a two-layer relational graph network with mean
aggregation per (relation tag, direction) channel. Node inputs are one-hot
degree buckets, age and content; labels never enter. Degree buckets feed only
the self term of the first layer and messages carry ``[age, content]``, so an
edit touching node v can change predictions only within two hops of v.

``CentroidDetector`` is a transparent nearest-centroid rule on (deg_in,
deg_out), used for deterministic fixtures.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from . import container
from .errors import DegenerateSplit, FormatError
from .graph import DirectedSocialGraph, Label

log = logging.getLogger(__name__)

MAGIC = b"BOTDET1"
FORMAT_VERSION = 1
BUCKET_EDGES = (0, 1, 2, 3, 5, 9, 17)  # lower bounds: 0,1,2,3-4,5-8,9-16,17+
N_BUCKETS = len(BUCKET_EDGES)


def degree_bucket(d: int) -> int:
    k = 0
    for i, lo in enumerate(BUCKET_EDGES):
        if d >= lo:
            k = i
    return k


def _self_features(g: DirectedSocialGraph, x: int) -> np.ndarray:
    rec = g.record(x)
    d_in, d_out = g.deg_counts(x)
    out = np.zeros(2 * N_BUCKETS + 1 + g.content_dim)
    out[degree_bucket(d_in)] = 1.0
    out[N_BUCKETS + degree_bucket(d_out)] = 1.0
    out[2 * N_BUCKETS] = rec.age_norm
    out[2 * N_BUCKETS + 1:] = rec.content
    return out


def _msg_features(g: DirectedSocialGraph, x: int) -> np.ndarray:
    rec = g.record(x)
    return np.concatenate(([rec.age_norm], rec.content))


def _channel_lists(g: DirectedSocialGraph, x: int, n_rel: int) -> list[list[int]]:
    chans = []
    for r in range(n_rel):
        chans.append(sorted(y for y, rels in g._out[x].items() if r in rels))
        chans.append(sorted(y for y, rels in g._in[x].items() if r in rels))
    return chans


def _adjacency(g: DirectedSocialGraph, nodes: list[int], n_rel: int) -> list[sp.csr_matrix]:
    """Row-normalized adjacency per channel, order (r0 out, r0 in, r1 out, ...)."""
    index = {v: i for i, v in enumerate(nodes)}
    n = len(nodes)
    rows = [[] for _ in range(2 * n_rel)]
    cols = [[] for _ in range(2 * n_rel)]
    for u, v, r in g.edges():
        if r >= n_rel:
            continue
        rows[2 * r].append(index[u])
        cols[2 * r].append(index[v])
        rows[2 * r + 1].append(index[v])
        cols[2 * r + 1].append(index[u])
    mats = []
    for rr, cc in zip(rows, cols):
        A = sp.csr_matrix((np.ones(len(rr)), (rr, cc)), shape=(n, n))
        deg = np.asarray(A.sum(axis=1)).ravel()
        mats.append(sp.diags(np.divide(1.0, deg, out=np.zeros(n), where=deg > 0)) @ A)
    return [m.tocsr() for m in mats]


@dataclass
class _Params:
    W0: np.ndarray
    Wc: np.ndarray  # (C, Dm, H)
    b1: np.ndarray
    U0: np.ndarray
    Uc: np.ndarray  # (C, H, H)
    b2: np.ndarray
    V: np.ndarray
    c: np.ndarray

    def arrays(self):
        return [self.W0, self.Wc, self.b1, self.U0, self.Uc, self.b2, self.V, self.c]


class MessagePassingDetector:
    def __init__(self, params: _Params, n_relations: int, content_dim: int, meta: dict | None = None):
        self.p = params
        self.n_relations = n_relations
        self.content_dim = content_dim
        self.meta = dict(meta or {})

    @classmethod
    def init(cls, content_dim: int, n_relations: int = 1, hidden: int = 32, seed: int = 0):
        rng = np.random.default_rng(seed)
        F = 2 * N_BUCKETS + 1 + content_dim
        Dm = 1 + content_dim
        C = 2 * n_relations

        def glorot(*shape):
            fan_in, fan_out = shape[-2], shape[-1]
            lim = np.sqrt(6.0 / (fan_in + fan_out))
            return rng.uniform(-lim, lim, shape)

        p = _Params(glorot(F, hidden), glorot(C, Dm, hidden), np.zeros(hidden),
                    glorot(hidden, hidden), glorot(C, hidden, hidden), np.zeros(hidden),
                    glorot(hidden, 2), np.zeros(2))
        return cls(p, n_relations, content_dim, {"seed": seed, "hidden": hidden})

    # -- full-graph forward / backward --------------------------------------

    def _forward(self, Xs, Xm, A):
        p = self.p
        Z1 = Xs @ p.W0 + p.b1
        AXm = [Ac @ Xm for Ac in A]
        for k, M in enumerate(AXm):
            Z1 = Z1 + M @ p.Wc[k]
        H1 = np.maximum(Z1, 0.0)
        Z2 = H1 @ p.U0 + p.b2
        AH1 = [Ac @ H1 for Ac in A]
        for k, M in enumerate(AH1):
            Z2 = Z2 + M @ p.Uc[k]
        H2 = np.maximum(Z2, 0.0)
        logits = H2 @ p.V + p.c
        return logits, (Z1, H1, AXm, Z2, H2, AH1)

    def _inputs(self, g: DirectedSocialGraph):
        nodes = g.nodes()
        Xs = np.stack([_self_features(g, x) for x in nodes])
        Xm = np.stack([_msg_features(g, x) for x in nodes])
        return nodes, Xs, Xm, _adjacency(g, nodes, self.n_relations)

    def logits_all(self, g: DirectedSocialGraph) -> tuple[list[int], np.ndarray]:
        nodes, Xs, Xm, A = self._inputs(g)
        return nodes, self._forward(Xs, Xm, A)[0]

    def predict_all(self, g: DirectedSocialGraph) -> dict[int, Label]:
        nodes, logits = self.logits_all(g)
        return {v: _decide(z) for v, z in zip(nodes, logits)}

    def proba_all(self, g: DirectedSocialGraph) -> dict[int, float]:
        """Probability of the bot class per node."""
        nodes, logits = self.logits_all(g)
        return {v: float(_softmax(z)[1]) for v, z in zip(nodes, logits)}

    # -- single node inference on the receptive field ---------------------------

    def logits(self, g: DirectedSocialGraph, v: int) -> np.ndarray:
        g._check(v)
        p = self.p
        chans_v = _channel_lists(g, v, self.n_relations)
        ring = sorted(set(y for ch in chans_v for y in ch))
        msg_cache: dict = {}

        def msg(y):
            m = msg_cache.get(y)
            if m is None:
                m = msg_cache[y] = _msg_features(g, y)
            return m

        def h1(x, chans):
            z = _self_features(g, x) @ p.W0 + p.b1
            for k, ch in enumerate(chans):
                if ch:
                    z = z + np.mean([msg(y) for y in ch], axis=0) @ p.Wc[k]
            return np.maximum(z, 0.0)

        h1v = h1(v, chans_v)
        h1_ring = {x: h1(x, _channel_lists(g, x, self.n_relations)) for x in ring}
        z2 = h1v @ p.U0 + p.b2
        for k, ch in enumerate(chans_v):
            if ch:
                z2 = z2 + np.mean([h1_ring[y] for y in ch], axis=0) @ p.Uc[k]
        return np.maximum(z2, 0.0) @ p.V + p.c

    def predict(self, g: DirectedSocialGraph, v: int) -> Label:
        return _decide(self.logits(g, v))

    def predict_proba(self, g: DirectedSocialGraph, v: int) -> float:
        return float(_softmax(self.logits(g, v))[1])

    # -- persistence ----------------------------------------------------------------

    def save(self, path) -> None:
        header = [FORMAT_VERSION, self.n_relations, self.content_dim, self.p.b1.shape[0],
                  int(self.meta.get("seed", 0)), int(self.meta.get("epochs", 0))]
        container.dump(path, MAGIC, header, self.p.arrays())

    @classmethod
    def load(cls, path) -> "MessagePassingDetector":
        header, arrays = container.load(path, MAGIC)
        if len(header) != 6 or header[0] != FORMAT_VERSION or len(arrays) != 8:
            raise FormatError("unsupported detector checkpoint")
        _, n_rel, d_c, hidden, seed, epochs = header
        p = _Params(*arrays)
        F = 2 * N_BUCKETS + 1 + d_c
        if p.W0.shape != (F, hidden) or p.Wc.shape != (2 * n_rel, 1 + d_c, hidden) \
                or p.Uc.shape != (2 * n_rel, hidden, hidden) or p.V.shape != (hidden, 2):
            raise FormatError("inconsistent detector shapes")
        return cls(p, n_rel, d_c, {"seed": seed, "hidden": hidden, "epochs": epochs})

    def equals(self, other) -> bool:
        return all(a.tobytes() == b.tobytes() and a.shape == b.shape
                   for a, b in zip(self.p.arrays(), other.p.arrays()))


def _decide(z) -> Label:
    return Label.HUMAN if z[0] > z[1] else Label.BOT


def _softmax(z):
    e = np.exp(z - np.max(z))
    return e / e.sum()


def split_nodes(g: DirectedSocialGraph, labels, split_fraction: float, seed: int):
    """Stratified random split of labeled nodes into (train, test)."""
    rng = np.random.default_rng(seed)
    train, test = [], []
    for cls_ in (Label.HUMAN, Label.BOT):
        members = [v for v in g.nodes() if labels.get(v) == cls_]
        perm = rng.permutation(len(members))
        k = int(round(split_fraction * len(members)))
        train += [members[i] for i in perm[:k]]
        test += [members[i] for i in perm[k:]]
    return sorted(train), sorted(test)


def train_detector(g: DirectedSocialGraph, labels=None, split_fraction: float = 0.7, epochs: int = 200,
                   seed: int = 0, hidden: int = 16, lr: float = 0.01, weight_decay: float = 3e-2):
    """Full-batch cross-entropy training with Adam.

    Returns the trained model; ``model.meta`` records the split and the train
    and test accuracy on the clean graph.
    """
    labels = g.labels() if labels is None else labels
    train, test = split_nodes(g, labels, split_fraction, seed)
    classes = {labels[v] for v in train}
    if len(classes) < 2:
        raise DegenerateSplit("training split contains a single class")
    n_rel = max([r for _, _, r in g.edges()], default=0) + 1
    model = MessagePassingDetector.init(g.content_dim, n_rel, hidden, seed)
    nodes, Xs, Xm, A = model._inputs(g)
    AT = [Ac.T.tocsr() for Ac in A]
    index = {v: i for i, v in enumerate(nodes)}
    tr = np.array([index[v] for v in train])
    y = np.array([int(labels[v]) for v in train])
    # balance the classes in the loss
    counts = np.bincount(y, minlength=2).astype(np.float64)
    cw = len(y) / (2.0 * np.maximum(counts, 1.0))
    w = cw[y] / len(y)
    params = model.p.arrays()
    m1 = [np.zeros_like(a) for a in params]
    m2 = [np.zeros_like(a) for a in params]
    b1_, b2_, eps = 0.9, 0.999, 1e-8
    for step in range(1, epochs + 1):
        logits, (Z1, H1, AXm, Z2, H2, AH1) = model._forward(Xs, Xm, A)
        P = np.apply_along_axis(_softmax, 1, logits[tr])
        dlog = np.zeros_like(logits)
        G = P.copy()
        G[np.arange(len(y)), y] -= 1.0
        dlog[tr] = G * w[:, None]
        p = model.p
        dV = H2.T @ dlog
        dc = dlog.sum(axis=0)
        dZ2 = (dlog @ p.V.T) * (Z2 > 0)
        dU0 = H1.T @ dZ2
        dUc = np.stack([M.T @ dZ2 for M in AH1])
        db2 = dZ2.sum(axis=0)
        dH1 = dZ2 @ p.U0.T
        for k in range(len(A)):
            dH1 = dH1 + AT[k] @ (dZ2 @ p.Uc[k].T)
        dZ1 = dH1 * (Z1 > 0)
        dW0 = Xs.T @ dZ1
        dWc = np.stack([M.T @ dZ1 for M in AXm])
        db1 = dZ1.sum(axis=0)
        grads = [dW0, dWc, db1, dU0, dUc, db2, dV, dc]
        for k, (a, gk) in enumerate(zip(params, grads)):
            if a.ndim > 1:
                gk = gk + weight_decay * a
            m1[k] = b1_ * m1[k] + (1 - b1_) * gk
            m2[k] = b2_ * m2[k] + (1 - b2_) * gk * gk
            a -= lr * (m1[k] / (1 - b1_ ** step)) / (np.sqrt(m2[k] / (1 - b2_ ** step)) + eps)
    logits = model._forward(Xs, Xm, A)[0]
    pred = {v: _decide(z) for v, z in zip(nodes, logits)}

    def acc(vs):
        return float(np.mean([pred[v] == labels[v] for v in vs])) if vs else float("nan")

    model.meta.update({"epochs": epochs, "split_fraction": split_fraction, "train": train, "test": test,
                       "train_accuracy": acc(train), "test_accuracy": acc(test)})
    log.info("detector train acc %.3f test acc %.3f", model.meta["train_accuracy"], model.meta["test_accuracy"])
    return model


def accuracy(detector, g: DirectedSocialGraph, labels=None, nodes=None) -> float:
    labels = g.labels() if labels is None else labels
    nodes = g.nodes() if nodes is None else nodes
    pred = detector.predict_all(g)
    return float(np.mean([pred[v] == labels[v] for v in nodes]))


class CentroidDetector:
    """Nearest class centroid on (deg_in, deg_out); ties go to bot."""

    def __init__(self, centroids: dict):
        self.centroids = {Label.parse(k): np.asarray(v, dtype=np.float64) for k, v in centroids.items()}

    @classmethod
    def fit(cls, g: DirectedSocialGraph, labels=None) -> "CentroidDetector":
        labels = g.labels() if labels is None else labels
        cents = {}
        for c in (Label.HUMAN, Label.BOT):
            pts = [g.deg_counts(v) for v in g.nodes() if labels.get(v) == c]
            cents[c] = np.mean(pts, axis=0) if pts else np.zeros(2)
        return cls(cents)

    def predict(self, g: DirectedSocialGraph, v: int) -> Label:
        s = np.asarray(g.deg_counts(v), dtype=np.float64)
        d_h = np.sum((s - self.centroids[Label.HUMAN]) ** 2)
        d_b = np.sum((s - self.centroids[Label.BOT]) ** 2)
        return Label.HUMAN if d_h < d_b else Label.BOT

    def predict_all(self, g: DirectedSocialGraph) -> dict[int, Label]:
        return {v: self.predict(g, v) for v in g.nodes()}


def predict(model, g: DirectedSocialGraph, v: int) -> Label:
    return model.predict(g, v)
