"""Directed social graph with labeled nodes and reversible edits.

Every mutation is journaled, so ``reset_to_baseline`` only has to undo what
changed since the last snapshot instead of copying the whole graph.
"""

from __future__ import annotations

import enum
import itertools
from dataclasses import dataclass, field
from typing import Iterable, NamedTuple

import numpy as np

from .errors import ConstraintViolation, InvalidParams, NodeNotFound

FOLLOW = 0


class Label(enum.IntEnum):
    HUMAN = 0
    BOT = 1

    @classmethod
    def parse(cls, value) -> "Label":
        if isinstance(value, Label):
            return value
        if isinstance(value, str):
            try:
                return cls[value.upper()]
            except KeyError:
                raise ValueError(f"unknown label {value!r}") from None
        return cls(int(value))

    def __str__(self):
        return self.name.lower()


@dataclass
class NodeRecord:
    label: Label
    age_norm: float
    content: np.ndarray
    predicted: Label | None = None

    def copy(self) -> "NodeRecord":
        return NodeRecord(self.label, self.age_norm, self.content.copy(), self.predicted)

    def same_as(self, other: "NodeRecord") -> bool:
        return (
            self.label == other.label
            and self.predicted == other.predicted
            and np.float64(self.age_norm).tobytes() == np.float64(other.age_norm).tobytes()
            and self.content.tobytes() == other.content.tobytes()
        )


class EdgeEdit(NamedTuple):
    op: str  # "add" or "delete"
    src: int
    dst: int
    relation: int = FOLLOW

    def to_json(self) -> dict:
        return {"op": self.op, "src": int(self.src), "dst": int(self.dst), "relation": int(self.relation)}


class EditResult(NamedTuple):
    applied: int
    noops: int
    effective: tuple


@dataclass
class _Snapshot:
    nodes: dict
    edges: frozenset
    version: int


class DirectedSocialGraph:
    """Directed multi-relation follow graph.

    Node ids are nonnegative integers. Adjacency is kept as
    ``out[u][v] -> set of relation tags`` with a mirrored ``in`` map.
    """

    _versions = itertools.count(1)

    def __init__(self, content_dim: int = 0):
        self.content_dim = int(content_dim)
        self._nodes: dict[int, NodeRecord] = {}
        self._out: dict[int, dict[int, set]] = {}
        self._in: dict[int, dict[int, set]] = {}
        self._n_edges = 0
        self._journal: list = []
        self._baseline: _Snapshot | None = None
        self.version = next(self._versions)

    # -- construction -----------------------------------------------------

    def add_node(self, node: int | None = None, *, label=Label.HUMAN, age_norm: float = 0.0,
                 content=None, predicted=None) -> int:
        if node is None:
            node = max(self._nodes, default=-1) + 1
        node = int(node)
        if node < 0:
            raise InvalidParams("node ids must be nonnegative")
        if node in self._nodes:
            raise InvalidParams(f"duplicate node {node}")
        if not 0.0 <= age_norm <= 1.0:
            raise InvalidParams(f"age_norm {age_norm} outside [0, 1]")
        if content is None:
            content = np.zeros(self.content_dim)
        content = np.array(content, dtype=np.float64).reshape(-1)
        if content.shape[0] != self.content_dim:
            raise InvalidParams(f"content dimension {content.shape[0]} != {self.content_dim}")
        rec = NodeRecord(Label.parse(label), float(age_norm), content,
                         None if predicted is None else Label.parse(predicted))
        self._nodes[node] = rec
        self._out[node] = {}
        self._in[node] = {}
        self._touch(("node+", node))
        return node

    def remove_node(self, node: int) -> None:
        self._check(node)
        for v, rels in list(self._out[node].items()):
            for r in sorted(rels):
                self._del_edge(node, v, r)
        for u, rels in list(self._in[node].items()):
            for r in sorted(rels):
                self._del_edge(u, node, r)
        rec = self._nodes.pop(node)
        del self._out[node], self._in[node]
        self._touch(("node-", node, rec))

    def add_edge(self, src: int, dst: int, relation: int = FOLLOW) -> bool:
        """Insert an edge; returns False when it already exists."""
        self._check(src)
        self._check(dst)
        if src == dst:
            raise InvalidParams(f"self-loop on {src}")
        if relation in self._out[src].get(dst, ()):
            return False
        self._add_edge(src, dst, relation)
        return True

    def remove_edge(self, src: int, dst: int, relation: int = FOLLOW) -> bool:
        self._check(src)
        self._check(dst)
        if relation not in self._out[src].get(dst, ()):
            return False
        self._del_edge(src, dst, relation)
        return True

    def set_record(self, node: int, *, age_norm: float | None = None, content=None,
                   predicted=...) -> None:
        rec = self.record(node)
        old = rec.copy()
        if age_norm is not None:
            if not 0.0 <= age_norm <= 1.0:
                raise InvalidParams(f"age_norm {age_norm} outside [0, 1]")
            rec.age_norm = float(age_norm)
        if content is not None:
            content = np.array(content, dtype=np.float64).reshape(-1)
            if content.shape[0] != self.content_dim:
                raise InvalidParams("content dimension mismatch")
            rec.content = content
        if predicted is not ...:
            rec.predicted = None if predicted is None else Label.parse(predicted)
        self._touch(("rec", node, old))

    def _add_edge(self, u, v, r):
        self._out[u].setdefault(v, set()).add(r)
        self._in[v].setdefault(u, set()).add(r)
        self._n_edges += 1
        self._touch(("e+", u, v, r))

    def _del_edge(self, u, v, r):
        rels = self._out[u][v]
        rels.discard(r)
        if not rels:
            del self._out[u][v]
        rels = self._in[v][u]
        rels.discard(r)
        if not rels:
            del self._in[v][u]
        self._n_edges -= 1
        self._touch(("e-", u, v, r))

    def _touch(self, entry):
        if self._baseline is not None:
            self._journal.append(entry)
        self.version = next(self._versions)

    def _check(self, node):
        if node not in self._nodes:
            raise NodeNotFound(node)

    # -- queries ------------------------------------------------------------

    def __contains__(self, node) -> bool:
        return node in self._nodes

    def __len__(self) -> int:
        return len(self._nodes)

    @property
    def n_edges(self) -> int:
        return self._n_edges

    def nodes(self) -> list[int]:
        return sorted(self._nodes)

    def record(self, node: int) -> NodeRecord:
        try:
            return self._nodes[node]
        except KeyError:
            raise NodeNotFound(node) from None

    def label(self, node: int) -> Label:
        return self.record(node).label

    def labels(self) -> dict[int, Label]:
        return {v: r.label for v, r in self._nodes.items()}

    def out_neighbors(self, node: int) -> list[int]:
        self._check(node)
        return sorted(self._out[node])

    def in_neighbors(self, node: int) -> list[int]:
        self._check(node)
        return sorted(self._in[node])

    def has_edge(self, src: int, dst: int, relation: int | None = None) -> bool:
        rels = self._out.get(src, {}).get(dst)
        if not rels:
            return False
        return relation is None or relation in rels

    def relations(self, src: int, dst: int) -> set:
        return set(self._out.get(src, {}).get(dst, ()))

    def edges(self) -> list[tuple[int, int, int]]:
        """All (src, dst, relation) triples in sorted order."""
        return sorted((u, v, r) for u, nbrs in self._out.items() for v, rels in nbrs.items() for r in rels)

    def edge_triples_of(self, node: int) -> list[tuple[int, int, int]]:
        """Every edge incident to ``node``."""
        self._check(node)
        out = [(node, v, r) for v, rels in self._out[node].items() for r in rels]
        inc = [(u, node, r) for u, rels in self._in[node].items() for r in rels]
        return sorted(out + inc)

    def deg_counts(self, node: int) -> tuple[int, int]:
        self._check(node)
        return (sum(len(r) for r in self._in[node].values()),
                sum(len(r) for r in self._out[node].values()))

    # -- snapshots ---------------------------------------------------------

    def snapshot(self) -> None:
        """Freeze the current state as the baseline."""
        self._baseline = _Snapshot(
            {v: r.copy() for v, r in self._nodes.items()},
            frozenset(self.edges()),
            self.version,
        )
        self._journal = []

    @property
    def has_baseline(self) -> bool:
        return self._baseline is not None

    @property
    def baseline_version(self) -> int | None:
        return None if self._baseline is None else self._baseline.version

    @property
    def dirty(self) -> bool:
        return bool(self._journal)

    def reset(self) -> None:
        if self._baseline is None:
            raise InvalidParams("graph has no baseline snapshot")
        journal, self._journal = self._journal, []
        base = self._baseline
        self._baseline = None  # suspend journaling while undoing
        try:
            for entry in reversed(journal):
                kind = entry[0]
                if kind == "e+":
                    self._del_edge(*entry[1:])
                elif kind == "e-":
                    self._add_edge(*entry[1:])
                elif kind == "node+":
                    node = entry[1]
                    del self._nodes[node], self._out[node], self._in[node]
                elif kind == "node-":
                    node, rec = entry[1], entry[2]
                    self._nodes[node] = rec
                    self._out[node] = {}
                    self._in[node] = {}
                elif kind == "rec":
                    self._nodes[entry[1]] = entry[2]
        finally:
            self._baseline = base
        self.version = base.version

    def matches_baseline(self) -> bool:
        """Bit-exact comparison of the live state with the baseline."""
        base = self._baseline
        if base is None:
            return False
        if set(self._nodes) != set(base.nodes):
            return False
        if any(not self._nodes[v].same_as(base.nodes[v]) for v in base.nodes):
            return False
        return frozenset(self.edges()) == base.edges

    def copy(self) -> "DirectedSocialGraph":
        g = DirectedSocialGraph(self.content_dim)
        for v in self.nodes():
            r = self._nodes[v]
            g.add_node(v, label=r.label, age_norm=r.age_norm, content=r.content, predicted=r.predicted)
        for u, v, r in self.edges():
            g.add_edge(u, v, r)
        if self._baseline is not None:
            g.snapshot()
        return g

    def check_invariants(self) -> None:
        for u, nbrs in self._out.items():
            for v, rels in nbrs.items():
                assert u != v, "self-loop"
                assert rels and self._in[v][u] == rels, "in/out mismatch"
        for v, nbrs in self._in.items():
            for u, rels in nbrs.items():
                assert self._out[u][v] == rels, "in/out mismatch"
        out_total = sum(self.deg_counts(v)[1] for v in self._nodes)
        in_total = sum(self.deg_counts(v)[0] for v in self._nodes)
        assert out_total == in_total == self._n_edges


def degree_stats(g: DirectedSocialGraph, v: int) -> tuple[int, int]:
    """(deg_in, deg_out) counted over every relation tag."""
    return g.deg_counts(v)


def ego_neighborhood(g: DirectedSocialGraph, v: int, k: int = 1) -> list[int]:
    """Nodes within ``k`` undirected hops of ``v``, ascending, ``v`` excluded."""
    g._check(v)
    if k < 1:
        raise InvalidParams("k must be >= 1")
    seen = {v}
    frontier = [v]
    for _ in range(k):
        nxt = []
        for u in frontier:
            for w in itertools.chain(g._out[u], g._in[u]):
                if w not in seen:
                    seen.add(w)
                    nxt.append(w)
        frontier = nxt
        if not frontier:
            break
    seen.discard(v)
    return sorted(seen)


def apply_edits(g: DirectedSocialGraph, edits: Iterable[EdgeEdit], target: int) -> EditResult:
    """Apply edge edits that must all touch ``target``.

    Incidence is validated for the whole batch before anything is mutated.
    Adding an existing edge or deleting an absent one is counted as a no-op.
    """
    edits = [e if isinstance(e, EdgeEdit) else EdgeEdit(*e) for e in edits]
    for e in edits:
        if e.op not in ("add", "delete"):
            raise InvalidParams(f"unknown edit op {e.op!r}")
        if (e.src == target) == (e.dst == target):
            raise ConstraintViolation(f"edit {e.src}->{e.dst} is not incident to target {target}")
        g._check(e.src)
        g._check(e.dst)
    applied, noops, effective = 0, 0, []
    for e in edits:
        changed = g.add_edge(e.src, e.dst, e.relation) if e.op == "add" else \
            g.remove_edge(e.src, e.dst, e.relation)
        if changed:
            applied += 1
            effective.append(e)
        else:
            noops += 1
    return EditResult(applied, noops, tuple(effective))


def inverse_edits(edits: Iterable[EdgeEdit]) -> list[EdgeEdit]:
    flip = {"add": "delete", "delete": "add"}
    return [EdgeEdit(flip[e.op], e.src, e.dst, e.relation) for e in reversed(list(edits))]


def reset_to_baseline(g: DirectedSocialGraph) -> None:
    g.reset()
