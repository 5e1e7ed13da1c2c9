"""Dataset files: JSON Lines nodes and CSV edges.

Node lines look like ``{"id": 3, "label": "bot", "age_norm": 0.4, "content": [..]}``.
Instead of ``age_norm`` a file may carry raw ``created_at`` timestamps
(numbers or ISO 8601 strings); these are min-max scaled so that the oldest
account gets 1 and the newest gets 0. A file must use one form throughout.
The edge file has the header ``src,dst,relation``; ``relation`` may be
omitted and then defaults to the follow tag.
"""

from __future__ import annotations

import csv
import json
from datetime import datetime
from pathlib import Path

import numpy as np

from .errors import DanglingEdge, ParseError
from .graph import FOLLOW, DirectedSocialGraph, Label


def _timestamp(value, line: int) -> float:
    if isinstance(value, bool):
        raise ParseError("created_at must be a number or ISO 8601 string", line)
    if isinstance(value, (int, float)):
        return float(value)
    if isinstance(value, str):
        try:
            return datetime.fromisoformat(value.replace("Z", "+00:00")).timestamp()
        except ValueError:
            pass
    raise ParseError(f"bad created_at {value!r}", line)


def _int_field(row: dict, key: str, line: int) -> int:
    v = row.get(key)
    if isinstance(v, bool) or not isinstance(v, int):
        raise ParseError(f"field {key!r} must be an integer", line)
    return v


def read_nodes(path) -> list[dict]:
    """Parse the node file into dicts with resolved ``age_norm``."""
    rows = []
    kind = None
    seen = set()
    dim = None
    with open(path, encoding="utf-8") as fh:
        for line, text in enumerate(fh, 1):
            if not text.strip():
                continue
            try:
                row = json.loads(text)
            except json.JSONDecodeError as exc:
                raise ParseError(f"invalid JSON: {exc.msg}", line) from None
            if not isinstance(row, dict):
                raise ParseError("expected a JSON object", line)
            node = _int_field(row, "id", line)
            if node < 0:
                raise ParseError("node ids must be nonnegative", line)
            if node in seen:
                raise ParseError(f"duplicate node id {node}", line)
            seen.add(node)
            try:
                label = Label.parse(row.get("label"))
            except (ValueError, KeyError, TypeError):
                raise ParseError(f"bad label {row.get('label')!r}", line) from None
            content = row.get("content", [])
            if not isinstance(content, list) or not all(
                    isinstance(x, (int, float)) and not isinstance(x, bool) for x in content):
                raise ParseError("content must be a list of numbers", line)
            if dim is None:
                dim = len(content)
            elif len(content) != dim:
                raise ParseError(f"content has {len(content)} entries, expected {dim}", line)
            has_age, has_ts = "age_norm" in row, "created_at" in row
            if has_age == has_ts:
                raise ParseError("need exactly one of age_norm or created_at", line)
            this = "age_norm" if has_age else "created_at"
            if kind is None:
                kind = this
            elif kind != this:
                raise ParseError(f"mixes {this} with {kind} used on earlier lines", line)
            if has_age:
                age = row["age_norm"]
                if isinstance(age, bool) or not isinstance(age, (int, float)) or not 0.0 <= age <= 1.0:
                    raise ParseError("age_norm must be a number in [0, 1]", line)
                value = float(age)
            else:
                value = _timestamp(row["created_at"], line)
            pred = row.get("predicted")
            if pred is not None:
                try:
                    pred = Label.parse(pred)
                except (ValueError, KeyError, TypeError):
                    raise ParseError(f"bad predicted label {pred!r}", line) from None
            rows.append({"id": node, "label": label, "value": value, "content": content,
                         "predicted": pred, "line": line})
    if kind == "created_at" and rows:
        ts = np.array([r["value"] for r in rows])
        lo, hi = ts.min(), ts.max()
        for r in rows:
            r["value"] = float((hi - r["value"]) / (hi - lo)) if hi > lo else 0.0
    for r in rows:
        r["age_norm"] = r.pop("value")
    return rows


def read_edges(path, known) -> list[tuple[int, int, int]]:
    out = []
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            return out
        header = [h.strip() for h in header]
        if header[:2] != ["src", "dst"] or len(header) > 3 or (len(header) == 3 and header[2] != "relation"):
            raise ParseError("edge header must be src,dst[,relation]", 1)
        for row in reader:
            line = reader.line_num
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise ParseError(f"expected {len(header)} columns, got {len(row)}", line)
            try:
                vals = [int(c) for c in row]
            except ValueError:
                raise ParseError(f"non-integer field in {row!r}", line) from None
            src, dst = vals[0], vals[1]
            rel = vals[2] if len(vals) == 3 else FOLLOW
            if rel < 0:
                raise ParseError("relation must be nonnegative", line)
            for x in (src, dst):
                if x not in known:
                    raise DanglingEdge(f"edge endpoint {x} is not a known node", line)
            if src == dst:
                raise ParseError(f"self-loop on node {src}", line)
            out.append((src, dst, rel))
    return out


def load_dataset(node_path, edge_path) -> tuple[DirectedSocialGraph, dict]:
    """Load nodes then edges; the returned graph is snapshotted."""
    rows = read_nodes(node_path)
    dim = len(rows[0]["content"]) if rows else 0
    g = DirectedSocialGraph(dim)
    labels = {}
    for r in rows:
        g.add_node(r["id"], label=r["label"], age_norm=r["age_norm"],
                   content=np.asarray(r["content"], dtype=np.float64), predicted=r["predicted"])
        labels[r["id"]] = r["label"]
    for src, dst, rel in read_edges(edge_path, labels):
        g.add_edge(src, dst, rel)
    g.snapshot()
    return g, labels


def save_dataset(g: DirectedSocialGraph, node_path, edge_path, labels=None) -> None:
    labels = g.labels() if labels is None else labels
    Path(node_path).parent.mkdir(parents=True, exist_ok=True)
    Path(edge_path).parent.mkdir(parents=True, exist_ok=True)
    with open(node_path, "w", encoding="utf-8") as fh:
        for v in g.nodes():
            rec = g.record(v)
            row = {"id": int(v), "label": str(Label(labels[v])), "age_norm": float(rec.age_norm),
                   "content": [float(x) for x in rec.content]}
            if rec.predicted is not None:
                row["predicted"] = str(rec.predicted)
            fh.write(json.dumps(row) + "\n")
    with open(edge_path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["src", "dst", "relation"])
        for src, dst, rel in g.edges():
            w.writerow([src, dst, rel])
