"""Corpus serialization: JSON-lines graphs, split sidecar, manifest.

One graph per line keeps loading streamable and diffs readable. Floats
round-trip exactly (shortest-repr JSON), so rewriting a corpus with the
same seed is byte-identical.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass

import numpy as np

from ..errors import DataError, ParseError, ValidationError
from ..graphs import SparseGraph, build_graph
from .bundle import DatasetBundle, Split

GRAPHS_FILE = "graphs.jsonl"
SPLITS_FILE = "splits.json"
MANIFEST_FILE = "manifest.json"

_ARRAY_FIELDS = ("node_feat", "edge_feat", "node_labels", "edge_labels", "positions")
_INT_FIELDS = {"node_labels", "edge_labels"}


def _encode_graph(g):
    record = {"n": g.n, "edges": np.stack([g.src, g.dst], axis=1).tolist()}
    for name in _ARRAY_FIELDS:
        value = getattr(g, name)
        if value is not None:
            record[name] = value.tolist()
    if g.graph_label is not None:
        record["graph_label"] = g.graph_label
    return json.dumps(record, sort_keys=True)


def _decode_array(record, name):
    if name not in record:
        return None
    value = record[name]
    dtype = np.int64 if name in _INT_FIELDS else None
    arr = np.asarray(value, dtype=dtype)
    if dtype is None and arr.dtype.kind not in "if":
        raise ValueError(f"field {name} is not numeric")
    return arr


def _decode_graph(record):
    for required in ("n", "edges"):
        if required not in record:
            raise ValueError(f"missing field {required}")
    kwargs = {name: _decode_array(record, name) for name in _ARRAY_FIELDS}
    return build_graph(
        record["n"],
        np.asarray(record["edges"], dtype=np.int64).reshape(-1, 2),
        graph_label=record.get("graph_label"),
        **kwargs,
    )


def manifest_dict(bundle):
    """The manifest record for a bundle; also the basis of its fingerprint."""
    return {
        "name": bundle.name,
        "task": bundle.task,
        "n_classes": bundle.n_classes,
        "n_graphs": len(bundle),
        "seed": bundle.seed,
        "config": _jsonable(bundle.config),
        "format": 1,
    }


def save_bundle(bundle, out_dir, force=False):
    """Write graphs.jsonl, splits.json, and manifest.json into ``out_dir``."""
    os.makedirs(out_dir, exist_ok=True)
    existing = [f for f in os.listdir(out_dir) if not f.startswith(".")]
    if existing and not force:
        raise DataError(f"output directory {out_dir} is not empty (use force)")

    with open(os.path.join(out_dir, GRAPHS_FILE), "w") as fh:
        for g in bundle.graphs:
            fh.write(_encode_graph(g) + "\n")
    with open(os.path.join(out_dir, SPLITS_FILE), "w") as fh:
        json.dump({"folds": [s.to_dict() for s in bundle.splits]}, fh, sort_keys=True)
        fh.write("\n")
    with open(os.path.join(out_dir, MANIFEST_FILE), "w") as fh:
        json.dump(manifest_dict(bundle), fh, sort_keys=True, indent=2)
        fh.write("\n")


def _jsonable(value):
    if isinstance(value, dict):
        return {k: _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if isinstance(value, np.generic):
        return value.item()
    return value


def load_graphs(path):
    """Read a bundle from a directory (or bare graphs.jsonl path)."""
    if os.path.isdir(path):
        directory, graphs_path = path, os.path.join(path, GRAPHS_FILE)
    else:
        directory, graphs_path = os.path.dirname(path), path
    if not os.path.exists(graphs_path):
        raise DataError(f"no graph file at {graphs_path}")

    graphs = []
    with open(graphs_path) as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                graphs.append(_decode_graph(json.loads(line)))
            except (ValueError, KeyError, IndexError) as exc:
                raise ParseError(str(exc), path=graphs_path, line=lineno) from exc

    splits = []
    splits_path = os.path.join(directory, SPLITS_FILE)
    if os.path.exists(splits_path):
        with open(splits_path) as fh:
            doc = json.load(fh)
        for fold in doc.get("folds", []):
            for part in ("train", "val", "test"):
                if part not in fold:
                    raise ParseError(f"missing field {part}", path=splits_path)
            splits.append(Split(fold["train"], fold["val"], fold["test"]))

    name, task, n_classes, seed, config = "loaded", "graph_class", None, None, {}
    manifest_path = os.path.join(directory, MANIFEST_FILE)
    if os.path.exists(manifest_path):
        with open(manifest_path) as fh:
            manifest = json.load(fh)
        name = manifest.get("name", name)
        task = manifest.get("task", task)
        n_classes = manifest.get("n_classes")
        seed = manifest.get("seed")
        config = manifest.get("config", {})

    return DatasetBundle(
        name=name,
        task=task,
        graphs=graphs,
        n_classes=n_classes,
        splits=splits,
        config=config,
        seed=seed,
    )


@dataclass
class LinkBundle:
    """Single graph plus temporal edge splits for link prediction.

    The graph holds only training arcs; val/test pairs are targets. Node
    count covers every endpoint that appears in any split.
    """

    graph: SparseGraph
    train: np.ndarray
    val: np.ndarray
    test: np.ndarray


def edge_splits_by_time(pairs, times):
    """Latest time bucket becomes test, second latest val, the rest train."""
    times = np.asarray(times)
    distinct = np.unique(times)
    if distinct.size < 3:
        raise ValidationError(f"need 3 distinct time values, got {distinct.size}")
    test_t, val_t = distinct[-1], distinct[-2]
    return (
        pairs[times < val_t],
        pairs[times == val_t],
        pairs[times == test_t],
    )


def load_edge_list(path):
    """Whitespace-delimited ``src dst time`` lines -> single-graph bundle."""
    if not os.path.exists(path):
        raise DataError(f"no edge list at {path}")
    rows = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            fields = line.split()
            if len(fields) < 3:
                raise ParseError("expected: src dst time", path=path, line=lineno)
            try:
                rows.append((int(fields[0]), int(fields[1]), float(fields[2])))
            except ValueError as exc:
                raise ParseError(str(exc), path=path, line=lineno) from exc
    if not rows:
        raise DataError(f"edge list {path} is empty")

    pairs = np.array([(r[0], r[1]) for r in rows], dtype=np.int64)
    times = np.array([r[2] for r in rows])
    if pairs.min() < 0:
        raise ParseError("negative node id", path=path)
    train, val, test = edge_splits_by_time(pairs, times)
    n = int(pairs.max()) + 1

    canon = np.sort(train, axis=1)
    canon = canon[canon[:, 0] != canon[:, 1]]
    canon = np.unique(canon, axis=0)
    arcs = np.concatenate([canon, canon[:, ::-1]]) if len(canon) else np.zeros((0, 2), np.int64)
    return LinkBundle(graph=build_graph(n, arcs), train=train, val=val, test=test)
