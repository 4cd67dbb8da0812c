"""Typed heterogeneous graph container with relation-indexed CSR arcs.

Nodes live in per-type tables (features, labels, view, segment, batch
member). Arcs are grouped by Relation — a (source type, edge kind,
destination type) triple with a dense stable id — and stored sorted by
(destination, source) so all aggregations reduce over incoming arcs in a
reproducible order. Graphs are built mutably through GraphBuilder, then
finalized into an immutable HeteroGraph that can be batched, filtered, and
serialized bit-exactly.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import IntEnum
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import (
    BatchError,
    DimensionError,
    DuplicateNodeError,
    GraphIntegrityError,
    GraphValidationError,
)
from .util import ByteReader, ByteWriter, open_checksummed, with_checksum

GRAPH_MAGIC = b"MGLV"
GRAPH_VERSION = 1


class NodeType(IntEnum):
    VISION_EGO = 0
    VISION_EXO = 1
    DEPTH = 2
    TEXT = 3


class EdgeKind(IntEnum):
    TEMPORAL_FWD = 0
    TEMPORAL_BWD = 1
    TEMPORAL_UND = 2
    SELF_LOOP = 3
    CROSS_VIEW_EGO_EXO = 4
    EXO_EXO = 5
    MODALITY_TO_VISION = 6
    DEPTH_CROSS_VIEW = 7
    DEPTH_TEMPORAL = 8


@dataclass(frozen=True)
class Relation:
    """One typed arc category; relations with equal triples share weights."""

    src_type: NodeType
    kind: EdgeKind
    dst_type: NodeType
    relation_id: int

    @property
    def key(self) -> tuple[NodeType, EdgeKind, NodeType]:
        return (self.src_type, self.kind, self.dst_type)

    @property
    def name(self) -> str:
        return f"{self.src_type.name}--{self.kind.name}->{self.dst_type.name}"


def _build_registry() -> tuple[Relation, ...]:
    triples = [
        (NodeType.VISION_EGO, EdgeKind.TEMPORAL_FWD, NodeType.VISION_EGO),
        (NodeType.VISION_EGO, EdgeKind.TEMPORAL_BWD, NodeType.VISION_EGO),
        (NodeType.VISION_EGO, EdgeKind.TEMPORAL_UND, NodeType.VISION_EGO),
        (NodeType.VISION_EGO, EdgeKind.SELF_LOOP, NodeType.VISION_EGO),
        (NodeType.VISION_EXO, EdgeKind.TEMPORAL_FWD, NodeType.VISION_EXO),
        (NodeType.VISION_EXO, EdgeKind.TEMPORAL_BWD, NodeType.VISION_EXO),
        (NodeType.VISION_EXO, EdgeKind.TEMPORAL_UND, NodeType.VISION_EXO),
        (NodeType.VISION_EXO, EdgeKind.SELF_LOOP, NodeType.VISION_EXO),
        (NodeType.VISION_EXO, EdgeKind.CROSS_VIEW_EGO_EXO, NodeType.VISION_EGO),
        (NodeType.VISION_EGO, EdgeKind.CROSS_VIEW_EGO_EXO, NodeType.VISION_EXO),
        (NodeType.VISION_EXO, EdgeKind.EXO_EXO, NodeType.VISION_EXO),
        (NodeType.DEPTH, EdgeKind.MODALITY_TO_VISION, NodeType.VISION_EGO),
        (NodeType.DEPTH, EdgeKind.MODALITY_TO_VISION, NodeType.VISION_EXO),
        (NodeType.DEPTH, EdgeKind.DEPTH_CROSS_VIEW, NodeType.DEPTH),
        (NodeType.DEPTH, EdgeKind.DEPTH_TEMPORAL, NodeType.DEPTH),
        (NodeType.TEXT, EdgeKind.MODALITY_TO_VISION, NodeType.VISION_EGO),
    ]
    return tuple(Relation(s, k, d, i) for i, (s, k, d) in enumerate(triples))


RELATIONS: tuple[Relation, ...] = _build_registry()
_BY_TRIPLE = {r.key: r for r in RELATIONS}
_BY_ID = {r.relation_id: r for r in RELATIONS}


def relation_for(src_type: NodeType, kind: EdgeKind, dst_type: NodeType) -> Relation:
    rel = _BY_TRIPLE.get((src_type, kind, dst_type))
    if rel is None:
        raise GraphIntegrityError(
            f"no registered relation {src_type.name} --{kind.name}-> {dst_type.name}"
        )
    return rel


def relation_by_id(relation_id: int) -> Relation:
    rel = _BY_ID.get(relation_id)
    if rel is None:
        raise GraphIntegrityError(f"unknown relation id {relation_id}")
    return rel


@dataclass(frozen=True)
class NodeTable:
    """Per-type node attributes; rows are type-local node ids."""

    features: np.ndarray  # (n, dim) float64
    labels: np.ndarray    # (n,) int64, -1 = unlabeled
    view: np.ndarray      # (n,) int64, 0 = ego
    segment: np.ndarray   # (n,) int64
    member: np.ndarray    # (n,) int64 batch-member index

    @property
    def count(self) -> int:
        return self.features.shape[0]


@dataclass(frozen=True)
class RelationArcs:
    """Arcs of one relation in CSR form sorted by (dst, src)."""

    src: np.ndarray     # (e,) int64
    dst: np.ndarray     # (e,) int64, non-decreasing
    indptr: np.ndarray  # (n_dst + 1,) int64

    @property
    def count(self) -> int:
        return self.src.shape[0]


def _empty_table(dim: int) -> NodeTable:
    z = np.zeros(0, dtype=np.int64)
    return NodeTable(np.zeros((0, dim)), z, z.copy(), z.copy(), z.copy())


def _csr(src, dst, n_dst: int) -> RelationArcs:
    src = np.asarray(src, dtype=np.int64)
    dst = np.asarray(dst, dtype=np.int64)
    order = np.lexsort((src, dst))
    src, dst = src[order], dst[order]
    counts = np.bincount(dst, minlength=n_dst) if dst.size else np.zeros(n_dst, dtype=np.int64)
    indptr = np.concatenate([[0], np.cumsum(counts)]).astype(np.int64)
    return RelationArcs(src, dst, indptr)


@dataclass(frozen=True)
class HeteroGraph:
    """Immutable finalized graph. Construct through GraphBuilder."""

    take_ids: tuple[str, ...]
    num_classes: int
    type_dims: dict[NodeType, int]             # node types this graph may hold
    nodes: dict[NodeType, NodeTable]           # one table per declared type
    arcs: dict[int, RelationArcs]              # relation_id -> arcs (non-empty only)

    def node_count(self, node_type: NodeType) -> int:
        table = self.nodes.get(node_type)
        return table.count if table is not None else 0

    @property
    def total_nodes(self) -> int:
        return sum(t.count for t in self.nodes.values())

    @property
    def total_arcs(self) -> int:
        return sum(a.count for a in self.arcs.values())

    def arc_count(self, relation_id: int) -> int:
        arcs = self.arcs.get(relation_id)
        return arcs.count if arcs is not None else 0

    def present_types(self) -> list[NodeType]:
        return [t for t in NodeType if self.node_count(t) > 0]

    def type_offsets(self) -> dict[NodeType, int]:
        """Starting row of each declared type in the canonical global ordering."""
        offsets, pos = {}, 0
        for t in NodeType:
            if t in self.type_dims:
                offsets[t] = pos
                pos += self.node_count(t)
        return offsets

    def global_arrays(self):
        """Concatenated (labels, view, segment, member, node_type) in global order."""
        labels, view, segment, member, ntype = [], [], [], [], []
        for t in NodeType:
            table = self.nodes.get(t)
            if table is None:
                continue
            labels.append(table.labels)
            view.append(table.view)
            segment.append(table.segment)
            member.append(table.member)
            ntype.append(np.full(table.count, int(t), dtype=np.int64))
        cat = lambda parts: (np.concatenate(parts) if parts else np.zeros(0, dtype=np.int64))
        return cat(labels), cat(view), cat(segment), cat(member), cat(ntype)

    # -- serialization -----------------------------------------------------

    def to_bytes(self) -> bytes:
        w = ByteWriter()
        w.u32(self.num_classes)
        w.u32(len(self.take_ids))
        for tid in self.take_ids:
            w.string(tid)
        declared = sorted(self.type_dims)
        w.u32(len(declared))
        for t in declared:
            table = self.nodes[t]
            w.u32(int(t))
            w.u32(self.type_dims[t])
            w.u32(table.count)
            w.array(table.features, "f8")
            w.array(table.labels, "i8")
            w.array(table.view, "i8")
            w.array(table.segment, "i8")
            w.array(table.member, "i8")
        rel_ids = sorted(self.arcs)
        w.u32(len(rel_ids))
        for rid in rel_ids:
            arcs = self.arcs[rid]
            w.u32(rid)
            w.u32(arcs.count)
            w.array(arcs.src, "i8")
            w.array(arcs.dst, "i8")
        return with_checksum(GRAPH_MAGIC, GRAPH_VERSION, w.getvalue())

    @staticmethod
    def from_bytes(data: bytes) -> "HeteroGraph":
        r = ByteReader(open_checksummed(data, GRAPH_MAGIC, GRAPH_VERSION))
        num_classes = r.u32()
        take_ids = tuple(r.string() for _ in range(r.u32()))
        type_dims: dict[NodeType, int] = {}
        nodes: dict[NodeType, NodeTable] = {}
        for _ in range(r.u32()):
            t = NodeType(r.u32())
            dim = r.u32()
            count = r.u32()
            features = r.array(count * dim, "f8").reshape(count, dim)
            labels = r.array(count, "i8")
            view = r.array(count, "i8")
            segment = r.array(count, "i8")
            member = r.array(count, "i8")
            type_dims[t] = dim
            nodes[t] = NodeTable(features, labels, view, segment, member)
        arcs: dict[int, RelationArcs] = {}
        for _ in range(r.u32()):
            rid = r.u32()
            count = r.u32()
            src = r.array(count, "i8")
            dst = r.array(count, "i8")
            rel = relation_by_id(rid)
            n_dst = nodes[rel.dst_type].count if rel.dst_type in nodes else 0
            arcs[rid] = _csr(src, dst, n_dst)
        r.expect_end()
        return HeteroGraph(take_ids, num_classes, type_dims, nodes, arcs)

    def meta(self) -> dict:
        """JSON-sidecar summary: dimensions, class count, takes, table sizes."""
        return {
            "num_classes": self.num_classes,
            "take_ids": list(self.take_ids),
            "type_dims": {t.name: d for t, d in sorted(self.type_dims.items())},
            "node_counts": {t.name: self.node_count(t) for t in sorted(self.type_dims)},
            "arc_counts": {relation_by_id(r).name: a.count for r, a in sorted(self.arcs.items())},
        }


def graphs_equal(a: HeteroGraph, b: HeteroGraph) -> bool:
    return a.to_bytes() == b.to_bytes()


class GraphBuilder:
    """Single-writer accumulator of nodes and arcs; finalize() validates.

    Node ids are type-local and assigned in insertion order. Arc endpoints
    must already exist when the arc is added; finalize re-validates every
    structural invariant and reports all violations at once.
    """

    def __init__(self, take_id: str, num_classes: int, type_dims: Mapping[NodeType, int]):
        if num_classes < 1:
            raise GraphValidationError(["num_classes must be >= 1"])
        self.take_id = take_id
        self.num_classes = num_classes
        self.type_dims = dict(type_dims)
        self._features: dict[NodeType, list[np.ndarray]] = {t: [] for t in self.type_dims}
        self._labels: dict[NodeType, list[int]] = {t: [] for t in self.type_dims}
        self._view: dict[NodeType, list[int]] = {t: [] for t in self.type_dims}
        self._segment: dict[NodeType, list[int]] = {t: [] for t in self.type_dims}
        self._arcs: dict[int, list[tuple[int, int]]] = {}
        self._node_keys: set[tuple[int, int, NodeType]] = set()

    def node_count(self, node_type: NodeType) -> int:
        return len(self._features.get(node_type, ()))

    def declare_type(self, node_type: NodeType, dim: int):
        """Register a node type after construction (no-op if already declared)."""
        if node_type in self.type_dims:
            if self.type_dims[node_type] != dim:
                raise DimensionError(
                    f"{node_type.name} already declared with dim {self.type_dims[node_type]}"
                )
            return
        self.type_dims[node_type] = dim
        self._features[node_type] = []
        self._labels[node_type] = []
        self._view[node_type] = []
        self._segment[node_type] = []

    def add_node(self, node_type: NodeType, view: int, segment: int, features,
                 label: int | None = None) -> int:
        if node_type not in self.type_dims:
            raise GraphIntegrityError(f"node type {node_type.name} not declared for this graph")
        feats = np.asarray(features, dtype=np.float64).reshape(-1)
        dim = self.type_dims[node_type]
        if feats.shape[0] != dim:
            raise DimensionError(
                f"{node_type.name} features have length {feats.shape[0]}, expected {dim}"
            )
        key = (int(view), int(segment), node_type)
        if key in self._node_keys:
            raise DuplicateNodeError(
                f"node (take={self.take_id}, view={view}, segment={segment}, "
                f"type={node_type.name}) already exists"
            )
        self._node_keys.add(key)
        self._features[node_type].append(feats)
        self._labels[node_type].append(-1 if label is None else int(label))
        self._view[node_type].append(int(view))
        self._segment[node_type].append(int(segment))
        return len(self._features[node_type]) - 1

    def add_arc(self, relation: Relation, src: int, dst: int):
        if relation.relation_id not in _BY_ID:
            raise GraphIntegrityError(f"unregistered relation {relation}")
        if not 0 <= src < self.node_count(relation.src_type):
            raise GraphIntegrityError(
                f"arc {relation.name} ({src} -> {dst}): missing source node"
            )
        if not 0 <= dst < self.node_count(relation.dst_type):
            raise GraphIntegrityError(
                f"arc {relation.name} ({src} -> {dst}): missing destination node"
            )
        if relation.kind == EdgeKind.SELF_LOOP and src != dst:
            raise GraphIntegrityError(
                f"self-loop arc must have src == dst, got {src} -> {dst}"
            )
        self._arcs.setdefault(relation.relation_id, []).append((int(src), int(dst)))

    def _validate(self) -> list[str]:
        problems = []
        for t, rows in self._labels.items():
            for i, lab in enumerate(rows):
                if lab != -1 and not 0 <= lab < self.num_classes:
                    problems.append(
                        f"{t.name} node {i}: label {lab} outside [0, {self.num_classes})"
                    )
        for rid, pairs in self._arcs.items():
            rel = _BY_ID.get(rid)
            if rel is None:
                problems.append(f"arc list references unknown relation id {rid}")
                continue
            n_src = self.node_count(rel.src_type)
            n_dst = self.node_count(rel.dst_type)
            for k, (s, d) in enumerate(pairs):
                if not 0 <= s < n_src:
                    problems.append(f"{rel.name} arc {k}: dangling source {s} (have {n_src})")
                if not 0 <= d < n_dst:
                    problems.append(f"{rel.name} arc {k}: dangling destination {d} (have {n_dst})")
                if rel.kind == EdgeKind.SELF_LOOP and s != d:
                    problems.append(f"{rel.name} arc {k}: self-loop with src {s} != dst {d}")
        return problems

    def finalize(self) -> HeteroGraph:
        problems = self._validate()
        if problems:
            raise GraphValidationError(problems)
        nodes = {}
        for t, dim in self.type_dims.items():
            if self._features[t]:
                nodes[t] = NodeTable(
                    np.ascontiguousarray(np.stack(self._features[t])),
                    np.asarray(self._labels[t], dtype=np.int64),
                    np.asarray(self._view[t], dtype=np.int64),
                    np.asarray(self._segment[t], dtype=np.int64),
                    np.zeros(len(self._features[t]), dtype=np.int64),
                )
            else:
                nodes[t] = _empty_table(dim)
        arcs = {}
        for rid in sorted(self._arcs):
            pairs = self._arcs[rid]
            if not pairs:
                continue
            rel = _BY_ID[rid]
            src = [p[0] for p in pairs]
            dst = [p[1] for p in pairs]
            arcs[rid] = _csr(src, dst, nodes[rel.dst_type].count)
        return HeteroGraph((self.take_id,), self.num_classes, dict(self.type_dims), nodes, arcs)


def builder_from_graph(g: HeteroGraph) -> GraphBuilder:
    """Copy a finalized single-take graph back into a mutable builder."""
    if len(g.take_ids) != 1:
        raise BatchError("only single-take graphs can be re-opened for building")
    b = GraphBuilder(g.take_ids[0], g.num_classes, g.type_dims)
    for t in g.type_dims:
        table = g.nodes[t]
        for i in range(table.count):
            label = int(table.labels[i])
            b.add_node(t, int(table.view[i]), int(table.segment[i]), table.features[i],
                       None if label < 0 else label)
    for rid, arcs in g.arcs.items():
        rel = relation_by_id(rid)
        for s, d in zip(arcs.src, arcs.dst):
            b.add_arc(rel, int(s), int(d))
    return b


# ---------------------------------------------------------------------------
# batching
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class GraphBatch:
    """Disjoint union of member graphs with boundaries retained for un-batching."""

    graph: HeteroGraph
    member_take_ids: tuple[tuple[str, ...], ...]
    member_type_dims: tuple[dict, ...]
    offsets: dict[NodeType, np.ndarray]  # (num_members + 1,) per type

    @property
    def num_members(self) -> int:
        return len(self.member_take_ids)


def disjoint_union(graphs: Sequence[HeteroGraph]) -> GraphBatch:
    """Merge single-member graphs into one batch graph with per-type id offsets."""
    if not graphs:
        raise BatchError("cannot union zero graphs")
    num_classes = graphs[0].num_classes
    merged_dims: dict[NodeType, int] = {}
    for g in graphs:
        if g.num_classes != num_classes:
            raise BatchError(
                f"class count mismatch in batch: {g.num_classes} != {num_classes}"
            )
        for t in g.nodes.values():
            if t.member.size and t.member.max() > 0:
                raise BatchError("disjoint_union members must be single graphs")
        for t, d in g.type_dims.items():
            if merged_dims.setdefault(t, d) != d:
                raise BatchError(
                    f"feature dim mismatch for {t.name}: {d} != {merged_dims[t]}"
                )

    m = len(graphs)
    offsets = {}
    for t in merged_dims:
        counts = np.array([g.node_count(t) for g in graphs], dtype=np.int64)
        offsets[t] = np.concatenate([[0], np.cumsum(counts)])

    nodes = {}
    for t, dim in merged_dims.items():
        present = [g.nodes[t] for g in graphs if t in g.nodes]
        feats = [g.nodes[t].features for g in graphs if t in g.nodes]
        if feats:
            features = np.concatenate(feats, axis=0)
            labels = np.concatenate([g.nodes[t].labels for g in graphs if t in g.nodes])
            view = np.concatenate([g.nodes[t].view for g in graphs if t in g.nodes])
            segment = np.concatenate([g.nodes[t].segment for g in graphs if t in g.nodes])
            member = np.concatenate(
                [np.full(g.node_count(t), i, dtype=np.int64)
                 for i, g in enumerate(graphs) if t in g.nodes]
            )
            nodes[t] = NodeTable(np.ascontiguousarray(features), labels, view, segment, member)
        else:
            nodes[t] = _empty_table(dim)
        del present

    arcs: dict[int, RelationArcs] = {}
    rel_ids = sorted({rid for g in graphs for rid in g.arcs})
    for rid in rel_ids:
        rel = relation_by_id(rid)
        src_parts, dst_parts = [], []
        for i, g in enumerate(graphs):
            ga = g.arcs.get(rid)
            if ga is None:
                continue
            src_parts.append(ga.src + offsets[rel.src_type][i])
            dst_parts.append(ga.dst + offsets[rel.dst_type][i])
        src = np.concatenate(src_parts)
        dst = np.concatenate(dst_parts)
        arcs[rid] = _csr(src, dst, nodes[rel.dst_type].count)

    merged = HeteroGraph(
        tuple(tid for g in graphs for tid in g.take_ids),
        num_classes,
        merged_dims,
        nodes,
        arcs,
    )
    return GraphBatch(
        merged,
        tuple(g.take_ids for g in graphs),
        tuple(dict(g.type_dims) for g in graphs),
        offsets,
    )


def split_batch(batch: GraphBatch) -> list[HeteroGraph]:
    """Recover the member graphs exactly from the merged batch graph."""
    g = batch.graph
    out = []
    for i in range(batch.num_members):
        dims = batch.member_type_dims[i]
        nodes = {}
        for t, dim in dims.items():
            lo, hi = batch.offsets[t][i], batch.offsets[t][i + 1]
            table = g.nodes[t]
            nodes[t] = NodeTable(
                np.ascontiguousarray(table.features[lo:hi]),
                table.labels[lo:hi].copy(),
                table.view[lo:hi].copy(),
                table.segment[lo:hi].copy(),
                np.zeros(hi - lo, dtype=np.int64),
            )
        arcs = {}
        for rid, ga in g.arcs.items():
            rel = relation_by_id(rid)
            if rel.src_type not in dims or rel.dst_type not in dims:
                continue
            lo_d, hi_d = batch.offsets[rel.dst_type][i], batch.offsets[rel.dst_type][i + 1]
            pick = (ga.dst >= lo_d) & (ga.dst < hi_d)
            if not pick.any():
                continue
            src = ga.src[pick] - batch.offsets[rel.src_type][i]
            dst = ga.dst[pick] - lo_d
            arcs[rid] = _csr(src, dst, nodes[rel.dst_type].count)
        out.append(HeteroGraph(batch.member_take_ids[i], g.num_classes, dict(dims), nodes, arcs))
    return out


def validate_batch(batch: GraphBatch) -> list[str]:
    """Check no arc crosses member boundaries; returns violation strings."""
    g = batch.graph
    problems = []
    for rid, ga in g.arcs.items():
        rel = relation_by_id(rid)
        src_member = np.searchsorted(batch.offsets[rel.src_type], ga.src, side="right") - 1
        dst_member = np.searchsorted(batch.offsets[rel.dst_type], ga.dst, side="right") - 1
        bad = np.nonzero(src_member != dst_member)[0]
        for k in bad:
            problems.append(f"{rel.name} arc {k} crosses member boundary")
    return problems


# ---------------------------------------------------------------------------
# subgraph filtering
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class FilteredGraph:
    """Result of filter_subgraph: the induced graph plus the old->new id map."""

    graph: HeteroGraph
    id_map: dict[NodeType, dict[int, int]]


def filter_by_predicate(
    g: HeteroGraph,
    keep_type,  # callable (NodeType) -> bool: does the type survive at all
    keep_node,  # callable (NodeType, view, segment) -> bool: does the row survive
    keep_kinds: Iterable[EdgeKind],
) -> FilteredGraph:
    """Induced subgraph of nodes passing the predicates and arcs of kept kinds.

    Surviving nodes keep their relative order, so ids are re-densified
    monotonically; arcs survive only when both endpoints survive.
    """
    keep_kinds = set(keep_kinds)
    kept_rows: dict[NodeType, np.ndarray] = {}
    id_map: dict[NodeType, dict[int, int]] = {}
    new_dims: dict[NodeType, int] = {}
    for t, dim in g.type_dims.items():
        if not keep_type(t):
            continue
        table = g.nodes[t]
        mask = np.array(
            [keep_node(t, int(table.view[i]), int(table.segment[i]))
             for i in range(table.count)],
            dtype=bool,
        ) if table.count else np.zeros(0, dtype=bool)
        rows = np.nonzero(mask)[0]
        new_dims[t] = dim
        kept_rows[t] = rows
        id_map[t] = {int(old): new for new, old in enumerate(rows)}

    nodes = {}
    for t, dim in new_dims.items():
        rows = kept_rows[t]
        table = g.nodes[t]
        nodes[t] = NodeTable(
            np.ascontiguousarray(table.features[rows]),
            table.labels[rows].copy(),
            table.view[rows].copy(),
            table.segment[rows].copy(),
            table.member[rows].copy(),
        )

    arcs = {}
    for rid, ga in sorted(g.arcs.items()):
        rel = relation_by_id(rid)
        if rel.kind not in keep_kinds:
            continue
        if rel.src_type not in new_dims or rel.dst_type not in new_dims:
            continue
        smap, dmap = id_map[rel.src_type], id_map[rel.dst_type]
        src, dst = [], []
        for s, d in zip(ga.src, ga.dst):
            ns, nd = smap.get(int(s)), dmap.get(int(d))
            if ns is not None and nd is not None:
                src.append(ns)
                dst.append(nd)
        if src:
            arcs[rid] = _csr(src, dst, nodes[rel.dst_type].count)

    return FilteredGraph(
        HeteroGraph(g.take_ids, g.num_classes, new_dims, nodes, arcs), id_map
    )


def filter_subgraph(
    g: HeteroGraph, keep_types: Iterable[NodeType], keep_kinds: Iterable[EdgeKind]
) -> FilteredGraph:
    """Induced subgraph keeping whole node types and the given edge kinds."""
    keep_types = set(keep_types)
    return filter_by_predicate(
        g,
        lambda t: t in keep_types,
        lambda t, view, segment: True,
        keep_kinds,
    )
