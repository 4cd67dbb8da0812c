"""Construct graphs from per-take segment features under a declarative config.

A take is one recorded session: an ordered list of keystep segments plus
per-view windowed vision features, optional per-view depth features, and
optional per-segment text/object features. Builders turn a take into:

  - an ego-only temporal graph (one vision node per segment),
  - a multi-view graph (nodes for every exo view, cross-view arcs), or
  - heterogeneous variants with depth and text nodes attached,

and `extract_inference_graph` prunes any of these back to the ego-side
graph used at test time. Construction is deterministic: node order is
(ego segments, then exo views in order, then modalities), so the pruned
multi-view graph serializes byte-identically to the directly built
ego-side graph.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Iterable, Sequence

import numpy as np

from .errors import ConfigError, EmptyTakeError, IngestionError
from .graph import (
    EdgeKind,
    GraphBuilder,
    HeteroGraph,
    NodeType,
    builder_from_graph,
    filter_by_predicate,
    relation_for,
)

DIRECTIONS = ("fwd", "bwd", "und")
EGO_VIEW = 0

# conventional dimensions for real pre-extracted features; synthetic data
# and tests may use anything (the files carry their own dims)
VISION_DIM_DEFAULT = 1536
DEPTH_DIM_DEFAULT = 3136
TEXT_DIM_DEFAULT = 512


@dataclass
class Segment:
    start_s: float
    end_s: float
    keystep: int


@dataclass
class ViewTrack:
    """One camera's windowed vision features and optional per-segment depth."""

    role: str  # "ego" | "exo"
    window_centers: np.ndarray          # (w,) seconds
    window_features: np.ndarray         # (w, vision_dim)
    depth_features: np.ndarray | None = None  # (num_segments, depth_dim)


@dataclass
class TakeRecord:
    """All ingested data for one take; views[0] is always the ego camera."""

    take_id: str
    segments: list[Segment]
    views: list[ViewTrack]
    text_features: np.ndarray | None = None    # (num_segments, text_dim) narration
    object_features: np.ndarray | None = None  # (num_segments, obj_dim)

    @property
    def num_segments(self) -> int:
        return len(self.segments)

    @property
    def num_exo_views(self) -> int:
        return len(self.views) - 1

    @property
    def vision_dim(self) -> int:
        return int(self.views[0].window_features.shape[1])

    def validate(self):
        if not self.views or self.views[0].role != "ego":
            raise IngestionError(f"take {self.take_id}: views[0] must be the ego view")
        for v in self.views[1:]:
            if v.role != "exo":
                raise IngestionError(f"take {self.take_id}: non-ego views must be exo")
        prev_end = -np.inf
        for i, seg in enumerate(self.segments):
            if seg.end_s < seg.start_s:
                raise IngestionError(
                    f"take {self.take_id}: segment {i} ends before it starts"
                )
            if seg.start_s < prev_end:
                raise IngestionError(
                    f"take {self.take_id}: segment {i} overlaps its predecessor"
                )
            prev_end = seg.end_s
        for vi, v in enumerate(self.views):
            if v.window_features.shape[0] != v.window_centers.shape[0]:
                raise IngestionError(
                    f"take {self.take_id}: view {vi} windows/centers length mismatch"
                )
            if v.window_features.shape[1] != self.vision_dim:
                raise IngestionError(
                    f"take {self.take_id}: view {vi} vision dim differs from ego view"
                )


@dataclass(frozen=True)
class BuildConfig:
    """Which node types, arcs, and directions to instantiate.

    Temporal arcs on the ego view are mandatory; every other group can be
    toggled. Direction subsets use tokens fwd/bwd/und; an undirected edge is
    materialized as two directed arcs sharing the undirected kind (and hence
    its weights). For cross-view arcs, fwd means exo->ego, bwd ego->exo; for
    exo-exo arcs, fwd runs from the lower view index to the higher.
    """

    views: str = "multi-view"  # "ego-only" | "multi-view"
    temporal_ego: frozenset = frozenset(DIRECTIONS)
    temporal_exo: frozenset = frozenset(DIRECTIONS)
    ego_exo: frozenset = frozenset(DIRECTIONS)
    exo_exo: frozenset = frozenset(DIRECTIONS)
    self_loops: bool = True
    modalities: frozenset = frozenset()  # subset of {"depth", "text", "objects"}
    depth_cross_view: bool = True
    depth_to_vision: bool = True
    depth_temporal: bool = True

    def __post_init__(self):
        if self.views not in ("ego-only", "multi-view"):
            raise ConfigError(f"views must be ego-only or multi-view, got {self.views!r}")
        for name in ("temporal_ego", "temporal_exo", "ego_exo", "exo_exo"):
            dirs = getattr(self, name)
            object.__setattr__(self, name, frozenset(dirs))
            bad = set(dirs) - set(DIRECTIONS)
            if bad:
                raise ConfigError(f"{name}: unknown direction tokens {sorted(bad)}")
        object.__setattr__(self, "modalities", frozenset(self.modalities))
        bad = set(self.modalities) - {"depth", "text", "objects"}
        if bad:
            raise ConfigError(f"unknown modalities {sorted(bad)}")
        if {"text", "objects"} <= self.modalities:
            raise ConfigError("text and objects are alternative sources for the one text node")
        if not self.temporal_ego:
            raise ConfigError("temporal arcs on the ego view cannot be disabled")

    def restrict_to_ego(self) -> "BuildConfig":
        """The ego-side build this config induces (used by the inference contract)."""
        return replace(
            self,
            views="ego-only",
            temporal_exo=self.temporal_exo,
            ego_exo=frozenset(),
            exo_exo=frozenset(),
        )

    def to_dict(self) -> dict:
        return {
            "views": self.views,
            "temporal_ego": sorted(self.temporal_ego),
            "temporal_exo": sorted(self.temporal_exo),
            "ego_exo": sorted(self.ego_exo),
            "exo_exo": sorted(self.exo_exo),
            "self_loops": self.self_loops,
            "modalities": sorted(self.modalities),
            "depth_cross_view": self.depth_cross_view,
            "depth_to_vision": self.depth_to_vision,
            "depth_temporal": self.depth_temporal,
        }

    @staticmethod
    def from_dict(d: dict) -> "BuildConfig":
        kwargs = dict(d)
        for name in ("temporal_ego", "temporal_exo", "ego_exo", "exo_exo", "modalities"):
            if name in kwargs:
                kwargs[name] = frozenset(kwargs[name])
        try:
            return BuildConfig(**kwargs)
        except TypeError as exc:
            raise ConfigError(f"bad build config: {exc}") from None


# ---------------------------------------------------------------------------
# segment pooling
# ---------------------------------------------------------------------------


def pool_segment_features(
    window_centers: np.ndarray,
    window_features: np.ndarray,
    start_s: float,
    end_s: float,
) -> np.ndarray:
    """Mean of window features whose center lies in [start, end).

    When no window covers the segment, fall back to the single window whose
    center is nearest the segment midpoint (earliest wins a distance tie).
    """
    centers = np.asarray(window_centers, dtype=np.float64).reshape(-1)
    feats = np.asarray(window_features, dtype=np.float64)
    if centers.size == 0:
        raise IngestionError("cannot pool features from a view with zero windows")
    inside = (centers >= start_s) & (centers < end_s)
    if inside.any():
        return feats[inside].mean(axis=0)
    mid = 0.5 * (start_s + end_s)
    return feats[int(np.argmin(np.abs(centers - mid)))].copy()


# ---------------------------------------------------------------------------
# vision graph construction
# ---------------------------------------------------------------------------


def _declared_dims(take: TakeRecord, cfg: BuildConfig) -> dict[NodeType, int]:
    dims = {NodeType.VISION_EGO: take.vision_dim}
    if cfg.views == "multi-view" and take.num_exo_views > 0:
        dims[NodeType.VISION_EXO] = take.vision_dim
    if "depth" in cfg.modalities:
        depth = take.views[0].depth_features
        if depth is None:
            raise IngestionError(f"take {take.take_id}: depth requested but ego view has none")
        dims[NodeType.DEPTH] = int(depth.shape[1])
    if "text" in cfg.modalities or "objects" in cfg.modalities:
        source = take.text_features if "text" in cfg.modalities else take.object_features
        if source is None:
            which = "text" if "text" in cfg.modalities else "objects"
            raise IngestionError(f"take {take.take_id}: {which} features missing")
        dims[NodeType.TEXT] = int(source.shape[1])
    return dims


def _temporal_arcs(b: GraphBuilder, node_type: NodeType, ids: Sequence[int], dirs):
    fwd = relation_for(node_type, EdgeKind.TEMPORAL_FWD, node_type)
    bwd = relation_for(node_type, EdgeKind.TEMPORAL_BWD, node_type)
    und = relation_for(node_type, EdgeKind.TEMPORAL_UND, node_type)
    for a, bnode in zip(ids, ids[1:]):
        if "fwd" in dirs:
            b.add_arc(fwd, a, bnode)
        if "bwd" in dirs:
            b.add_arc(bwd, bnode, a)
        if "und" in dirs:
            b.add_arc(und, a, bnode)
            b.add_arc(und, bnode, a)


def _vision_builder(take: TakeRecord, cfg: BuildConfig, num_classes: int,
                    multi_view: bool) -> GraphBuilder:
    take.validate()
    n = take.num_segments
    if n == 0:
        raise EmptyTakeError(f"take {take.take_id} has zero segments")
    b = GraphBuilder(take.take_id, num_classes, _declared_dims(take, cfg))

    ego = take.views[0]
    ego_ids = [
        b.add_node(
            NodeType.VISION_EGO, EGO_VIEW, s,
            pool_segment_features(ego.window_centers, ego.window_features,
                                  seg.start_s, seg.end_s),
            label=seg.keystep,
        )
        for s, seg in enumerate(take.segments)
    ]

    exo_ids: list[list[int]] = []
    if multi_view:
        for v, track in enumerate(take.views[1:], start=1):
            exo_ids.append([
                b.add_node(
                    NodeType.VISION_EXO, v, s,
                    pool_segment_features(track.window_centers, track.window_features,
                                          seg.start_s, seg.end_s),
                    label=seg.keystep,
                )
                for s, seg in enumerate(take.segments)
            ])

    _temporal_arcs(b, NodeType.VISION_EGO, ego_ids, cfg.temporal_ego)
    for ids in exo_ids:
        _temporal_arcs(b, NodeType.VISION_EXO, ids, cfg.temporal_exo)

    if cfg.self_loops:
        self_ego = relation_for(NodeType.VISION_EGO, EdgeKind.SELF_LOOP, NodeType.VISION_EGO)
        for i in ego_ids:
            b.add_arc(self_ego, i, i)
        if exo_ids:
            self_exo = relation_for(NodeType.VISION_EXO, EdgeKind.SELF_LOOP, NodeType.VISION_EXO)
            for ids in exo_ids:
                for i in ids:
                    b.add_arc(self_exo, i, i)

    if exo_ids:
        exo2ego = relation_for(NodeType.VISION_EXO, EdgeKind.CROSS_VIEW_EGO_EXO,
                               NodeType.VISION_EGO)
        ego2exo = relation_for(NodeType.VISION_EGO, EdgeKind.CROSS_VIEW_EGO_EXO,
                               NodeType.VISION_EXO)
        # one kind covers cross-view arcs, so direction tokens union (no duplicates):
        # fwd or und -> exo-to-ego arc; bwd or und -> ego-to-exo arc
        to_ego = bool(cfg.ego_exo & {"fwd", "und"})
        to_exo = bool(cfg.ego_exo & {"bwd", "und"})
        for s in range(n):
            for ids in exo_ids:
                if to_ego:
                    b.add_arc(exo2ego, ids[s], ego_ids[s])
                if to_exo:
                    b.add_arc(ego2exo, ego_ids[s], ids[s])
        exoexo = relation_for(NodeType.VISION_EXO, EdgeKind.EXO_EXO, NodeType.VISION_EXO)
        up = bool(cfg.exo_exo & {"fwd", "und"})      # lower view index -> higher
        down = bool(cfg.exo_exo & {"bwd", "und"})
        for s in range(n):
            for u in range(len(exo_ids)):
                for v in range(u + 1, len(exo_ids)):
                    if up:
                        b.add_arc(exoexo, exo_ids[u][s], exo_ids[v][s])
                    if down:
                        b.add_arc(exoexo, exo_ids[v][s], exo_ids[u][s])
    return b


def build_ego_graph(take: TakeRecord, cfg: BuildConfig, num_classes: int) -> HeteroGraph:
    """Ego-only temporal vision graph: one node per segment, labels attached."""
    if cfg.views != "ego-only":
        raise ConfigError("build_ego_graph needs cfg.views == 'ego-only'")
    return _vision_builder(take, cfg, num_classes, multi_view=False).finalize()


def build_multiview_graph(take: TakeRecord, cfg: BuildConfig, num_classes: int) -> HeteroGraph:
    """Vision graph over ego plus all exo views with cross-view arcs."""
    if cfg.views != "multi-view":
        raise ConfigError("build_multiview_graph needs cfg.views == 'multi-view'")
    return _vision_builder(take, cfg, num_classes, multi_view=True).finalize()


# ---------------------------------------------------------------------------
# modality attachment
# ---------------------------------------------------------------------------


def _vision_views_present(g: HeteroGraph) -> list[int]:
    views = set(g.nodes[NodeType.VISION_EGO].view.tolist())
    if NodeType.VISION_EXO in g.nodes:
        views |= set(g.nodes[NodeType.VISION_EXO].view.tolist())
    return sorted(views)


def attach_depth_nodes(g: HeteroGraph, take: TakeRecord, cfg: BuildConfig) -> HeteroGraph:
    """Add one depth node per (view, segment) in g plus the configured arcs."""
    views = _vision_views_present(g)
    n = take.num_segments
    for v in views:
        depth = take.views[v].depth_features
        if depth is None or depth.shape[0] != n:
            missing = 0 if depth is None else int(depth.shape[0])
            raise IngestionError(
                f"take {take.take_id}: view {v} depth features cover {missing} of {n} segments"
            )

    b = builder_from_graph(g)
    b.declare_type(NodeType.DEPTH, int(take.views[views[0]].depth_features.shape[1]))

    depth_ids: dict[tuple[int, int], int] = {}
    for v in views:
        feats = take.views[v].depth_features
        for s in range(n):
            depth_ids[(v, s)] = b.add_node(NodeType.DEPTH, v, s, feats[s])

    d2d_cross = relation_for(NodeType.DEPTH, EdgeKind.DEPTH_CROSS_VIEW, NodeType.DEPTH)
    d2v_ego = relation_for(NodeType.DEPTH, EdgeKind.MODALITY_TO_VISION, NodeType.VISION_EGO)
    d2v_exo = relation_for(NodeType.DEPTH, EdgeKind.MODALITY_TO_VISION, NodeType.VISION_EXO)
    d2d_temp = relation_for(NodeType.DEPTH, EdgeKind.DEPTH_TEMPORAL, NodeType.DEPTH)

    ego_rows = {int(g.nodes[NodeType.VISION_EGO].segment[i]): i
                for i in range(g.node_count(NodeType.VISION_EGO))}
    exo_rows = {}
    if NodeType.VISION_EXO in g.nodes:
        table = g.nodes[NodeType.VISION_EXO]
        exo_rows = {(int(table.view[i]), int(table.segment[i])): i
                    for i in range(table.count)}

    if cfg.depth_cross_view:
        for v in views:
            if v == EGO_VIEW:
                continue
            for s in range(n):
                b.add_arc(d2d_cross, depth_ids[(v, s)], depth_ids[(EGO_VIEW, s)])
    if cfg.depth_to_vision:
        for v in views:
            for s in range(n):
                if v == EGO_VIEW:
                    b.add_arc(d2v_ego, depth_ids[(v, s)], ego_rows[s])
                else:
                    b.add_arc(d2v_exo, depth_ids[(v, s)], exo_rows[(v, s)])
    if cfg.depth_temporal:
        for v in views:
            for s in range(n - 1):
                b.add_arc(d2d_temp, depth_ids[(v, s)], depth_ids[(v, s + 1)])
    return b.finalize()


def attach_text_nodes(g: HeteroGraph, take: TakeRecord, source: str = "narration") -> HeteroGraph:
    """Add one text node per segment, wired into the same-segment ego vision node."""
    if source not in ("narration", "objects"):
        raise ConfigError(f"text source must be narration or objects, got {source!r}")
    feats = take.text_features if source == "narration" else take.object_features
    if feats is None:
        raise IngestionError(f"take {take.take_id}: no {source} features to attach")
    n = take.num_segments
    if feats.shape[0] != n:
        raise IngestionError(
            f"take {take.take_id}: {source} features cover {feats.shape[0]} of {n} segments"
        )
    b = builder_from_graph(g)
    b.declare_type(NodeType.TEXT, int(feats.shape[1]))
    t2v = relation_for(NodeType.TEXT, EdgeKind.MODALITY_TO_VISION, NodeType.VISION_EGO)
    ego_rows = {int(g.nodes[NodeType.VISION_EGO].segment[i]): i
                for i in range(g.node_count(NodeType.VISION_EGO))}
    for s in range(n):
        tid = b.add_node(NodeType.TEXT, EGO_VIEW, s, feats[s])
        b.add_arc(t2v, tid, ego_rows[s])
    return b.finalize()


def build_graph(take: TakeRecord, cfg: BuildConfig, num_classes: int) -> HeteroGraph:
    """Full build: vision graph plus whatever modalities the config asks for."""
    if cfg.views == "ego-only":
        g = build_ego_graph(take, cfg, num_classes)
    else:
        g = build_multiview_graph(take, cfg, num_classes)
    if "depth" in cfg.modalities:
        g = attach_depth_nodes(g, take, cfg)
    if "text" in cfg.modalities:
        g = attach_text_nodes(g, take, "narration")
    elif "objects" in cfg.modalities:
        g = attach_text_nodes(g, take, "objects")
    return g


# ---------------------------------------------------------------------------
# inference graph
# ---------------------------------------------------------------------------

_INFERENCE_KINDS = frozenset({
    EdgeKind.TEMPORAL_FWD,
    EdgeKind.TEMPORAL_BWD,
    EdgeKind.TEMPORAL_UND,
    EdgeKind.SELF_LOOP,
})
_EGO_MODALITY_KINDS = frozenset({EdgeKind.MODALITY_TO_VISION, EdgeKind.DEPTH_TEMPORAL})


def extract_inference_graph(g: HeteroGraph, vision_only: bool = False) -> HeteroGraph:
    """Prune to the test-time graph: ego nodes and temporal arcs.

    By default, modality nodes that are available at inference (text and
    ego-view depth, both computed from the ego stream) survive along with
    their arcs into the ego vision chain; pass vision_only=True for the
    strictly ego-vision graph.
    """
    if vision_only:
        types = {NodeType.VISION_EGO}
        kinds = _INFERENCE_KINDS
    else:
        types = {NodeType.VISION_EGO, NodeType.DEPTH, NodeType.TEXT}
        kinds = _INFERENCE_KINDS | _EGO_MODALITY_KINDS

    def keep_node(t, view, segment):
        return view == EGO_VIEW

    return filter_by_predicate(g, lambda t: t in types, keep_node, kinds).graph
