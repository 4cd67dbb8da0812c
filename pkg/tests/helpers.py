"""Shared test fixtures: tiny synthetic takes and an independent arc enumerator.

`expected_arcs` re-derives every arc a build should contain straight from
the construction rules, with naive loops that share no code with the
builder. Tests compare builder output against this enumeration exactly.
"""

import numpy as np

from maglev.builder import BuildConfig, Segment, TakeRecord, ViewTrack
from maglev.graph import EdgeKind, HeteroGraph, NodeType


def make_take(
    n_segments: int,
    n_exo: int,
    vision_dim: int = 3,
    depth_dim: int = 4,
    text_dim: int = 2,
    num_classes: int = 5,
    seed: int = 0,
    with_depth: bool = True,
    with_text: bool = True,
    windows_per_segment: int = 2,
    take_id: str | None = None,
) -> TakeRecord:
    rng = np.random.default_rng(seed)
    segments = []
    t = 0.0
    for s in range(n_segments):
        dur = float(rng.uniform(2.0, 6.0))
        segments.append(Segment(t, t + dur, int(rng.integers(0, num_classes))))
        t += dur

    def view(role):
        centers, feats = [], []
        for seg in segments:
            for _ in range(windows_per_segment):
                centers.append(rng.uniform(seg.start_s, seg.end_s - 1e-9))
                feats.append(rng.normal(size=vision_dim))
        order = np.argsort(centers, kind="stable")
        return ViewTrack(
            role,
            np.asarray(centers)[order],
            np.asarray(feats)[order],
            depth_features=rng.normal(size=(n_segments, depth_dim)) if with_depth else None,
        )

    views = [view("ego")] + [view("exo") for _ in range(n_exo)]
    return TakeRecord(
        take_id=take_id or f"take-{seed}",
        segments=segments,
        views=views,
        text_features=rng.normal(size=(n_segments, text_dim)) if with_text else None,
        object_features=rng.normal(size=(n_segments, text_dim)) if with_text else None,
    )


def expected_arcs(n: int, k: int, cfg: BuildConfig) -> dict:
    """Enumerate every expected arc as (kind, src_view, src_seg, dst_view, dst_seg).

    Views are 0 (ego) and 1..k (exo); depth arcs carry the same view/segment
    coordinates as the depth nodes involved. Independent of the builder.
    """
    multi = cfg.views == "multi-view"
    views = list(range(k + 1)) if multi else [0]
    arcs = []

    def temporal(view, dirs):
        for s in range(n - 1):
            if "fwd" in dirs:
                arcs.append((EdgeKind.TEMPORAL_FWD, view, s, view, s + 1))
            if "bwd" in dirs:
                arcs.append((EdgeKind.TEMPORAL_BWD, view, s + 1, view, s))
            if "und" in dirs:
                arcs.append((EdgeKind.TEMPORAL_UND, view, s, view, s + 1))
                arcs.append((EdgeKind.TEMPORAL_UND, view, s + 1, view, s))

    temporal(0, cfg.temporal_ego)
    for v in views[1:]:
        temporal(v, cfg.temporal_exo)

    if cfg.self_loops:
        for v in views:
            for s in range(n):
                arcs.append((EdgeKind.SELF_LOOP, v, s, v, s))

    for v in views[1:]:
        for s in range(n):
            if "fwd" in cfg.ego_exo or "und" in cfg.ego_exo:
                arcs.append((EdgeKind.CROSS_VIEW_EGO_EXO, v, s, 0, s))
            if "bwd" in cfg.ego_exo or "und" in cfg.ego_exo:
                arcs.append((EdgeKind.CROSS_VIEW_EGO_EXO, 0, s, v, s))

    for u in views[1:]:
        for v in views[1:]:
            if u >= v:
                continue
            for s in range(n):
                if "fwd" in cfg.exo_exo or "und" in cfg.exo_exo:
                    arcs.append((EdgeKind.EXO_EXO, u, s, v, s))
                if "bwd" in cfg.exo_exo or "und" in cfg.exo_exo:
                    arcs.append((EdgeKind.EXO_EXO, v, s, u, s))

    if "depth" in cfg.modalities:
        if cfg.depth_cross_view:
            for v in views[1:]:
                for s in range(n):
                    arcs.append((EdgeKind.DEPTH_CROSS_VIEW, v, s, 0, s))
        if cfg.depth_to_vision:
            for v in views:
                for s in range(n):
                    arcs.append((EdgeKind.MODALITY_TO_VISION, v, s, v, s))
        if cfg.depth_temporal:
            for v in views:
                for s in range(n - 1):
                    arcs.append((EdgeKind.DEPTH_TEMPORAL, v, s, v, s + 1))

    if "text" in cfg.modalities or "objects" in cfg.modalities:
        for s in range(n):
            arcs.append((EdgeKind.MODALITY_TO_VISION, -1, s, 0, s))  # -1 marks text source

    counts = {
        "vision_nodes": n * (len(views) if multi else 1),
        "depth_nodes": n * len(views) if "depth" in cfg.modalities else 0,
        "text_nodes": n if ("text" in cfg.modalities or "objects" in cfg.modalities) else 0,
        "arcs": arcs,
    }
    return counts


def observed_arcs(g: HeteroGraph) -> list:
    """Read back arcs from a built graph in the enumerator's coordinates."""
    from maglev.graph import relation_by_id

    out = []
    for rid, arcs in g.arcs.items():
        rel = relation_by_id(rid)
        src_t, dst_t = g.nodes[rel.src_type], g.nodes[rel.dst_type]
        for s, d in zip(arcs.src, arcs.dst):
            if rel.src_type == NodeType.TEXT:
                src_view = -1
            else:
                src_view = int(src_t.view[s])
            out.append((rel.kind, src_view, int(src_t.segment[s]),
                        int(dst_t.view[d]), int(dst_t.segment[d])))
    return out
