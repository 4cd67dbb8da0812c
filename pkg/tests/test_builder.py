"""Builder contracts: pooling, arc counting vs the enumerator, inference pruning."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from helpers import expected_arcs, make_take, observed_arcs
from maglev.builder import (
    BuildConfig,
    Segment,
    TakeRecord,
    ViewTrack,
    attach_depth_nodes,
    attach_text_nodes,
    build_ego_graph,
    build_graph,
    build_multiview_graph,
    extract_inference_graph,
    pool_segment_features,
)
from maglev.errors import ConfigError, EmptyTakeError, IngestionError
from maglev.graph import EdgeKind, NodeType, graphs_equal

ALL = frozenset({"fwd", "bwd", "und"})


def ego_cfg(**kw):
    kw.setdefault("views", "ego-only")
    return BuildConfig(**kw)


def mv_cfg(**kw):
    kw.setdefault("views", "multi-view")
    return BuildConfig(**kw)


# ---------------------------------------------------------------------------
# pooling
# ---------------------------------------------------------------------------


def test_pool_mean_of_covering_windows():
    centers = np.array([0.5, 1.5, 2.5])
    feats = np.array([[1.0, 1.0], [3.0, 3.0], [5.0, 5.0]])
    out = pool_segment_features(centers, feats, 0.0, 2.0)
    np.testing.assert_array_equal(out, [2.0, 2.0])


def test_pool_single_covering_window():
    out = pool_segment_features(np.array([1.0]), np.array([[7.0]]), 0.0, 2.0)
    np.testing.assert_array_equal(out, [7.0])


def test_pool_nearest_fallback():
    centers = np.array([5.0, 9.9])
    feats = np.array([[1.0], [2.0]])
    out = pool_segment_features(centers, feats, 10.0, 10.2)
    np.testing.assert_array_equal(out, [2.0])


def test_pool_empty_windows_rejected():
    with pytest.raises(IngestionError):
        pool_segment_features(np.zeros(0), np.zeros((0, 2)), 0.0, 1.0)


# ---------------------------------------------------------------------------
# build config
# ---------------------------------------------------------------------------


def test_config_requires_ego_temporal():
    with pytest.raises(ConfigError):
        BuildConfig(temporal_ego=frozenset())


def test_config_rejects_unknown_direction():
    with pytest.raises(ConfigError):
        BuildConfig(temporal_ego=frozenset({"sideways"}))


def test_config_rejects_text_plus_objects():
    with pytest.raises(ConfigError):
        BuildConfig(modalities=frozenset({"text", "objects"}))


def test_config_json_roundtrip():
    cfg = mv_cfg(ego_exo=frozenset({"und"}), modalities=frozenset({"depth"}))
    assert BuildConfig.from_dict(cfg.to_dict()) == cfg


# ---------------------------------------------------------------------------
# ego graph
# ---------------------------------------------------------------------------


def test_ego_graph_full_directions_count():
    take = make_take(3, 0, with_depth=False, with_text=False)
    g = build_ego_graph(take, ego_cfg(temporal_ego=ALL, self_loops=True), 5)
    assert g.node_count(NodeType.VISION_EGO) == 3
    assert g.total_arcs == 11  # 2 fwd + 2 bwd + 4 und + 3 self


def test_ego_graph_single_segment():
    take = make_take(1, 0, with_depth=False, with_text=False)
    g = build_ego_graph(take, ego_cfg(), 5)
    assert g.node_count(NodeType.VISION_EGO) == 1
    assert g.total_arcs == 1  # self-loop only


def test_ego_graph_fwd_only_no_self():
    take = make_take(3, 0, with_depth=False, with_text=False)
    g = build_ego_graph(take, ego_cfg(temporal_ego=frozenset({"fwd"}), self_loops=False), 5)
    assert g.total_arcs == 2


def test_ego_graph_zero_segments_rejected():
    take = make_take(1, 0, with_depth=False, with_text=False)
    take.segments = []
    with pytest.raises(EmptyTakeError):
        build_ego_graph(take, ego_cfg(), 5)


def test_ego_graph_labels_attached():
    take = make_take(4, 0, with_depth=False, with_text=False)
    g = build_ego_graph(take, ego_cfg(), 5)
    np.testing.assert_array_equal(
        g.nodes[NodeType.VISION_EGO].labels, [s.keystep for s in take.segments]
    )


# ---------------------------------------------------------------------------
# multiview graph
# ---------------------------------------------------------------------------


def test_multiview_spec_example_counts():
    take = make_take(3, 2, with_depth=False, with_text=False)
    cfg = mv_cfg(
        temporal_ego=ALL, temporal_exo=ALL,
        ego_exo=frozenset({"und"}), exo_exo=frozenset({"und"}), self_loops=True,
    )
    g = build_multiview_graph(take, cfg, 5)
    assert g.node_count(NodeType.VISION_EGO) + g.node_count(NodeType.VISION_EXO) == 9
    assert g.total_arcs == 51  # 24 temporal + 9 self + 12 ego-exo + 6 exo-exo


def test_multiview_k0_equals_ego_build():
    take = make_take(4, 0, with_depth=False, with_text=False)
    g_mv = build_multiview_graph(take, mv_cfg(), 5)
    g_ego = build_ego_graph(take, ego_cfg(), 5)
    assert graphs_equal(g_mv, g_ego)


def test_crossview_fwd_is_exo_to_ego_only():
    take = make_take(1, 3, with_depth=False, with_text=False)
    cfg = mv_cfg(ego_exo=frozenset({"fwd"}), exo_exo=frozenset(), self_loops=False)
    g = build_multiview_graph(take, cfg, 5)
    rel = [r for r in g.arcs if g.arc_count(r)]
    from maglev.graph import relation_by_id
    kinds = {relation_by_id(r).kind for r in rel}
    assert kinds == {EdgeKind.CROSS_VIEW_EGO_EXO}
    assert g.total_arcs == 3
    # all cross arcs land on the ego table
    for r in rel:
        assert relation_by_id(r).dst_type == NodeType.VISION_EGO


def test_exo_nodes_carry_segment_labels():
    take = make_take(3, 2, with_depth=False, with_text=False)
    g = build_multiview_graph(take, mv_cfg(), 5)
    want = [s.keystep for s in take.segments] * 2
    np.testing.assert_array_equal(g.nodes[NodeType.VISION_EXO].labels, want)


# ---------------------------------------------------------------------------
# depth / text attachment
# ---------------------------------------------------------------------------


def test_depth_on_ego_graph():
    take = make_take(2, 0, with_text=False)
    cfg = ego_cfg(modalities=frozenset({"depth"}), depth_cross_view=False,
                  depth_temporal=False, depth_to_vision=True)
    g = build_graph(take, cfg, 5)
    assert g.node_count(NodeType.DEPTH) == 2
    rid = [r for r in g.arcs if g.arc_count(r)
           and r in (11,)]  # depth -> ego vision relation id
    assert g.arc_count(11) == 2


def test_depth_cross_view_arcs():
    take = make_take(1, 2, with_text=False)
    cfg = mv_cfg(modalities=frozenset({"depth"}), depth_cross_view=True,
                 depth_to_vision=False, depth_temporal=False,
                 ego_exo=frozenset(), exo_exo=frozenset(), self_loops=False)
    g = build_graph(take, cfg, 5)
    assert g.node_count(NodeType.DEPTH) == 3
    assert g.arc_count(13) == 2  # each exo depth -> ego depth


def test_depth_temporal_arcs_directed_fwd():
    take = make_take(3, 0, with_text=False)
    cfg = ego_cfg(modalities=frozenset({"depth"}), depth_cross_view=False,
                  depth_to_vision=False, depth_temporal=True)
    g = build_graph(take, cfg, 5)
    arcs = g.arcs[14]
    assert arcs.count == 2
    segs = g.nodes[NodeType.DEPTH].segment
    for s, d in zip(arcs.src, arcs.dst):
        assert segs[d] == segs[s] + 1


def test_depth_missing_feature_names_view():
    take = make_take(2, 1, with_text=False)
    take.views[1].depth_features = None
    cfg = mv_cfg(modalities=frozenset({"depth"}))
    with pytest.raises(IngestionError, match="view 1"):
        build_graph(take, cfg, 5)


def test_text_nodes_one_per_segment():
    take = make_take(3, 0, with_depth=False)
    g = build_graph(take, ego_cfg(modalities=frozenset({"text"})), 5)
    assert g.node_count(NodeType.TEXT) == 3
    assert g.arc_count(15) == 3


def test_text_on_multiview_still_one_node_per_segment():
    take = make_take(3, 2, with_depth=False)
    g = build_graph(take, mv_cfg(modalities=frozenset({"text"})), 5)
    assert g.node_count(NodeType.TEXT) == 3


def test_text_missing_rejected():
    take = make_take(2, 0, with_depth=False, with_text=False)
    with pytest.raises(IngestionError):
        attach_text_nodes(build_ego_graph(take, ego_cfg(), 5), take, "narration")


def test_objects_source_uses_object_features():
    take = make_take(2, 0, with_depth=False)
    g = attach_text_nodes(build_ego_graph(take, ego_cfg(), 5), take, "objects")
    np.testing.assert_array_equal(g.nodes[NodeType.TEXT].features, take.object_features)


# ---------------------------------------------------------------------------
# counting property vs the naive enumerator
# ---------------------------------------------------------------------------


def random_cfg(rng) -> BuildConfig:
    def dirs(allow_empty=True):
        pool = ["fwd", "bwd", "und"]
        k = int(rng.integers(0 if allow_empty else 1, 4))
        return frozenset(rng.choice(pool, size=k, replace=False).tolist())

    modalities = set()
    if rng.random() < 0.5:
        modalities.add("depth")
    roll = rng.random()
    if roll < 0.33:
        modalities.add("text")
    elif roll < 0.5:
        modalities.add("objects")
    return BuildConfig(
        views="multi-view",
        temporal_ego=dirs(allow_empty=False),
        temporal_exo=dirs(),
        ego_exo=dirs(),
        exo_exo=dirs(),
        self_loops=bool(rng.random() < 0.7),
        modalities=frozenset(modalities),
        depth_cross_view=bool(rng.random() < 0.5),
        depth_to_vision=bool(rng.random() < 0.7),
        depth_temporal=bool(rng.random() < 0.5),
    )


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 2**31))
def test_counts_and_arcs_match_enumerator(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(1, 8))
    k = int(rng.integers(0, 4))
    cfg = random_cfg(rng)
    take = make_take(n, k, seed=seed)
    g = build_graph(take, cfg, 5)
    want = expected_arcs(n, k, cfg)
    assert g.node_count(NodeType.VISION_EGO) + g.node_count(NodeType.VISION_EXO) \
        == want["vision_nodes"]
    assert g.node_count(NodeType.DEPTH) == want["depth_nodes"]
    assert g.node_count(NodeType.TEXT) == want["text_nodes"]
    assert sorted(observed_arcs(g)) == sorted(want["arcs"])


# ---------------------------------------------------------------------------
# inference extraction
# ---------------------------------------------------------------------------


def test_extract_equals_direct_ego_build():
    take = make_take(4, 3)
    cfg = mv_cfg(modalities=frozenset({"depth"}))
    g = build_graph(take, cfg, 5)
    pruned = extract_inference_graph(g)
    direct = build_graph(take, cfg.restrict_to_ego(), 5)
    assert pruned.to_bytes() == direct.to_bytes()


def test_extract_on_ego_graph_is_identity():
    take = make_take(3, 0)
    cfg = ego_cfg(modalities=frozenset({"text"}))
    g = build_graph(take, cfg, 5)
    assert graphs_equal(extract_inference_graph(g), g)


def test_extract_vision_plus_text():
    take = make_take(3, 2, with_depth=False)
    g = build_graph(take, mv_cfg(modalities=frozenset({"text"})), 5)
    pruned = extract_inference_graph(g)
    assert set(pruned.type_dims) == {NodeType.VISION_EGO, NodeType.TEXT}
    assert pruned.node_count(NodeType.TEXT) == 3
    assert pruned.arc_count(15) == 3


def test_extract_vision_only_flag():
    take = make_take(3, 2)
    g = build_graph(take, mv_cfg(modalities=frozenset({"depth", "text"}) - {"text"}), 5)
    pruned = extract_inference_graph(g, vision_only=True)
    assert set(pruned.type_dims) == {NodeType.VISION_EGO}


def test_build_deterministic_across_runs():
    take1 = make_take(5, 2, seed=9)
    take2 = make_take(5, 2, seed=9)
    cfg = mv_cfg(modalities=frozenset({"depth", "text"}) - {"depth"})
    assert graphs_equal(build_graph(take1, cfg, 5), build_graph(take2, cfg, 5))
