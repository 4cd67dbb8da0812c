"""Message-passing layers, model assembly, and checkpoint serialization.

Four layer families cover the experiment grid: edge convolution (max over
transformed arc messages), mean-aggregating SAGE, two-matrix attention
(GATv2 form), and relation-aware RGCN. Homogeneous layers run over the
union of all arcs regardless of relation; only RGCN consumes per-relation
arc lists, resolving weights through a sharing key so arcs connecting
matching node types reuse parameters.

A model is: optional per-node-type input projection to a common width, a
layer stack, and a linear classifier head applied to vision nodes. The MLP
baseline (one hidden layer, ReLU) shares the same forward machinery.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import json
import numpy as np

from . import autodiff as ad
from .autodiff import Tape, Tensor
from .errors import ConfigError, DimensionError, FormatError
from .graph import HeteroGraph, NodeType, relation_by_id
from .util import ByteReader, ByteWriter, atomic_write_bytes, open_checksummed, with_checksum

CHECKPOINT_MAGIC = b"MGWT"
CHECKPOINT_VERSION = 1

LAYER_KINDS = ("edgeconv", "sage", "gat", "rgcn", "linear")
ATTENTION_SLOPE = 0.2  # leaky-relu slope inside attention scoring


@dataclass(frozen=True)
class LayerSpec:
    kind: str
    in_dim: int
    out_dim: int
    heads: int = 1
    activation: str = "relu"
    dropout: float = 0.2

    def __post_init__(self):
        if self.kind not in LAYER_KINDS:
            raise ConfigError(f"unknown layer kind {self.kind!r}")
        if self.in_dim < 1 or self.out_dim < 1:
            raise ConfigError(f"layer dims must be positive, got {self.in_dim}x{self.out_dim}")
        if self.activation not in ("relu", "none"):
            raise ConfigError(f"activation must be relu or none, got {self.activation!r}")
        if self.heads < 1:
            raise ConfigError("heads must be >= 1")
        if self.kind == "gat" and self.out_dim % self.heads != 0:
            raise ConfigError(
                f"gat heads ({self.heads}) must divide out_dim ({self.out_dim})"
            )
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError(f"dropout {self.dropout} outside [0, 1)")


@dataclass(frozen=True)
class ModelSpec:
    """Stack description: per-type projections, layers, classifier head."""

    layers: tuple
    input_dims: dict
    num_classes: int = 289
    proj_dim: int | None = None
    relations: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "layers", tuple(self.layers))
        object.__setattr__(self, "relations", tuple(int(r) for r in self.relations))
        if self.num_classes < 1:
            raise ConfigError("num_classes must be >= 1")
        if not self.input_dims:
            raise ConfigError("model needs at least one input node type")
        first = self.proj_dim if self.proj_dim is not None else self.first_width()
        width = first
        for i, layer in enumerate(self.layers):
            if layer.in_dim != width:
                raise ConfigError(
                    f"layer {i} expects in_dim {layer.in_dim} but receives {width}"
                )
            width = layer.out_dim

    def first_width(self) -> int:
        if self.proj_dim is not None:
            return self.proj_dim
        dims = set(self.input_dims.values())
        if len(dims) != 1:
            raise ConfigError(
                "heterogeneous input dims require proj_dim (per-type projections)"
            )
        return next(iter(dims))

    def final_width(self) -> int:
        return self.layers[-1].out_dim if self.layers else self.first_width()

    def to_dict(self) -> dict:
        return {
            "layers": [
                {
                    "kind": l.kind, "in_dim": l.in_dim, "out_dim": l.out_dim,
                    "heads": l.heads, "activation": l.activation, "dropout": l.dropout,
                }
                for l in self.layers
            ],
            "input_dims": {t.name: d for t, d in sorted(self.input_dims.items())},
            "num_classes": self.num_classes,
            "proj_dim": self.proj_dim,
            "relations": list(self.relations),
        }

    @staticmethod
    def from_dict(d: dict) -> "ModelSpec":
        return ModelSpec(
            layers=tuple(LayerSpec(**l) for l in d["layers"]),
            input_dims={NodeType[k]: v for k, v in d["input_dims"].items()},
            num_classes=d["num_classes"],
            proj_dim=d.get("proj_dim"),
            relations=tuple(d.get("relations", ())),
        )


class HeteroWeightMap:
    """Group relation ids by a weight-sharing key; one parameter set per group.

    The default key is the relation's (source type, kind, destination type)
    triple, so relations connecting matching node types resolve to the same
    parameters. A coarser key_fn may merge groups further.
    """

    def __init__(self, relation_ids: Sequence[int], key_fn: Callable | None = None):
        key_fn = key_fn or (lambda rel: rel.key)
        by_key: dict = {}
        for rid in sorted(set(int(r) for r in relation_ids)):
            by_key.setdefault(key_fn(relation_by_id(rid)), []).append(rid)
        # group label = smallest member id; stable across runs
        self.groups: dict[str, tuple[int, ...]] = {
            f"r{min(rids)}": tuple(rids) for rids in by_key.values()
        }
        self._group_of: dict[int, str] = {
            rid: label for label, rids in self.groups.items() for rid in rids
        }

    def group_labels(self) -> list[str]:
        return sorted(self.groups, key=lambda s: int(s[1:]))

    def covers(self, relation_id: int) -> bool:
        return int(relation_id) in self._group_of

    def group_of(self, relation_id: int) -> str:
        label = self._group_of.get(int(relation_id))
        if label is None:
            raise ConfigError(f"relation id {relation_id} is not mapped to any weights")
        return label


# ---------------------------------------------------------------------------
# parameter initialization
# ---------------------------------------------------------------------------


def glorot(rng: np.random.Generator, rows: int, cols: int) -> np.ndarray:
    bound = np.sqrt(6.0 / (rows + cols))
    return rng.uniform(-bound, bound, size=(rows, cols))


def _layer_param_shapes(layer: LayerSpec, weight_map: HeteroWeightMap | None):
    if layer.kind == "linear":
        yield "W", (layer.in_dim, layer.out_dim)
    elif layer.kind == "edgeconv":
        yield "W", (2 * layer.in_dim, layer.out_dim)
    elif layer.kind == "sage":
        yield "W_self", (layer.in_dim, layer.out_dim)
        yield "W_neigh", (layer.in_dim, layer.out_dim)
    elif layer.kind == "gat":
        head_dim = layer.out_dim // layer.heads
        for h in range(layer.heads):
            yield f"h{h}.W_l", (layer.in_dim, head_dim)
            yield f"h{h}.W_r", (layer.in_dim, head_dim)
            yield f"h{h}.a", (head_dim, 1)
    elif layer.kind == "rgcn":
        if weight_map is None:
            raise ConfigError("rgcn layer needs the model's relation list")
        yield "W_self", (layer.in_dim, layer.out_dim)
        for label in weight_map.group_labels():
            yield f"rel.{label}.W", (layer.in_dim, layer.out_dim)
    yield "b", None  # bias row, zero-initialized


def init_weights(spec: ModelSpec, seed: int) -> dict[str, Tensor]:
    """Glorot-uniform matrices, zero biases, deterministic in the seed."""
    rng = np.random.default_rng(seed)
    weight_map = HeteroWeightMap(spec.relations) if spec.relations else HeteroWeightMap([])
    params: dict[str, Tensor] = {}

    def add(name, rows, cols):
        params[name] = Tensor(glorot(rng, rows, cols), requires_grad=True)

    def add_bias(name, cols):
        params[name] = Tensor(np.zeros((1, cols)), requires_grad=True)

    if spec.proj_dim is not None:
        for t in sorted(spec.input_dims):
            add(f"proj.{t.name}.W", spec.input_dims[t], spec.proj_dim)
            add_bias(f"proj.{t.name}.b", spec.proj_dim)
    for i, layer in enumerate(spec.layers):
        for suffix, shape in _layer_param_shapes(layer, weight_map):
            name = f"layer{i}.{suffix}"
            if shape is None:
                add_bias(name, layer.out_dim)
            else:
                add(name, *shape)
    add("head.W", spec.final_width(), spec.num_classes)
    add_bias("head.b", spec.num_classes)
    return params


def clone_params(params: dict[str, Tensor]) -> dict[str, Tensor]:
    out = {}
    for name, p in params.items():
        out[name] = Tensor(p.data.copy(), requires_grad=p.requires_grad)
    return out


# ---------------------------------------------------------------------------
# graph context: arc arrays in the global node index
# ---------------------------------------------------------------------------


@dataclass
class GraphContext:
    """Per-graph arrays the layer stack consumes, in global node indexing."""

    n: int
    union_src: np.ndarray
    union_dst: np.ndarray
    per_relation: list            # [(relation_id, src, dst), ...] ordered by id
    vision_rows: np.ndarray       # global rows carrying class logits
    vision_labels: np.ndarray
    vision_is_ego: np.ndarray
    vision_view: np.ndarray
    vision_segment: np.ndarray
    vision_member: np.ndarray
    take_ids: tuple


def build_context(g: HeteroGraph) -> GraphContext:
    offsets = g.type_offsets()
    src_parts, dst_parts, per_relation = [], [], []
    for rid in sorted(g.arcs):
        rel = relation_by_id(rid)
        arcs = g.arcs[rid]
        src = arcs.src + offsets[rel.src_type]
        dst = arcs.dst + offsets[rel.dst_type]
        per_relation.append((rid, src, dst))
        src_parts.append(src)
        dst_parts.append(dst)
    empty = np.zeros(0, dtype=np.int64)
    union_src = np.concatenate(src_parts) if src_parts else empty
    union_dst = np.concatenate(dst_parts) if dst_parts else empty

    labels, is_ego, view, segment, member = [], [], [], [], []
    rows = []
    for t in (NodeType.VISION_EGO, NodeType.VISION_EXO):
        if t not in g.nodes:
            continue
        table = g.nodes[t]
        rows.append(np.arange(table.count, dtype=np.int64) + offsets[t])
        labels.append(table.labels)
        is_ego.append(np.full(table.count, t == NodeType.VISION_EGO))
        view.append(table.view)
        segment.append(table.segment)
        member.append(table.member)

    cat = lambda parts, dt: (np.concatenate(parts) if parts else np.zeros(0, dtype=dt))
    return GraphContext(
        n=g.total_nodes,
        union_src=union_src,
        union_dst=union_dst,
        per_relation=per_relation,
        vision_rows=cat(rows, np.int64),
        vision_labels=cat(labels, np.int64),
        vision_is_ego=cat(is_ego, bool),
        vision_view=cat(view, np.int64),
        vision_segment=cat(segment, np.int64),
        vision_member=cat(member, np.int64),
        take_ids=g.take_ids,
    )


# ---------------------------------------------------------------------------
# layer forwards (vectorized)
# ---------------------------------------------------------------------------


def edgeconv_forward(tape, h: Tensor, src: np.ndarray, dst: np.ndarray,
                     weight: Tensor, bias: Tensor) -> Tensor:
    """max over incoming arcs of relu([h_dst | h_src - h_dst] W + b).

    Nodes without incoming arcs get an implicit self arc so they reduce over
    the message [h_i | 0].
    """
    n = h.rows
    degree = np.bincount(dst, minlength=n) if dst.size else np.zeros(n, dtype=np.int64)
    isolated = np.nonzero(degree == 0)[0]
    if isolated.size:
        src = np.concatenate([src, isolated])
        dst = np.concatenate([dst, isolated])
    h_dst = ad.gather_rows(tape, h, dst)
    h_src = ad.gather_rows(tape, h, src)
    cat = ad.concat_cols(tape, h_dst, ad.sub(tape, h_src, h_dst))
    msg = ad.relu(tape, ad.add(tape, ad.matmul(tape, cat, weight), bias))
    return ad.segment_reduce(tape, msg, dst, n, "max")


def sage_forward(tape, h: Tensor, src: np.ndarray, dst: np.ndarray,
                 w_self: Tensor, w_neigh: Tensor, bias: Tensor) -> Tensor:
    """h W_self + mean of incoming neighbors W_neigh + b (zero mean if none)."""
    mean = ad.segment_reduce(tape, ad.gather_rows(tape, h, src), dst, h.rows, "mean")
    out = ad.add(tape, ad.matmul(tape, h, w_self), ad.matmul(tape, mean, w_neigh))
    return ad.add(tape, out, bias)


def gatv2_forward(tape, h: Tensor, src: np.ndarray, dst: np.ndarray,
                  heads: Sequence[tuple[Tensor, Tensor, Tensor]], bias: Tensor) -> Tensor:
    """Per head: softmax(a . leaky_relu(h_dst W_l + h_src W_r)) weighted sum of
    h_src W_r over incoming arcs; heads concatenated, bias added."""
    n = h.rows
    degree = np.bincount(dst, minlength=n) if dst.size else np.zeros(n, dtype=np.int64)
    if (degree == 0).any():
        missing = int(np.nonzero(degree == 0)[0][0])
        raise ConfigError(
            f"gat layer: node {missing} has no incoming arcs; build graphs with "
            "self-loops enabled when using attention"
        )
    blocks = []
    for w_l, w_r, a in heads:
        h_l = ad.matmul(tape, h, w_l)
        h_r = ad.matmul(tape, h, w_r)
        z = ad.add(tape, ad.gather_rows(tape, h_l, dst), ad.gather_rows(tape, h_r, src))
        scores = ad.matmul(tape, ad.leaky_relu(tape, z, ATTENTION_SLOPE), a)
        alpha = ad.segment_softmax(tape, scores, dst, n)
        msg = ad.scale_rows(tape, ad.gather_rows(tape, h_r, src), alpha)
        blocks.append(ad.segment_reduce(tape, msg, dst, n, "sum"))
    out = blocks[0]
    for block in blocks[1:]:
        out = ad.concat_cols(tape, out, block)
    return ad.add(tape, out, bias)


def rgcn_forward(tape, h: Tensor, per_relation: Sequence, w_self: Tensor,
                 rel_weights: dict[str, Tensor], weight_map: HeteroWeightMap,
                 bias: Tensor, normalization: str = "relation") -> Tensor:
    """h W_0 + sum over relation groups of normalized neighbor sums W_group + b.

    normalization "relation" divides each relation's neighbor sum by that
    relation's in-degree (the default); "total" divides by the node's total
    in-degree across all relations, which makes a single shared weight
    coincide with the SAGE neighbor term.
    """
    if normalization not in ("relation", "total"):
        raise ConfigError(f"unknown rgcn normalization {normalization!r}")
    n = h.rows
    out = ad.add(tape, ad.matmul(tape, h, w_self), bias)
    if normalization == "total":
        total = np.zeros(n)
        for _rid, _src, dst in per_relation:
            total += np.bincount(dst, minlength=n)
        inv_total = Tensor((1.0 / np.maximum(total, 1.0)).reshape(-1, 1))
    for rid, src, dst in per_relation:
        label = weight_map.group_of(rid)
        w = rel_weights[label]
        gathered = ad.gather_rows(tape, h, src)
        if normalization == "relation":
            term = ad.segment_reduce(tape, gathered, dst, n, "mean")
        else:
            term = ad.scale_rows(tape, ad.segment_reduce(tape, gathered, dst, n, "sum"),
                                 inv_total)
        out = ad.add(tape, out, ad.matmul(tape, term, w))
    return out


# ---------------------------------------------------------------------------
# whole-model forward
# ---------------------------------------------------------------------------


@dataclass
class ModelOutput:
    """Logits over vision nodes plus the bookkeeping needed for loss/metrics."""

    logits: Tensor
    labels: np.ndarray
    is_ego: np.ndarray
    view: np.ndarray
    segment: np.ndarray
    member: np.ndarray
    take_ids: tuple


def _apply_layer(tape, spec: ModelSpec, layer: LayerSpec, index: int,
                 params: dict[str, Tensor], h: Tensor, ctx: GraphContext,
                 weight_map: HeteroWeightMap) -> Tensor:
    p = lambda suffix: params[f"layer{index}.{suffix}"]
    if layer.kind == "linear":
        return ad.add(tape, ad.matmul(tape, h, p("W")), p("b"))
    if layer.kind == "edgeconv":
        return edgeconv_forward(tape, h, ctx.union_src, ctx.union_dst, p("W"), p("b"))
    if layer.kind == "sage":
        return sage_forward(tape, h, ctx.union_src, ctx.union_dst,
                            p("W_self"), p("W_neigh"), p("b"))
    if layer.kind == "gat":
        heads = [(p(f"h{k}.W_l"), p(f"h{k}.W_r"), p(f"h{k}.a")) for k in range(layer.heads)]
        return gatv2_forward(tape, h, ctx.union_src, ctx.union_dst, heads, p("b"))
    if layer.kind == "rgcn":
        for rid, _s, _d in ctx.per_relation:
            if not weight_map.covers(rid):
                raise ConfigError(
                    f"graph contains relation {relation_by_id(rid).name} "
                    f"(id {rid}) with no mapped weights"
                )
        rel_weights = {label: p(f"rel.{label}.W") for label in weight_map.group_labels()}
        return rgcn_forward(tape, h, ctx.per_relation, p("W_self"), rel_weights,
                            weight_map, p("b"))
    raise ConfigError(f"unknown layer kind {layer.kind!r}")


def model_forward(
    spec: ModelSpec,
    params: dict[str, Tensor],
    g: HeteroGraph,
    tape: Tape | None = None,
    training: bool = False,
    rng: np.random.Generator | None = None,
) -> ModelOutput:
    """Run the full stack on a finalized graph; logits cover vision nodes only."""
    ctx = build_context(g)
    weight_map = HeteroWeightMap(spec.relations)

    blocks = []
    width = spec.first_width()
    for t in NodeType:
        if t not in g.nodes or g.node_count(t) == 0:
            continue
        if t not in spec.input_dims:
            raise ConfigError(f"graph carries {t.name} nodes but the model has no "
                              f"input projection or width for that type")
        x = Tensor(g.nodes[t].features)
        if spec.proj_dim is not None:
            x = ad.add(tape, ad.matmul(tape, x, params[f"proj.{t.name}.W"]),
                       params[f"proj.{t.name}.b"])
        elif x.cols != width:
            raise DimensionError(
                f"{t.name} features are {x.cols}-dim but the stack expects {width}"
            )
        blocks.append(x)
    if not blocks:
        raise ConfigError("graph has no nodes to classify")
    h = ad.concat_rows(tape, blocks) if len(blocks) > 1 else blocks[0]

    if training and rng is None:
        raise ConfigError("training-mode forward needs an rng for dropout")
    for i, layer in enumerate(spec.layers):
        h = _apply_layer(tape, spec, layer, i, params, h, ctx, weight_map)
        if layer.activation == "relu":
            h = ad.relu(tape, h)
        if training and layer.dropout > 0.0:
            h = ad.dropout(tape, h, layer.dropout, rng)

    logits = ad.add(
        tape,
        ad.matmul(tape, ad.gather_rows(tape, h, ctx.vision_rows), params["head.W"]),
        params["head.b"],
    )
    return ModelOutput(
        logits=logits,
        labels=ctx.vision_labels,
        is_ego=ctx.vision_is_ego,
        view=ctx.vision_view,
        segment=ctx.vision_segment,
        member=ctx.vision_member,
        take_ids=ctx.take_ids,
    )


def classification_loss(tape, out: ModelOutput) -> Tensor:
    """Mean cross entropy over every labeled vision node (ego and exo)."""
    mask = out.labels >= 0
    return ad.softmax_cross_entropy(tape, out.logits, np.maximum(out.labels, 0), mask)


# ---------------------------------------------------------------------------
# MLP baseline
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class MlpBaselineSpec:
    input_dim: int = 1536
    hidden_dim: int = 1056
    num_classes: int = 289


def init_mlp_weights(spec: MlpBaselineSpec, seed: int) -> dict[str, Tensor]:
    rng = np.random.default_rng(seed)
    return {
        "hidden.W": Tensor(glorot(rng, spec.input_dim, spec.hidden_dim), requires_grad=True),
        "hidden.b": Tensor(np.zeros((1, spec.hidden_dim)), requires_grad=True),
        "out.W": Tensor(glorot(rng, spec.hidden_dim, spec.num_classes), requires_grad=True),
        "out.b": Tensor(np.zeros((1, spec.num_classes)), requires_grad=True),
    }


def mlp_baseline_forward(tape, spec: MlpBaselineSpec, params: dict[str, Tensor],
                         features: Tensor) -> Tensor:
    """input -> hidden (ReLU) -> logits; consumes no graph structure."""
    if features.cols != spec.input_dim:
        raise DimensionError(
            f"mlp expects {spec.input_dim}-dim features, got {features.cols}"
        )
    hidden = ad.relu(tape, ad.add(tape, ad.matmul(tape, features, params["hidden.W"]),
                                  params["hidden.b"]))
    return ad.add(tape, ad.matmul(tape, hidden, params["out.W"]), params["out.b"])


def mlp_as_model_spec(spec: MlpBaselineSpec) -> ModelSpec:
    """The equivalent stack: one ReLU linear layer plus the classifier head."""
    return ModelSpec(
        layers=(LayerSpec("linear", spec.input_dim, spec.hidden_dim,
                          activation="relu", dropout=0.0),),
        input_dims={NodeType.VISION_EGO: spec.input_dim,
                    NodeType.VISION_EXO: spec.input_dim},
        num_classes=spec.num_classes,
        proj_dim=None,
    )


def mlp_params_as_model_params(params: dict[str, Tensor]) -> dict[str, Tensor]:
    return {
        "layer0.W": params["hidden.W"],
        "layer0.b": params["hidden.b"],
        "head.W": params["out.W"],
        "head.b": params["out.b"],
    }


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------


def checkpoint_bytes(kind: str, spec, params: dict[str, Tensor]) -> bytes:
    if kind not in ("graph", "mlp"):
        raise ConfigError(f"checkpoint kind must be graph or mlp, got {kind!r}")
    if kind == "graph":
        spec_doc = spec.to_dict()
    else:
        spec_doc = {"input_dim": spec.input_dim, "hidden_dim": spec.hidden_dim,
                    "num_classes": spec.num_classes}
    w = ByteWriter()
    w.string(kind)
    w.string(json.dumps(spec_doc, sort_keys=True, separators=(",", ":")))
    w.u32(len(params))
    for name, p in params.items():
        w.string(name)
        w.u32(p.rows)
        w.u32(p.cols)
        w.array(p.data, "f8")
    return with_checksum(CHECKPOINT_MAGIC, CHECKPOINT_VERSION, w.getvalue())


def checkpoint_from_bytes(data: bytes):
    r = ByteReader(open_checksummed(data, CHECKPOINT_MAGIC, CHECKPOINT_VERSION))
    kind = r.string()
    spec_doc = json.loads(r.string())
    params: dict[str, Tensor] = {}
    for _ in range(r.u32()):
        name = r.string()
        rows, cols = r.u32(), r.u32()
        params[name] = Tensor(r.array(rows * cols, "f8").reshape(rows, cols),
                              requires_grad=True)
    r.expect_end()
    if kind == "graph":
        spec = ModelSpec.from_dict(spec_doc)
    elif kind == "mlp":
        spec = MlpBaselineSpec(**spec_doc)
    else:
        raise FormatError(f"unknown checkpoint kind {kind!r}")
    return kind, spec, params


def save_checkpoint(path, kind: str, spec, params: dict[str, Tensor]):
    atomic_write_bytes(path, checkpoint_bytes(kind, spec, params))


def load_checkpoint(path):
    with open(path, "rb") as fh:
        return checkpoint_from_bytes(fh.read())
