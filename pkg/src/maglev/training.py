"""Training loop with graph-count batching, cross-validation, and task metrics.

Batches are disjoint unions of whole take graphs (batch size counts graphs,
not nodes). Every labeled vision node, egocentric or exocentric, contributes
to the cross-entropy during training; evaluation first prunes each graph to
its egocentric inference form and scores only ego vision nodes. The
checkpoint returned is the one with the lowest validation loss. Runs are
deterministic given (config, seed, data).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tape, Tensor
from .builder import extract_inference_graph
from .errors import MetricError, SplitError, TrainingError
from .graph import HeteroGraph, NodeType, disjoint_union
from .layers import (
    ModelSpec,
    classification_loss,
    clone_params,
    model_forward,
)

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    batch_size_graphs: int = 32
    lr: float = 5e-4
    max_epochs: int = 60
    seed: int = 0
    eval_ego_only: bool = True
    optimizer: str = "adam"

    def __post_init__(self):
        if self.batch_size_graphs < 1:
            raise TrainingError("batch_size_graphs must be >= 1")
        if self.max_epochs < 1:
            raise TrainingError("max_epochs must be >= 1")
        if self.optimizer not in ("adam", "sgd"):
            raise TrainingError(f"optimizer must be adam or sgd, got {self.optimizer!r}")

    def to_dict(self) -> dict:
        return dict(self.__dict__)

    @staticmethod
    def from_dict(d: dict) -> "TrainConfig":
        return TrainConfig(**d)


@dataclass(frozen=True)
class SplitPlan:
    """K folds of take ids; every take appears in exactly one fold."""

    folds: tuple

    def validate(self):
        seen = [t for fold in self.folds for t in fold]
        if len(seen) != len(set(seen)):
            raise SplitError("folds overlap")
        sizes = [len(f) for f in self.folds]
        if max(sizes) - min(sizes) > 1:
            raise SplitError(f"fold sizes differ by more than one: {sizes}")


def make_folds(take_ids, seed: int, k: int = 5) -> SplitPlan:
    """Deterministic shuffled partition into k near-equal folds."""
    take_ids = sorted(take_ids)
    if len(take_ids) < k:
        raise SplitError(f"need at least {k} takes to make {k} folds, have {len(take_ids)}")
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(take_ids))
    folds = [[] for _ in range(k)]
    for pos, idx in enumerate(order):
        folds[pos % k].append(take_ids[idx])
    plan = SplitPlan(tuple(tuple(f) for f in folds))
    plan.validate()
    return plan


@dataclass
class EpochStats:
    epoch: int
    train_loss: float
    val_loss: float


@dataclass
class TrainResult:
    params: dict
    history: list
    best_epoch: int

    def history_rows(self):
        return [(h.epoch, h.train_loss, h.val_loss) for h in self.history]


def _labeled_count(out) -> int:
    return int((out.labels >= 0).sum())


def _graph_has_labels(g: HeteroGraph) -> bool:
    return any(
        (g.nodes[t].labels >= 0).any()
        for t in (NodeType.VISION_EGO, NodeType.VISION_EXO) if t in g.nodes
    )


def _dataset_loss(spec: ModelSpec, params, graphs) -> float:
    """Mean cross entropy per labeled node over a list of graphs (eval mode)."""
    total, count = 0.0, 0
    for g in graphs:
        out = model_forward(spec, params, g)
        m = _labeled_count(out)
        if m == 0:
            continue
        total += classification_loss(None, out).item() * m
        count += m
    if count == 0:
        raise TrainingError("no labeled nodes in dataset")
    return total / count


def train(spec: ModelSpec, params: dict, train_graphs, val_graphs,
          cfg: TrainConfig) -> TrainResult:
    """Optimize params on train graphs; return the lowest-val-loss snapshot.

    History row 0 is the pre-training loss; row e >= 1 carries the mean
    training loss seen during epoch e and the validation loss after it.
    """
    if not train_graphs:
        raise TrainingError("no training graphs")
    if not any(_graph_has_labels(g) for g in train_graphs):
        raise TrainingError("no labeled nodes in training graphs")

    rng = np.random.default_rng(cfg.seed)
    opt_state = ad.make_optimizer_state(cfg.optimizer, cfg.lr)

    val_loss = _dataset_loss(spec, params, val_graphs) if val_graphs else float("nan")
    train_loss = _dataset_loss(spec, params, train_graphs)
    history = [EpochStats(0, train_loss, val_loss)]
    best = (val_loss if val_graphs else train_loss, 0, clone_params(params))

    for epoch in range(1, cfg.max_epochs + 1):
        order = rng.permutation(len(train_graphs))
        total, count = 0.0, 0
        for lo in range(0, len(order), cfg.batch_size_graphs):
            chunk = [train_graphs[i] for i in order[lo:lo + cfg.batch_size_graphs]]
            g = chunk[0] if len(chunk) == 1 else disjoint_union(chunk).graph
            tape = Tape()
            out = model_forward(spec, params, g, tape=tape, training=True, rng=rng)
            loss = classification_loss(tape, out)
            ad.zero_grads(params)
            tape.backward(loss)
            grads = {name: p.grad for name, p in params.items() if p.grad is not None}
            ad.optimizer_step(cfg.optimizer, params, grads, opt_state)
            m = _labeled_count(out)
            total += loss.item() * m
            count += m
        train_loss = total / count
        val_loss = _dataset_loss(spec, params, val_graphs) if val_graphs else float("nan")
        history.append(EpochStats(epoch, train_loss, val_loss))
        score = val_loss if val_graphs else train_loss
        if score < best[0]:
            best = (score, epoch, clone_params(params))

    log.info("training done: best epoch %d (val loss %.6f)", best[1], best[0])
    return TrainResult(params=best[2], history=history, best_epoch=best[1])


# ---------------------------------------------------------------------------
# metrics
# ---------------------------------------------------------------------------


@dataclass
class MetricsReport:
    top1: float
    f1_at_01: float
    per_class: dict           # class id -> {"precision", "recall", "support"}
    eval_nodes: int
    total_nodes: int

    def to_dict(self) -> dict:
        return {
            "top1": self.top1,
            "f1_at_0.1": self.f1_at_01,
            "eval_nodes": self.eval_nodes,
            "total_nodes": self.total_nodes,
            "per_class": {
                str(c): dict(v) for c, v in sorted(self.per_class.items())
            },
        }


def f1_at_threshold(probs: np.ndarray, labels: np.ndarray, tau: float = 0.1):
    """Macro F1 where a node predicts its argmax class only if that class's
    probability reaches tau; abstentions count as false negatives. Classes
    without support are excluded from the average; 0/0 ratios are 0.
    """
    probs = np.asarray(probs, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if probs.ndim != 2 or probs.shape[0] != labels.shape[0]:
        raise MetricError("probs must be (n, C) aligned with labels")
    if probs.size and not np.allclose(probs.sum(axis=1), 1.0, atol=1e-6):
        raise MetricError("probability rows must sum to 1")
    n, c = probs.shape
    pred = probs.argmax(axis=1)  # ties break to the lowest class id
    confident = probs[np.arange(n), pred] >= tau

    per_class = {}
    f1s = []
    for cls in range(c):
        support = int((labels == cls).sum())
        tp = int(((pred == cls) & confident & (labels == cls)).sum())
        fp = int(((pred == cls) & confident & (labels != cls)).sum())
        fn = support - tp
        precision = tp / (tp + fp) if tp + fp else 0.0
        recall = tp / (tp + fn) if tp + fn else 0.0
        f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
        if support > 0:
            per_class[cls] = {"precision": precision, "recall": recall,
                              "support": support}
            f1s.append(f1)
    macro = float(np.mean(f1s)) if f1s else 0.0
    return macro, per_class


def _eval_outputs(spec: ModelSpec, params, graphs, cfg: TrainConfig):
    """Yield (out, probs, eval_mask) per graph after inference pruning."""
    for g in graphs:
        ig = extract_inference_graph(g)
        if ig.total_nodes != g.total_nodes:
            log.info("eval: pruned %s to inference graph (%d -> %d nodes)",
                     g.take_ids, g.total_nodes, ig.total_nodes)
        out = model_forward(spec, params, ig)
        probs = ad.softmax_rows(out.logits.data)
        mask = (out.labels >= 0)
        if cfg.eval_ego_only:
            mask &= out.is_ego
        yield out, probs, mask


def evaluate(spec: ModelSpec, params, graphs, cfg: TrainConfig) -> MetricsReport:
    """Top-1 and F1@0.1 over ego vision nodes of the inference graphs."""
    all_probs, all_labels = [], []
    total_nodes = 0
    for out, probs, mask in _eval_outputs(spec, params, graphs, cfg):
        all_probs.append(probs[mask])
        all_labels.append(out.labels[mask])
        total_nodes += out.labels.size
    if not all_probs or sum(len(x) for x in all_labels) == 0:
        raise MetricError("no nodes to evaluate")
    probs = np.concatenate(all_probs, axis=0)
    labels = np.concatenate(all_labels)
    pred = probs.argmax(axis=1)
    top1 = float((pred == labels).mean())
    macro, per_class = f1_at_threshold(probs, labels, tau=0.1)
    return MetricsReport(
        top1=top1, f1_at_01=macro, per_class=per_class,
        eval_nodes=int(labels.size), total_nodes=total_nodes,
    )


def iter_predictions(spec: ModelSpec, params, graphs, cfg: TrainConfig, top_k: int = 5):
    """Per-node prediction records for external scoring (ego nodes only)."""
    for out, probs, mask in _eval_outputs(spec, params, graphs, cfg):
        take_lookup = out.take_ids
        for row in np.nonzero(mask)[0]:
            p = probs[row]
            top = np.argsort(-p, kind="stable")[:top_k]
            member = int(out.member[row])
            yield {
                "take": take_lookup[member if member < len(take_lookup) else 0],
                "segment": int(out.segment[row]),
                "pred_class": int(p.argmax()),
                "probs_top5": {str(int(c)): float(p[c]) for c in top},
            }


# ---------------------------------------------------------------------------
# cross-validation
# ---------------------------------------------------------------------------


@dataclass
class FoldResult:
    fold: int
    metrics: MetricsReport
    best_epoch: int


@dataclass
class CrossValReport:
    folds: list
    top1_mean: float
    top1_sd: float
    f1_mean: float
    f1_sd: float

    def to_dict(self) -> dict:
        return {
            "top1_mean": self.top1_mean,
            "top1_sd": self.top1_sd,
            "f1_mean": self.f1_mean,
            "f1_sd": self.f1_sd,
            "folds": [
                {"fold": f.fold, "best_epoch": f.best_epoch, **f.metrics.to_dict()}
                for f in self.folds
            ],
        }


def cross_validate(model_factory, graphs_by_take: dict, plan: SplitPlan,
                   cfg: TrainConfig) -> CrossValReport:
    """Train on k-1 folds, evaluate on the held-out fold, k times.

    model_factory(fold_index) must return a fresh (spec, params) pair;
    the held-out fold doubles as the validation set for model selection,
    mirroring per-split validation reporting.
    """
    plan.validate()
    missing = [t for fold in plan.folds for t in fold if t not in graphs_by_take]
    if missing:
        raise SplitError(f"plan references takes without graphs: {missing[:5]}")
    results = []
    for i, held_out in enumerate(plan.folds):
        train_graphs = [graphs_by_take[t] for fold in plan.folds if fold is not held_out
                        for t in fold]
        val_graphs = [graphs_by_take[t] for t in held_out]
        spec, params = model_factory(i)
        result = train(spec, params, train_graphs, val_graphs, cfg)
        metrics = evaluate(spec, result.params, val_graphs, cfg)
        results.append(FoldResult(fold=i, metrics=metrics, best_epoch=result.best_epoch))
        log.info("fold %d: top1 %.4f f1@0.1 %.4f", i, metrics.top1, metrics.f1_at_01)
    top1 = np.array([r.metrics.top1 for r in results])
    f1 = np.array([r.metrics.f1_at_01 for r in results])
    return CrossValReport(
        folds=results,
        top1_mean=float(top1.mean()), top1_sd=float(top1.std()),
        f1_mean=float(f1.mean()), f1_sd=float(f1.std()),
    )
