"""File formats, the synthetic dataset generator, and its Bayes oracles.

Annotations are JSON documents; features travel in a small binary container
(f32 on disk, promoted to f64 in memory); graphs reuse the graph module's
container with a JSON sidecar. The synthetic generator draws keystep
sequences from a Markov chain and emits class-conditional Gaussian features
per modality, with each exo view observing an orthogonally mixed copy of
the ego feature. Because the generative model is known exactly, two Bayes
ceilings are computable: per-node (ignore the chain) and temporal
(forward-backward over the chain); trained models are judged against them.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .builder import Segment, TakeRecord, ViewTrack
from .errors import FormatError, IngestionError
from .graph import HeteroGraph
from .util import (
    ByteReader,
    ByteWriter,
    atomic_write_bytes,
    atomic_write_text,
    canonical_json,
)

FEATURE_MAGIC = b"MGFT"
FEATURE_VERSION = 1
MODALITIES = ("vision", "depth", "text", "objects")


# ---------------------------------------------------------------------------
# annotations
# ---------------------------------------------------------------------------


def annotation_doc(take: TakeRecord, scenario: str = "synthetic") -> dict:
    return {
        "take_id": take.take_id,
        "scenario": scenario,
        "segments": [
            {"start_s": s.start_s, "end_s": s.end_s, "class_id": s.keystep}
            for s in take.segments
        ],
        "views": [
            {"view_id": i, "role": v.role} for i, v in enumerate(take.views)
        ],
    }


def parse_annotation(doc: dict, num_classes: int, path: str = "<memory>") -> dict:
    """Validate an annotation document; returns it unchanged on success."""
    def fail(fieldname, msg):
        raise IngestionError(f"{path}: field {fieldname!r}: {msg}")

    for key in ("take_id", "segments", "views"):
        if key not in doc:
            fail(key, "missing")
    if not isinstance(doc["take_id"], str) or not doc["take_id"]:
        fail("take_id", "must be a non-empty string")
    prev_end = -float("inf")
    for i, seg in enumerate(doc["segments"]):
        for key in ("start_s", "end_s", "class_id"):
            if key not in seg:
                fail(f"segments[{i}].{key}", "missing")
        if seg["end_s"] < seg["start_s"] or seg["start_s"] < prev_end:
            fail(f"segments[{i}]", "times must be non-decreasing and non-overlapping")
        if not 0 <= int(seg["class_id"]) < num_classes:
            fail(f"segments[{i}].class_id",
                 f"{seg['class_id']} outside [0, {num_classes})")
        prev_end = seg["end_s"]
    roles = [v.get("role") for v in doc["views"]]
    if roles[:1] != ["ego"] or any(r != "exo" for r in roles[1:]):
        fail("views", "first view must be ego, the rest exo")
    return doc


# ---------------------------------------------------------------------------
# feature files
# ---------------------------------------------------------------------------


def feature_file_bytes(take_id: str, view_id: int, modality: str,
                       features: np.ndarray, centers: np.ndarray | None = None) -> bytes:
    if modality not in MODALITIES:
        raise IngestionError(f"unknown modality {modality!r}")
    feats = np.asarray(features, dtype=np.float64)
    if feats.ndim != 2:
        raise IngestionError("feature array must be 2-D (count x dim)")
    count, dim = feats.shape
    w = ByteWriter()
    w.raw(FEATURE_MAGIC)
    w.u32(FEATURE_VERSION)
    w.string(take_id)
    w.u32(view_id)
    w.string(modality)
    w.u32(dim)
    w.u32(count)
    if centers is None:
        w.u8(0)
    else:
        centers = np.asarray(centers, dtype=np.float64)
        if centers.shape != (count,):
            raise IngestionError("window centers must have one entry per feature row")
        w.u8(1)
        w.array(centers, "f8")
    w.array(feats.astype(np.float32), "f4")
    return w.getvalue()


@dataclass
class FeatureData:
    take_id: str
    view_id: int
    modality: str
    centers: np.ndarray | None
    features: np.ndarray  # promoted to f64


def feature_file_from_bytes(data: bytes, path: str = "<memory>") -> FeatureData:
    r = ByteReader(data)
    magic = r.raw(4)
    if magic != FEATURE_MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}")
    version = r.u32()
    if version != FEATURE_VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    take_id = r.string()
    view_id = r.u32()
    modality = r.string()
    if modality not in MODALITIES:
        raise FormatError(f"{path}: unknown modality {modality!r}")
    dim = r.u32()
    count = r.u32()
    centers = r.array(count, "f8") if r.u8() else None
    feats = r.array(count * dim, "f4").astype(np.float64).reshape(count, dim)
    r.expect_end()
    return FeatureData(take_id, view_id, modality, centers, feats)


# ---------------------------------------------------------------------------
# take save / load
# ---------------------------------------------------------------------------


def save_take(directory, take: TakeRecord, scenario: str = "synthetic") -> dict:
    """Write annotation + feature files; returns {annotation, features} paths."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    ann_path = directory / f"{take.take_id}.json"
    atomic_write_text(ann_path, canonical_json(annotation_doc(take, scenario)))
    feature_paths = []

    def emit(view_id, modality, features, centers=None):
        p = directory / f"{take.take_id}.v{view_id}.{modality}.mgft"
        atomic_write_bytes(p, feature_file_bytes(take.take_id, view_id, modality,
                                                 features, centers))
        feature_paths.append(p)

    for vi, view in enumerate(take.views):
        emit(vi, "vision", view.window_features, view.window_centers)
        if view.depth_features is not None:
            emit(vi, "depth", view.depth_features)
    if take.text_features is not None:
        emit(0, "text", take.text_features)
    if take.object_features is not None:
        emit(0, "objects", take.object_features)
    return {"annotation": ann_path, "features": feature_paths}


def load_take(annotation_path, feature_paths, num_classes: int) -> TakeRecord:
    """Assemble a TakeRecord from its annotation and feature files."""
    annotation_path = Path(annotation_path)
    try:
        doc = json.loads(annotation_path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise IngestionError(f"{annotation_path}: {exc}") from None
    parse_annotation(doc, num_classes, str(annotation_path))

    by_key: dict[tuple[int, str], FeatureData] = {}
    for p in feature_paths:
        with open(p, "rb") as fh:
            fd = feature_file_from_bytes(fh.read(), str(p))
        if fd.take_id != doc["take_id"]:
            raise IngestionError(
                f"{p}: take id {fd.take_id!r} does not match annotation {doc['take_id']!r}"
            )
        by_key[(fd.view_id, fd.modality)] = fd

    segments = [Segment(s["start_s"], s["end_s"], int(s["class_id"]))
                for s in doc["segments"]]
    views = []
    for v in doc["views"]:
        vid = int(v["view_id"])
        vision = by_key.get((vid, "vision"))
        if vision is None:
            raise IngestionError(
                f"{annotation_path}: field 'views[{vid}]': no vision feature file"
            )
        if vision.centers is None:
            raise IngestionError(
                f"{annotation_path}: view {vid} vision features lack window centers"
            )
        depth = by_key.get((vid, "depth"))
        views.append(ViewTrack(
            role=v["role"],
            window_centers=vision.centers,
            window_features=vision.features,
            depth_features=depth.features if depth is not None else None,
        ))
    text = by_key.get((0, "text"))
    objects = by_key.get((0, "objects"))
    take = TakeRecord(
        take_id=doc["take_id"],
        segments=segments,
        views=views,
        text_features=text.features if text is not None else None,
        object_features=objects.features if objects is not None else None,
    )
    take.validate()
    return take


def take_feature_paths(directory, take_id: str) -> list[Path]:
    directory = Path(directory)
    return sorted(directory.glob(f"{take_id}.v*.mgft"))


def list_take_ids(directory) -> list[str]:
    return sorted(p.stem for p in Path(directory).glob("*.json")
                  if not p.name.startswith(("params", "manifest")))


# ---------------------------------------------------------------------------
# graph files
# ---------------------------------------------------------------------------


def save_graph(path, g: HeteroGraph):
    """Write the binary container plus a .meta.json sidecar next to it."""
    path = Path(path)
    atomic_write_bytes(path, g.to_bytes())
    atomic_write_text(path.with_suffix(path.suffix + ".meta.json"),
                      canonical_json(g.meta()))


def load_graph(path) -> HeteroGraph:
    with open(path, "rb") as fh:
        return HeteroGraph.from_bytes(fh.read())


# ---------------------------------------------------------------------------
# synthetic dataset
# ---------------------------------------------------------------------------


@dataclass
class SyntheticConfig:
    num_takes: int = 80
    segments_min: int = 10
    segments_max: int = 24
    num_classes: int = 20
    num_exo_views: int = 3
    transition_temperature: float = 0.35   # lower = more structured transitions
    self_transition_bias: float = 2.0      # added to diagonal logits (sticky steps)
    uniform_transitions: bool = False
    feature_dim: int = 32
    ego_noise: float = 1.0
    exo_noise: float = 0.5
    depth_dim: int = 16
    depth_noise: float = 1.0
    text_dim: int = 8
    text_noise: float = 1.0
    with_depth: bool = True
    with_text: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.segments_min < 1 or self.segments_max < self.segments_min:
            raise IngestionError("segments range must satisfy 1 <= min <= max")
        for name in ("ego_noise", "exo_noise", "depth_noise", "text_noise"):
            if getattr(self, name) < 0:
                raise IngestionError(f"{name} must be >= 0")
        if self.transition_temperature <= 0:
            raise IngestionError("transition_temperature must be > 0")

    def to_dict(self) -> dict:
        return dict(self.__dict__)

    @staticmethod
    def from_dict(d: dict) -> "SyntheticConfig":
        return SyntheticConfig(**d)


@dataclass
class GenerativeParams:
    """Everything the Bayes oracles need to score generated data exactly."""

    num_classes: int
    initial: np.ndarray          # (C,)
    transition: np.ndarray       # (C, C) rows sum to 1
    vision_means: np.ndarray     # (C, d)
    ego_noise: float
    exo_noise: float
    view_mixes: np.ndarray       # (K, d, d) orthogonal
    depth_means: np.ndarray | None
    depth_noise: float
    text_means: np.ndarray | None
    text_noise: float

    def to_json(self) -> str:
        def arr(a):
            return None if a is None else np.asarray(a).tolist()

        return canonical_json({
            "num_classes": self.num_classes,
            "initial": arr(self.initial),
            "transition": arr(self.transition),
            "vision_means": arr(self.vision_means),
            "ego_noise": self.ego_noise,
            "exo_noise": self.exo_noise,
            "view_mixes": arr(self.view_mixes),
            "depth_means": arr(self.depth_means),
            "depth_noise": self.depth_noise,
            "text_means": arr(self.text_means),
            "text_noise": self.text_noise,
        })

    @staticmethod
    def from_json(text: str) -> "GenerativeParams":
        d = json.loads(text)

        def arr(x):
            return None if x is None else np.asarray(x, dtype=np.float64)

        return GenerativeParams(
            num_classes=d["num_classes"],
            initial=arr(d["initial"]),
            transition=arr(d["transition"]),
            vision_means=arr(d["vision_means"]),
            ego_noise=d["ego_noise"],
            exo_noise=d["exo_noise"],
            view_mixes=arr(d["view_mixes"]),
            depth_means=arr(d["depth_means"]),
            depth_noise=d["depth_noise"],
            text_means=arr(d["text_means"]),
            text_noise=d["text_noise"],
        )


def _random_orthogonal(rng, d: int) -> np.ndarray:
    q, r = np.linalg.qr(rng.normal(size=(d, d)))
    return q * np.sign(np.diag(r))


def generate_synthetic(cfg: SyntheticConfig):
    """Sample takes from the generative model; returns (takes, params).

    Keystep sequences follow a Markov chain; the ego vision feature of a
    segment is its class mean plus isotropic noise; each exo view sees a
    fixed orthogonal mix of the ego feature plus its own noise; window
    features replicate the segment feature (1-3 windows per segment) so
    pooling averages back to it exactly and the Gaussian oracle stays exact.
    """
    root = np.random.default_rng(cfg.seed)
    c, d = cfg.num_classes, cfg.feature_dim
    vision_means = root.normal(size=(c, d))
    if cfg.uniform_transitions:
        transition = np.full((c, c), 1.0 / c)
    else:
        logits = root.normal(size=(c, c)) / cfg.transition_temperature
        logits[np.arange(c), np.arange(c)] += cfg.self_transition_bias
        z = np.exp(logits - logits.max(axis=1, keepdims=True))
        transition = z / z.sum(axis=1, keepdims=True)
    initial = np.full(c, 1.0 / c)
    view_mixes = np.stack([_random_orthogonal(root, d)
                           for _ in range(cfg.num_exo_views)]) \
        if cfg.num_exo_views else np.zeros((0, d, d))
    depth_means = root.normal(size=(c, cfg.depth_dim)) if cfg.with_depth else None
    text_means = root.normal(size=(c, cfg.text_dim)) if cfg.with_text else None

    params = GenerativeParams(
        num_classes=c, initial=initial, transition=transition,
        vision_means=vision_means, ego_noise=cfg.ego_noise, exo_noise=cfg.exo_noise,
        view_mixes=view_mixes, depth_means=depth_means, depth_noise=cfg.depth_noise,
        text_means=text_means, text_noise=cfg.text_noise,
    )

    takes = []
    for t in range(cfg.num_takes):
        rng = np.random.default_rng([cfg.seed, 1000 + t])
        n = int(rng.integers(cfg.segments_min, cfg.segments_max + 1))
        classes = np.empty(n, dtype=np.int64)
        classes[0] = rng.choice(c, p=initial)
        for s in range(1, n):
            classes[s] = rng.choice(c, p=transition[classes[s - 1]])

        starts = np.cumsum(np.concatenate([[0.0], rng.uniform(4.0, 10.0, size=n - 1)]))
        durations = rng.uniform(3.0, 8.0, size=n)
        durations = np.minimum(durations, np.concatenate([np.diff(starts), [durations[-1]]]))
        segments = [Segment(float(starts[s]), float(starts[s] + durations[s]),
                            int(classes[s])) for s in range(n)]

        ego_feats = vision_means[classes] + cfg.ego_noise * rng.normal(size=(n, d))

        def windows(seg_feats):
            centers, rows = [], []
            for s, seg in enumerate(segments):
                for _ in range(int(rng.integers(1, 4))):
                    centers.append(rng.uniform(seg.start_s, seg.start_s + 0.999 * (
                        seg.end_s - seg.start_s)))
                    rows.append(seg_feats[s])
            order = np.argsort(np.asarray(centers), kind="stable")
            return np.asarray(centers)[order], np.asarray(rows)[order]

        def depth_for():
            if not cfg.with_depth:
                return None
            return depth_means[classes] + cfg.depth_noise * rng.normal(size=(n, cfg.depth_dim))

        ego_centers, ego_windows = windows(ego_feats)
        views = [ViewTrack("ego", ego_centers, ego_windows, depth_for())]
        for v in range(cfg.num_exo_views):
            exo_feats = ego_feats @ view_mixes[v].T \
                + cfg.exo_noise * rng.normal(size=(n, d))
            centers, rows = windows(exo_feats)
            views.append(ViewTrack("exo", centers, rows, depth_for()))

        text = text_means[classes] + cfg.text_noise * rng.normal(size=(n, cfg.text_dim)) \
            if cfg.with_text else None
        takes.append(TakeRecord(
            take_id=f"synth-{t:04d}", segments=segments, views=views,
            text_features=text, object_features=None,
        ))
    return takes, params


# ---------------------------------------------------------------------------
# Bayes oracles
# ---------------------------------------------------------------------------


def _log_likelihoods(params: GenerativeParams, features: np.ndarray) -> np.ndarray:
    """log p(x | c) up to a constant, isotropic Gaussian per class."""
    sigma2 = max(params.ego_noise, 1e-12) ** 2
    diff = features[:, None, :] - params.vision_means[None, :, :]
    return -0.5 * np.sum(diff * diff, axis=2) / sigma2


def _normalize_log(posterior_log: np.ndarray) -> np.ndarray:
    z = posterior_log - posterior_log.max(axis=1, keepdims=True)
    p = np.exp(z)
    return p / p.sum(axis=1, keepdims=True)


def bayes_posteriors_pernode(params: GenerativeParams, features: np.ndarray) -> np.ndarray:
    """Exact per-node posteriors using each position's marginal class prior."""
    n = features.shape[0]
    ll = _log_likelihoods(params, features)
    prior = params.initial.copy()
    log_priors = np.empty((n, params.num_classes))
    for s in range(n):
        log_priors[s] = np.log(np.maximum(prior, 1e-300))
        prior = prior @ params.transition
    return _normalize_log(ll + log_priors)


def bayes_posteriors_temporal(params: GenerativeParams, features: np.ndarray) -> np.ndarray:
    """Forward-backward marginals over the keystep chain (in log space)."""
    n = features.shape[0]
    ll = _log_likelihoods(params, features)
    log_a = np.log(np.maximum(params.transition, 1e-300))
    log_pi = np.log(np.maximum(params.initial, 1e-300))

    def lse(m, axis):
        mx = m.max(axis=axis, keepdims=True)
        return (mx + np.log(np.exp(m - mx).sum(axis=axis, keepdims=True))).squeeze(axis)

    fwd = np.empty_like(ll)
    fwd[0] = log_pi + ll[0]
    for s in range(1, n):
        fwd[s] = ll[s] + lse(fwd[s - 1][:, None] + log_a, axis=0)
    bwd = np.zeros_like(ll)
    for s in range(n - 2, -1, -1):
        bwd[s] = lse(log_a + (ll[s + 1] + bwd[s + 1])[None, :], axis=1)
    return _normalize_log(fwd + bwd)


def pooled_ego_features(take: TakeRecord) -> np.ndarray:
    from .builder import pool_segment_features

    ego = take.views[0]
    return np.stack([
        pool_segment_features(ego.window_centers, ego.window_features,
                              seg.start_s, seg.end_s)
        for seg in take.segments
    ])


def bayes_ceiling(params: GenerativeParams, takes, mode: str = "pernode") -> float:
    """Accuracy of the optimal classifier on ego features, per-node or temporal."""
    if mode not in ("pernode", "temporal"):
        raise ValueError(f"unknown oracle mode {mode!r}")
    correct = total = 0
    for take in takes:
        feats = pooled_ego_features(take)
        post = (bayes_posteriors_pernode(params, feats) if mode == "pernode"
                else bayes_posteriors_temporal(params, feats))
        pred = post.argmax(axis=1)
        labels = np.array([s.keystep for s in take.segments])
        correct += int((pred == labels).sum())
        total += labels.size
    return correct / total
