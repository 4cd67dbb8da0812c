"""Naive per-node layer implementations used as oracles for the vectorized code.

Everything here is deliberately written as python double loops over plain
numpy arrays, sharing no code with the layer module. Tests assert the
vectorized forwards match these within 1e-9.
"""

from __future__ import annotations

import numpy as np


def _incoming(arcs, node):
    return [s for s, d in arcs if d == node]


def naive_edgeconv(h: np.ndarray, arcs, weight: np.ndarray, bias: np.ndarray) -> np.ndarray:
    """max over incoming arcs of relu([h_i | h_j - h_i] W + b); isolated nodes
    fall back to the implicit self message [h_i | 0]."""
    n, d = h.shape
    out = np.empty((n, weight.shape[1]))
    for i in range(n):
        neighbors = _incoming(arcs, i)
        if not neighbors:
            msgs = [np.concatenate([h[i], np.zeros(d)])]
        else:
            msgs = [np.concatenate([h[i], h[j] - h[i]]) for j in neighbors]
        vals = [np.maximum(m @ weight + bias[0], 0.0) for m in msgs]
        out[i] = np.max(np.stack(vals), axis=0)
    return out


def naive_sage(h: np.ndarray, arcs, w_self: np.ndarray, w_neigh: np.ndarray,
               bias: np.ndarray) -> np.ndarray:
    """h_i W_self + mean_{j -> i}(h_j) W_neigh + b, zero mean when isolated."""
    n = h.shape[0]
    out = np.empty((n, w_self.shape[1]))
    for i in range(n):
        neighbors = _incoming(arcs, i)
        mean = np.mean([h[j] for j in neighbors], axis=0) if neighbors else np.zeros(h.shape[1])
        out[i] = h[i] @ w_self + mean @ w_neigh + bias[0]
    return out


def naive_gatv2(h: np.ndarray, arcs, heads, bias: np.ndarray, slope: float = 0.2) -> np.ndarray:
    """Per head: score a . leaky_relu(h_i W_l + h_j W_r), softmax over incoming
    arcs, aggregate h_j W_r; heads concatenated. heads = [(W_l, W_r, a), ...]."""
    n = h.shape[0]
    blocks = []
    for w_l, w_r, a in heads:
        out_h = np.zeros((n, w_r.shape[1]))
        for i in range(n):
            neighbors = _incoming(arcs, i)
            if not neighbors:
                raise ValueError(f"node {i} has no incoming arcs")
            scores = []
            for j in neighbors:
                z = h[i] @ w_l + h[j] @ w_r
                z = np.where(z > 0, z, slope * z)
                scores.append(float(z @ a[:, 0]))
            scores = np.asarray(scores)
            alpha = np.exp(scores - scores.max())
            alpha /= alpha.sum()
            for j, a_ji in zip(neighbors, alpha):
                out_h[i] += a_ji * (h[j] @ w_r)
        blocks.append(out_h)
    return np.concatenate(blocks, axis=1) + bias[0]


def naive_rgcn(h: np.ndarray, arcs_by_relation: dict, w_self: np.ndarray,
               w_rel: dict, bias: np.ndarray, normalization: str = "relation") -> np.ndarray:
    """h_i W_0 + sum_r mean_{j in N_r(i)}(h_j) W_r + b.

    normalization "relation" divides each relation's sum by that relation's
    in-degree; "total" divides every message by the node's in-degree summed
    over all relations.
    """
    n = h.shape[0]
    out = h @ w_self + np.broadcast_to(bias[0], (n, w_self.shape[1])).copy()
    if normalization == "total":
        degree = np.zeros(n)
        for arcs in arcs_by_relation.values():
            for _s, d in arcs:
                degree[d] += 1
    for rid, arcs in arcs_by_relation.items():
        w = w_rel[rid]
        for i in range(n):
            neighbors = _incoming(arcs, i)
            if not neighbors:
                continue
            total = np.sum([h[j] for j in neighbors], axis=0)
            if normalization == "relation":
                out[i] += (total / len(neighbors)) @ w
            else:
                out[i] += (total / degree[i]) @ w
    return out
