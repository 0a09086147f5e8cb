"""Prototype graph construction, the learnable knowledge-vertex graph, their
composition into one block graph, and single-layer graph-convolution
propagation.

Everything here is expressed through tape primitives, so the whole graph
pipeline is differentiable end to end (including through the softmax links
and the degree normalization).

Edge scores use a learnable d-vector `w` and scalar bias `b`:
``score(u, v) = sigmoid(w . (|u - v| / gamma) + b)``. The absolute
difference is symmetric, so the score matrices are exactly symmetric with
``sigmoid(b)`` on the diagonal.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from . import autodiff as ad
from .autodiff import Var
from .errors import DimensionError, DomainError


@dataclass
class Embedder:
    """Affine sample embedding plus the cluster-assignment head."""

    W: Var   # (3, d)
    b: Var   # (1, d)
    Wp: Var  # (K, d)
    bp: Var  # (K, 1)


@dataclass
class EdgeScorer:
    w: Var  # (d, 1)
    b: Var  # (1, 1)


@dataclass
class GnnWeights:
    W: Var  # (d, d)


@dataclass
class PrototypeGraph:
    C: Var  # (K, d) prototype features
    A: Var  # (K, K) edge weights
    P: Var  # (K, n_train) soft assignments, columns sum to 1


@dataclass
class KnowledgeGraph:
    H: Var  # (G, d) learnable vertex features
    A: Var  # (G, G) edge weights


@dataclass
class SuperGraph:
    A: Var  # (K+G, K+G) block adjacency
    H: Var  # (K+G, d) stacked features
    k: int
    g: int


@lru_cache(maxsize=None)
def _pair_selectors(n: int) -> tuple[np.ndarray, np.ndarray]:
    # row p = j*n + m of (S1 @ X, S2 @ X) is (x_j, x_m)
    s1 = np.repeat(np.eye(n), n, axis=0)
    s2 = np.tile(np.eye(n), (n, 1))
    s1.setflags(write=False)
    s2.setflags(write=False)
    return s1, s2


def embed(embedder: Embedder, samples: Var) -> Var:
    """Map (n, 3) sample triples to (n, d) features."""
    return ad.add(ad.matmul(samples, embedder.W), embedder.b)


def assign_prototypes(embedder: Embedder, features: Var) -> tuple[Var, Var]:
    """Soft-cluster features into K prototypes.

    Returns (P, C): P is (K, n) with each column a distribution over the
    clusters, and C is (K, d) with row k the P[k]-weighted sum of features.
    """
    logits = ad.add(ad.matmul(embedder.Wp, ad.transpose(features)), embedder.bp)
    p = ad.transpose(ad.row_softmax(ad.transpose(logits)))
    c = ad.matmul(p, features)
    return p, c


def edge_weights(vertices: Var, scorer: EdgeScorer, gamma: float) -> Var:
    """Pairwise sigmoid similarity scores over vertex rows; symmetric."""
    if gamma <= 0:
        raise DomainError("edge_weights: gamma must be positive")
    n = vertices.shape[0]
    tape = vertices.tape
    s1, s2 = _pair_selectors(n)
    left = ad.matmul(tape.constant(s1), vertices)
    right = ad.matmul(tape.constant(s2), vertices)
    diff = ad.scalar_div(ad.elem_abs(ad.sub(left, right)), gamma)
    scores = ad.sigmoid(ad.add(ad.matmul(diff, scorer.w), scorer.b))
    return ad.reshape(scores, n, n)


def cross_links(prototypes: Var, vertices: Var, gamma: float) -> Var:
    """Softmax links from each prototype to the knowledge vertices.

    Entry (j, m) is exp(-||(c_j - h_m)/gamma||^2 / 2) normalized over the
    vertices, i.e. a row-softmax over scaled negative squared distances.
    """
    if gamma <= 0:
        raise DomainError("cross_links: gamma must be positive")
    k = prototypes.shape[0]
    g = vertices.shape[0]
    if prototypes.shape[1] != vertices.shape[1]:
        raise DimensionError(
            f"cross_links: feature dims differ {prototypes.shape} vs {vertices.shape}")
    sq_c = ad.row_sum(ad.square(prototypes))           # (K, 1)
    sq_h = ad.row_sum(ad.square(vertices))             # (G, 1)
    cross = ad.matmul(prototypes, ad.transpose(vertices))
    d2 = ad.add(ad.sub(ad.tile_cols(sq_c, g), ad.scalar_mul(cross, 2.0)),
                ad.tile_rows(ad.transpose(sq_h), k))
    logits = ad.scalar_div(d2, -2.0 * gamma * gamma)
    return ad.row_softmax(logits)


def build_supergraph(a_r: Var, a_s: Var, a_g: Var, c_r: Var, h_g: Var) -> SuperGraph:
    """Assemble the block adjacency [[A_R, A_S], [A_S^T, A_G]] and stacked
    features [C_R; H_G]."""
    k = c_r.shape[0]
    g = h_g.shape[0]
    if a_r.shape != (k, k):
        raise DimensionError(f"supergraph: prototype block is {a_r.shape}, want {(k, k)}")
    if a_g.shape != (g, g):
        raise DimensionError(f"supergraph: knowledge block is {a_g.shape}, want {(g, g)}")
    if a_s.shape != (k, g):
        raise DimensionError(f"supergraph: link block is {a_s.shape}, want {(k, g)}")
    if c_r.shape[1] != h_g.shape[1]:
        raise DimensionError(
            f"supergraph: feature dims differ {c_r.shape} vs {h_g.shape}")
    top = ad.concat_cols(a_r, a_s)
    bottom = ad.concat_cols(ad.transpose(a_s), a_g)
    return SuperGraph(A=ad.concat_rows(top, bottom),
                      H=ad.concat_rows(c_r, h_g), k=k, g=g)


def propagate(graph: SuperGraph, gnn: GnnWeights) -> Var:
    """One graph-convolution layer over the block graph.

    Uses the symmetric degree normalization with self-loops,
    ``D^{-1/2} (A + I) D^{-1/2}``, a tanh nonlinearity, and returns the
    first K rows (the enriched prototypes).
    """
    return ad.slice_rows(propagate_features(graph.A, graph.H, gnn), 0, graph.k)


def propagate_features(adjacency: Var, features: Var, gnn: GnnWeights) -> Var:
    """tanh( normalize(A + I) @ H @ W ) over all vertices."""
    n = adjacency.shape[0]
    if adjacency.shape != (n, n) or features.shape[0] != n:
        raise DimensionError(
            f"propagate: adjacency {adjacency.shape} vs features {features.shape}")
    tape = adjacency.tape
    with_loops = ad.add(adjacency, tape.constant(np.eye(n)))
    degrees = ad.row_sum(with_loops)
    assert float(degrees.array.min()) > 0.0, "zero-degree vertex despite self-loops"
    inv_sqrt = ad.pow_const(degrees, -0.5)
    scale = ad.matmul(inv_sqrt, ad.transpose(inv_sqrt))
    normalized = ad.mul(with_loops, scale)
    return ad.tanh(ad.matmul(ad.matmul(normalized, features), gnn.W))
