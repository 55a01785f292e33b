"""Precomputed propagation operators.

* the social hypergraph over users and groups (one hyperedge per group,
  covering the group node and its members),
* the reweighted user-item bipartite graph,
* the group-item graph augmented with group-group co-interaction edges,
* the plain user-group bipartite graph used when hypergraph modeling is
  switched off.

All operators are symmetric, nonnegative and built once before training.
Nodes with zero degree get zero rows in the normalized operators.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .dataset import InteractionDataset, SplitAssignment
from .tensorops import SparseMatrix


@dataclass(frozen=True)
class SocialHypergraph:
    incidence: SparseMatrix            # (M+K) x K
    propagation_operator: SparseMatrix  # (M+K) x (M+K)


@dataclass(frozen=True)
class RefinedUserItemGraph:
    weighted_matrix: SparseMatrix      # M x N, Y' = Y + lambda1 * W
    bipartite_operator: SparseMatrix   # (M+N) x (M+N)


@dataclass(frozen=True)
class RefinedGroupItemGraph:
    adjacency: SparseMatrix            # (K+N) x (K+N)
    normalized_operator: SparseMatrix


def _inv_sqrt(deg: np.ndarray) -> np.ndarray:
    out = np.zeros_like(deg, dtype=np.float64)
    nz = deg > 0
    out[nz] = 1.0 / np.sqrt(deg[nz])
    return out


def _exact_symmetric(mat: sp.spmatrix) -> sp.csr_matrix:
    # products like d_r * a * d_c round differently from d_c * a * d_r; averaging
    # with the transpose makes the stored matrix bitwise symmetric
    mat = sp.csr_matrix(mat)
    return ((mat + mat.T) * 0.5).tocsr()


def sym_normalize(adjacency) -> sp.csr_matrix:
    """``D^-1/2 A D^-1/2`` with D the row sums of A."""
    adj = sp.csr_matrix(adjacency, dtype=np.float64)
    d = _inv_sqrt(np.asarray(adj.sum(axis=1)).ravel())
    scale = sp.diags(d)
    return _exact_symmetric(scale @ adj @ scale)


def bipartite_adjacency(block) -> sp.csr_matrix:
    """Symmetric ``[[0, B], [B^T, 0]]`` for a rectangular block ``B``."""
    block = sp.csr_matrix(block, dtype=np.float64)
    return sp.bmat([[None, block], [block.T, None]], format="csr")


def _relation_matrix(edges: np.ndarray, n_left: int, n_right: int, weights=None) -> sp.csr_matrix:
    if weights is None:
        weights = np.ones(len(edges))
    return sp.csr_matrix((weights, (edges[:, 0], edges[:, 1])), shape=(n_left, n_right))


def _membership_edges(ds: InteractionDataset, split: SplitAssignment | None) -> np.ndarray:
    if split is None:
        return ds.user_group
    return ds.user_group[split.train]


# ---------------------------------------------------------------------------
# user-item reweighting

def item_neighbors(ds: InteractionDataset) -> list[set[int]]:
    """Users adjacent to each item in the user-item graph."""
    sets = [set() for _ in range(ds.num_items)]
    for u, i in ds.user_item.tolist():
        sets[i].add(u)
    return sets


def salton_similarity(k: int, j: int, ds: InteractionDataset, standard: bool = False,
                      neighbors: list[set[int]] | None = None) -> float:
    """Co-occurrence of items ``k`` and ``j``.

    By default the intersection size is divided by the square root of the
    union size.  ``standard=True`` uses ``sqrt(|N_k| * |N_j|)`` instead.
    """
    for item in (k, j):
        if not 0 <= item < ds.num_items:
            raise ValueError(f"item id {item} outside [0, {ds.num_items})")
    if neighbors is None:
        neighbors = item_neighbors(ds)
    nk, nj = neighbors[k], neighbors[j]
    inter = len(nk & nj)
    denom = len(nk) * len(nj) if standard else len(nk | nj)
    if denom == 0:
        return 0.0
    return inter / np.sqrt(denom)


def compute_user_reweight(ds: InteractionDataset, standard: bool = False) -> SparseMatrix:
    """``w_uj`` = mean over the user's items ``k`` of SC(k, j), on observed edges only."""
    m, n = ds.num_users, ds.num_items
    y = _relation_matrix(ds.user_item, m, n)
    co = (y.T @ y).tocsr()                      # |N_k & N_j|
    deg = np.asarray(y.sum(axis=0)).ravel()     # |N_k|
    rows, cols, vals = [], [], []
    for u in range(m):
        items = y.indices[y.indptr[u]:y.indptr[u + 1]]
        if len(items) == 0:
            continue
        inter = co[items][:, items].toarray()
        if standard:
            denom = np.sqrt(np.outer(deg[items], deg[items]))
        else:
            denom = np.sqrt(deg[items][:, None] + deg[items][None, :] - inter)
        # every pair here shares user u, so both denominators are positive
        sc = inter / denom
        rows.append(np.full(len(items), u))
        cols.append(items)
        vals.append(sc.mean(axis=0))
    if not rows:
        return SparseMatrix.from_scipy(sp.csr_matrix((m, n)))
    return SparseMatrix.from_coo(m, n, np.concatenate(rows), np.concatenate(cols), np.concatenate(vals))


def build_refined_ui_graph(ds: InteractionDataset, lambda1: float, standard_salton: bool = False
                           ) -> RefinedUserItemGraph:
    if lambda1 < 0:
        raise ValueError(f"lambda1 must be nonnegative, got {lambda1}")
    y = _relation_matrix(ds.user_item, ds.num_users, ds.num_items)
    if lambda1 > 0:
        w = compute_user_reweight(ds, standard=standard_salton).csr
        # same sparsity pattern as y, so the sum keeps the support
        weighted = (y + lambda1 * w).tocsr()
    else:
        weighted = y
    operator = sym_normalize(bipartite_adjacency(weighted))
    return RefinedUserItemGraph(SparseMatrix.from_scipy(weighted), SparseMatrix.from_scipy(operator))


# ---------------------------------------------------------------------------
# group-item augmentation

def group_cointeraction_pairs(ds: InteractionDataset) -> sp.csr_matrix:
    """K x K 0/1 matrix with a 1 for distinct groups sharing at least one item."""
    z = _relation_matrix(ds.group_item, ds.num_groups, ds.num_items)
    shared = (z @ z.T).tocsr()
    shared = (shared - sp.diags(shared.diagonal())).tocsr()
    shared.eliminate_zeros()
    shared.data[:] = 1.0
    return shared


def build_refined_gi_graph(ds: InteractionDataset, augment: bool = True) -> RefinedGroupItemGraph:
    k, n = ds.num_groups, ds.num_items
    z = _relation_matrix(ds.group_item, k, n)
    gg = group_cointeraction_pairs(ds) if augment else sp.csr_matrix((k, k))
    adjacency = sp.bmat([[gg, z], [z.T, None]], format="csr")
    return RefinedGroupItemGraph(
        SparseMatrix.from_scipy(adjacency), SparseMatrix.from_scipy(sym_normalize(adjacency))
    )


# ---------------------------------------------------------------------------
# social structure

def build_social_hypergraph(ds: InteractionDataset, split: SplitAssignment | None = None) -> SocialHypergraph:
    """Hypergraph over users 0..M-1 then groups M..M+K-1.

    Only training memberships are used when ``split`` is given.  The operator
    is ``Dv^-1/2 H De^-1 H^T Dv^-1/2``.
    """
    m, k = ds.num_users, ds.num_groups
    edges = _membership_edges(ds, split)
    rows = np.concatenate([edges[:, 0], m + np.arange(k)])
    cols = np.concatenate([edges[:, 1], np.arange(k)])
    h = sp.csr_matrix((np.ones(len(rows)), (rows, cols)), shape=(m + k, k))
    dv = _inv_sqrt(np.asarray(h.sum(axis=1)).ravel())
    de = np.asarray(h.sum(axis=0)).ravel()       # >= 1: every hyperedge holds its group
    left = sp.diags(dv) @ h
    op = _exact_symmetric(left @ sp.diags(1.0 / de) @ left.T)
    return SocialHypergraph(SparseMatrix.from_scipy(h), SparseMatrix.from_scipy(op))


def build_user_group_bipartite(ds: InteractionDataset, split: SplitAssignment | None = None) -> SparseMatrix:
    """Normalized user-group bipartite operator, same node order as the hypergraph."""
    edges = _membership_edges(ds, split)
    x = _relation_matrix(edges, ds.num_users, ds.num_groups)
    return SparseMatrix.from_scipy(sym_normalize(bipartite_adjacency(x)))
