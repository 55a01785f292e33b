import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from direc.dataset import InteractionDataset, SplitAssignment
from direc.refine import (
    build_refined_gi_graph,
    build_refined_ui_graph,
    build_social_hypergraph,
    build_user_group_bipartite,
    compute_user_reweight,
    group_cointeraction_pairs,
    salton_similarity,
)

from conftest import random_dataset
from _oracles import (
    brute_bipartite,
    brute_hypergraph,
    brute_normalize,
    brute_reweight,
    brute_salton,
    dense,
    neighbor_sets,
)

TOYS = 50


def toys():
    rng = np.random.default_rng(7)
    return [random_dataset(rng, max_entities=7, density=0.35) for _ in range(TOYS)]


# salton similarity -----------------------------------------------------------

def ui_dataset(sets, num_users):
    edges = [(u, i) for i, s in enumerate(sets) for u in s]
    return InteractionDataset(num_users, 1, len(sets), [], edges, [])


def test_salton_examples():
    ds = ui_dataset([{1, 2}, {1, 2}], 5)
    assert salton_similarity(0, 1, ds) == pytest.approx(1.4142135623730951, abs=1e-12)
    ds = ui_dataset([{0}, {1}], 5)
    assert salton_similarity(0, 1, ds) == 0.0
    ds = ui_dataset([{1, 2, 3}, {2, 3, 4}], 5)
    assert salton_similarity(0, 1, ds) == pytest.approx(1.0, abs=1e-12)
    assert salton_similarity(0, 1, ds, standard=True) == pytest.approx(2 / 3, abs=1e-12)


def test_salton_empty_union_and_bad_id():
    ds = ui_dataset([set(), set()], 2)
    assert salton_similarity(0, 1, ds) == 0.0
    with pytest.raises(ValueError):
        salton_similarity(0, 2, ds)


@pytest.mark.parametrize("standard", [False, True])
def test_salton_matches_sets_and_is_symmetric(standard):
    for ds in toys():
        sets = neighbor_sets(ds)
        for k, j in itertools.product(range(ds.num_items), repeat=2):
            got = salton_similarity(k, j, ds, standard)
            assert got == pytest.approx(brute_salton(sets[k], sets[j], standard), abs=1e-12)
            assert got == salton_similarity(j, k, ds, standard)


# user-item reweighting --------------------------------------------------------

def test_reweight_single_item_user():
    ds = InteractionDataset(2, 1, 2, [], [(0, 0), (1, 1)], [])
    assert compute_user_reweight(ds).to_dense()[0, 0] == pytest.approx(1.0)


def test_reweight_disjoint_items():
    ds = InteractionDataset(3, 1, 3, [], [(0, 0), (0, 1), (0, 2), (1, 1), (2, 2)], [])
    w = compute_user_reweight(ds).to_dense()
    sets = neighbor_sets(ds)
    # items 1 and 2 overlap only through user 0, so no cross term vanishes; check against the rule
    assert w[0, 0] == pytest.approx(
        (brute_salton(sets[0], sets[0]) + brute_salton(sets[1], sets[0]) + brute_salton(sets[2], sets[0])) / 3
    )
    # a user whose items share no other user: cross terms are zero
    ds = InteractionDataset(2, 1, 2, [], [(0, 0), (1, 1)], [])
    assert compute_user_reweight(ds).to_dense()[1, 1] == pytest.approx(1.0)


def test_reweight_three_by_three():
    ds = InteractionDataset(3, 1, 3, [], [(0, 0), (0, 1), (1, 1), (1, 2), (2, 0), (2, 2)], [])
    assert np.allclose(compute_user_reweight(ds).to_dense(), brute_reweight(ds), atol=1e-12)


@pytest.mark.parametrize("standard", [False, True])
def test_reweight_matches_brute_force(standard):
    for ds in toys():
        got = compute_user_reweight(ds, standard).to_dense()
        assert np.allclose(got, brute_reweight(ds, standard), atol=1e-12)


def test_refined_ui_examples():
    ds = InteractionDataset(1, 1, 1, [], [(0, 0)], [])
    g = build_refined_ui_graph(ds, 0.01)
    assert g.weighted_matrix.to_dense()[0, 0] == pytest.approx(1.01)
    assert g.bipartite_operator.to_dense()[0, 1] == pytest.approx(1.0, abs=1e-15)
    with pytest.raises(ValueError):
        build_refined_ui_graph(ds, -0.1)


def test_refined_ui_matches_brute_force():
    for ds in toys():
        for lam in (0.0, 0.001, 0.5):
            g = build_refined_ui_graph(ds, lam)
            y = dense(ds, "user_item", ds.num_users, ds.num_items)
            weighted = y + lam * brute_reweight(ds)
            assert np.allclose(g.weighted_matrix.to_dense(), weighted, atol=1e-12)
            assert g.weighted_matrix.nnz == len(ds.user_item)
            assert np.all(g.weighted_matrix.values >= 1.0)
            op = g.bipartite_operator
            assert np.allclose(op.to_dense(), brute_normalize(brute_bipartite(weighted)), atol=1e-12)
            assert op.is_symmetric() and np.all(op.values >= 0)


def test_zero_lambda_is_plain_normalization():
    ds = toys()[3]
    g = build_refined_ui_graph(ds, 0.0)
    y = dense(ds, "user_item", ds.num_users, ds.num_items)
    assert np.array_equal(g.weighted_matrix.to_dense(), y)


# group-item augmentation ------------------------------------------------------

def test_gi_three_group_example():
    ds = InteractionDataset(1, 3, 2, [], [], [(0, 0), (1, 0), (2, 1)])
    pairs = group_cointeraction_pairs(ds).toarray()
    assert np.argwhere(pairs).tolist() == [[0, 1], [1, 0]]


def test_gi_no_shared_items_equals_plain_bipartite():
    ds = InteractionDataset(1, 3, 3, [], [], [(0, 0), (1, 1), (2, 2)])
    aug = build_refined_gi_graph(ds, augment=True).normalized_operator.to_dense()
    plain = build_refined_gi_graph(ds, augment=False).normalized_operator.to_dense()
    assert np.array_equal(aug, plain)


def test_gi_matches_brute_force():
    for ds in toys():
        z = dense(ds, "group_item", ds.num_groups, ds.num_items)
        k = ds.num_groups
        adj = brute_bipartite(z)
        for p, q in itertools.product(range(k), repeat=2):
            if p != q and np.any(z[p] * z[q]):
                adj[p, q] = 1
        g = build_refined_gi_graph(ds)
        assert np.array_equal(g.adjacency.to_dense(), adj)
        assert np.array_equal(g.adjacency.to_dense()[:k, k:], z)
        assert np.allclose(g.normalized_operator.to_dense(), brute_normalize(adj), atol=1e-12)
        assert g.normalized_operator.is_symmetric()


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_augmentation_monotone(seed):
    rng = np.random.default_rng(seed)
    ds = random_dataset(rng, max_entities=6, density=0.3)
    missing = [(g, i) for g in range(ds.num_groups) for i in range(ds.num_items)
               if (g, i) not in set(map(tuple, ds.group_item.tolist()))]
    if not missing:
        return
    extra = missing[rng.integers(len(missing))]
    bigger = InteractionDataset(*ds.counts, ds.user_group, ds.user_item, [*ds.group_item.tolist(), extra])
    before = group_cointeraction_pairs(ds).toarray()
    after = group_cointeraction_pairs(bigger).toarray()
    assert np.all(after >= before)


# social hypergraph ------------------------------------------------------------

def test_hypergraph_two_users_one_group():
    ds = InteractionDataset(2, 1, 1, [(0, 0), (1, 0)], [], [])
    hg = build_social_hypergraph(ds)
    assert np.allclose(hg.propagation_operator.to_dense(), np.full((3, 3), 1 / 3), atol=1e-15)


def test_hypergraph_memberless_group_and_edge_size():
    ds = InteractionDataset(4, 2, 1, [(0, 0), (1, 0), (2, 0)], [], [])
    hg = build_social_hypergraph(ds)
    h = hg.incidence.to_dense()
    assert h[:, 0].tolist() == [1, 1, 1, 0, 1, 0]
    assert h[:, 1].tolist() == [0, 0, 0, 0, 0, 1]
    assert h[:, 0].sum() == 4
    op = hg.propagation_operator.to_dense()
    assert op[5, 5] == 1.0 and op[5].sum() == 1.0
    assert not op[3].any()


def test_hypergraph_matches_brute_force():
    for ds in toys():
        split = SplitAssignment(np.arange(0, len(ds.user_group), 2), [], np.arange(1, len(ds.user_group), 2), 0)
        hg = build_social_hypergraph(ds, split)
        h, p = brute_hypergraph(ds, ds.user_group[split.train].tolist())
        assert np.array_equal(hg.incidence.to_dense(), h)
        assert np.allclose(hg.propagation_operator.to_dense(), p, atol=1e-12)
        assert hg.propagation_operator.is_symmetric()
        assert np.all(hg.propagation_operator.values >= 0)


def test_heldout_memberships_never_reach_operators():
    for ds in toys():
        n = len(ds.user_group)
        split = SplitAssignment(np.arange(0, n, 3), np.arange(1, n, 3), np.arange(2, n, 3), 0)
        m = ds.num_users
        h = build_social_hypergraph(ds, split).incidence.to_dense()
        bip = build_user_group_bipartite(ds, split).to_dense()
        for e in (*split.valid, *split.test):
            u, g = ds.user_group[e]
            assert h[u, g] == 0
            assert bip[u, m + g] == 0 and bip[m + g, u] == 0


def test_user_group_bipartite_matches_brute_force():
    for ds in toys():
        x = dense(ds, "user_group", ds.num_users, ds.num_groups)
        op = build_user_group_bipartite(ds).to_dense()
        assert np.allclose(op, brute_normalize(brute_bipartite(x)), atol=1e-12)
