import dataclasses

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from direc.loss import joint_objective
from direc.model import (
    DiRec,
    EmbeddingState,
    ModelConfig,
    build_graphs,
    extract_layer,
    forward,
    hgnn_forward,
    init_state,
    lightgcn_forward,
    ForwardOutput,
    load_checkpoint,
    save_checkpoint,
    score,
)
from direc.tensorops import ShapeError, SparseMatrix, Value, backward, concat_cols, sum_all

from conftest import all_train, random_dataset


def small_cfg(**kw):
    base = dict(dim=3, layers=2, lambda3=0.1, lambda4=0.1, ssl_full_pool=True)
    base.update(kw)
    return ModelConfig(**base)


def make_model(ds, split, cfg, seed=0):
    return DiRec.create(ds, split, cfg, np.random.default_rng(seed))


def test_extract_layer_split_and_inverse():
    table = Value([[1.0, 2.0, 3.0, 4.0]])
    social, interest = extract_layer(table, 2)
    assert social.data.tolist() == [[1.0, 2.0]]
    assert interest.data.tolist() == [[3.0, 4.0]]
    x = Value(np.random.default_rng(0).normal(size=(5, 6)))
    assert np.array_equal(concat_cols(*extract_layer(x, 3)).data, x.data)


def test_extract_layer_gradient_stays_in_half():
    x = Value(np.random.default_rng(1).normal(size=(4, 6)))
    social, _ = extract_layer(x, 3)
    backward(sum_all(social))
    assert np.all(x.grad[:, 3:] == 0.0)
    assert np.all(x.grad[:, :3] == 1.0)


def test_hgnn_memberless_group_identity_layer():
    # one user in no group, one memberless group: the group's row is e_g alone
    op = SparseMatrix.from_dense([[0.0, 0.0], [0.0, 1.0]])
    u, g = Value([[5.0, 6.0]]), Value([[1.0, -2.0]])
    _, groups = hgnn_forward(op, u, g, [Value(np.eye(2))], activation="identity")
    assert groups.data.tolist() == [[1.0, -2.0]]


def test_hgnn_two_users_one_group_gives_mean():
    op = SparseMatrix.from_dense(np.full((3, 3), 1 / 3))
    rng = np.random.default_rng(2)
    u, g = Value(rng.normal(size=(2, 4))), Value(rng.normal(size=(1, 4)))
    users, groups = hgnn_forward(op, u, g, [Value(np.eye(4))], activation="identity")
    mean = np.vstack([u.data, g.data]).mean(axis=0)
    assert np.allclose(users.data, mean, atol=1e-14)
    assert np.allclose(groups.data, mean, atol=1e-14)


def test_hgnn_relu_outputs_nonnegative_and_shapes():
    rng = np.random.default_rng(3)
    op = SparseMatrix.from_dense(np.abs(rng.normal(size=(7, 7))))
    w = [Value(rng.normal(size=(3, 3))) for _ in range(2)]
    users, groups = hgnn_forward(op, Value(rng.normal(size=(4, 3))), Value(rng.normal(size=(3, 3))), w)
    assert users.shape == (4, 3) and groups.shape == (3, 3)
    assert np.all(users.data >= 0) and np.all(groups.data >= 0)
    with pytest.raises(ShapeError):
        hgnn_forward(SparseMatrix.identity(5), Value(np.ones((4, 3))), Value(np.ones((3, 3))), w)


def test_lightgcn_examples():
    rng = np.random.default_rng(4)
    op = SparseMatrix.from_dense(np.abs(rng.normal(size=(4, 4))))
    e0 = Value(rng.normal(size=(4, 2)))
    assert lightgcn_forward(op, e0, 0) is e0
    doubled = lightgcn_forward(op, Value(2 * e0.data), 3).data
    assert np.allclose(doubled, 2 * lightgcn_forward(op, e0, 3).data, rtol=1e-14)

    edge = SparseMatrix.from_dense([[0.0, 1.0], [1.0, 0.0]])
    e = Value([[1.0, 3.0], [5.0, -1.0]])
    out = lightgcn_forward(edge, e, 1).data
    assert out[0].tolist() == [3.0, 1.0]


def test_score_examples():
    out = ForwardOutput(Value([[1.0, 2.0], [0.0, 1.0]]), Value([[3.0, -1.0], [1.0, 0.0]]))
    assert score(out, 0, 0) == 1.0
    assert score(out, 1, 1) == 0.0
    same = ForwardOutput(Value([[1.0, 2.0]]), Value([[1.0, 2.0]]))
    assert score(same, 0, 0) == 5.0


def test_forward_shapes_full_config(toy, toy_split):
    model = make_model(toy, toy_split, small_cfg())
    out = model.forward()
    assert out.users.shape == (5, 6) and out.groups.shape == (4, 6)
    assert np.array_equal(out.users.data, np.hstack([out.users_social.data, out.users_interest.data]))
    assert np.array_equal(out.groups.data, np.hstack([out.groups_social.data, out.groups_interest.data]))
    assert np.allclose(model.score_matrix(), out.users.data @ out.groups.data.T)


def test_mf_baseline_scores_raw_embeddings(toy, toy_split):
    model = make_model(toy, toy_split, small_cfg(mf_bpr_baseline=True))
    expected = model.state.users.data @ model.state.groups.data.T
    assert np.array_equal(model.score_matrix(), expected)


def test_degenerate_config_matches_mf(toy, toy_split):
    cfg = small_cfg(layers=0, hgnn_activation="identity", use_ssl=False)
    model = make_model(toy, toy_split, cfg)
    assert model.state.hgnn_weights == []
    mf = DiRec(small_cfg(mf_bpr_baseline=True), model.state, build_graphs(toy, toy_split, small_cfg(mf_bpr_baseline=True)))
    assert np.allclose(model.score_matrix(), mf.score_matrix(), atol=1e-14)


def test_degenerate_config_with_identity_weights_matches_mf(toy, toy_split):
    cfg = small_cfg(layers=0, hgnn_activation="identity", use_ssl=False)
    state = init_state(5, 4, 3, small_cfg(layers=1), np.random.default_rng(0))
    state.hgnn_weights = [Value(np.eye(3))]
    # zero layers never touch the weight list
    out = forward(state, build_graphs(toy, toy_split, cfg), cfg)
    assert np.allclose(out.score_matrix(), state.users.data @ state.groups.data.T, atol=1e-14)


def test_bipartite_social_path(toy, toy_split):
    cfg = small_cfg(use_hypergraph=False)
    graphs = build_graphs(toy, toy_split, cfg)
    assert graphs.social_kind == "bipartite" and graphs.social.shape == (9, 9)
    out = make_model(toy, toy_split, cfg).forward()
    assert out.users.shape == (5, 6)


def test_graph_bundle_mismatch_is_rejected(toy, toy_split):
    graphs = build_graphs(toy, toy_split, small_cfg())
    state = init_state(5, 4, 3, small_cfg(), np.random.default_rng(0))
    with pytest.raises(ValueError):
        forward(state, graphs, small_cfg(use_hypergraph=False))
    with pytest.raises(ValueError):
        forward(state, graphs, small_cfg(lambda1=0.5))


@pytest.mark.parametrize("use_social", [True, False])
def test_single_intent_variants_score_in_d_dims(toy, toy_split, use_social):
    cfg = small_cfg(use_social=use_social, use_interest=not use_social)
    out = make_model(toy, toy_split, cfg).forward()
    assert out.users.shape == (5, 3)


def test_gradient_separation_without_interest_or_ssl(toy, toy_split):
    cfg = small_cfg(use_interest=False, use_ssl=False)
    model = make_model(toy, toy_split, cfg)
    batch = [(0, 0, 2), (1, 1, 3), (4, 2, 3)]
    total, _ = joint_objective(model.forward(), batch, cfg)
    backward(total)
    d = cfg.dim
    assert np.all(model.state.users.grad[:, d:] == 0.0)
    assert np.all(model.state.groups.grad[:, d:] == 0.0)
    assert np.any(model.state.users.grad[:, :d] != 0.0)
    assert model.state.items.grad is None or not model.state.items.grad.any()


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(0.01, 100.0))
def test_ranking_invariant_under_positive_scaling(seed, c):
    rng = np.random.default_rng(seed)
    ds = random_dataset(rng, max_entities=6)
    model = make_model(ds, all_train(ds), small_cfg(), seed=seed)
    out = model.forward()
    scaled = (c * out.users.data) @ (c * out.groups.data).T
    base = out.score_matrix()
    assert np.allclose(scaled, c * c * base, rtol=1e-12, atol=1e-12 * c * c * np.abs(base).max())
    # every clearly ordered pair keeps its order
    for row_a, row_b in zip(base, scaled):
        gap = row_a[:, None] - row_a[None, :]
        clear = gap > 1e-9 * (np.abs(row_a).max() + 1e-300)
        assert np.all((row_b[:, None] - row_b[None, :])[clear] > 0)


def test_checkpoint_round_trip_is_bit_exact(tmp_path, toy, toy_split):
    model = make_model(toy, toy_split, small_cfg())
    save_checkpoint(model.state, tmp_path / "ck.txt")
    again = load_checkpoint(tmp_path / "ck.txt")
    assert again.equals(model.state)
    reloaded = DiRec(model.cfg, again, model.graphs)
    assert np.array_equal(reloaded.score_matrix(), model.score_matrix())


def test_checkpoint_rejects_truncation(tmp_path, toy, toy_split):
    model = make_model(toy, toy_split, small_cfg())
    path = tmp_path / "ck.txt"
    save_checkpoint(model.state, path)
    lines = path.read_text().splitlines()
    path.write_text("\n".join(lines[:-1]) + "\n")
    with pytest.raises(ValueError):
        load_checkpoint(path)


def test_config_validation():
    with pytest.raises(ValueError):
        ModelConfig(use_social=False, use_interest=False)
    with pytest.raises(ValueError):
        ModelConfig(dim=0)
    with pytest.raises(ValueError):
        ModelConfig(hgnn_activation="tanh")
    assert ModelConfig(use_social=False, use_interest=False, mf_bpr_baseline=True).mf_bpr_baseline


def test_state_copy_is_independent(toy, toy_split):
    state = make_model(toy, toy_split, small_cfg()).state
    dup = state.copy()
    dup.users.data[0, 0] += 1.0
    assert not dup.equals(state)
    assert isinstance(dup, EmbeddingState)
    assert dataclasses.is_dataclass(dup)
