"""Dual-intent group recommender: embeddings, propagation branches and scoring.

Users and groups carry ``2d``-dimensional embeddings whose first half feeds
the social branch (hypergraph convolution over memberships) and whose second
half feeds the interest branch (LightGCN over the refined user-item and
group-item graphs, sharing one item table).  The final representation of a
user or group is the concatenation of both refined halves and a user-group
score is their inner product.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import refine
from .dataset import InteractionDataset, SplitAssignment
from .tensorops import (
    ShapeError,
    SparseMatrix,
    Value,
    add,
    concat_cols,
    matmul,
    relu,
    scale,
    slice_cols,
    spmm,
    stack_rows,
    take_rows,
)

ACTIVATIONS = ("relu", "identity")


@dataclass
class ModelConfig:
    dim: int = 128
    layers: int = 2
    lambda1: float = 0.001
    lambda2: float = 1e-4
    lambda3: float = 0.01
    lambda4: float = 0.01
    use_social: bool = True
    use_interest: bool = True
    use_hypergraph: bool = True
    use_ui_reweight: bool = True
    use_gi_augment: bool = True
    use_ssl: bool = True
    mf_bpr_baseline: bool = False
    hgnn_activation: str = "relu"
    ssl_full_pool: bool = False
    ssl_temperature: float = 1.0
    standard_salton: bool = False
    init_std: float = 0.1

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if self.dim < 1:
            raise ValueError(f"dim must be >= 1, got {self.dim}")
        if self.layers < 0:
            raise ValueError(f"layers must be >= 0, got {self.layers}")
        for name in ("lambda1", "lambda2", "lambda3", "lambda4"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be nonnegative")
        if self.hgnn_activation not in ACTIVATIONS:
            raise ValueError(f"hgnn_activation must be one of {ACTIVATIONS}")
        if self.ssl_temperature <= 0:
            raise ValueError("ssl_temperature must be positive")
        if not self.mf_bpr_baseline and not (self.use_social or self.use_interest):
            raise ValueError("at least one of use_social / use_interest must be enabled")

    @property
    def ssl_active(self) -> bool:
        return self.use_ssl and not self.mf_bpr_baseline and (self.lambda3 > 0 or self.lambda4 > 0)

    @property
    def needs_social(self) -> bool:
        return not self.mf_bpr_baseline and (self.use_social or self.ssl_active)

    @property
    def needs_interest(self) -> bool:
        return not self.mf_bpr_baseline and (self.use_interest or self.ssl_active)

    def to_dict(self) -> dict:
        return asdict(self)


# ---------------------------------------------------------------------------
# graphs

@dataclass(frozen=True)
class GraphBundle:
    """Propagation operators prepared for one model configuration."""

    num_users: int
    num_groups: int
    num_items: int
    social: SparseMatrix | None = None
    social_kind: str | None = None        # "hypergraph" or "bipartite"
    user_item: SparseMatrix | None = None
    group_item: SparseMatrix | None = None
    lambda1: float = 0.0
    gi_augmented: bool = False

    def check(self, cfg: ModelConfig) -> None:
        if cfg.needs_social:
            want = "hypergraph" if cfg.use_hypergraph else "bipartite"
            if self.social is None or self.social_kind != want:
                raise ValueError(f"config needs a {want} social operator, bundle has {self.social_kind}")
        if cfg.needs_interest:
            if self.user_item is None or self.group_item is None:
                raise ValueError("config needs interest operators that the bundle lacks")
            lam = cfg.lambda1 if cfg.use_ui_reweight else 0.0
            if self.lambda1 != lam:
                raise ValueError(f"user-item operator built with lambda1={self.lambda1}, config wants {lam}")
            if self.gi_augmented != cfg.use_gi_augment:
                raise ValueError("group-item augmentation flag differs between bundle and config")


def build_graphs(ds: InteractionDataset, split: SplitAssignment | None, cfg: ModelConfig) -> GraphBundle:
    """Build exactly the operators ``cfg`` needs; memberships come from the train split."""
    kw = {}
    if cfg.needs_social:
        if cfg.use_hypergraph:
            kw["social"] = refine.build_social_hypergraph(ds, split).propagation_operator
            kw["social_kind"] = "hypergraph"
        else:
            kw["social"] = refine.build_user_group_bipartite(ds, split)
            kw["social_kind"] = "bipartite"
    if cfg.needs_interest:
        lam = cfg.lambda1 if cfg.use_ui_reweight else 0.0
        kw["user_item"] = refine.build_refined_ui_graph(ds, lam, cfg.standard_salton).bipartite_operator
        kw["group_item"] = refine.build_refined_gi_graph(ds, cfg.use_gi_augment).normalized_operator
        kw["lambda1"] = lam
        kw["gi_augmented"] = cfg.use_gi_augment
    return GraphBundle(ds.num_users, ds.num_groups, ds.num_items, **kw)


# ---------------------------------------------------------------------------
# parameters

@dataclass
class EmbeddingState:
    users: Value            # M x 2d
    groups: Value           # K x 2d
    items: Value            # N x d
    hgnn_weights: list[Value] = field(default_factory=list)   # one d x d per layer

    @property
    def dim(self) -> int:
        return self.items.shape[1]

    def parameters(self) -> list[Value]:
        return [self.users, self.groups, self.items, *self.hgnn_weights]

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.zero_grad()

    def copy(self) -> "EmbeddingState":
        return EmbeddingState(
            Value(self.users.data), Value(self.groups.data), Value(self.items.data),
            [Value(w.data) for w in self.hgnn_weights],
        )

    def equals(self, other: "EmbeddingState") -> bool:
        mine, theirs = self.parameters(), other.parameters()
        return len(mine) == len(theirs) and all(np.array_equal(a.data, b.data) for a, b in zip(mine, theirs))


def init_state(num_users: int, num_groups: int, num_items: int, cfg: ModelConfig,
               rng: np.random.Generator) -> EmbeddingState:
    """Normal(0, init_std) embeddings; HGNN weights uniform in +-sqrt(3/d)."""
    d = cfg.dim
    users = rng.normal(0.0, cfg.init_std, size=(num_users, 2 * d))
    groups = rng.normal(0.0, cfg.init_std, size=(num_groups, 2 * d))
    items = rng.normal(0.0, cfg.init_std, size=(num_items, d))
    bound = np.sqrt(3.0 / d)
    weights = [Value(rng.uniform(-bound, bound, size=(d, d))) for _ in range(cfg.layers)]
    return EmbeddingState(Value(users), Value(groups), Value(items), weights)


def save_checkpoint(state: EmbeddingState, path) -> None:
    """Text checkpoint: ``M K N d L`` header, then U, G, I and the HGNN weights, one row per line."""
    m, k, n = state.users.shape[0], state.groups.shape[0], state.items.shape[0]
    d, n_layers = state.dim, len(state.hgnn_weights)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"{m} {k} {n} {d} {n_layers}\n")
        for table in (state.users, state.groups, state.items, *state.hgnn_weights):
            for row in table.data.tolist():
                fh.write(" ".join(repr(x) for x in row))
                fh.write("\n")


def load_checkpoint(path) -> EmbeddingState:
    path = Path(path)
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().split()
        if len(header) != 5:
            raise ValueError(f"{path}: expected header 'M K N d L'")
        m, k, n, d, n_layers = (int(x) for x in header)
        rows = [line.split() for line in fh if line.strip()]
    expected = m + k + n + n_layers * d
    if len(rows) != expected:
        raise ValueError(f"{path}: expected {expected} rows, found {len(rows)}")

    def table(start, count, width):
        block = rows[start:start + count]
        if any(len(r) != width for r in block):
            raise ValueError(f"{path}: row width mismatch in block starting at row {start}")
        return Value(np.array([[float(x) for x in r] for r in block], dtype=np.float64).reshape(count, width))

    users = table(0, m, 2 * d)
    groups = table(m, k, 2 * d)
    items = table(m + k, n, d)
    base = m + k + n
    weights = [table(base + l * d, d, d) for l in range(n_layers)]
    return EmbeddingState(users, groups, items, weights)


# ---------------------------------------------------------------------------
# propagation

def extract_layer(table: Value, d: int) -> tuple[Value, Value]:
    """Split ``2d`` columns into (social, interest) halves."""
    if table.shape[1] != 2 * d:
        raise ShapeError(f"extract_layer: expected {2 * d} columns, got {table.shape[1]}")
    return slice_cols(table, 0, d), slice_cols(table, d, 2 * d)


def hgnn_forward(operator: SparseMatrix, users_social: Value, groups_social: Value,
                 weights: list[Value], activation: str = "relu") -> tuple[Value, Value]:
    """``X <- act(P X W_l)`` for each layer; returns the last layer split into users and groups."""
    m, k = users_social.shape[0], groups_social.shape[0]
    if operator.shape != (m + k, m + k):
        raise ShapeError(f"hgnn_forward: operator {operator.shape} vs {m}+{k} nodes")
    x = stack_rows(users_social, groups_social)
    for w in weights:
        x = matmul(spmm(operator, x), w)
        if activation == "relu":
            x = relu(x)
    return take_rows(x, np.arange(m)), take_rows(x, np.arange(m, m + k))


def lightgcn_forward(operator: SparseMatrix, e0: Value, layers: int) -> Value:
    """Mean of ``E_0 .. E_L`` with ``E_{l+1} = A E_l``."""
    if operator.shape != (e0.shape[0], e0.shape[0]):
        raise ShapeError(f"lightgcn_forward: operator {operator.shape} vs embeddings {e0.shape}")
    if layers == 0:
        return e0
    acc, cur = e0, e0
    for _ in range(layers):
        cur = spmm(operator, cur)
        acc = add(acc, cur)
    return scale(acc, 1.0 / (layers + 1))


@dataclass
class ForwardOutput:
    users: Value
    groups: Value
    users_social: Value | None = None
    users_interest: Value | None = None
    groups_social: Value | None = None
    groups_interest: Value | None = None
    # parameter blocks that took part in this pass, for the L2 penalty
    penalized: list[Value] = field(default_factory=list)

    def score_matrix(self) -> np.ndarray:
        return self.users.data @ self.groups.data.T


def _split_rows(x: Value, first: int) -> tuple[Value, Value]:
    n = x.shape[0]
    return take_rows(x, np.arange(first)), take_rows(x, np.arange(first, n))


def forward(state: EmbeddingState, graphs: GraphBundle, cfg: ModelConfig) -> ForwardOutput:
    m, k = state.users.shape[0], state.groups.shape[0]
    if (m, k, state.items.shape[0]) != (graphs.num_users, graphs.num_groups, graphs.num_items):
        raise ShapeError("embedding tables do not match the graph bundle's entity counts")
    if cfg.mf_bpr_baseline:
        return ForwardOutput(state.users, state.groups, penalized=[state.users, state.groups])
    graphs.check(cfg)

    d = cfg.dim
    if state.dim != d:
        raise ShapeError(f"state dimension {state.dim} differs from config dim {d}")
    u_s, u_i = extract_layer(state.users, d)
    g_s, g_i = extract_layer(state.groups, d)
    out = ForwardOutput(state.users, state.groups)

    if cfg.needs_social:
        out.penalized += [u_s, g_s]
        if cfg.use_hypergraph:
            weights = state.hgnn_weights[:cfg.layers]
            if len(weights) != cfg.layers:
                raise ShapeError(f"need {cfg.layers} HGNN weights, state has {len(state.hgnn_weights)}")
            out.users_social, out.groups_social = hgnn_forward(
                graphs.social, u_s, g_s, weights, cfg.hgnn_activation
            )
            out.penalized += weights
        else:
            prop = lightgcn_forward(graphs.social, stack_rows(u_s, g_s), cfg.layers)
            out.users_social, out.groups_social = _split_rows(prop, m)

    if cfg.needs_interest:
        out.penalized += [u_i, g_i, state.items]
        user_side = lightgcn_forward(graphs.user_item, stack_rows(u_i, state.items), cfg.layers)
        out.users_interest = take_rows(user_side, np.arange(m))
        group_side = lightgcn_forward(graphs.group_item, stack_rows(g_i, state.items), cfg.layers)
        out.groups_interest = take_rows(group_side, np.arange(k))

    if cfg.use_social and cfg.use_interest:
        out.users = concat_cols(out.users_social, out.users_interest)
        out.groups = concat_cols(out.groups_social, out.groups_interest)
    elif cfg.use_social:
        out.users, out.groups = out.users_social, out.groups_social
    else:
        out.users, out.groups = out.users_interest, out.groups_interest
    return out


def score(out: ForwardOutput, user: int, group: int) -> float:
    m, k = out.users.shape[0], out.groups.shape[0]
    if not (0 <= user < m and 0 <= group < k):
        raise ValueError(f"(user, group) = ({user}, {group}) outside [0, {m}) x [0, {k})")
    return float(out.users.data[user] @ out.groups.data[group])


class DiRec:
    """A configuration, its prepared graphs and trainable state."""

    def __init__(self, cfg: ModelConfig, state: EmbeddingState, graphs: GraphBundle):
        self.cfg = cfg
        self.state = state
        self.graphs = graphs

    @classmethod
    def create(cls, ds: InteractionDataset, split: SplitAssignment | None, cfg: ModelConfig,
               rng: np.random.Generator) -> "DiRec":
        state = init_state(ds.num_users, ds.num_groups, ds.num_items, cfg, rng)
        return cls(cfg, state, build_graphs(ds, split, cfg))

    def forward(self) -> ForwardOutput:
        return forward(self.state, self.graphs, self.cfg)

    def score_matrix(self) -> np.ndarray:
        return self.forward().score_matrix()


def config_from_dict(values: dict) -> ModelConfig:
    known = {f.name for f in fields(ModelConfig)}
    unknown = set(values) - known
    if unknown:
        raise ValueError(f"unknown model keys: {sorted(unknown)}")
    return ModelConfig(**values)

