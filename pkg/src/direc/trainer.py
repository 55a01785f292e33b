"""Negative sampling, optimizers and the training loop with early stopping."""

from __future__ import annotations

import json
import logging
import zlib
from dataclasses import asdict, dataclass, field

import numpy as np

from .dataset import InteractionDataset, SplitAssignment
from .evaluation import evaluate
from .loss import LossBreakdown, joint_objective
from .model import DiRec, EmbeddingState, GraphBundle, ModelConfig, build_graphs, init_state
from .tensorops import NumericError, Value, backward

log = logging.getLogger(__name__)


class SamplingError(RuntimeError):
    pass


class TrainingError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    learning_rate: float = 0.001
    batch_size: int = 256
    max_epochs: int = 300
    patience: int = 10
    eval_every: int = 5
    optimizer: str = "adam"
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    seed: int = 0

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        # a zero learning rate is allowed so a null step can be checked
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be >= 0")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.patience < 1:
            raise ValueError("patience must be >= 1")
        if self.eval_every < 1:
            raise ValueError("eval_every must be >= 1")
        if self.max_epochs < 0:
            raise ValueError("max_epochs must be >= 0")
        if self.optimizer not in ("adam", "sgd"):
            raise ValueError("optimizer must be 'adam' or 'sgd'")

    def to_dict(self) -> dict:
        return asdict(self)


def rng_stream(seed: int, name: str) -> np.random.Generator:
    """Independent generator for a named purpose derived from the root seed."""
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(zlib.crc32(name.encode()),)))


# ---------------------------------------------------------------------------
# optimizers

class SGD:
    def __init__(self, params: list[Value], lr: float):
        self.params = params
        self.lr = lr
        self.t = 0

    def step(self) -> None:
        self.t += 1
        for p in self.params:
            if p.grad is not None:
                p.data -= self.lr * p.grad


class Adam:
    def __init__(self, params: list[Value], lr: float = 0.001, beta1: float = 0.9,
                 beta2: float = 0.999, epsilon: float = 1e-8):
        self.params = params
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.epsilon = epsilon
        self.m = [np.zeros_like(p.data) for p in params]
        self.v = [np.zeros_like(p.data) for p in params]
        self.t = 0

    def step(self) -> None:
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for p, m, v in zip(self.params, self.m, self.v):
            g = p.grad
            if g is None:
                continue
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            p.data -= self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.epsilon)


def make_optimizer(params: list[Value], tcfg: TrainConfig):
    if tcfg.optimizer == "sgd":
        return SGD(params, tcfg.learning_rate)
    return Adam(params, tcfg.learning_rate, tcfg.beta1, tcfg.beta2, tcfg.epsilon)


# ---------------------------------------------------------------------------
# sampling

def positive_mask(ds: InteractionDataset) -> np.ndarray:
    """M x K membership indicator over all splits."""
    mask = np.zeros((ds.num_users, ds.num_groups), dtype=bool)
    mask[ds.user_group[:, 0], ds.user_group[:, 1]] = True
    return mask


def _draw_negatives(mask: np.ndarray, users: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    if len(users) == 0:
        return np.zeros(0, dtype=np.int64)
    full = mask[users].all(axis=1)
    if full.any():
        raise SamplingError(f"user {int(users[np.flatnonzero(full)[0]])} belongs to every group")
    k = mask.shape[1]
    negs = rng.integers(k, size=len(users))
    bad = np.flatnonzero(mask[users, negs])
    while len(bad):
        negs[bad] = rng.integers(k, size=len(bad))
        bad = bad[mask[users[bad], negs[bad]]]
    return negs


def sample_negatives(ds: InteractionDataset, split: SplitAssignment | None, user: int, count: int,
                     rng: np.random.Generator, mask: np.ndarray | None = None) -> list[int]:
    """``count`` groups drawn uniformly from those the user never joined (in any split)."""
    if mask is None:
        mask = positive_mask(ds)
    return _draw_negatives(mask, np.full(count, user, dtype=np.int64), rng).tolist()


def epoch_triples(ds: InteractionDataset, split: SplitAssignment, rng: np.random.Generator,
                  mask: np.ndarray | None = None) -> np.ndarray:
    """Shuffled (user, pos, neg) rows, one fresh negative per training membership."""
    if mask is None:
        mask = positive_mask(ds)
    train = ds.user_group[split.train]
    train = train[rng.permutation(len(train))]
    negs = _draw_negatives(mask, train[:, 0], rng)
    return np.column_stack([train, negs])


# ---------------------------------------------------------------------------
# loop

def _mean_breakdown(parts: list[LossBreakdown], weights: list[int]) -> LossBreakdown:
    w = np.asarray(weights, dtype=np.float64) / sum(weights)
    fields_ = ("bpr", "reg", "ssl_user", "ssl_group", "total")
    return LossBreakdown(*(float(np.dot(w, [getattr(p, f) for p in parts])) for f in fields_))


def train_epoch(model: DiRec, ds: InteractionDataset, split: SplitAssignment, tcfg: TrainConfig,
                rng: np.random.Generator, optimizer, mask: np.ndarray | None = None) -> LossBreakdown:
    """One pass over the shuffled training memberships; returns batch-size-weighted mean losses."""
    triples = epoch_triples(ds, split, rng, mask)
    if len(triples) == 0:
        raise TrainingError("no training memberships")
    parts, sizes = [], []
    for start in range(0, len(triples), tcfg.batch_size):
        batch = triples[start:start + tcfg.batch_size]
        model.state.zero_grad()
        try:
            out = model.forward()
            total, breakdown = joint_objective(out, batch, model.cfg)
        except NumericError as exc:
            raise TrainingError(f"non-finite loss in batch starting at {start}: {exc}") from exc
        backward(total)
        optimizer.step()
        parts.append(breakdown)
        sizes.append(len(batch))
    model.state.zero_grad()
    return _mean_breakdown(parts, sizes)


@dataclass
class FitResult:
    model: DiRec                     # carries the best-validation state
    best_epoch: int
    best_valid_recall: float
    stopped_epoch: int
    log: list = field(default_factory=list)


def fit(ds: InteractionDataset, split: SplitAssignment, cfg: ModelConfig, tcfg: TrainConfig,
        graphs: GraphBundle | None = None, log_path=None, eval_metric: int = 10) -> FitResult:
    """Train with periodic validation, keeping the best checkpoint and stopping on patience."""
    state = init_state(ds.num_users, ds.num_groups, ds.num_items, cfg, rng_stream(tcfg.seed, "init"))
    model = DiRec(cfg, state, graphs if graphs is not None else build_graphs(ds, split, cfg))
    sampler = rng_stream(tcfg.seed, "sampling")
    optimizer = make_optimizer(state.parameters(), tcfg)
    mask = positive_mask(ds)

    best_state: EmbeddingState = state.copy()
    best_recall, best_epoch, stale, epoch = -1.0, 0, 0, 0
    records = []
    fh = open(log_path, "w", encoding="utf-8") if log_path is not None else None
    try:
        for epoch in range(1, tcfg.max_epochs + 1):
            report = train_epoch(model, ds, split, tcfg, sampler, optimizer, mask)
            record = {"epoch": epoch, **report.as_dict()}
            stop = False
            if epoch % tcfg.eval_every == 0 or epoch == tcfg.max_epochs:
                recall = evaluate(model, ds, split, "valid").recall[eval_metric]
                record[f"recall@{eval_metric}_valid"] = recall
                if recall > best_recall:
                    best_recall, best_epoch, stale = recall, epoch, 0
                    best_state = state.copy()
                else:
                    stale += 1
                    stop = stale >= tcfg.patience
                log.debug("epoch %d total %.4f valid recall@%d %.4f", epoch, report.total, eval_metric, recall)
            records.append(record)
            if fh is not None:
                fh.write(json.dumps(record) + "\n")
            if stop:
                break
    finally:
        if fh is not None:
            fh.close()
    return FitResult(DiRec(cfg, best_state, model.graphs), best_epoch, best_recall, epoch, records)
