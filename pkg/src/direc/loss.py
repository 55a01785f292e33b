"""BPR ranking loss, intent-alignment InfoNCE terms and the joint objective."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np

from .model import ForwardOutput, ModelConfig
from .tensorops import (
    NumericError,
    Value,
    add,
    l2_norm_sq,
    log_sigmoid,
    logsumexp_rows,
    matmul,
    rowwise_inner,
    scale,
    sum_all,
    take_rows,
)


class TrainingTriple(NamedTuple):
    user: int
    pos_group: int
    neg_group: int


@dataclass(frozen=True)
class LossBreakdown:
    bpr: float
    reg: float
    ssl_user: float
    ssl_group: float
    total: float

    def as_dict(self) -> dict:
        return {"bpr": self.bpr, "reg": self.reg, "ssl_user": self.ssl_user,
                "ssl_group": self.ssl_group, "total": self.total}


def as_triples(batch) -> np.ndarray:
    arr = np.asarray(batch, dtype=np.int64)
    if arr.ndim != 2 or arr.shape[1] != 3 or len(arr) == 0:
        raise ValueError("batch must be a nonempty sequence of (user, pos_group, neg_group)")
    return arr


def ranking_term(out: ForwardOutput, batch) -> Value:
    """Sum over the batch of ``-log sigmoid(s_pos - s_neg)``."""
    triples = as_triples(batch)
    users = take_rows(out.users, triples[:, 0])
    pos = take_rows(out.groups, triples[:, 1])
    neg = take_rows(out.groups, triples[:, 2])
    margin = add(rowwise_inner(users, pos), scale(rowwise_inner(users, neg), -1.0))
    return scale(sum_all(log_sigmoid(margin)), -1.0)


def l2_penalty(params: Sequence[Value], lambda2: float, batch_size: int) -> Value | None:
    """``lambda2 * sum ||p||^2 / batch_size``; None when there is nothing to penalize."""
    if lambda2 == 0 or not params:
        return None
    total = l2_norm_sq(params[0])
    for p in params[1:]:
        total = add(total, l2_norm_sq(p))
    return scale(total, lambda2 / batch_size)


def bpr_loss(out: ForwardOutput, batch, params: Sequence[Value] = (), lambda2: float = 0.0) -> Value:
    rank = ranking_term(out, batch)
    reg = l2_penalty(params, lambda2, len(as_triples(batch)))
    return rank if reg is None else add(rank, reg)


def _directional_nce(anchor: Value, other: Value, temperature: float) -> Value:
    # sum_j [ logsumexp_k sim(a_j, o_k) - sim(a_j, o_j) ]
    sims = matmul(anchor, other, transpose_b=True)
    positives = rowwise_inner(anchor, other)
    if temperature != 1.0:
        sims = scale(sims, 1.0 / temperature)
        positives = scale(positives, 1.0 / temperature)
    return add(sum_all(logsumexp_rows(sims)), scale(sum_all(positives), -1.0))


def infonce(social: Value, interest: Value, anchors, temperature: float = 1.0) -> Value:
    """Both alignment directions between two views, negatives drawn from ``anchors``."""
    if social.shape != interest.shape:
        raise ValueError(f"views differ in shape: {social.shape} vs {interest.shape}")
    anchors = np.asarray(anchors, dtype=np.int64)
    if anchors.size == 0:
        raise ValueError("InfoNCE needs at least one anchor")
    if anchors.min() < 0 or anchors.max() >= social.shape[0]:
        raise ValueError("anchor id out of range")
    a = take_rows(social, anchors)
    b = take_rows(interest, anchors)
    return add(_directional_nce(a, b, temperature), _directional_nce(b, a, temperature))


def infonce_user(users_social: Value, users_interest: Value, anchors, temperature: float = 1.0) -> Value:
    return infonce(users_social, users_interest, anchors, temperature)


def infonce_group(groups_social: Value, groups_interest: Value, anchors, temperature: float = 1.0) -> Value:
    return infonce(groups_social, groups_interest, anchors, temperature)


def total_loss(bpr: float, reg: float, ssl_user: float, ssl_group: float,
               lambda3: float, lambda4: float) -> LossBreakdown:
    parts = {"bpr": bpr, "reg": reg, "ssl_user": ssl_user, "ssl_group": ssl_group}
    for name, v in parts.items():
        if not math.isfinite(v):
            raise NumericError(f"loss component {name} is not finite ({v})")
    total = bpr + reg + lambda3 * ssl_user + lambda4 * ssl_group
    return LossBreakdown(bpr, reg, ssl_user, ssl_group, total)


def joint_objective(out: ForwardOutput, batch, cfg: ModelConfig) -> tuple[Value, LossBreakdown]:
    """Differentiable joint loss for one batch plus its float breakdown.

    With ``cfg.ssl_full_pool`` every user (group) is an anchor; otherwise the
    anchors are the users (groups) appearing in the batch.
    """
    triples = as_triples(batch)
    rank = ranking_term(out, triples)
    reg = l2_penalty(out.penalized, cfg.lambda2, len(triples))
    total = rank if reg is None else add(rank, reg)

    ssl_u = ssl_g = None
    if cfg.ssl_active:
        if cfg.ssl_full_pool:
            user_anchors = np.arange(out.users_social.shape[0])
            group_anchors = np.arange(out.groups_social.shape[0])
        else:
            user_anchors = np.unique(triples[:, 0])
            group_anchors = np.unique(triples[:, 1:])
        if cfg.lambda3 > 0:
            ssl_u = infonce_user(out.users_social, out.users_interest, user_anchors, cfg.ssl_temperature)
            total = add(total, scale(ssl_u, cfg.lambda3))
        if cfg.lambda4 > 0:
            ssl_g = infonce_group(out.groups_social, out.groups_interest, group_anchors, cfg.ssl_temperature)
            total = add(total, scale(ssl_g, cfg.lambda4))

    breakdown = total_loss(
        rank.item(),
        0.0 if reg is None else reg.item(),
        0.0 if ssl_u is None else ssl_u.item(),
        0.0 if ssl_g is None else ssl_g.item(),
        cfg.lambda3 if ssl_u is not None else 0.0,
        cfg.lambda4 if ssl_g is not None else 0.0,
    )
    return total, breakdown
