"""Full-candidate ranking evaluation and user-item perturbation."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .dataset import InteractionDataset, SplitAssignment

CUTOFFS = (5, 10, 20)


@dataclass(frozen=True)
class RankingMetrics:
    recall: dict
    ndcg: dict
    evaluated_users: int

    def as_dict(self) -> dict:
        out = {f"recall@{k}": self.recall[k] for k in sorted(self.recall)}
        out.update({f"ndcg@{k}": self.ndcg[k] for k in sorted(self.ndcg)})
        out["evaluated_users"] = self.evaluated_users
        return out


class SplitIndex:
    """Per-user membership sets for each split label."""

    def __init__(self, ds: InteractionDataset, split: SplitAssignment):
        self.num_groups = ds.num_groups
        self.sets = {}
        for name in ("train", "valid", "test"):
            per_user = [set() for _ in range(ds.num_users)]
            for u, g in ds.user_group[getattr(split, name)].tolist():
                per_user[u].add(g)
            self.sets[name] = per_user

    def targets(self, user: int, which: str) -> set:
        return self.sets[which][user]

    def excluded(self, user: int, which: str) -> set:
        if which == "test":
            return self.sets["train"][user] | self.sets["valid"][user]
        if which == "valid":
            return set(self.sets["train"][user])
        raise ValueError(f"which must be 'valid' or 'test', got {which!r}")


def candidate_set(ds: InteractionDataset, split: SplitAssignment, user: int, which: str = "test",
                  index: SplitIndex | None = None) -> list[int]:
    """Every group except the user's known positives for ``which``."""
    index = index or SplitIndex(ds, split)
    excluded = index.excluded(user, which)
    return [g for g in range(ds.num_groups) if g not in excluded]


def _check(targets, k: int) -> None:
    if k < 1:
        raise ValueError(f"cutoff must be >= 1, got {k}")
    if not targets:
        raise ValueError("metric needs a nonempty target set")


def recall_at_k(ranked, targets, k: int) -> float:
    targets = set(targets)
    _check(targets, k)
    hits = sum(1 for g in list(ranked)[:k] if g in targets)
    return hits / len(targets)


def ndcg_at_k(ranked, targets, k: int) -> float:
    targets = set(targets)
    _check(targets, k)
    dcg = sum(1.0 / math.log2(rank + 2) for rank, g in enumerate(list(ranked)[:k]) if g in targets)
    idcg = sum(1.0 / math.log2(rank + 2) for rank in range(min(len(targets), k)))
    return dcg / idcg


def rank_candidates(scores: np.ndarray, candidates) -> np.ndarray:
    """Candidates sorted by descending score, ties broken by ascending group id."""
    candidates = np.asarray(candidates, dtype=np.int64)
    order = np.lexsort((candidates, -scores[candidates]))
    return candidates[order]


def evaluate_scores(scores: np.ndarray, ds: InteractionDataset, split: SplitAssignment, which: str = "test",
                    cutoffs=CUTOFFS) -> RankingMetrics:
    """Mean Recall@k / NDCG@k over users with at least one ``which`` target."""
    if scores.shape != (ds.num_users, ds.num_groups):
        raise ValueError(f"score matrix {scores.shape} does not match ({ds.num_users}, {ds.num_groups})")
    index = SplitIndex(ds, split)
    kmax = max(cutoffs)
    recall = {k: 0.0 for k in cutoffs}
    ndcg = {k: 0.0 for k in cutoffs}
    evaluated = 0
    all_groups = np.arange(ds.num_groups)
    for user in range(ds.num_users):
        targets = index.targets(user, which)
        if not targets:
            continue
        mask = np.ones(ds.num_groups, dtype=bool)
        mask[list(index.excluded(user, which))] = False
        ranked = rank_candidates(scores[user], all_groups[mask])[:kmax].tolist()
        for k in cutoffs:
            recall[k] += recall_at_k(ranked, targets, k)
            ndcg[k] += ndcg_at_k(ranked, targets, k)
        evaluated += 1
    if evaluated:
        recall = {k: v / evaluated for k, v in recall.items()}
        ndcg = {k: v / evaluated for k, v in ndcg.items()}
    return RankingMetrics(recall, ndcg, evaluated)


def evaluate(model, ds: InteractionDataset, split: SplitAssignment, which: str = "test",
             cutoffs=CUTOFFS) -> RankingMetrics:
    """Score every user-group pair with one forward pass, then rank."""
    scores = model if isinstance(model, np.ndarray) else model.score_matrix()
    return evaluate_scores(scores, ds, split, which, cutoffs)


def perturb_ui(ds: InteractionDataset, level: float, rng: np.random.Generator) -> InteractionDataset:
    """Swap ``floor(level * |Y|)`` random user-item edges for random unobserved pairs.

    Replacement pairs are drawn uniformly from pairs absent from the original
    relation and from each other, so the edge count is unchanged.
    """
    if not 0.0 <= level <= 1.0:
        raise ValueError(f"perturbation level must lie in [0, 1], got {level}")
    edges = ds.user_item
    n_replace = math.floor(level * len(edges))
    if n_replace == 0:
        return ds
    m, n = ds.num_users, ds.num_items
    free = m * n - len(edges)
    if free < n_replace:
        raise ValueError("not enough unobserved user-item pairs to perturb")
    drop = rng.choice(len(edges), size=n_replace, replace=False)
    keep = np.ones(len(edges), dtype=bool)
    keep[drop] = False
    taken = set((edges[:, 0] * n + edges[:, 1]).tolist())
    fresh = []
    while len(fresh) < n_replace:
        code = int(rng.integers(m * n))
        if code in taken:
            continue
        taken.add(code)
        fresh.append((code // n, code % n))
    new_edges = np.concatenate([edges[keep], np.asarray(fresh, dtype=np.int64).reshape(-1, 2)])
    return ds.with_user_item(new_edges)
