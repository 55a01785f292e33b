"""Multi-seed runs, ablation table, perturbation study and one-factor sweeps."""

from __future__ import annotations

import csv
import dataclasses
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .dataset import InteractionDataset, SplitAssignment
from .evaluation import RankingMetrics, evaluate, perturb_ui
from .model import ModelConfig
from .trainer import TrainConfig, fit, rng_stream

log = logging.getLogger(__name__)

VARIANTS = {
    "Full": {},
    "Social-": {"use_interest": False},
    "Interest-": {"use_social": False},
    "w/o HG": {"use_hypergraph": False},
    "w/o UI Re.": {"use_ui_reweight": False},
    "w/o GI Aug.": {"use_gi_augment": False},
    "w/o SSL": {"use_ssl": False},
    "MF-BPR": {"mf_bpr_baseline": True},
}

SSL_GRID = (0.0, 0.0001, 0.001, 0.01, 0.1, 1.0)
SWEEP_GRIDS = {
    "lambda1": (0.0, 0.001, 0.01, 0.1),
    "layers": (1, 2, 3),
    "dim": (32, 64, 128),
    "lambda3": SSL_GRID,
    "lambda4": SSL_GRID,
}
PERTURB_LEVELS = (0.0, 0.1, 0.2, 0.3)
METRIC_KEYS = ("recall@5", "recall@10", "recall@20", "ndcg@5", "ndcg@10", "ndcg@20")


def variant_config(base: ModelConfig, name: str) -> ModelConfig:
    if name not in VARIANTS:
        raise ValueError(f"unknown variant {name!r}; choose from {list(VARIANTS)}")
    return dataclasses.replace(base, **VARIANTS[name])


@dataclass
class RunResult:
    variant: str
    seed: int
    test: RankingMetrics
    valid_recall: float
    best_epoch: int
    extra: dict = field(default_factory=dict)

    def row(self) -> dict:
        out = {"variant": self.variant, "seed": self.seed, **self.extra}
        out.update(self.test.as_dict())
        out["valid_recall@10"] = self.valid_recall
        out["best_epoch"] = self.best_epoch
        return out


def run_once(ds: InteractionDataset, split: SplitAssignment, cfg: ModelConfig, tcfg: TrainConfig,
             seed: int, variant: str = "Full", extra: dict | None = None, log_path=None) -> RunResult:
    tcfg = dataclasses.replace(tcfg, seed=seed)
    result = fit(ds, split, cfg, tcfg, log_path=log_path)
    metrics = evaluate(result.model, ds, split, "test")
    log.info("%s seed=%d %s ndcg@10=%.4f", variant, seed, extra or "", metrics.ndcg[10])
    return RunResult(variant, seed, metrics, result.best_valid_recall, result.best_epoch, dict(extra or {}))


def summarize(results: list[RunResult]) -> dict:
    """Mean and population standard deviation of each test metric."""
    out = {"runs": len(results)}
    for key in METRIC_KEYS:
        vals = np.array([r.test.as_dict()[key] for r in results])
        out[key] = {"mean": float(vals.mean()), "std": float(vals.std())}
    return out


def grid_search_ssl(ds: InteractionDataset, split: SplitAssignment, base: ModelConfig, tcfg: TrainConfig,
                    grid=SSL_GRID, seed: int = 0) -> tuple[float, float, list[dict]]:
    """Pick (lambda3, lambda4) by validation Recall@10 on one seed."""
    rows = []
    best = (-math.inf, base.lambda3, base.lambda4)
    for l3 in grid:
        for l4 in grid:
            cfg = dataclasses.replace(base, lambda3=l3, lambda4=l4)
            res = fit(ds, split, cfg, dataclasses.replace(tcfg, seed=seed))
            rows.append({"lambda3": l3, "lambda4": l4, "valid_recall@10": res.best_valid_recall})
            if res.best_valid_recall > best[0]:
                best = (res.best_valid_recall, l3, l4)
    return best[1], best[2], rows


def run_ablation_suite(ds: InteractionDataset, split: SplitAssignment, base: ModelConfig, tcfg: TrainConfig,
                       seeds=(0, 1, 2, 3, 4), variants=tuple(VARIANTS)) -> list[RunResult]:
    results = []
    for name in variants:
        cfg = variant_config(base, name)
        for seed in seeds:
            results.append(run_once(ds, split, cfg, tcfg, seed, name))
    return results


def run_perturbation(ds: InteractionDataset, split: SplitAssignment, base: ModelConfig, tcfg: TrainConfig,
                     levels=PERTURB_LEVELS, seeds=(0, 1, 2, 3, 4),
                     variants=("Full", "w/o UI Re.")) -> list[RunResult]:
    """Full model against the unweighted variant on noisier user-item relations.

    Both variants see the same perturbed relation for a given (level, seed).
    """
    results = []
    for level in levels:
        for seed in seeds:
            noisy = perturb_ui(ds, level, rng_stream(seed, f"perturbation:{level!r}"))
            for name in variants:
                cfg = variant_config(base, name)
                results.append(run_once(noisy, split, cfg, tcfg, seed, name, {"level": level}))
    return results


def run_sweep(ds: InteractionDataset, split: SplitAssignment, base: ModelConfig, tcfg: TrainConfig,
              factor: str, grid=None, seeds=(0, 1, 2, 3, 4)) -> list[RunResult]:
    """Vary one hyperparameter with all others held at ``base``."""
    if factor not in SWEEP_GRIDS:
        raise ValueError(f"unknown sweep factor {factor!r}; choose from {list(SWEEP_GRIDS)}")
    grid = SWEEP_GRIDS[factor] if grid is None else grid
    results = []
    for value in grid:
        cfg = dataclasses.replace(base, **{factor: value})
        for seed in seeds:
            results.append(run_once(ds, split, cfg, tcfg, seed, "Full", {"factor": factor, "value": value}))
    return results


def best_grid_value(results: list[RunResult], factor: str):
    """Grid value with the highest mean validation Recall@10."""
    by_value = {}
    for r in results:
        if r.extra.get("factor") == factor:
            by_value.setdefault(r.extra["value"], []).append(r.valid_recall)
    return max(by_value, key=lambda v: (np.mean(by_value[v]), -list(by_value).index(v)))


def mean_by(results: list[RunResult], key: str = "ndcg@10", group=("variant",)) -> dict:
    buckets = {}
    for r in results:
        row = r.row()
        buckets.setdefault(tuple(row[g] for g in group), []).append(row[key])
    return {k if len(k) > 1 else k[0]: float(np.mean(v)) for k, v in buckets.items()}


def write_csv(results: list[RunResult], path, marks: dict | None = None) -> None:
    rows = [r.row() for r in results]
    if marks:
        for row in rows:
            row.update({name: int(pred(row)) for name, pred in marks.items()})
    columns = []
    for row in rows:
        columns.extend(c for c in row if c not in columns)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=columns)
        writer.writeheader()
        writer.writerows(rows)


def format_table(results: list[RunResult], group=("variant",), keys=("recall@10", "ndcg@10", "ndcg@20")) -> str:
    lines = [" | ".join([*group, *keys])]
    means = {k: mean_by(results, k, group) for k in keys}
    for name in means[keys[0]]:
        label = name if isinstance(name, tuple) else (name,)
        lines.append(" | ".join([*map(str, label), *(f"{means[k][name]:.4f}" for k in keys)]))
    return "\n".join(lines)
