"""Command-line entry point.

    direc preprocess --dataset-dir data/Mafengwo --output-dir runs/mfw
    direc train      --output-dir runs/mfw --run.seeds 0,1,2,3,4
    direc evaluate   --output-dir runs/mfw
    direc ablate     --output-dir runs/mfw
    direc perturb    --output-dir runs/mfw
    direc sweep      --output-dir runs/mfw --run.sweep_factor lambda1

Every config key is accepted as ``--section.key VALUE``.  Settings resolve as
flag > ``--config`` file > ``config.txt`` saved by preprocess > default.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path

from . import experiments
from .config import ConfigError, RunConfig, build_config, parse_config_file, valid_keys, write_config
from .dataset import (
    DatasetError,
    dataset_stats,
    load_dataset,
    read_split,
    remap_raw_dataset,
    split_dataset,
    write_split,
)
from .evaluation import evaluate
from .model import DiRec, build_graphs, load_checkpoint, save_checkpoint
from .refine import build_refined_gi_graph, build_refined_ui_graph, build_social_hypergraph
from .tensorops import write_sparse
from .trainer import TrainingError, fit

log = logging.getLogger("direc")

COMMANDS = ("preprocess", "train", "evaluate", "ablate", "perturb", "sweep")
PREPROCESS_OUTPUTS = ("split.txt", "stats.json", "hypergraph.txt", "ui_operator.txt", "gi_operator.txt")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        if "unrecognized arguments" in message:
            message += "\nvalid config flags: " + " ".join(f"--{k}" for k in valid_keys())
        super().error(message)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="direc", description="Dual-intent group discovery experiments.")
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("--config", help="flat 'section.key = value' config file")
    p.add_argument("--seed", type=int, help="root seed (sets train.seed and run.seeds)")
    p.add_argument("--output-dir", help="where all artifacts are written")
    p.add_argument("--dataset-dir", help="directory with user_group.txt, user_item.txt, group_item.txt")
    p.add_argument("--force", action="store_true", help="overwrite existing preprocess outputs")
    p.add_argument("-v", "--verbose", action="store_true")
    for key in valid_keys():
        p.add_argument(f"--{key}", dest=key, default=argparse.SUPPRESS, metavar="VALUE")
    return p


def resolve_config(args: argparse.Namespace) -> RunConfig:
    flags = {k: v for k, v in vars(args).items() if "." in k}
    if args.seed is not None:
        flags["train.seed"] = str(args.seed)
        flags.setdefault("run.seeds", str(args.seed))
    if args.output_dir is not None:
        flags["run.output_dir"] = args.output_dir
    if args.dataset_dir is not None:
        flags["run.dataset_dir"] = args.dataset_dir
    file_layer = parse_config_file(args.config) if args.config else {}

    out_dir = flags.get("run.output_dir", file_layer.get("run.output_dir", "runs"))
    saved = Path(out_dir) / "config.txt"
    base = {}
    if args.command != "preprocess" and saved.is_file():
        base = {k: v for k, v in parse_config_file(saved).items() if k.startswith("run.dataset_dir")
                or k == "run.split_seed"}
    return build_config(base, file_layer, flags)


# ---------------------------------------------------------------------------
# helpers

def _write_json(obj, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _load_inputs(cfg: RunConfig):
    if not cfg.run.dataset_dir:
        raise UsageError("no dataset directory: pass --dataset-dir or run preprocess first")
    ds = load_dataset(cfg.run.dataset_dir)
    out = Path(cfg.run.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    split_path = out / "split.txt"
    if split_path.is_file():
        split = read_split(split_path, len(ds.user_group))
    else:
        split = split_dataset(ds, cfg.run.split_seed)
        write_split(split, split_path)
    return ds, split, out


def _seed_dir(out: Path, seed: int) -> Path:
    d = out / f"seed_{seed}"
    d.mkdir(parents=True, exist_ok=True)
    return d


# ---------------------------------------------------------------------------
# commands

def cmd_preprocess(cfg: RunConfig, force: bool = False) -> int:
    out = Path(cfg.run.output_dir)
    existing = [name for name in (*PREPROCESS_OUTPUTS, "config.txt") if (out / name).exists()]
    if existing and not force:
        raise UsageError(f"refusing to overwrite {', '.join(existing)} in {out}; pass --force")
    out.mkdir(parents=True, exist_ok=True)
    if cfg.run.remap_ids:
        remap_raw_dataset(cfg.run.dataset_dir, out / "data")
        cfg = dataclasses.replace(cfg, run=dataclasses.replace(cfg.run, dataset_dir=str(out / "data"),
                                                               remap_ids=False))
    ds = load_dataset(cfg.run.dataset_dir)
    stats = dataset_stats(ds)
    _write_json(stats, out / "stats.json")
    split = split_dataset(ds, cfg.run.split_seed)
    write_split(split, out / "split.txt")

    m = cfg.model
    write_sparse(build_social_hypergraph(ds, split).propagation_operator, out / "hypergraph.txt")
    lam = m.lambda1 if m.use_ui_reweight else 0.0
    write_sparse(build_refined_ui_graph(ds, lam, m.standard_salton).bipartite_operator, out / "ui_operator.txt")
    write_sparse(build_refined_gi_graph(ds, m.use_gi_augment).normalized_operator, out / "gi_operator.txt")
    saved = dataclasses.replace(cfg, run=dataclasses.replace(cfg.run, dataset_dir=str(Path(cfg.run.dataset_dir).resolve())))
    write_config(saved, out / "config.txt")
    print(json.dumps(stats, indent=2))
    print(f"split: train={len(split.train)} valid={len(split.valid)} test={len(split.test)}")
    return 0


def cmd_train(cfg: RunConfig) -> int:
    ds, split, out = _load_inputs(cfg)
    model_cfg = cfg.model
    if cfg.run.ssl_grid_search:
        l3, l4, rows = experiments.grid_search_ssl(ds, split, model_cfg, cfg.train, seed=cfg.seeds()[0])
        model_cfg = dataclasses.replace(model_cfg, lambda3=l3, lambda4=l4)
        with open(out / "ssl_grid.csv", "w", encoding="utf-8") as fh:
            fh.write("lambda3,lambda4,valid_recall@10\n")
            fh.writelines(f"{r['lambda3']},{r['lambda4']},{r['valid_recall@10']!r}\n" for r in rows)
        print(f"selected lambda3={l3} lambda4={l4}")
    model_cfg = experiments.variant_config(model_cfg, cfg.run.variant)
    graphs = build_graphs(ds, split, model_cfg)
    for seed in cfg.seeds():
        d = _seed_dir(out, seed)
        tcfg = dataclasses.replace(cfg.train, seed=seed)
        result = fit(ds, split, model_cfg, tcfg, graphs=graphs, log_path=d / "train_log.jsonl")
        save_checkpoint(result.model.state, d / "checkpoint.txt")
        write_config(RunConfig(cfg.run, model_cfg, tcfg), d / "config.txt")
        print(f"seed {seed}: best epoch {result.best_epoch}, valid recall@10 {result.best_valid_recall:.4f}")
    return 0


def cmd_evaluate(cfg: RunConfig) -> int:
    ds, split, out = _load_inputs(cfg)
    if cfg.run.seeds:
        seeds = cfg.seeds()
    else:
        seeds = sorted(int(p.name.split("_", 1)[1]) for p in out.glob("seed_*") if (p / "checkpoint.txt").is_file())
    if not seeds:
        raise UsageError(f"no checkpoints under {out}; run train first")
    results = []
    for seed in seeds:
        d = out / f"seed_{seed}"
        saved = build_config(parse_config_file(d / "config.txt"))
        state = load_checkpoint(d / "checkpoint.txt")
        model = DiRec(saved.model, state, build_graphs(ds, split, saved.model))
        metrics = evaluate(model, ds, split, cfg.run.split)
        record = {"variant": saved.run.variant, "seed": seed, "split": cfg.run.split, **metrics.as_dict()}
        _write_json(record, d / "metrics.json")
        results.append(experiments.RunResult(saved.run.variant, seed, metrics, float("nan"), 0))
        print(f"seed {seed}: " + " ".join(f"{k}={v:.4f}" for k, v in metrics.as_dict().items() if "@" in k))
    summary = experiments.summarize(results)
    _write_json(summary, out / "summary.json")
    print("mean: " + " ".join(f"{k}={summary[k]['mean']:.4f}" for k in experiments.METRIC_KEYS))
    return 0


def cmd_ablate(cfg: RunConfig) -> int:
    ds, split, out = _load_inputs(cfg)
    variants = tuple(cfg.run.variants) or tuple(experiments.VARIANTS)
    results = experiments.run_ablation_suite(ds, split, cfg.model, cfg.train, cfg.seeds(), variants)
    experiments.write_csv(results, out / "ablation.csv")
    _write_json({name: experiments.summarize([r for r in results if r.variant == name]) for name in variants},
                out / "ablation_summary.json")
    print(experiments.format_table(results))
    return 0


def cmd_perturb(cfg: RunConfig) -> int:
    ds, split, out = _load_inputs(cfg)
    results = experiments.run_perturbation(ds, split, cfg.model, cfg.train, cfg.run.perturb_levels, cfg.seeds())
    experiments.write_csv(results, out / "perturb.csv")
    print(experiments.format_table(results, group=("level", "variant")))
    return 0


def cmd_sweep(cfg: RunConfig) -> int:
    ds, split, out = _load_inputs(cfg)
    factor = cfg.run.sweep_factor
    factors = ("lambda1", "layers", "dim") if factor == "all" else (factor,)
    results, best = [], {}
    for f in factors:
        grid = tuple(cfg.run.sweep_grid) or None
        part = experiments.run_sweep(ds, split, cfg.model, cfg.train, f, grid, cfg.seeds())
        best[f] = experiments.best_grid_value(part, f)
        results.extend(part)
        print(f"{f}: best value by validation recall@10 = {best[f]}")
    experiments.write_csv(results, out / "sweep.csv",
                          marks={"selected": lambda row: row["value"] == best[row["factor"]]})
    print(experiments.format_table(results, group=("factor", "value")))
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve_config(args)
    except ConfigError as exc:
        parser.error(str(exc))
    handlers = {
        "train": cmd_train, "evaluate": cmd_evaluate, "ablate": cmd_ablate,
        "perturb": cmd_perturb, "sweep": cmd_sweep,
    }
    try:
        if args.command == "preprocess":
            return cmd_preprocess(cfg, force=args.force)
        return handlers[args.command](cfg)
    except (UsageError, ConfigError, DatasetError, FileNotFoundError, TrainingError, ValueError) as exc:
        print(f"direc {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
