"""Command line front end.

Every run writes into its own directory: a config echo, delimited traces,
a machine-readable results.json, and (for analysis commands) rendered
figures next to the CSV output.
"""
from __future__ import annotations

import dataclasses
import json
import multiprocessing
import os
import sys
from datetime import datetime, timezone

import click
import numpy as np

from . import __version__
from .ace import AceConfig
from .analytics import fluctuation, write_fluctuation_csv
from .data import GraphDataset, convert_planetoid, load_dataset
from .errors import ConfigError, GltError
from .model import BinaryMasks, ModelState, SoftMasks, TrainConfig, train
from .prune import PruneRatios
from .search import (SearchConfig, SearchResult, results_json, run_search,
                     write_summary_csv)
from . import report as report_mod


@dataclasses.dataclass
class RunConfig:
    """Flat bag of every tunable a run can take.

    Values come from three layers: built-in defaults, then a JSON config
    file, then command line flags. Later layers win.
    """

    dataset: str | None = None
    backbone: str = "gcn"
    hidden: int = 128
    method: str = "ace"
    fix: str | None = None
    pa: float = 0.05
    pw: float = 0.20
    sA: float = 0.99
    sW: float = 0.99
    T: int = 3
    k_init: int | None = None
    sim_threshold: float = 0.5
    equalize: bool = True
    resample: bool = True
    adaptive_k: bool = True
    seeds: tuple = (0,)
    jobs: int = 1
    out: str = "runs"
    delta: float = 0.0
    epochs: int = 200
    refine_epochs: int = 30
    eval_epochs: int | None = None
    lr: float = 0.01
    weight_decay: float = 0.0
    lambda1: float = 0.0
    lambda2: float = 0.0
    row_normalize: bool = False
    max_rounds: int = 100
    grad_through_degree: bool = True

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["seeds"] = list(self.seeds)
        return d


_BOOL_FIELDS = {"equalize", "resample", "adaptive_k", "row_normalize",
                "grad_through_degree"}


def build_config(config_path: str | None, overrides: dict) -> RunConfig:
    cfg = RunConfig()
    if config_path is not None:
        try:
            with open(config_path, encoding="utf-8") as f:
                file_values = json.load(f)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {config_path}: {exc}")
        if not isinstance(file_values, dict):
            raise ConfigError(f"config {config_path} must be a JSON object")
        _apply(cfg, file_values, source=config_path)
    _apply(cfg, {k: v for k, v in overrides.items() if v is not None},
           source="flags")
    return cfg


def _apply(cfg: RunConfig, values: dict, source: str) -> None:
    names = {f.name for f in dataclasses.fields(RunConfig)}
    for key, value in values.items():
        if key not in names:
            raise ConfigError(f"unknown config key {key!r} in {source}")
        if key == "seeds":
            value = tuple(int(s) for s in value)
        if key in _BOOL_FIELDS:
            value = bool(value)
        setattr(cfg, key, value)


def parse_fix(text: str | None):
    if text is None:
        return None
    try:
        side, _, value = text.partition("@")
        if side not in ("graph", "model"):
            raise ValueError(side)
        return (side, float(value))
    except ValueError:
        raise ConfigError(
            f"--fix expects graph@RATIO or model@RATIO, got {text!r}")


def parse_seeds(text: str) -> tuple:
    try:
        return tuple(int(s) for s in text.split(","))
    except ValueError:
        raise ConfigError(f"--seeds expects comma separated ints, got {text!r}")


def parse_k_init(text: str):
    if text == "auto":
        return None
    try:
        return int(text)
    except ValueError:
        raise ConfigError(f"--k-init expects an int or 'auto', got {text!r}")


def _require_dataset(cfg: RunConfig) -> GraphDataset:
    if cfg.dataset is None:
        raise ConfigError("a dataset directory is required (--dataset)")
    return load_dataset(cfg.dataset, row_normalize_features=cfg.row_normalize)


def make_run_configs(cfg: RunConfig):
    train_cfg = TrainConfig(
        epochs=cfg.epochs, lr=cfg.lr, weight_decay=cfg.weight_decay,
        lambda1=cfg.lambda1, lambda2=cfg.lambda2,
        norm_grad_through_degree=cfg.grad_through_degree)
    search_cfg = SearchConfig(
        s_adj=cfg.sA, s_w=cfg.sW,
        ratios=PruneRatios(p_adj=cfg.pa, p_w=cfg.pw),
        method=cfg.method, fixed_side=parse_fix(cfg.fix), delta=cfg.delta,
        eval_epochs=cfg.eval_epochs, max_rounds=cfg.max_rounds)
    ace_cfg = AceConfig(
        rounds=cfg.T, k_init=cfg.k_init,
        similarity_threshold=cfg.sim_threshold,
        refine_epochs=cfg.refine_epochs, equalize_swap=cfg.equalize,
        resample=cfg.resample, adaptive_k=cfg.adaptive_k)
    return train_cfg, search_cfg, ace_cfg


def _write_run_dir(out_dir: str, cfg: RunConfig, result: SearchResult) -> None:
    os.makedirs(out_dir, exist_ok=True)
    write_summary_csv([result], os.path.join(out_dir, "summary.csv"))
    result.dense_trace.write_csv(os.path.join(out_dir, "dense_trace.csv"))
    for i, trace in enumerate(result.prune_traces):
        trace.write_csv(os.path.join(out_dir, f"prune_trace_{i}.csv"))
    from .ace import write_ace_trace
    for i, rounds in enumerate(result.ace_traces):
        write_ace_trace(rounds, os.path.join(out_dir, f"ace_trace_{i}.csv"))
    stamp = datetime.now(timezone.utc).isoformat()
    payload = results_json(result, config_echo=cfg.to_dict(),
                           engine_version=__version__, timestamp=stamp)
    with open(os.path.join(out_dir, "results.json"), "w",
              encoding="utf-8", newline="\n") as f:
        f.write(payload)
    with open(os.path.join(out_dir, "config.json"), "w",
              encoding="utf-8", newline="\n") as f:
        json.dump(cfg.to_dict(), f, indent=2, sort_keys=True)
        f.write("\n")


def _search_one_seed(args) -> str:
    cfg, seed, keep_soft = args
    ds = _require_dataset(cfg)
    train_cfg, search_cfg, ace_cfg = make_run_configs(cfg)
    result = run_search(ds, search_cfg, train_cfg, ace_cfg, seed=seed,
                        hidden_dim=cfg.hidden, backbone=cfg.backbone,
                        keep_soft=keep_soft)
    out_dir = os.path.join(cfg.out, f"{cfg.method}_seed{seed}")
    _write_run_dir(out_dir, cfg, result)
    return out_dir


def _run_seeds(cfg: RunConfig, keep_soft: bool = False):
    jobs = [(cfg, seed, keep_soft) for seed in cfg.seeds]
    if cfg.jobs > 1 and len(jobs) > 1:
        ctx = multiprocessing.get_context("spawn")
        with ctx.Pool(min(cfg.jobs, len(jobs))) as pool:
            return pool.map(_search_one_seed, jobs)
    return [_search_one_seed(job) for job in jobs]


_COMMON = [
    click.option("--config", "config_path", type=click.Path(exists=True),
                 default=None, help="JSON config file; flags override it."),
    click.option("--dataset", default=None, type=click.Path()),
    click.option("--backbone", default=None,
                 type=click.Choice(["gcn", "gin"])),
    click.option("--hidden", default=None, type=int),
    click.option("--seeds", default=None, help="comma separated, e.g. 1,2,3"),
    click.option("--out", default=None, type=click.Path()),
    click.option("--epochs", default=None, type=int),
    click.option("--lr", default=None, type=float),
    click.option("--weight-decay", "weight_decay", default=None, type=float),
    click.option("--lambda1", default=None, type=float),
    click.option("--lambda2", default=None, type=float),
    click.option("--row-normalize", "row_normalize", is_flag=True,
                 default=None, flag_value=True),
]

_SEARCH_OPTS = [
    click.option("--method", default=None,
                 type=click.Choice(["ace", "ugs", "random"])),
    click.option("--fix", default=None, help="graph@RATIO or model@RATIO"),
    click.option("--pa", default=None, type=float),
    click.option("--pw", default=None, type=float),
    click.option("--sA", "sA", default=None, type=float),
    click.option("--sW", "sW", default=None, type=float),
    click.option("--T", "T", default=None, type=int),
    click.option("--k-init", "k_init_text", default=None,
                 help="swap set size, an int or 'auto'"),
    click.option("--sim-threshold", "sim_threshold", default=None, type=float),
    click.option("--no-equalize", "equalize", flag_value=False, default=None),
    click.option("--no-resample", "resample", flag_value=False, default=None),
    click.option("--no-adaptive-k", "adaptive_k", flag_value=False,
                 default=None),
    click.option("--delta", default=None, type=float),
    click.option("--jobs", default=None, type=int),
    click.option("--refine-epochs", "refine_epochs", default=None, type=int),
    click.option("--eval-epochs", "eval_epochs", default=None, type=int),
    click.option("--max-rounds", "max_rounds", default=None, type=int),
]


def _with(options):
    def wrap(fn):
        for opt in reversed(options):
            fn = opt(fn)
        return fn
    return wrap


@click.group()
@click.version_option(version=__version__)
def main():
    """Sparse ticket workbench for graph networks."""


def _cfg_from_kwargs(kwargs: dict) -> RunConfig:
    config_path = kwargs.pop("config_path", None)
    if "seeds" in kwargs and kwargs["seeds"] is not None:
        kwargs["seeds"] = parse_seeds(kwargs["seeds"])
    if "k_init_text" in kwargs:
        text = kwargs.pop("k_init_text")
        if text is not None:
            kwargs["k_init"] = parse_k_init(text)
    return build_config(config_path, kwargs)


def _fail(exc: GltError):
    click.echo(f"error: {exc}", err=True)
    code = 2 if isinstance(exc, ConfigError) else 1
    sys.exit(code)


@main.command("train")
@_with(_COMMON)
def train_cmd(**kwargs):
    """Train the dense model and write its trace and accuracy."""
    try:
        cfg = _cfg_from_kwargs(kwargs)
        ds = _require_dataset(cfg)
        os.makedirs(cfg.out, exist_ok=True)
        accs = {}
        for seed in cfg.seeds:
            train_cfg = TrainConfig(
                epochs=cfg.epochs, lr=cfg.lr, weight_decay=cfg.weight_decay,
                lambda1=0.0, lambda2=0.0, seed=seed,
                norm_grad_through_degree=cfg.grad_through_degree)
            model = ModelState.init(ds, hidden_dim=cfg.hidden,
                                    backbone=cfg.backbone, seed=seed)
            masks = SoftMasks.from_binary(
                BinaryMasks.full(ds.num_edges, model.layer_shapes))
            trace = train(ds, model, masks, train_cfg,
                          train_weights=True, train_masks=False)
            trace.write_csv(os.path.join(cfg.out, f"dense_trace_{seed}.csv"))
            accs[str(seed)] = trace.best_test_acc
            click.echo(f"seed {seed}: test accuracy {trace.best_test_acc:.4f}")
        payload = {"config": cfg.to_dict(), "dense_test_accuracy": accs,
                   "engine_version": __version__}
        with open(os.path.join(cfg.out, "results.json"), "w",
                  encoding="utf-8", newline="\n") as f:
            json.dump(payload, f, indent=2, sort_keys=True)
            f.write("\n")
    except GltError as exc:
        _fail(exc)


@main.command("search")
@_with(_COMMON)
@_with(_SEARCH_OPTS)
def search_cmd(**kwargs):
    """Run the sparse ticket search for each seed."""
    try:
        cfg = _cfg_from_kwargs(kwargs)
        dirs = _run_seeds(cfg)
        for d in dirs:
            click.echo(f"wrote {d}")
    except GltError as exc:
        _fail(exc)


@main.command("fluctuation")
@_with(_COMMON)
@_with(_SEARCH_OPTS)
def fluctuation_cmd(**kwargs):
    """Track how importance ranks drift across pruning stages.

    Runs a soft-mask search per seed (default method ugs), keeps the soft
    mask snapshot of every stage, and measures each surviving entry's rank
    drift relative to the final stage.
    """
    try:
        kwargs.setdefault("method", None)
        if kwargs.get("method") is None:
            kwargs["method"] = "ugs"
        cfg = _cfg_from_kwargs(kwargs)
        ds = _require_dataset(cfg)
        train_cfg, search_cfg, ace_cfg = make_run_configs(cfg)
        os.makedirs(cfg.out, exist_ok=True)
        for seed in cfg.seeds:
            result = run_search(ds, search_cfg, train_cfg, ace_cfg, seed=seed,
                                hidden_dim=cfg.hidden, backbone=cfg.backbone,
                                keep_soft=True)
            out_dir = os.path.join(cfg.out, f"fluct_{cfg.method}_seed{seed}")
            _write_run_dir(out_dir, cfg, result)
            winner = result.records[-1].masks
            profile = fluctuation(result.soft_snapshots, winner)
            write_fluctuation_csv(profile,
                                  os.path.join(out_dir, "fluctuation.csv"))
            _write_edge_importance(
                ds, result, os.path.join(out_dir, "edge_importance.csv"))
            report_mod.plot_fluctuation(
                profile, os.path.join(out_dir, "fluctuation.png"))
            click.echo(f"wrote {out_dir}")
    except GltError as exc:
        _fail(exc)


def _write_edge_importance(ds, result: SearchResult, path: str) -> None:
    """Final-stage soft mask value per edge, for downstream inspection."""
    final = result.soft_snapshots[-1]
    values = np.asarray(final["adj"], dtype=np.float64).reshape(-1)
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write("u,v,soft_value\n")
        for (u, v), m in zip(ds.edges, values):
            f.write(f"{u},{v},{m!r}\n")


@main.command("convert")
@click.option("--src", required=True, type=click.Path(exists=True))
@click.option("--name", required=True)
@click.option("--out", required=True, type=click.Path())
@click.option("--num-val", default=500, type=int)
@click.option("--num-test", default=1000, type=int)
def convert_cmd(src, name, out, num_val, num_test):
    """Convert a citation benchmark release into the native layout."""
    try:
        ds = convert_planetoid(src, name, out, num_val=num_val,
                               num_test=num_test)
        click.echo(f"wrote {out}: {ds.num_nodes} nodes, {ds.num_edges} edges,"
                   f" {ds.num_features} features, {ds.num_classes} classes")
    except GltError as exc:
        _fail(exc)


@main.command("report")
@click.argument("run_dirs", nargs=-1, required=True,
                type=click.Path(exists=True))
@click.option("--out", required=True, type=click.Path())
def report_cmd(run_dirs, out):
    """Aggregate summary.csv files across runs into tables and figures."""
    try:
        rows = report_mod.collect_rows(list(run_dirs))
        if not rows:
            raise ConfigError("no summary.csv found under the given dirs")
        os.makedirs(out, exist_ok=True)
        report_mod.write_dicts_csv(report_mod.aggregate_rounds(rows),
                                   os.path.join(out, "rounds.csv"))
        report_mod.write_dicts_csv(report_mod.aggregate_tickets(rows),
                                   os.path.join(out, "tickets.csv"))
        report_mod.plot_accuracy_curves(
            rows, os.path.join(out, "accuracy_vs_model_sparsity.png"),
            x_col="model_sparsity")
        report_mod.plot_accuracy_curves(
            rows, os.path.join(out, "accuracy_vs_graph_sparsity.png"),
            x_col="graph_sparsity")
        click.echo(f"wrote {out}")
    except GltError as exc:
        _fail(exc)


if __name__ == "__main__":
    main()
