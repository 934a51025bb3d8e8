"""Command-line entry point: ``vid <stage> [--config PATH] [--seed N] [--threads N] [--strict] [--out DIR]``.

Each stage reads the fixed subdirectories written by earlier stages under
``--out`` and writes its own subdirectory atomically: outputs are staged in a
temporary directory and moved into place only when the stage succeeds.

On failure a single JSON line ``{"stage", "code", "message"}`` goes to stderr
and the process exits with the code's status from :data:`EXIT_CODES`.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import shutil
import sys
import tempfile
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from . import errors
from .config import PipelineConfig, dump_config, load_config
from .embed import load_embeddings, save_embeddings
from .errors import Divergence, MalformedFile, MissingInput, VidError
from .evaluate import MetricsReport
from .graph import Level, load_graph, save_graph
from .mining import (
    SampleKind,
    read_class_samples,
    read_lists,
    read_pairs,
    read_triplets,
    write_class_samples,
    write_lists,
    write_pairs,
    write_triplets,
)
from .pipeline import build_graph, category_report, embed_nodes, mine_category, mine_feature_samples, retrieval_report
from .pvlog import read_pvlog, write_pvlog
from .synth import (
    SyntheticWorld,
    read_eval_queries,
    read_inventory,
    write_eval_queries,
    write_ground_truth,
    write_inventory,
)
from .train import (
    CATEGORY,
    FEATURE,
    CategorySamples,
    FeatureSamples,
    load_checkpoint,
    predict_categories,
    save_checkpoint,
    train,
    write_history,
)
from .vid import (
    cluster_embeddings,
    default_item_k,
    load_assignment,
    load_category_map,
    map_vid_to_top_category,
    save_assignment,
    save_category_map,
)

logger = logging.getLogger("clickvid")

STAGES = (
    "synth",
    "ingest",
    "graph",
    "embed",
    "cluster",
    "map",
    "mine",
    "train-category",
    "train-feature",
    "eval-category",
    "eval-retrieval",
    "e2e",
)

EXIT_CODES = {
    "Error": 1,
    "InvalidConfig": 3,
    "MissingInput": 4,
    "MalformedLine": 5,
    "MalformedFile": 6,
    "EmptyVocabulary": 7,
    "EmptyCorpus": 8,
    "InvalidK": 9,
    "UnknownCategory": 10,
    "ChannelMismatch": 11,
    "LabelOutOfRange": 12,
    "DimensionMismatch": 13,
    "InvalidPermutation": 14,
    "EmptyBatch": 15,
    "EmptyIndex": 16,
    "Divergence": 17,
    "Internal": 70,
}

LOG_LEVELS = {"debug": logging.DEBUG, "info": logging.INFO, "warn": logging.WARNING, "warning": logging.WARNING}

LEVELS = {"item": Level.ITEM, "leaf": Level.LEAF}


@dataclass
class Context:
    cfg: PipelineConfig
    out: Path
    threads: int
    strict: bool

    @property
    def seed(self) -> int:
        return self.cfg.run.seed

    def stage_dir(self, stage: str) -> Path:
        return self.out / stage

    def need(self, path) -> Path:
        """Path of a required input; raises MissingInput when it does not exist."""
        p = Path(path)
        if not p.is_file():
            raise MissingInput(f"required input {p} not found")
        return p

    def input(self, stage: str, name: str) -> Path:
        return self.need(self.stage_dir(stage) / name)

    def pvlog_path(self) -> Path:
        return self.need(self.cfg.paths.pvlog or self.stage_dir("synth") / "pvlog.jsonl")

    def inventory_path(self) -> Path:
        return self.need(self.cfg.paths.inventory or self.stage_dir("synth") / "inventory.jsonl")

    def eval_queries_path(self) -> Path:
        return self.need(self.cfg.paths.eval_queries or self.stage_dir("synth") / "eval_queries.jsonl")

    def records(self):
        return read_pvlog(self.input("ingest", "pvlog.jsonl"))


def _write_json(obj, path: Path) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _read_json(path: Path):
    try:
        return json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise MalformedFile(f"{path}: {exc.msg}") from None


def _write_report(report: MetricsReport, tmp: Path, metrics=None) -> None:
    (tmp / "report.json").write_text(report.to_json() + "\n", encoding="utf-8")
    (tmp / "report.txt").write_text(report.table(metrics), encoding="utf-8")


def stage_synth(ctx: Context, tmp: Path) -> None:
    world = SyntheticWorld(ctx.cfg.synth, ctx.seed)
    rng = np.random.default_rng([ctx.seed, 1])
    write_pvlog((world.page_view(k, rng) for k in range(ctx.cfg.synth.n_pvs)), tmp / "pvlog.jsonl")
    write_ground_truth(world.ground_truth(), tmp / "ground_truth.jsonl")
    write_inventory(world, tmp / "inventory.jsonl")
    write_eval_queries(world.eval_queries(ctx.cfg.synth.n_eval_queries), tmp / "eval_queries.jsonl")


def stage_ingest(ctx: Context, tmp: Path) -> None:
    bad: list = []
    records = read_pvlog(ctx.pvlog_path(), strict=ctx.strict, errors=bad)
    n = write_pvlog(records, tmp / "pvlog.jsonl")
    _write_json({"records": n, "skipped": len(bad), "skipped_lines": [e.line_no for e in bad]}, tmp / "ingest.json")


def stage_graph(ctx: Context, tmp: Path) -> None:
    records = ctx.records()
    save_graph(build_graph(records, Level.ITEM, ctx.cfg.embed_item), tmp / "item_graph.json")
    save_graph(build_graph(records, Level.LEAF, ctx.cfg.embed_leaf), tmp / "leaf_graph.json")


def stage_embed(ctx: Context, tmp: Path) -> None:
    for level, settings in (("item", ctx.cfg.embed_item), ("leaf", ctx.cfg.embed_leaf)):
        graph = load_graph(ctx.input("graph", f"{level}_graph.json"))
        table = embed_nodes(graph, settings, ctx.seed, ctx.threads)
        save_embeddings(table, tmp / f"{level}_embeddings.txt")


def stage_cluster(ctx: Context, tmp: Path) -> None:
    c = ctx.cfg.cluster
    for level in ("item", "leaf"):
        table = load_embeddings(ctx.input("embed", f"{level}_embeddings.txt"))
        if level == "item":
            k = default_item_k(len(table.keys)) if c.k_item is None else c.k_item
        else:
            k = c.k_leaf
        assignment = cluster_embeddings(table, k, seed=ctx.seed, max_iters=c.max_iters, level=LEVELS[level], n_init=c.n_init)
        save_assignment(assignment, tmp / f"{level}_assignment.jsonl")


def stage_map(ctx: Context, tmp: Path) -> None:
    records = ctx.records()
    for level in ("item", "leaf"):
        assignment = load_assignment(ctx.input("cluster", f"{level}_assignment.jsonl"), LEVELS[level])
        save_category_map(map_vid_to_top_category(assignment, records), tmp / f"{level}_category_map.json")


def _top_categories(records) -> list[str]:
    tops = set()
    for rec in records:
        tops.add(rec.predicted_top_category)
        if rec.selected_top_category is not None:
            tops.add(rec.selected_top_category)
        tops.update(e.top_category for e in rec.results)
    return sorted(tops)


def stage_mine(ctx: Context, tmp: Path) -> None:
    records = ctx.records()
    item_vids = load_assignment(ctx.input("cluster", "item_assignment.jsonl"), Level.ITEM)
    leaf_vids = load_assignment(ctx.input("cluster", "leaf_assignment.jsonl"), Level.LEAF)
    tops = _top_categories(records)
    cat = mine_category(records, leaf_vids, tops, ctx.cfg.mining)
    feat = mine_feature_samples(records, item_vids, ctx.cfg.mining)
    (tmp / "category").mkdir()
    (tmp / "feature").mkdir()
    write_class_samples(cat.virtual + cat.clicks, tmp / "category" / "class_samples.jsonl")
    write_pairs(cat.pairs, tmp / "category" / "pairs.jsonl")
    write_class_samples(feat.samples.virtual, tmp / "feature" / "class_samples.jsonl")
    write_triplets(feat.samples.triplets, tmp / "feature" / "triplets.jsonl")
    write_lists(feat.samples.lists, tmp / "feature" / "lists.jsonl")
    meta = {
        "tops": tops,
        "n_virtual_category": cat.n_virtual,
        "n_virtual_feature": feat.samples.n_virtual,
        "gamma": feat.gamma,
        "eps": feat.eps,
        "skipped_virtual": feat.skipped,
        "counts": {
            "category_virtual": len(cat.virtual),
            "category_clicks": len(cat.clicks),
            "pairs": len(cat.pairs),
            "feature_virtual": len(feat.samples.virtual),
            "triplets": len(feat.samples.triplets),
            "lists": len(feat.samples.lists),
        },
    }
    _write_json(meta, tmp / "meta.json")


def _mine_meta(ctx: Context) -> dict:
    return _read_json(ctx.input("mine", "meta.json"))


def _fit(ctx: Context, tmp: Path, network: str, samples, config) -> None:
    try:
        result = train(network, samples, config)
    except Divergence as exc:
        if exc.params is not None:
            save_checkpoint(exc.params, tmp / "last_good.bin", config.seed, exc.epoch)
            exc.partial = tmp / "last_good.bin"
        raise
    save_checkpoint(result.params, tmp / "params.bin", config.seed, result.epochs_run)
    write_history(result.history, tmp / "history.csv")


def stage_train_category(ctx: Context, tmp: Path) -> None:
    meta = _mine_meta(ctx)
    cls = read_class_samples(ctx.input("mine", "category/class_samples.jsonl"))
    pairs = read_pairs(ctx.input("mine", "category/pairs.jsonl"))
    virtual = [s for s in cls if s.kind == SampleKind.VIRTUAL]
    clicks = [s for s in cls if s.kind != SampleKind.VIRTUAL]
    samples = CategorySamples(virtual, clicks, pairs, meta["n_virtual_category"], len(meta["tops"]))
    _fit(ctx, tmp, CATEGORY, samples, ctx.cfg.train_category)


def stage_train_feature(ctx: Context, tmp: Path) -> None:
    meta = _mine_meta(ctx)
    samples = FeatureSamples(
        read_class_samples(ctx.input("mine", "feature/class_samples.jsonl")),
        read_triplets(ctx.input("mine", "feature/triplets.jsonl")),
        read_lists(ctx.input("mine", "feature/lists.jsonl")),
        meta["n_virtual_feature"],
    )
    _fit(ctx, tmp, FEATURE, samples, ctx.cfg.train_feature)


def stage_eval_category(ctx: Context, tmp: Path) -> None:
    tops = _mine_meta(ctx)["tops"]
    params, _, _ = load_checkpoint(ctx.input("train-category", "params.bin"))
    cmap = load_category_map(ctx.input("map", "leaf_category_map.json"))
    queries = read_eval_queries(ctx.eval_queries_path())
    w = ctx.cfg.eval.ensemble_weight
    report = category_report(params, cmap, tops, queries, w)
    _write_report(report, tmp)
    preds = predict_categories([q.features for q in queries], params, cmap.vid_to_top, sorted(tops), w)
    with open(tmp / "predictions.jsonl", "w", encoding="utf-8") as fh:
        for q, p in zip(queries, preds):
            fh.write(json.dumps({"query_id": q.query_id, "top": p}, separators=(",", ":")) + "\n")


def _predictions(ctx: Context) -> dict[str, str]:
    out = {}
    with open(ctx.input("eval-category", "predictions.jsonl"), encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                row = json.loads(line)
                out[row["query_id"]] = row["top"]
    return out


RETRIEVAL_TABLE = ("recall@1", "recall@4", "recall@20", "hit@1", "hit@4", "hit@20", "map@1", "map@4", "map@20")


def stage_eval_retrieval(ctx: Context, tmp: Path) -> None:
    params, _, _ = load_checkpoint(ctx.input("train-feature", "params.bin"))
    inventory = read_inventory(ctx.inventory_path())
    queries = read_eval_queries(ctx.eval_queries_path())
    e = ctx.cfg.eval
    predicted = None if e.fixed_category else _predictions(ctx)
    report, rankings = retrieval_report(params, inventory, queries, e.k, e.fixed_category, predicted)
    _write_report(report, tmp, [m for m in RETRIEVAL_TABLE if m in report.values])
    with open(tmp / "rankings.jsonl", "w", encoding="utf-8") as fh:
        for q in queries:
            fh.write(json.dumps({"query_id": q.query_id, "ranking": rankings[q.query_id]}, separators=(",", ":")) + "\n")


def stage_e2e(ctx: Context, tmp: Path) -> None:
    for stage in STAGES[:-1]:
        run_stage(stage, ctx)
    cat = _read_json(ctx.input("eval-category", "report.json"))
    ret = _read_json(ctx.input("eval-retrieval", "report.json"))
    _write_json({"category": cat, "retrieval": ret}, tmp / "report.json")
    text = (
        "== category prediction ==\n"
        + (ctx.stage_dir("eval-category") / "report.txt").read_text(encoding="utf-8")
        + "\n== identical-item retrieval ==\n"
        + (ctx.stage_dir("eval-retrieval") / "report.txt").read_text(encoding="utf-8")
    )
    (tmp / "report.txt").write_text(text, encoding="utf-8")
    (tmp / "config.txt").write_text(dump_config(ctx.cfg), encoding="utf-8")


HANDLERS: dict[str, Callable[[Context, Path], None]] = {
    "synth": stage_synth,
    "ingest": stage_ingest,
    "graph": stage_graph,
    "embed": stage_embed,
    "cluster": stage_cluster,
    "map": stage_map,
    "mine": stage_mine,
    "train-category": stage_train_category,
    "train-feature": stage_train_feature,
    "eval-category": stage_eval_category,
    "eval-retrieval": stage_eval_retrieval,
    "e2e": stage_e2e,
}


class StageFailure(Exception):
    def __init__(self, stage: str, error: BaseException) -> None:
        super().__init__(str(error))
        self.stage = stage
        self.error = error


def _commit(tmp: Path, final: Path) -> None:
    if final.exists():
        old = final.with_name(final.name + ".old")
        if old.exists():
            shutil.rmtree(old)
        final.rename(old)
        tmp.rename(final)
        shutil.rmtree(old)
    else:
        tmp.rename(final)


def run_stage(stage: str, ctx: Context) -> Path:
    """Run one stage into a temporary directory, then move it into place.

    A failed stage leaves nothing behind, except that a diverged training
    stage keeps its last finite parameters as ``last_good.bin``.
    """
    ctx.out.mkdir(parents=True, exist_ok=True)
    final = ctx.stage_dir(stage)
    tmp = Path(tempfile.mkdtemp(prefix=f".{stage}.", dir=ctx.out))
    logger.info("stage %s -> %s", stage, final)
    try:
        HANDLERS[stage](ctx, tmp)
    except StageFailure:
        shutil.rmtree(tmp, ignore_errors=True)
        raise
    except Exception as exc:
        keep = getattr(exc, "partial", None)
        if keep is not None:
            for child in tmp.iterdir():
                if child != keep:
                    child.unlink() if child.is_file() else shutil.rmtree(child)
            _commit(tmp, final)
        else:
            shutil.rmtree(tmp, ignore_errors=True)
        raise StageFailure(stage, exc) from exc
    except BaseException:
        shutil.rmtree(tmp, ignore_errors=True)
        raise
    _commit(tmp, final)
    return final


def _error_code(exc: BaseException) -> str:
    if isinstance(exc, VidError):
        return exc.code
    if isinstance(exc, FileNotFoundError):
        return MissingInput.code
    return "Internal"


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="vid", description="Click-driven virtual ID pipeline.")
    p.add_argument("stage", choices=STAGES)
    p.add_argument("--config", help="pipeline config file (section.key = value lines); defaults if omitted")
    p.add_argument("--seed", type=int, help="override run.seed and the training seeds")
    p.add_argument("--threads", type=int, default=os.cpu_count() or 1, help="worker cap; 1 is the reference path")
    p.add_argument("--strict", action="store_true", help="abort on the first malformed log line instead of skipping it")
    p.add_argument("--out", default="vid_out", help="output root (default: %(default)s)")
    p.add_argument("--dump-config", action="store_true", help="print the effective config and exit")
    return p


def _setup_logging() -> None:
    level = LOG_LEVELS.get(os.environ.get("VID_LOG", "warn").lower(), logging.WARNING)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)


def main(argv: Optional[list[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    _setup_logging()
    stage = args.stage
    try:
        if args.threads < 1:
            raise errors.InvalidConfig("--threads must be >= 1")
        cfg = load_config(args.config)
        if args.seed is not None:
            cfg = cfg.with_seed(args.seed)
        if args.dump_config:
            sys.stdout.write(dump_config(cfg))
            return 0
        ctx = Context(cfg, Path(args.out), args.threads, args.strict)
        final = run_stage(stage, ctx)
    except StageFailure as failure:
        return _fail(failure.stage, failure.error)
    except Exception as exc:  # config errors before any stage starts
        return _fail(stage, exc)
    print(json.dumps({"stage": stage, "output": str(final)}))
    return 0


def _fail(stage: str, exc: BaseException) -> int:
    code = _error_code(exc)
    if code == "Internal":
        logger.debug("internal error", exc_info=exc)
    line = json.dumps({"stage": stage, "code": code, "message": str(exc)})
    print(line, file=sys.stderr)
    return EXIT_CODES.get(code, 1)


if __name__ == "__main__":
    sys.exit(main())
