"""Stage orchestration with on-disk artifacts and a caching manifest.

Stages run in the fixed order ingest -> graph -> overlap -> train -> eval
-> analyze. Each stage's hash covers its own config sections plus the
hashes of the stages it reads from, so changing e.g. the window
invalidates graph, overlap and everything downstream.
"""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from gnno.analysis import DistributionTracker
from gnno.config import ExperimentConfig, dump_config
from gnno.dataset import DataError, InteractionCorpus, build_corpus, kcore_filter, leave_one_out_split, read_log
from gnno.evaluation import EvalReport, evaluate
from gnno.negsampler import ExclusionAudit, SamplerState
from gnno.overlap import OverlapIndex, build_overlap_index, pivot_cost
from gnno.synthetic import block_corpus
from gnno.trainer import ModelParams, Trainer
from gnno.witg import TransitionGraph, build_witg, deserialize_graph, serialize_graph

logger = logging.getLogger(__name__)

STAGES = ("ingest", "graph", "overlap", "train", "eval", "analyze")
REQUIRES = {
    "ingest": (),
    "graph": ("ingest",),
    "overlap": ("graph",),
    "train": ("ingest", "overlap"),
    "eval": ("ingest", "train"),
    "analyze": ("overlap", "train"),
}
SECTIONS = {
    "ingest": ("data",),
    "graph": ("witg",),
    "overlap": ("tau",),
    "train": ("train", "analysis"),
    "eval": ("eval",),
    "analyze": ("analysis",),
}
MANIFEST = "manifest.json"


class PipelineError(RuntimeError):
    """Missing prerequisite or stale cached artifact."""


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def stage_hashes(cfg: ExperimentConfig) -> dict[str, str]:
    out = {}
    for stage in STAGES:
        h = hashlib.sha256(cfg.section_hash(*SECTIONS[stage]).encode())
        h.update(str(cfg.seed).encode())
        for dep in REQUIRES[stage]:
            h.update(out[dep].encode())
        out[stage] = h.hexdigest()[:16]
    return out


@dataclass
class Workspace:
    """The run directory and its artifact layout."""

    root: Path

    def __post_init__(self):
        self.root = Path(self.root)

    corpus_dir = property(lambda self: self.root / "corpus")
    graph_path = property(lambda self: self.root / "graph.tsv")
    overlap_path = property(lambda self: self.root / "overlap.tsv")
    model_path = property(lambda self: self.root / "model.npz")
    snapshot_dir = property(lambda self: self.root / "snapshots")
    train_log = property(lambda self: self.root / "train_log.jsonl")
    analysis_dir = property(lambda self: self.root / "analysis")

    def eval_json(self, phase: str) -> Path:
        return self.root / f"eval_{phase}.json"

    def snapshot(self, epoch: int) -> Path:
        return self.snapshot_dir / f"epoch_{epoch:04d}.npz"

    def outputs(self, stage: str, cfg: ExperimentConfig) -> list[Path]:
        return {
            "ingest": [self.corpus_dir / "sequences.txt", self.corpus_dir / "items.vocab", self.corpus_dir / "users.vocab"],
            "graph": [self.graph_path],
            "overlap": [self.overlap_path],
            "train": [self.model_path, self.train_log]
            + [self.snapshot(e) for e in cfg.analysis.epochs_for(cfg.train.epochs)],
            "eval": [self.eval_json("valid"), self.eval_json("test"), self.root / "metrics.csv"],
            "analyze": [self.analysis_dir / "summary.json"],
        }[stage]


@dataclass
class StageResult:
    stage: str
    skipped: bool
    seconds: float = 0.0
    info: dict = field(default_factory=dict)


class Pipeline:
    def __init__(self, cfg: ExperimentConfig, force: bool = False):
        self.cfg = cfg
        self.force = force
        self.ws = Workspace(Path(cfg.out))
        self.hashes = stage_hashes(cfg)
        self.manifest = self._read_manifest()

    # -- manifest -----------------------------------------------------------

    def _read_manifest(self) -> dict:
        path = self.ws.root / MANIFEST
        if path.exists():
            with open(path, encoding="utf-8") as fh:
                return json.load(fh)
        return {"stages": {}}

    def _write_manifest(self) -> None:
        self.ws.root.mkdir(parents=True, exist_ok=True)
        with open(self.ws.root / MANIFEST, "w", encoding="utf-8") as fh:
            json.dump(self.manifest, fh, sort_keys=True, indent=2)

    def _cached(self, stage: str) -> bool | None:
        """True if up to date, False if absent, None if stale (hash mismatch)."""
        entry = self.manifest["stages"].get(stage)
        if entry is None:
            return False
        if entry["config_hash"] != self.hashes[stage]:
            return None
        return all(p.exists() for p in self.ws.outputs(stage, self.cfg))

    # -- loading ------------------------------------------------------------

    def corpus(self) -> InteractionCorpus:
        return InteractionCorpus.load(self.ws.corpus_dir)

    def graph(self, num_nodes: int) -> TransitionGraph:
        with open(self.ws.graph_path, encoding="utf-8") as fh:
            return deserialize_graph(fh, num_nodes)

    def overlap(self, num_items: int) -> OverlapIndex:
        with open(self.ws.overlap_path, encoding="utf-8") as fh:
            return OverlapIndex.deserialize(fh, num_items)

    # -- stages -------------------------------------------------------------

    def _ingest(self) -> dict:
        data = self.cfg.data
        if data.path:
            records, errors = read_log(data.path, data.delimiter, data.skip_header)
            if errors:
                with open(self.ws.root / "ingest_errors.txt", "w", encoding="utf-8") as fh:
                    fh.writelines(f"{e}\n" for e in errors)
                logger.warning("%d malformed lines; see ingest_errors.txt", len(errors))
            filtered = kcore_filter(records, data.kcore)
            if not filtered:
                raise DataError(f"no interactions left after {data.kcore}-core filtering")
            corpus = build_corpus(filtered)
            info = {"records": len(records), "errors": len(errors), "kept": len(filtered)}
        else:
            corpus = block_corpus(data.synthetic)
            info = {"synthetic": data.synthetic.to_dict()}
        corpus.save(self.ws.corpus_dir)
        split = leave_one_out_split(corpus)
        info.update(users=corpus.num_users, items=corpus.num_items,
                    entries=sum(map(len, corpus.sequences)), short_users=split.num_short)
        return info

    def _graph(self) -> dict:
        corpus = self.corpus()
        split = leave_one_out_split(corpus)
        graph = build_witg(split.train, self.cfg.witg, corpus.num_items)
        with open(self.ws.graph_path, "w", encoding="utf-8") as fh:
            serialize_graph(graph, fh)
        return {"num_edges": graph.num_edges, "window": self.cfg.witg.window}

    def _overlap(self) -> dict:
        corpus = self.corpus()
        graph = self.graph(corpus.num_items)
        index = build_overlap_index(graph, self.cfg.tau)
        with open(self.ws.overlap_path, "w", encoding="utf-8") as fh:
            index.serialize(fh)
        return {"pairs": index.nnz // 2, "pivot_cost": pivot_cost(graph.prune(self.cfg.tau))}

    def _train(self) -> dict:
        corpus = self.corpus()
        split = leave_one_out_split(corpus)
        index = self.overlap(corpus.num_items)
        self.ws.snapshot_dir.mkdir(parents=True, exist_ok=True)
        if self.ws.train_log.exists():
            self.ws.train_log.unlink()
        run = train_model(self.cfg, split, index, snapshot_to=self.ws)
        run.params.save(self.ws.model_path, self.cfg.to_dict())
        info = {"final_loss": run.history[-1].mean_loss if run.history else None}
        if run.audit is not None:
            info["audit"] = {"draws": run.audit.draws, "over_lambda": run.audit.over_lambda,
                             "self_samples": run.audit.self_samples}
        return info

    def _eval(self) -> dict:
        split = leave_one_out_split(self.corpus())
        params, _ = ModelParams.load(self.ws.model_path)
        rows = []
        for phase in ("valid", "test"):
            protocol = _phase(self.cfg.eval, phase)
            report = evaluate(params, split, protocol)
            report.config["seed"] = self.cfg.seed
            with open(self.ws.eval_json(phase), "w", encoding="utf-8") as fh:
                fh.write(report.to_json() + "\n")
            rows.append((phase, report))
        with open(self.ws.root / "metrics.csv", "w", encoding="utf-8") as fh:
            fh.write("phase,seed," + rows[0][1].csv_header() + "\n")
            for phase, report in rows:
                fh.write(f"{phase},{self.cfg.seed},{report.csv_row()}\n")
        return {phase: report.metrics for phase, report in rows}

    def _analyze(self) -> dict:
        corpus = self.corpus()
        index = self.overlap(corpus.num_items)
        tracker = DistributionTracker(index, self.cfg.analysis)
        for epoch in self.cfg.analysis.epochs_for(self.cfg.train.epochs):
            params, _ = ModelParams.load(self.ws.snapshot(epoch))
            tracker.snapshot(params, epoch)
        self.ws.analysis_dir.mkdir(parents=True, exist_ok=True)
        for epoch in tracker.snapshots:
            tracker.write_csv(self.ws.analysis_dir / f"epoch_{epoch:04d}.csv", [epoch])
        tracker.write_summary(self.ws.analysis_dir / "summary.json")
        return {"epochs": sorted(tracker.snapshots)}

    # -- driver -------------------------------------------------------------

    def run(self, stages: Iterable[str]) -> list[StageResult]:
        requested = set(stages)
        bad = requested - set(STAGES)
        if bad:
            raise ValueError(f"unknown stages: {sorted(bad)}")
        self.ws.root.mkdir(parents=True, exist_ok=True)
        with open(self.ws.root / "experiment.conf", "w", encoding="utf-8") as fh:
            fh.write(dump_config(self.cfg))
        results = []
        for stage in STAGES:
            if stage not in requested:
                continue
            for dep in REQUIRES[stage]:
                if dep in requested:
                    continue
                state = self._cached(dep)
                if state is False:
                    raise PipelineError(f"stage '{stage}' needs '{dep}' artifacts; run stage '{dep}' first")
                if state is None and not self.force:
                    raise PipelineError(f"cached '{dep}' artifacts were built with a different config; rerun it or pass --force")
            state = self._cached(stage)
            if state is True and not self.force:
                results.append(StageResult(stage, skipped=True))
                continue
            if state is None and not self.force:
                raise PipelineError(f"cached '{stage}' artifacts were built with a different config; pass --force to rebuild")
            start = time.perf_counter()
            info = getattr(self, f"_{stage}")()
            seconds = time.perf_counter() - start
            self.manifest["stages"][stage] = {
                "config_hash": self.hashes[stage],
                "seed": self.cfg.seed,
                "seconds": round(seconds, 3),
                "inputs": {
                    str(p.relative_to(self.ws.root)): _sha256(p)
                    for dep in REQUIRES[stage]
                    for p in self.ws.outputs(dep, self.cfg)
                },
                "outputs": {str(p.relative_to(self.ws.root)): _sha256(p) for p in self.ws.outputs(stage, self.cfg)},
                "info": info,
            }
            self._write_manifest()
            results.append(StageResult(stage, skipped=False, seconds=seconds, info=info))
        return results


def run_pipeline(cfg: ExperimentConfig, stages: Iterable[str] = STAGES, force: bool = False) -> list[StageResult]:
    return Pipeline(cfg, force).run(stages)


def _phase(protocol, phase):
    return replace(protocol, phase=phase)


@dataclass
class TrainingRun:
    params: ModelParams
    history: list
    audit: ExclusionAudit | None
    tracker: DistributionTracker | None


def train_model(
    cfg: ExperimentConfig,
    split,
    index: OverlapIndex,
    snapshot_to: Workspace | None = None,
    track: bool = False,
) -> TrainingRun:
    """Train one model; optionally track overlap-group similarity distributions."""
    tcfg = cfg.train
    params = ModelParams.init(index.num_items, tcfg.embedding_dim, tcfg.seed, tcfg.encoder)
    state = SamplerState(index, seed=tcfg.seed)
    audit = ExclusionAudit(index) if tcfg.sampler.sampler == "gnno" else None
    state.audit = audit
    trainer = Trainer(params, split.train, state, tcfg)
    snap_epochs = set(cfg.analysis.epochs_for(tcfg.epochs))
    tracker = DistributionTracker(index, cfg.analysis) if track else None

    def on_epoch(epoch, p, _stats=None):
        if epoch not in snap_epochs:
            return
        if tracker is not None:
            tracker.snapshot(p, epoch)
        if snapshot_to is not None:
            p.save(snapshot_to.snapshot(epoch), {"epoch": epoch, "seed": tcfg.seed})

    on_epoch(0, params)
    history = trainer.fit(on_epoch, log_path=snapshot_to.train_log if snapshot_to else None)
    return TrainingRun(params, history, audit, tracker)


def build_inputs(cfg: ExperimentConfig):
    """In-memory ingest/graph/overlap stages: (corpus, split, graph, index)."""
    data = cfg.data
    if data.path:
        records, _ = read_log(data.path, data.delimiter, data.skip_header)
        corpus = build_corpus(kcore_filter(records, data.kcore))
    else:
        corpus = block_corpus(data.synthetic)
    split = leave_one_out_split(corpus)
    graph = build_witg(split.train, cfg.witg, corpus.num_items)
    index = build_overlap_index(graph, cfg.tau)
    return corpus, split, graph, index


@dataclass
class Comparison:
    runs: list[dict]
    table: list[dict]
    columns: list[str]

    def to_json(self) -> str:
        return json.dumps({"columns": self.columns, "table": self.table, "runs": self.runs}, sort_keys=True, indent=2)

    def to_csv(self, sink) -> None:
        writer = csv.writer(sink)
        writer.writerow(["sampler", "runs"] + [f"{c}_{s}" for c in self.columns for s in ("mean", "std")])
        for row in self.table:
            writer.writerow([row["sampler"], row["runs"]] + [row[c][s] for c in self.columns for s in ("mean", "std")])


def compare_samplers(
    cfg: ExperimentConfig,
    samplers: Sequence[str],
    seeds: Sequence[int] | None = None,
    inputs=None,
) -> Comparison:
    """Train and evaluate one model per (sampler, seed) on a shared corpus."""
    if not samplers:
        raise ValueError("at least one sampler is required")
    seeds = list(seeds) if seeds is not None else [cfg.seed]
    corpus, split, _, index = inputs if inputs is not None else build_inputs(cfg)
    columns = [f"{m}@{k}" for k in cfg.eval.k_values for m in ("HR", "NDCG")]
    runs = []
    for sampler in samplers:
        for seed in seeds:
            run_cfg = cfg.with_sampler(sampler, seed)
            run = train_model(run_cfg, split, index)
            report: EvalReport = evaluate(run.params, split, run_cfg.eval)
            runs.append({"sampler": sampler, "seed": seed, "metrics": report.metrics})
    table = []
    for sampler in samplers:
        mine = [r["metrics"] for r in runs if r["sampler"] == sampler]
        row = {"sampler": sampler, "runs": len(mine)}
        for c in columns:
            vals = np.array([m[c] for m in mine])
            row[c] = {"mean": float(vals.mean()), "std": float(vals.std(ddof=1)) if len(vals) > 1 else 0.0}
        table.append(row)
    return Comparison(runs, table, columns)
