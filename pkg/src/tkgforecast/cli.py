"""Command line entry point: one subcommand per pipeline stage.

Every stage writes its artifacts atomically into the output directory and
records a manifest entry (config hash, seed, input hashes). Re-running a stage
whose manifest entry still matches is a no-op unless ``--force`` is given.
"""

from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import logging
import os
import sys
import tempfile
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Callable

from . import __version__
from .config import ConfigError, PipelineConfig, load_config
from .contrastive import export_training_pairs, load_polarity
from .evaluation import TrueFacts, evaluate, make_record, semantic_distance_curve
from .filtering import FilterConfig, calibrate_threshold, filter_predict
from .gateway import CachedEmbedder, HashEmbedder, HttpGateway, StubGenerator
from .graph import Quadruple, Query, TemporalGraph, load_dataset_dir
from .prompts import PromptRecord, build_prompt, render_answer
from .rules import load_rules, mine_rules, save_rules
from .sampler import SamplerConfig, analyze_reachability, sample_histories

log = logging.getLogger("tkgforecast")

SCHEMA_VERSION = 1
DATASET_FILES = ("train.txt", "valid.txt", "test.txt", "entity2id.txt", "relation2id.txt", "dataset.json")

# artifact name -> (default file name, producing stage)
ARTIFACTS = {
    "ingest": ("ingest.json", "ingest"),
    "rules": ("rules.json", "mine-rules"),
    "histories": ("histories.jsonl", "sample"),
    "prompts": ("prompts.jsonl", "build-prompts"),
    "pairs": ("pairs.jsonl", "export-pairs"),
    "traces": ("traces.jsonl", "run"),
    "tau": ("tau.json", "calibrate"),
    "report": ("report.json", "eval"),
    "analysis": ("analysis.json", "analyze"),
}


class StageError(RuntimeError):
    """A stage cannot start (missing prerequisite, bad input)."""


# ---------------------------------------------------------------- file helpers


def sha256_file(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def sha256_json(obj) -> str:
    return hashlib.sha256(json.dumps(obj, sort_keys=True, default=str).encode()).hexdigest()


def write_atomic(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def dumps_jsonl(header: dict, records: list[dict]) -> str:
    lines = [json.dumps({"header": True, **header}, sort_keys=True)]
    lines += [json.dumps(r, sort_keys=True, ensure_ascii=False) for r in records]
    return "\n".join(lines) + "\n"


def read_jsonl(path: Path) -> tuple[dict, list[dict]]:
    header: dict = {}
    records = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise StageError(f"{path}:{lineno}: invalid JSON ({exc})") from None
            if obj.get("header") is True:
                header = obj
            else:
                records.append(obj)
    return header, records


def dataset_hash(path: Path) -> str:
    parts = {name: sha256_file(path / name) for name in DATASET_FILES if (path / name).exists()}
    return sha256_json(parts)


# ---------------------------------------------------------------- stage context


class Context:
    def __init__(self, cfg: PipelineConfig, force: bool = False, jobs: int = 1):
        self.cfg = cfg
        self.force = force
        self.jobs = max(1, jobs)
        self.out = Path(cfg.out_dir)
        self._graphs: dict[str, TemporalGraph] = {}
        self._dataset_path: Path | None = None

    @property
    def seed(self) -> int:
        return self.cfg.seed

    def artifact(self, name: str, override: str | None = None) -> Path:
        return Path(override) if override else self.out / ARTIFACTS[name][0]

    def require(self, name: str, path: Path) -> Path:
        if not path.exists():
            stage = ARTIFACTS[name][1]
            raise StageError(f"missing {name} artifact {path}; run the `{stage}` stage first")
        return path

    # manifest ---------------------------------------------------------

    @property
    def manifest_path(self) -> Path:
        return self.out / "manifest.json"

    def manifest(self) -> dict:
        if self.manifest_path.exists():
            return json.loads(self.manifest_path.read_text(encoding="utf-8"))
        return {"schema_version": SCHEMA_VERSION, "stages": {}}

    def run_stage(
        self, stage: str, params: dict, inputs: dict[str, str], outputs: list[Path], work: Callable[[dict], None]
    ) -> bool:
        key = sha256_json({"stage": stage, "params": params, "inputs": inputs, "seed": self.seed, "v": SCHEMA_VERSION})
        entry = self.manifest()["stages"].get(stage)
        if (
            not self.force
            and entry
            and entry.get("config_hash") == key
            and all(p.exists() and entry["outputs"].get(str(p)) == sha256_file(p) for p in outputs)
        ):
            log.info("%s: up to date (config %s), skipping", stage, key[:12])
            return False
        header = {"schema_version": SCHEMA_VERSION, "stage": stage, "config_hash": key, "seed": self.seed}
        work(header)
        manifest = self.manifest()
        manifest["stages"][stage] = {
            "config_hash": key,
            "seed": self.seed,
            "params": params,
            "inputs": inputs,
            "outputs": {str(p): sha256_file(p) for p in outputs},
        }
        write_atomic(self.manifest_path, json.dumps(manifest, indent=1, sort_keys=True) + "\n")
        log.info("%s: wrote %s", stage, ", ".join(str(p) for p in outputs))
        return True

    # dataset ----------------------------------------------------------

    def dataset_path(self, override: str | None = None) -> Path:
        if override:
            return Path(override)
        if self._dataset_path is None:
            ingest = self.require("ingest", self.artifact("ingest"))
            self._dataset_path = Path(json.loads(ingest.read_text(encoding="utf-8"))["dataset_path"])
        return self._dataset_path

    def graph(self, override: str | None = None) -> TemporalGraph:
        path = str(self.dataset_path(override))
        if path not in self._graphs:
            self._graphs[path] = load_dataset_dir(path, self.cfg.dataset.granularity)
        return self._graphs[path]

    def sampler_config(self) -> SamplerConfig:
        return dataclasses.replace(self.cfg.sampler, seed=self.seed)

    def filter_config(self) -> FilterConfig:
        return dataclasses.replace(self.cfg.filter, seed=self.seed)

    def gateway(self, graph: TemporalGraph | None = None):
        g = self.cfg.gateway
        if g.kind == "stub":
            extra = []
            if g.stub_extra == "vocab" and graph is not None:
                extra = [render_answer(i, graph.entities.label(i)) for i in graph.entities.ids()]
            return StubGenerator(extra=extra, seed=g.stub_seed), CachedEmbedder(
                HashEmbedder(g.dim, g.stub_seed), path=g.cache_path
            )
        gen = HttpGateway(g.url, timeout=g.timeout, retries=g.retries, dim=g.dim, max_in_flight=g.max_in_flight)
        emb = gen if not g.embed_url else HttpGateway(g.embed_url, timeout=g.timeout, retries=g.retries, dim=g.dim)
        return gen, CachedEmbedder(emb, dim=g.dim, path=g.cache_path)


def _gateway_params(cfg: PipelineConfig) -> dict:
    g = dataclasses.asdict(cfg.gateway)
    for k in ("timeout", "retries", "max_in_flight", "cache_path"):
        g.pop(k)
    return g


# ---------------------------------------------------------------- stages


def cmd_ingest(ctx: Context, args) -> None:
    path = Path(args.dataset or ctx.cfg.dataset.path or "")
    if not str(path) or not path.is_dir():
        raise StageError(f"dataset directory {str(path)!r} not found (set dataset.path or pass --dataset)")
    out = ctx.artifact("ingest")

    def work(header):
        graph = load_dataset_dir(path, ctx.cfg.dataset.granularity)
        payload = {**header, "dataset_path": str(path.resolve()), "dataset_hash": dataset_hash(path),
                   "stats": graph.stats()}
        write_atomic(out, json.dumps(payload, indent=1, sort_keys=True) + "\n")

    ctx.run_stage("ingest", {"granularity": ctx.cfg.dataset.granularity}, {"dataset": dataset_hash(path)}, [out], work)


def cmd_mine_rules(ctx: Context, args) -> None:
    data = ctx.dataset_path(args.dataset)
    out = ctx.artifact("rules", args.out)
    top_k = args.top_k or ctx.cfg.rules.top_k
    min_support = args.min_support if args.min_support is not None else ctx.cfg.rules.min_support

    def work(header):
        bank = mine_rules(ctx.graph(args.dataset).splits["train"], top_k=top_k, min_support=min_support)
        save_rules(bank, out, extra={"config_hash": header["config_hash"], "stage": "mine-rules"})

    ctx.run_stage(
        "mine-rules", {"top_k": top_k, "min_support": min_support}, {"dataset": dataset_hash(data)}, [out], work
    )


def cmd_sample(ctx: Context, args) -> None:
    data = ctx.dataset_path(args.dataset)
    rules_path = ctx.require("rules", ctx.artifact("rules", args.rules))
    out = ctx.artifact("histories", args.out)
    sc = ctx.sampler_config()
    if args.max_history:
        sc = dataclasses.replace(sc, max_history=args.max_history)
    if args.gamma:
        sc = SamplerConfig.from_gammas(_floats(args.gamma, 4, "--gamma"), max_history=sc.max_history,
                                       pool_multiplier=sc.pool_multiplier, seed=sc.seed, rule_top_k=sc.rule_top_k)
    split = args.split

    def work(header):
        graph = ctx.graph(args.dataset)
        bank = load_rules(rules_path)
        queries = graph.queries(split)
        results = sample_histories(graph, bank, queries, sc, jobs=ctx.jobs)
        records = [
            {
                "query_id": i,
                "subject": q.subject,
                "relation": q.relation,
                "time": q.time,
                "gold": q.gold,
                "facts": [list(f) for f in r.facts],
                "stage1_len": len(r.stage1),
            }
            for i, (q, r) in enumerate(zip(queries, results))
        ]
        write_atomic(out, dumps_jsonl({**header, "kind": "histories", "split": split}, records))

    params = {"split": split, "sampler": dataclasses.asdict(sc)}
    ctx.run_stage("sample", params, {"dataset": dataset_hash(data), "rules": sha256_file(rules_path)}, [out], work)


def cmd_build_prompts(ctx: Context, args) -> None:
    data = ctx.dataset_path(args.dataset)
    hist_path = ctx.require("histories", ctx.artifact("histories", args.histories))
    out = ctx.artifact("prompts", args.out)

    def work(header):
        graph = ctx.graph(args.dataset)
        _, histories = read_jsonl(hist_path)
        records = []
        for h in histories:
            q = Query(h["subject"], h["relation"], h["time"], h["gold"])
            facts = [Quadruple(*f) for f in h["facts"]]
            rec = build_prompt(graph, q, facts)
            entities = sorted({graph.entities.label(e) for f in facts for e in (f[0], f[2])})
            gold_label = graph.entities.label(q.gold) if q.gold is not None else None
            records.append(
                {
                    "query_id": h["query_id"],
                    "prompt": rec.full_prompt,
                    "gold": rec.gold_answer,
                    "history_len": len(facts),
                    "historical_flag": gold_label in entities,
                    "subject": q.subject,
                    "relation": q.relation,
                    "time": q.time,
                    "gold_id": q.gold,
                    "history_entities": entities,
                }
            )
        write_atomic(out, dumps_jsonl({**header, "kind": "prompts"}, records))

    ctx.run_stage("build-prompts", {}, {"dataset": dataset_hash(data), "histories": sha256_file(hist_path)}, [out], work)


def cmd_export_pairs(ctx: Context, args) -> None:
    data = ctx.dataset_path(args.dataset)
    rules_path = ctx.require("rules", ctx.artifact("rules", args.rules))
    polarity_path = Path(args.polarity or ctx.cfg.export.polarity or data / "polarity.json")
    if not polarity_path.exists():
        raise StageError(f"polarity file {polarity_path} not found (pass --polarity)")
    out = ctx.artifact("pairs", args.out)
    shots = args.shots or ctx.cfg.export.shots
    sc = ctx.sampler_config()

    def work(header):
        graph = ctx.graph(args.dataset)
        polarity = load_polarity(polarity_path, graph)
        export_training_pairs(graph, load_rules(rules_path), sc, polarity, shots, ctx.seed, out, ctx.cfg.export.split)

    params = {"shots": shots, "split": ctx.cfg.export.split, "sampler": dataclasses.asdict(sc)}
    inputs = {"dataset": dataset_hash(data), "rules": sha256_file(rules_path), "polarity": sha256_file(polarity_path)}
    try:
        ctx.run_stage("export-pairs", params, inputs, [out], work)
    except ValueError as exc:
        raise StageError(str(exc)) from None


def cmd_run(ctx: Context, args) -> None:
    prompts_path = ctx.require("prompts", ctx.artifact("prompts", args.prompts))
    out = ctx.artifact("traces", args.trace_out)
    fc = ctx.filter_config()
    overrides = {k: v for k, v in (("tau", args.tau), ("k", args.k), ("beta", args.beta)) if v is not None}
    fc = dataclasses.replace(fc, **overrides)
    needs_vocab = ctx.cfg.gateway.kind == "stub" and ctx.cfg.gateway.stub_extra == "vocab"
    inputs = {"prompts": sha256_file(prompts_path)}
    if needs_vocab:
        inputs["dataset"] = dataset_hash(ctx.dataset_path(args.dataset))

    def work(header):
        graph = ctx.graph(args.dataset) if needs_vocab else None
        generator, embedder = ctx.gateway(graph)
        _, prompts = read_jsonl(prompts_path)

        def one(p):
            record = PromptRecord.from_text(p["prompt"], p.get("gold"))
            trace = filter_predict(record, generator, embedder, fc, query_id=p["query_id"])
            d = trace.to_dict()
            for key in ("subject", "relation", "time", "gold_id", "gold", "history_len", "history_entities",
                        "historical_flag"):
                if key in p:
                    d[key] = p[key]
            return d

        if ctx.jobs > 1:
            with ThreadPoolExecutor(max_workers=ctx.jobs) as pool:
                traces = list(pool.map(one, prompts))
        else:
            traces = [one(p) for p in prompts]
        if isinstance(embedder, CachedEmbedder):
            embedder.save()
        write_atomic(out, dumps_jsonl({**header, "kind": "traces", "filter": dataclasses.asdict(fc)}, traces))

    params = {"filter": dataclasses.asdict(fc), "gateway": _gateway_params(ctx.cfg)}
    ctx.run_stage("run", params, inputs, [out], work)


def cmd_calibrate(ctx: Context, args) -> None:
    out = ctx.artifact("tau", args.out)
    if args.records:
        src = Path(args.records)
        if not src.exists():
            raise StageError(f"similarity records {src} not found")
    else:
        src = ctx.require("traces", ctx.artifact("traces", args.traces))

    def work(header):
        _, rows = read_jsonl(src)
        if args.records:
            pairs = [(float(r["similarity"]), bool(r["correct"])) for r in rows]
        else:
            pairs = _similarity_records(rows)
        try:
            tau, separation = calibrate_threshold(pairs)
        except ValueError as exc:
            raise StageError(f"calibrate: {exc}") from None
        payload = {**header, "tau": tau, "separation": separation, "num_records": len(pairs)}
        write_atomic(out, json.dumps(payload, indent=1, sort_keys=True) + "\n")

    ctx.run_stage("calibrate", {"source": "records" if args.records else "traces"}, {"records": sha256_file(src)},
                  [out], work)


def _similarity_records(traces: list[dict]) -> list[tuple[float, bool]]:
    """(similarity, correct) for every attempt that computed a similarity."""
    out = []
    for t in traces:
        gold = t.get("gold")
        gold_label = gold.split(".", 1)[1] if gold else None
        for a in t["attempts"]:
            if a["similarity"] is not None:
                out.append((a["similarity"], a["prediction"] == gold_label))
    return out


def _records_from_traces(graph: TemporalGraph, traces: list[dict]):
    records = []
    for t in traces:
        q = Query(t["subject"], t["relation"], t["time"], t.get("gold_id"))
        records.append(
            make_record(graph, q, t.get("ranked_predictions") or [], t.get("history_entities", []),
                        t.get("history_len", 0))
        )
    return records


def cmd_eval(ctx: Context, args) -> None:
    data = ctx.dataset_path(args.dataset)
    traces_path = ctx.require("traces", ctx.artifact("traces", args.traces))
    out = ctx.artifact("report", args.report)
    filter_splits = ctx.cfg.eval.filter_splits

    def work(header):
        graph = ctx.graph(args.dataset)
        _, traces = read_jsonl(traces_path)
        report = evaluate(_records_from_traces(graph, traces), TrueFacts(graph, filter_splits))
        payload = {**header, "kind": "report", **report.to_dict()}
        write_atomic(out, json.dumps(payload, indent=1, sort_keys=True) + "\n")

    inputs = {"dataset": dataset_hash(data), "traces": sha256_file(traces_path)}
    ctx.run_stage("eval", {"filter_splits": filter_splits}, inputs, [out], work)


def cmd_analyze(ctx: Context, args) -> None:
    data = ctx.dataset_path(args.dataset)
    traces_path = ctx.require("traces", ctx.artifact("traces", args.traces))
    out = ctx.artifact("analysis", args.out)
    split = ctx.cfg.eval.split

    def work(header):
        graph = ctx.graph(args.dataset)
        _, traces = read_jsonl(traces_path)
        _, embedder = ctx.gateway(graph)
        curve = semantic_distance_curve(_records_from_traces(graph, traces), embedder)
        payload = {
            **header,
            "kind": "analysis",
            "split": split,
            "reachability": analyze_reachability(graph, graph.queries(split)),
            "semantic_distance": {str(k): v for k, v in curve.items()},
        }
        write_atomic(out, json.dumps(payload, indent=1, sort_keys=True) + "\n")

    params = {"split": split, "gateway": _gateway_params(ctx.cfg)}
    ctx.run_stage("analyze", params, {"dataset": dataset_hash(data), "traces": sha256_file(traces_path)}, [out], work)


def cmd_pipeline(ctx: Context, args) -> None:
    blank = argparse.Namespace(
        dataset=args.dataset, out=None, rules=None, histories=None, prompts=None, traces=None, trace_out=None,
        report=None, records=None, top_k=None, min_support=None, max_history=None, gamma=None, split="test",
        tau=None, k=None, beta=None,
    )
    cmd_ingest(ctx, blank)
    cmd_mine_rules(ctx, blank)
    cmd_sample(ctx, blank)
    cmd_build_prompts(ctx, blank)
    cmd_run(ctx, blank)
    cmd_eval(ctx, blank)
    cmd_analyze(ctx, blank)


def _floats(text: str, n: int, flag: str) -> list[float]:
    try:
        vals = [float(x) for x in text.split(",")]
    except ValueError:
        raise ConfigError(f"{flag} expects {n} comma-separated numbers") from None
    if len(vals) != n:
        raise ConfigError(f"{flag} expects {n} comma-separated numbers, got {len(vals)}")
    return vals


# ---------------------------------------------------------------- argument parsing


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", default=argparse.SUPPRESS, help="TOML or JSON pipeline config")
    common.add_argument("--seed", type=int, default=argparse.SUPPRESS, help="pipeline seed (overrides config)")
    common.add_argument("--jobs", type=int, default=argparse.SUPPRESS, help="intra-stage worker threads")
    common.add_argument("--force", action="store_true", default=argparse.SUPPRESS, help="ignore the manifest")
    common.add_argument("--out-dir", default=argparse.SUPPRESS, help="artifact directory (overrides config)")
    common.add_argument("-v", "--verbose", action="store_true", default=argparse.SUPPRESS)

    parser = argparse.ArgumentParser(prog="tkgf", description=__doc__.splitlines()[0], parents=[common])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    def add(name, func, help_text, aliases=()):
        p = sub.add_parser(name, help=help_text, description=help_text, parents=[common], aliases=list(aliases))
        p.set_defaults(func=func)
        p.add_argument("--dataset", help="dataset directory (defaults to the ingested one)")
        return p

    add("ingest", cmd_ingest, "Load and validate a dataset directory, write split statistics.")

    p = add("mine-rules", cmd_mine_rules, "Mine single-body temporal rules from the training split.")
    p.add_argument("--top-k", type=int)
    p.add_argument("--min-support", type=int)
    p.add_argument("--out")

    p = add("sample", cmd_sample, "Sample a history for every query of a split.")
    p.add_argument("--rules")
    p.add_argument("--split", default="test", choices=["train", "valid", "test"])
    p.add_argument("--max-history", type=int)
    p.add_argument("--gamma", help="four comma-separated decay parameters")
    p.add_argument("--out")

    p = add("build-prompts", cmd_build_prompts, "Render sampled histories into instruction prompts.")
    p.add_argument("--histories")
    p.add_argument("--out")

    p = add("export-pairs", cmd_export_pairs, "Export prompts with contrastive groups for external fine-tuning.")
    p.add_argument("--rules")
    p.add_argument("--polarity")
    p.add_argument("--shots", type=int)
    p.add_argument("--out")

    p = add("run", cmd_run, "Generate and filter predictions for every prompt.", aliases=["filter-run"])
    p.add_argument("--prompts")
    p.add_argument("--tau", type=float)
    p.add_argument("--k", type=int)
    p.add_argument("--beta", type=float)
    p.add_argument("--trace-out")

    p = add("calibrate", cmd_calibrate, "Pick the similarity threshold that best separates correct predictions.")
    p.add_argument("--records", help="JSONL of {similarity, correct}")
    p.add_argument("--traces", help="derive records from filter traces instead")
    p.add_argument("--out")

    p = add("eval", cmd_eval, "Score traces with temporal-aware filtered Hits@1/3/10.")
    p.add_argument("--traces")
    p.add_argument("--report")

    p = add("analyze", cmd_analyze, "Reachability histogram and semantic distance by history length.")
    p.add_argument("--traces")
    p.add_argument("--out")

    add("pipeline", cmd_pipeline, "Run ingest through analyze in order.")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if getattr(args, "verbose", False) else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        cfg = load_config(getattr(args, "config", None))
        if hasattr(args, "seed"):
            cfg.seed = args.seed
        if hasattr(args, "out_dir"):
            cfg.out_dir = args.out_dir
        ctx = Context(cfg, force=getattr(args, "force", False), jobs=getattr(args, "jobs", 1))
        args.func(ctx, args)
    except (StageError, ConfigError) as exc:
        log.error("%s", exc)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
