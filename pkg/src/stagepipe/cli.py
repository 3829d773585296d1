"""Command-line entry point: ingest, index, run, sweep, evaluate.

Configuration precedence is flags > environment > config file > defaults.
Defaults match the reference protocol: k=5 retrieved chunks, similarity
threshold 80, 40 induction reports drawn from eight 100-report train splits
seeded from 0. Runs against a scripted backend are fully deterministic:
rerunning a command with the same config reproduces every output byte.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path
from typing import Sequence

from . import evaluation, memory, pipelines, prompts, retrieval
from .corpus import (
    Corpus,
    CorpusError,
    StageCategory,
    label_distribution,
    load_corpus,
    make_splits,
    truncate_train,
)
from .llm import (
    HttpChatBackend,
    HttpEmbedBackend,
    LlmClient,
    LlmError,
    scripted_backend,
)
from .pipelines import PipelineError, PredictionRecord, record_from_json, record_to_json
from .retrieval import RetrievalError, RetrievalQuery

log = logging.getLogger(__name__)

DEFAULTS: dict = {
    "category": None,
    "method": None,
    "corpus": None,
    "guideline": None,
    "index": None,
    "k": 5,
    "threshold": 80.0,
    "n_train": 40,
    "n_splits": 8,
    "seed": 0,
    "train_size": 100,
    "out": "runs/out",
    "script": None,
    "rag_query_mode": "guideline",
    "templates": None,
    "llm_base": None,
    "llm_key": "",
    "llm_model": "default",
    "embed_base": None,
    "embed_key": "",
    "embed_model": "default",
    "temperature": 0.0,
    "max_tokens": 1024,
    "chunk_max_chars": 1200,
    "chunk_overlap": 0,
    "query": None,
}

_ENV_KEYS = {
    "STAGEPIPE_LLM_BASE": "llm_base",
    "STAGEPIPE_LLM_KEY": "llm_key",
    "STAGEPIPE_EMBED_BASE": "embed_base",
    "STAGEPIPE_EMBED_KEY": "embed_key",
}


class UsageError(ValueError):
    """Bad flags/config combination; reported before any work starts."""


@dataclass
class RunConfig:
    values: dict

    def __getattr__(self, name: str):
        try:
            return self.values[name]
        except KeyError:
            raise AttributeError(name)

    @property
    def category_enum(self) -> StageCategory:
        if self.values.get("category") not in ("T", "N"):
            raise UsageError("--category must be T or N")
        return StageCategory(self.values["category"])


def resolve_config(args: argparse.Namespace) -> RunConfig:
    merged = dict(DEFAULTS)
    config_path = getattr(args, "config", None)
    if config_path:
        try:
            file_cfg = json.loads(Path(config_path).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"cannot read config file {config_path}: {exc}")
        unknown = set(file_cfg) - set(DEFAULTS)
        if unknown:
            raise UsageError(f"unknown config key(s): {sorted(unknown)}")
        merged.update(file_cfg)
    for env_name, key in _ENV_KEYS.items():
        if env_name in os.environ:
            merged[key] = os.environ[env_name]
    for key in DEFAULTS:
        flag_val = getattr(args, key, None)
        if flag_val is not None:
            merged[key] = flag_val
    return RunConfig(merged)


def _build_client(cfg: RunConfig) -> LlmClient:
    if cfg.script:
        backend = scripted_backend(cfg.script)
        return LlmClient(chat_backend=backend, embed_backend=backend)
    chat = (
        HttpChatBackend(cfg.llm_base, cfg.llm_key, model=cfg.llm_model)
        if cfg.llm_base
        else None
    )
    embed = (
        HttpEmbedBackend(cfg.embed_base, cfg.embed_key, model=cfg.embed_model)
        if cfg.embed_base
        else None
    )
    return LlmClient(chat_backend=chat, embed_backend=embed)


def _templates(cfg: RunConfig, category: StageCategory) -> prompts.TemplateRegistry:
    if cfg.templates:
        return prompts.load_templates(
            cfg.templates,
            category,
            temperature=cfg.temperature,
            max_tokens=cfg.max_tokens,
        )
    return prompts.default_templates(
        category, temperature=cfg.temperature, max_tokens=cfg.max_tokens
    )


def _write_json(path: Path, obj) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(
        json.dumps(obj, indent=2, sort_keys=True, ensure_ascii=False) + "\n",
        encoding="utf-8",
    )


def _write_jsonl(path: Path, rows: Sequence[dict]) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as fh:
        for row in rows:
            fh.write(json.dumps(row, sort_keys=True, ensure_ascii=False) + "\n")


def _redact(cfg: RunConfig) -> dict:
    out = dict(cfg.values)
    for secret in ("llm_key", "embed_key"):
        out[secret] = bool(out.get(secret))
    return out


def _manifest(
    cfg: RunConfig,
    command: str,
    client: LlmClient | None,
    *,
    seeds: list[int] | None = None,
    template_hashes: dict | None = None,
    doc_hash: str | None = None,
    query: str | None = None,
    query_provenance: str | None = None,
    status: str = "ok",
    error: str | None = None,
    sweep: dict | None = None,
) -> dict:
    deterministic = client.deterministic if client is not None else False
    chat_model = getattr(client.chat_backend, "model_id", None) if client else None
    embed_model = getattr(client.embed_backend, "model_id", None) if client else None
    return {
        "command": command,
        "method": cfg.values.get("method"),
        "category": cfg.values.get("category"),
        "config": _redact(cfg),
        "seeds": seeds,
        "template_hashes": template_hashes,
        "model_ids": {"chat": chat_model, "embed": embed_model},
        "doc_hash": doc_hash,
        "query": query,
        "query_provenance": query_provenance,
        "sweep": sweep,
        "timestamp": None if deterministic else datetime.now(timezone.utc).isoformat(),
        "status": status,
        "error": error,
    }


# --------------------------------------------------------------------------
# subcommands
# --------------------------------------------------------------------------


def cmd_ingest(cfg: RunConfig) -> int:
    if not cfg.corpus:
        raise UsageError("--corpus is required")
    corpus = load_corpus(cfg.corpus)
    print(f"Loaded {len(corpus)} reports from {cfg.corpus}")
    for category in (StageCategory.T, StageCategory.N):
        counts = label_distribution(corpus, category)
        names = category.label_names()
        header = f"{category.value + ' Category':<12}" + "".join(
            f"{n:>8}" for n in names
        ) + f"{'Total':>8}"
        values = f"{'':<12}" + "".join(f"{counts[n]:>8}" for n in names)
        values += f"{sum(counts.values()):>8}"
        print(header)
        print(values)
    return 0


def _load_or_build_index(
    cfg: RunConfig, client: LlmClient
) -> tuple[retrieval.ChunkIndex, str]:
    """Returns (index, doc_hash). Prefers --index; else chunks --guideline."""
    if cfg.index:
        idx = retrieval.load_index(cfg.index)
        return idx, idx.doc_hash
    doc = Path(cfg.guideline).read_text(encoding="utf-8")
    chunks = retrieval.chunk_document(
        doc, max_chars=cfg.chunk_max_chars, overlap_chars=cfg.chunk_overlap
    )
    doc_hash = retrieval.hash_document(doc)
    return retrieval.build_index(chunks, client.embed, doc_hash), doc_hash


def cmd_index(cfg: RunConfig) -> int:
    if not cfg.guideline:
        raise UsageError("--guideline is required for index")
    if not cfg.out:
        raise UsageError("--out (index file path) is required for index")
    client = _build_client(cfg)
    if client.embed_backend is None:
        raise UsageError(
            "no embedding backend configured (set STAGEPIPE_EMBED_BASE or --script)"
        )
    index, _ = _load_or_build_index(cfg, client)
    out = Path(cfg.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    retrieval.save_index(index, out)
    print(f"Indexed {len(index)} chunks (dim {index.dim}) -> {out}")
    return 0


def _score_block(
    records: list[PredictionRecord], corpus: Corpus, category: StageCategory
) -> tuple[dict, evaluation.MacroMetrics]:
    evaluable = [
        r for r in records if corpus.by_id[r.report_id].gold_label(category) is not None
    ]
    if not evaluable:
        raise PipelineError(f"no records carry a gold {category.value} label")
    _, macro = evaluation.score(evaluable, corpus, category)
    n_errors = evaluation.count_errors(evaluable, corpus, category)
    block = {
        "n_evaluated": len(evaluable),
        "macro": {
            "precision": macro.precision,
            "recall": macro.recall,
            "f1": macro.f1,
        },
        "per_class": [
            {
                "label": cm.label.render(),
                "precision": cm.precision,
                "recall": cm.recall,
                "f1": cm.f1,
            }
            for cm in macro.per_class
        ],
        "num_errors": n_errors,
        "error_pct": evaluation.format_error_pct(n_errors, len(evaluable)),
    }
    return block, macro


def _run_kewltm(
    cfg: RunConfig,
    corpus: Corpus,
    category: StageCategory,
    client: LlmClient,
    registry: prompts.TemplateRegistry,
    out: Path,
) -> tuple[dict, list[dict], list[int]]:
    splits = make_splits(corpus, cfg.n_splits, cfg.train_size, cfg.seed)
    by_id = corpus.by_id
    prediction_rows: list[dict] = []
    per_split_metrics: list[dict] = []
    macros: list[evaluation.MacroMetrics] = []
    error_counts: list[int] = []
    totals: list[int] = []
    all_traces: list[list[memory.UpdateTrace]] = []
    for i, split in enumerate(splits):
        split = truncate_train(split, cfg.n_train)
        train_reports = [by_id[rid] for rid in split.train_ids]
        induction = pipelines.induce_ltm(
            train_reports, category, client, registry, threshold=cfg.threshold
        )
        if induction.final_memory is None:
            raise PipelineError(f"split {i}: induction produced no memory")
        memory.persist(induction.final_memory, out / f"memory_split{i}.json")
        memory.write_traces(induction.traces, out / f"trace_split{i}.csv")
        all_traces.append(list(induction.traces))
        test_reports = [by_id[rid] for rid in split.test_ids]
        records = pipelines.run_kewltm_inference(
            test_reports, category, induction.final_memory, client, registry
        )
        prediction_rows += [record_to_json(r, split=i) for r in records]
        block, macro = _score_block(records, corpus, category)
        block.update({"split": i, "seed": split.seed,
                      "memory_version": induction.final_memory.version})
        per_split_metrics.append(block)
        macros.append(macro)
        error_counts.append(block["num_errors"])
        totals.append(block["n_evaluated"])
    mean_errors = sum(error_counts) / len(error_counts)
    metrics = {
        "per_split": per_split_metrics,
        "aggregate": evaluation.aggregate_macro_runs(macros),
        "num_errors_mean": evaluation.format_error_count(
            mean_errors, multi_run=len(splits) > 1
        ),
        "error_pct": (
            evaluation.format_error_pct(mean_errors, totals[0])
            if len(set(totals)) == 1
            else None
        ),
    }
    curve = evaluation.memory_curve(all_traces)
    evaluation.write_curve_csv(curve, out / "curves.csv")
    return metrics, prediction_rows, [s.seed for s in splits]


def cmd_run(cfg: RunConfig) -> int:
    method = cfg.values.get("method")
    if method not in pipelines.METHODS:
        raise UsageError(f"--method must be one of {pipelines.METHODS}")
    if not cfg.corpus:
        raise UsageError("--corpus is required")
    category = cfg.category_enum
    if method in ("rag", "kewrag") and not (cfg.guideline or cfg.index):
        raise UsageError(f"--guideline (or --index) is required for method {method}")
    client = _build_client(cfg)
    if client.chat_backend is None:
        raise UsageError("no chat backend configured (set STAGEPIPE_LLM_BASE or --script)")
    if method in ("rag", "kewrag") and client.embed_backend is None:
        raise UsageError(
            "no embedding backend configured (set STAGEPIPE_EMBED_BASE or --script)"
        )
    registry = _templates(cfg, category)
    corpus = load_corpus(cfg.corpus)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    query_text = cfg.query or retrieval.DEFAULT_QUERIES[category]
    query_provenance = (
        "user" if cfg.query else retrieval.QUERY_PROVENANCE[category]
    )
    doc_hash: str | None = None
    seeds: list[int] | None = None
    try:
        if method == "kewltm":
            metrics, prediction_rows, seeds = _run_kewltm(
                cfg, corpus, category, client, registry, out
            )
        else:
            if method == "zscot":
                records = pipelines.run_zscot(list(corpus), category, client, registry)
            elif method == "rag":
                index, doc_hash = _load_or_build_index(cfg, client)
                records = pipelines.run_rag(
                    list(corpus),
                    category,
                    client,
                    index,
                    RetrievalQuery(query_text, cfg.k),
                    registry,
                    rag_query_mode=cfg.rag_query_mode,
                )
            else:  # kewrag
                index, doc_hash = _load_or_build_index(cfg, client)
                elicited = pipelines.elicit_kewrag_rules(
                    index, RetrievalQuery(query_text, cfg.k), client, registry
                )
                memory.persist(elicited.memory, out / "rules.json")
                records = pipelines.run_kewrag_inference(
                    list(corpus),
                    category,
                    elicited.memory,
                    client,
                    registry,
                    chunk_ids=elicited.chunk_ids,
                )
            prediction_rows = [record_to_json(r) for r in records]
            metrics, _ = _score_block(records, corpus, category)
    except (PipelineError, LlmError, RetrievalError, CorpusError) as exc:
        _write_json(
            out / "manifest.json",
            _manifest(
                cfg,
                "run",
                client,
                seeds=seeds,
                template_hashes=registry.hashes(),
                doc_hash=doc_hash,
                query=query_text if method in ("rag", "kewrag") else None,
                query_provenance=query_provenance if method in ("rag", "kewrag") else None,
                status="FAILED",
                error=str(exc),
            ),
        )
        print(f"error: {exc}", file=sys.stderr)
        return 1
    _write_jsonl(out / "predictions.jsonl", prediction_rows)
    _write_json(out / "metrics.json", metrics)
    _write_json(
        out / "manifest.json",
        _manifest(
            cfg,
            "run",
            client,
            seeds=seeds,
            template_hashes=registry.hashes(),
            doc_hash=doc_hash,
            query=query_text if method in ("rag", "kewrag") else None,
            query_provenance=query_provenance if method in ("rag", "kewrag") else None,
        ),
    )
    if method == "kewltm":
        agg = metrics["aggregate"]
        print(
            f"kewltm {category.value}: precision {agg['precision']} "
            f"recall {agg['recall']} f1 {agg['f1']} over {len(seeds or [])} splits"
        )
    else:
        m = metrics["macro"]
        print(
            f"{method} {category.value}: precision {m['precision']:.3f} "
            f"recall {m['recall']:.3f} f1 {m['f1']:.3f} "
            f"errors {metrics['num_errors']} ({metrics['error_pct']})"
        )
    return 0


def _parse_int_list(text: str, flag: str) -> list[int]:
    try:
        values = [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise UsageError(f"{flag} must be a comma-separated integer list")
    if not values:
        raise UsageError(f"{flag} must be non-empty")
    return values


def _parse_float_list(text: str, flag: str) -> list[float]:
    try:
        values = [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise UsageError(f"{flag} must be a comma-separated number list")
    if not values:
        raise UsageError(f"{flag} must be non-empty")
    return values


def cmd_sweep(cfg: RunConfig, train_counts: list[int] | None, thresholds: list[float] | None) -> int:
    if cfg.values.get("method") not in (None, "kewltm"):
        raise UsageError("sweep supports only method kewltm")
    if bool(train_counts) == bool(thresholds):
        raise UsageError("provide exactly one of --train-counts or --thresholds")
    if not cfg.corpus:
        raise UsageError("--corpus is required")
    category = cfg.category_enum
    client = _build_client(cfg)
    if client.chat_backend is None:
        raise UsageError("no chat backend configured (set STAGEPIPE_LLM_BASE or --script)")
    registry = _templates(cfg, category)
    corpus = load_corpus(cfg.corpus)
    by_id = corpus.by_id
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    splits = make_splits(corpus, cfg.n_splits, cfg.train_size, cfg.seed)
    param = "n_train" if train_counts else "threshold"
    points: list = train_counts if train_counts else thresholds  # type: ignore[assignment]
    metric_lines = [f"{param},split,seed,precision,recall,f1"]
    curve_lines = [f"{param},step,mean_len"]
    try:
        for point in points:
            n_train = point if train_counts else cfg.n_train
            threshold = cfg.threshold if train_counts else point
            macros = []
            traces_per_split = []
            for i, split in enumerate(splits):
                split = truncate_train(split, int(n_train))
                train_reports = [by_id[rid] for rid in split.train_ids]
                induction = pipelines.induce_ltm(
                    train_reports, category, client, registry, threshold=float(threshold)
                )
                if induction.final_memory is None:
                    raise PipelineError(
                        f"{param}={point} split {i}: induction produced no memory"
                    )
                traces_per_split.append(list(induction.traces))
                test_reports = [by_id[rid] for rid in split.test_ids]
                records = pipelines.run_kewltm_inference(
                    test_reports, category, induction.final_memory, client, registry
                )
                evaluable = [
                    r
                    for r in records
                    if by_id[r.report_id].gold_label(category) is not None
                ]
                _, macro = evaluation.score(evaluable, corpus, category)
                macros.append(macro)
                metric_lines.append(
                    f"{point},{i},{split.seed},{macro.precision!r},"
                    f"{macro.recall!r},{macro.f1!r}"
                )
            mean_p = sum(m.precision for m in macros) / len(macros)
            mean_r = sum(m.recall for m in macros) / len(macros)
            mean_f = sum(m.f1 for m in macros) / len(macros)
            metric_lines.append(f"{point},mean,,{mean_p!r},{mean_r!r},{mean_f!r}")
            for step, mean_len in evaluation.memory_curve(traces_per_split):
                curve_lines.append(f"{point},{step},{mean_len!r}")
    except (PipelineError, LlmError, CorpusError) as exc:
        _write_json(
            out / "manifest.json",
            _manifest(
                cfg,
                "sweep",
                client,
                template_hashes=registry.hashes(),
                sweep={param: points},
                status="FAILED",
                error=str(exc),
            ),
        )
        print(f"error: {exc}", file=sys.stderr)
        return 1
    (out / "sweep_metrics.csv").write_text("\n".join(metric_lines) + "\n", encoding="utf-8")
    (out / "sweep_curves.csv").write_text("\n".join(curve_lines) + "\n", encoding="utf-8")
    _write_json(
        out / "manifest.json",
        _manifest(
            cfg,
            "sweep",
            client,
            seeds=[s.seed for s in splits],
            template_hashes=registry.hashes(),
            sweep={param: points},
        ),
    )
    print(f"swept {param} over {points} -> {out}")
    return 0


def _load_predictions(path: str | Path, category: StageCategory) -> list[PredictionRecord]:
    records = []
    with Path(path).open("r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                rec = record_from_json(json.loads(line))
            except (json.JSONDecodeError, KeyError, ValueError, PipelineError) as exc:
                raise UsageError(f"{path} line {lineno}: {exc}")
            if rec.category is not category:
                raise UsageError(
                    f"{path} line {lineno}: record category {rec.category.value} "
                    f"does not match --category {category.value}"
                )
            records.append(rec)
    if not records:
        raise UsageError(f"{path}: no prediction records found")
    return records


def cmd_evaluate(cfg: RunConfig, prediction_paths: list[str]) -> int:
    if not cfg.corpus:
        raise UsageError("--corpus is required")
    if not 1 <= len(prediction_paths) <= 2:
        raise UsageError("evaluate takes one or two prediction files")
    category = cfg.category_enum
    corpus = load_corpus(cfg.corpus)
    by_id = corpus.by_id
    record_sets = []
    for path in prediction_paths:
        records = _load_predictions(path, category)
        for rec in records:
            if rec.report_id not in by_id:
                raise UsageError(
                    f"{path}: record references unknown report id {rec.report_id!r}"
                )
        evaluable = [
            r for r in records if by_id[r.report_id].gold_label(category) is not None
        ]
        skipped = len(records) - len(evaluable)
        _, macro = evaluation.score(evaluable, corpus, category)
        n_errors = evaluation.count_errors(evaluable, corpus, category)
        print(f"== {path} ==")
        if skipped:
            print(f"(skipped {skipped} records without a gold {category.value} label)")
        print(evaluation.render_metrics_table(macro))
        print(
            f"num_errors={n_errors} of {len(evaluable)} "
            f"error_pct={evaluation.format_error_pct(n_errors, len(evaluable))}"
        )
        record_sets.append(evaluable)
    if len(record_sets) == 2:
        a_only, b_only = evaluation.compare_unique_errors(
            record_sets[0], record_sets[1], corpus, category
        )
        print(f"unique errors of {prediction_paths[0]} ({len(a_only)}): {', '.join(a_only)}")
        print(f"unique errors of {prediction_paths[1]} ({len(b_only)}): {', '.join(b_only)}")
    return 0


# --------------------------------------------------------------------------
# parser
# --------------------------------------------------------------------------


def _add_shared_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON config file")
    p.add_argument("--category", choices=["T", "N"])
    p.add_argument("--method", choices=list(pipelines.METHODS))
    p.add_argument("--corpus", help="corpus JSONL file")
    p.add_argument("--guideline", help="guideline text/markdown file")
    p.add_argument("--index", help="pre-built index JSON file")
    p.add_argument("--k", type=int, help="retrieved chunks per query (default 5)")
    p.add_argument("--threshold", type=float, help="similarity gate threshold (default 80)")
    p.add_argument("--n-train", dest="n_train", type=int, help="induction reports (default 40)")
    p.add_argument("--splits", dest="n_splits", type=int, help="number of splits (default 8)")
    p.add_argument("--train-size", dest="train_size", type=int, help="train ids per split (default 100)")
    p.add_argument("--seed", type=int, help="base seed (default 0)")
    p.add_argument("--out", help="output directory (or file for index)")
    p.add_argument("--script", help="scripted backend file (offline deterministic runs)")
    p.add_argument("--rag-query-mode", dest="rag_query_mode", choices=list(pipelines.RAG_QUERY_MODES))
    p.add_argument("--templates", help="prompt template override directory")
    p.add_argument("--query", help="retrieval query text (defaults to the category query)")
    p.add_argument("--llm-model", dest="llm_model", help="chat model id")
    p.add_argument("--embed-model", dest="embed_model", help="embedding model id")
    p.add_argument("--temperature", type=float)
    p.add_argument("--max-tokens", dest="max_tokens", type=int)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="stagepipe",
        description="Staging workflows and evaluation protocol for pathology reports",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, helptext in [
        ("ingest", "validate a corpus file and print its label distribution"),
        ("index", "chunk and embed a guideline document into an index file"),
        ("run", "run one workflow end to end and write predictions + metrics"),
        ("sweep", "rerun induction across train counts or thresholds"),
        ("evaluate", "score prediction files against a corpus"),
    ]:
        p = sub.add_parser(name, help=helptext)
        _add_shared_flags(p)
        if name == "sweep":
            p.add_argument("--train-counts", dest="train_counts",
                           help="comma-separated induction sizes, e.g. 10,20,...")
            p.add_argument("--thresholds", help="comma-separated gate thresholds, e.g. 0,80")
        if name == "evaluate":
            p.add_argument("--predictions", nargs="+", required=True,
                           help="one or two prediction JSONL files")
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = resolve_config(args)
        if args.command == "ingest":
            return cmd_ingest(cfg)
        if args.command == "index":
            return cmd_index(cfg)
        if args.command == "run":
            return cmd_run(cfg)
        if args.command == "sweep":
            train_counts = (
                _parse_int_list(args.train_counts, "--train-counts")
                if args.train_counts
                else None
            )
            thresholds = (
                _parse_float_list(args.thresholds, "--thresholds")
                if args.thresholds
                else None
            )
            return cmd_sweep(cfg, train_counts, thresholds)
        if args.command == "evaluate":
            return cmd_evaluate(cfg, args.predictions)
        parser.error(f"unknown command {args.command}")
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 2
    except (CorpusError, LlmError, RetrievalError, PipelineError,
            evaluation.EvaluationError, memory.RuleMemoryError,
            prompts.TemplateError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
