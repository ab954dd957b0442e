"""Command line entry point: ``dmqr {index,rewrite,ask,eval,cache}``.

Exit codes: 0 success (including degraded runs), 1 data errors,
2 dependency or configuration errors.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import tempfile
from pathlib import Path
from typing import Any, Mapping, Sequence

from . import __version__
from .errors import (
    ConfigError,
    DmqrError,
    DuplicateDocId,
    EmptyCorpus,
    IndexMissing,
    PipelineError,
    ServiceError,
    UnknownStrategy,
)
from .evaluation import (
    DatasetError,
    GoldLabelJudge,
    LlmJudge,
    load_dataset,
    run_experiment,
)
from .llm import HttpCompleter, ScriptedCompleter
from .model import DMQR_POOL, PipelineConfig, Query
from .pipeline import METHODS, Deps, method_config, run
from .ranking import RemoteReranker
from .retrieval import (
    LocalRetriever,
    RemoteSearchRetriever,
    SearchCache,
    build_index,
    load_corpus,
)
from .rewriting import default_pool, rewrite_with_fallback
from .selection import load_demonstrations, select_strategies

log = logging.getLogger("dmqr")

DEFAULT_CONFIG_PATH = Path("~/.config/dmqr/config.json")
SECRET_KEYS = ("llm_key", "search_key", "reranker_key")

DEFAULTS: dict[str, Any] = {
    "llm_url": None,
    "llm_key": None,
    "llm_model": "gpt-4",
    "llm_mock": None,
    "search_url": None,
    "search_key": None,
    "reranker_url": None,
    "reranker_key": None,
    "cache_dir": str(Path("~/.cache/dmqr").expanduser()),
    "no_cache": False,
    "index": None,
    "retriever": "local",
    "reranker": "rrf",
    "selection": "all",
    "method": "dmqr",
    "per_query_limit": 10,
    "context_size": 5,
    "rrf_constant": 60,
    "concurrency": 4,
    "templates_dir": None,
    "demos": None,
    "judge": "auto",
    "workers": 4,
}

ENV_KEYS = {
    "DMQR_LLM_URL": "llm_url",
    "DMQR_LLM_KEY": "llm_key",
    "DMQR_LLM_MODEL": "llm_model",
    "DMQR_LLM_MOCK": "llm_mock",
    "DMQR_SEARCH_URL": "search_url",
    "DMQR_SEARCH_KEY": "search_key",
    "DMQR_RERANK_URL": "reranker_url",
    "DMQR_CACHE_DIR": "cache_dir",
    "DMQR_INDEX": "index",
}


def resolve_config(
    flags: Mapping[str, Any], env: Mapping[str, str], config_path: str | None
) -> dict[str, Any]:
    """Merge defaults < config file < environment < flags."""
    merged = dict(DEFAULTS)
    path = Path(config_path).expanduser() if config_path else DEFAULT_CONFIG_PATH.expanduser()
    if path.is_file():
        try:
            data = json.loads(path.read_text(encoding="utf-8"))
        except ValueError as exc:
            raise ConfigError(f"{path}: invalid JSON: {exc}") from exc
        if not isinstance(data, dict):
            raise ConfigError(f"{path}: config must be a flat JSON object")
        unknown = set(data) - set(DEFAULTS)
        if unknown:
            raise ConfigError(f"{path}: unknown keys {sorted(unknown)}")
        merged.update(data)
    elif config_path:
        raise ConfigError(f"config file {path} does not exist")
    for var, key in ENV_KEYS.items():
        if env.get(var):
            merged[key] = env[var]
    for key, value in flags.items():
        if key in DEFAULTS and value is not None:
            merged[key] = value
    return merged


def write_atomic(path: str | Path, text: str) -> None:
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}-", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        Path(tmp).unlink(missing_ok=True)
        raise


def redacted(config: Mapping[str, Any]) -> dict[str, Any]:
    return {k: ("***" if k in SECRET_KEYS and v else v) for k, v in sorted(config.items())}


# Dependency wiring -----------------------------------------------------------


def make_completer(cfg: Mapping[str, Any]):
    if cfg["llm_mock"]:
        return ScriptedCompleter.from_file(cfg["llm_mock"])
    if cfg["llm_url"]:
        return HttpCompleter(cfg["llm_url"], api_key=cfg["llm_key"], model=cfg["llm_model"])
    raise ConfigError("no LLM configured: set DMQR_LLM_URL or pass --mock FIXTURES")


def make_retriever(cfg: Mapping[str, Any]):
    if cfg["retriever"] == "remote":
        return RemoteSearchRetriever(cfg["search_url"] or "", api_key=cfg["search_key"])
    if not cfg["index"]:
        raise IndexMissing("local retriever needs --index PATH")
    return LocalRetriever.from_path(cfg["index"])


def make_cache(cfg: Mapping[str, Any]) -> SearchCache | None:
    if cfg["no_cache"] or not cfg["cache_dir"]:
        return None
    return SearchCache(Path(cfg["cache_dir"]).expanduser())


def make_base_config(cfg: Mapping[str, Any]) -> PipelineConfig:
    return PipelineConfig(
        per_query_limit=int(cfg["per_query_limit"]),
        context_size=int(cfg["context_size"]),
        rrf_constant=int(cfg["rrf_constant"]),
        concurrency_bound=int(cfg["concurrency"]),
        reranker_mode=cfg["reranker"],
    )


def make_deps(cfg: Mapping[str, Any], *, verbose: bool = False) -> Deps:
    remote = RemoteReranker(cfg["reranker_url"], api_key=cfg["reranker_key"]) \
        if cfg["reranker_url"] else None
    return Deps(
        completer=make_completer(cfg),
        retriever=make_retriever(cfg),
        cache=make_cache(cfg),
        remote_reranker=remote,
        pool=default_pool(cfg["templates_dir"]),
        demos=load_demonstrations(cfg["demos"]) if cfg["demos"] else None,
        tracer_stream=sys.stderr if verbose else None,
    )


def effective_method(cfg: Mapping[str, Any]) -> str:
    method = str(cfg["method"]).upper()
    if method == "DMQR" and cfg["selection"] == "adaptive":
        return "DMQR_ADAPTIVE"
    return method


# Commands --------------------------------------------------------------------


def cmd_index(args: argparse.Namespace, cfg: Mapping[str, Any]) -> int:
    try:
        index = build_index(load_corpus(args.corpus))
    except (EmptyCorpus, DuplicateDocId, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    try:
        index.save(args.out)
    except OSError as exc:
        print(f"error: cannot write index: {exc}", file=sys.stderr)
        return 1
    summary = {"n": index.n_docs, "vocabulary": index.vocabulary_size, "avglen": index.avg_length}
    if args.json:
        print(json.dumps(summary, sort_keys=True))
    else:
        print(f"N={index.n_docs} vocabulary={index.vocabulary_size} avglen={index.avg_length:.4f}")
    return 0


def cmd_rewrite(args: argparse.Namespace, cfg: Mapping[str, Any]) -> int:
    pool = default_pool(cfg["templates_dir"])
    try:
        query = Query(args.query)
        completer = make_completer(cfg)
        selection = None
        if args.adaptive:
            demos = load_demonstrations(cfg["demos"])
            selection = select_strategies(query, pool.subset(DMQR_POOL), demos, completer)
            strategies = list(selection.chosen)
        elif args.strategies:
            strategies = [s.strip().upper() for s in args.strategies.split(",") if s.strip()]
            for s in strategies:
                pool.get(s)
        else:
            strategies = list(DMQR_POOL)
        # inspection surfaces service failures instead of silently falling back
        records = [
            rewrite_with_fallback(d.id, query, completer, pool, tolerate_service_errors=False)
            for d in pool.subset(strategies)
        ]
    except UnknownStrategy as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (ServiceError, ConfigError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    if args.json:
        out = {
            "query": query.to_dict(),
            "selection": selection.to_dict() if selection else None,
            "rewrites": [r.to_dict() for r in records],
        }
        print(json.dumps(out, ensure_ascii=False, sort_keys=True))
        return 0
    if selection is not None:
        print(f"selection: {', '.join(selection.chosen)}" + (" (fallback)" if selection.fallback_used else ""))
    for r in records:
        note = " [fallback]" if r.fallback else ""
        print(f"[{r.rewrite.strategy}] {r.rewrite.text}{note}")
    return 0


def cmd_ask(args: argparse.Namespace, cfg: Mapping[str, Any]) -> int:
    try:
        query = Query(args.query)
        deps = make_deps(cfg, verbose=args.verbose)
        config = method_config(effective_method(cfg), make_base_config(cfg))
        trace = run(query, config, deps)
    except (IndexMissing, ConfigError, PipelineError, ServiceError, ValueError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    for flag in trace.flags:
        print(f"warning: {flag['flag']} {json.dumps(flag, sort_keys=True)}", file=sys.stderr)
    if args.trace_out:
        try:
            write_atomic(args.trace_out, trace.to_json() + "\n")
        except OSError as exc:
            print(f"error: cannot write trace: {exc}", file=sys.stderr)
            return 1
    if args.json:
        print(json.dumps(trace.to_dict(timings=False), ensure_ascii=False, sort_keys=True))
        return 0
    print(trace.answer.text)
    print()
    for i, fused in enumerate(trace.context, start=1):
        print(f"[{i}] {fused.doc.title or fused.doc.url or fused.doc.key}")
    return 0


def _judge_for(cfg: Mapping[str, Any], items, deps: Deps):
    mode = cfg["judge"]
    if mode == "auto":
        gold = cfg["retriever"] == "local" and all(i.gold_doc_ids for i in items)
        mode = "gold" if gold else "llm"
    if mode == "gold":
        return GoldLabelJudge()
    return LlmJudge(deps.completer)


def cmd_eval(args: argparse.Namespace, cfg: Mapping[str, Any]) -> int:
    try:
        items = load_dataset(args.dataset)
    except (OSError, DatasetError) as exc:
        print(f"error: cannot read dataset: {exc}", file=sys.stderr)
        return 1
    try:
        deps = make_deps(cfg, verbose=args.verbose)
        base = make_base_config(cfg)
    except (IndexMissing, ConfigError, ValueError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    judge = _judge_for(cfg, items, deps)
    method = effective_method(cfg)
    methods = list(METHODS) if method == "ALL" else [method]
    if any(m not in METHODS for m in methods):
        print(f"error: unknown method {method}; valid: {', '.join(METHODS)}, ALL", file=sys.stderr)
        return 2
    reports = {
        m: run_experiment(items, base, m, deps, judge, max_workers=int(cfg["workers"]))
        for m in methods
    }
    if args.out:
        payload = reports[methods[0]].to_dict() if len(methods) == 1 else {
            "reports": {m: r.to_dict() for m, r in reports.items()}
        }
        try:
            write_atomic(args.out, json.dumps(payload, ensure_ascii=False, sort_keys=True, indent=2) + "\n")
        except OSError as exc:
            print(f"error: cannot write report: {exc}", file=sys.stderr)
            return 1
    rows = [{"method": m, **r.aggregates} for m, r in reports.items()]
    if args.json:
        print(json.dumps(rows, sort_keys=True))
        return 0
    cols = ("h_at_k", "p_at_k", "em", "f1", "mean_rewrites", "errors")
    print(f"{'method':<14}" + "".join(f"{c:>14}" for c in cols))
    for row in rows:
        cells = []
        for c in cols:
            v = row.get(c)
            cells.append(f"{'-':>14}" if v is None else f"{v:>14.4f}" if isinstance(v, float) else f"{v:>14}")
        print(f"{row['method']:<14}" + "".join(cells))
    return 0


def cmd_cache(args: argparse.Namespace, cfg: Mapping[str, Any]) -> int:
    cache = SearchCache(Path(cfg["cache_dir"]).expanduser())
    if args.action == "clear":
        removed = cache.clear()
        print(json.dumps({"removed": removed}) if args.json else f"removed {removed} entries")
        return 0
    stats = cache.stats()
    if args.json:
        print(json.dumps({"entries": stats["entries"], "bytes": stats["bytes"]}, sort_keys=True))
    else:
        print(f"entries={stats['entries']} bytes={stats['bytes']} dir={cache.directory}")
    return 0


# Parser ----------------------------------------------------------------------


def _common(suppress: bool = False) -> argparse.ArgumentParser:
    # subcommand copies use SUPPRESS so they do not clobber flags given before the command
    p = argparse.ArgumentParser(add_help=False, argument_default=argparse.SUPPRESS if suppress else None)
    p.add_argument("--config", help="flat JSON config file")
    p.add_argument("--json", action="store_true", help="machine-readable output")
    p.add_argument("--show-config", action="store_true", help="print the resolved config and exit")
    p.add_argument("--verbose", action="store_true", help="stream trace events to stderr as JSON lines")
    p.add_argument("--mock", dest="llm_mock", help="scripted LLM fixture file (JSON)")
    p.add_argument("--index", help="local BM25 index file")
    p.add_argument("--cache-dir", dest="cache_dir")
    p.add_argument("--no-cache", dest="no_cache", action="store_const", const=True)
    p.add_argument("--retriever", choices=("local", "remote"))
    p.add_argument("--reranker", choices=("rrf", "lexical", "remote"))
    p.add_argument("--selection", choices=("all", "adaptive"))
    p.add_argument("--method", type=str.lower, choices=[m.lower() for m in METHODS] + ["all"])
    p.add_argument("--trace-out", dest="trace_out")
    p.add_argument("-M", "--per-query-limit", dest="per_query_limit", type=int)
    p.add_argument("-K", "--context-size", dest="context_size", type=int)
    p.add_argument("--concurrency", type=int)
    p.add_argument("--templates-dir", dest="templates_dir")
    p.add_argument("--demos", help="demonstrations JSON file for adaptive selection")
    return p


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dmqr", description=__doc__.splitlines()[0], parents=[_common()]
    )
    common = _common(suppress=True)
    parser.add_argument("--version", action="version", version=f"dmqr {__version__}")
    sub = parser.add_subparsers(dest="command")

    p = sub.add_parser("index", parents=[common], help="build a BM25 index from a JSONL corpus")
    p.add_argument("corpus")
    p.add_argument("out")
    p.set_defaults(func=cmd_index)

    p = sub.add_parser("rewrite", parents=[common], help="show the rewrites for a query")
    p.add_argument("query")
    p.add_argument("--strategies", help="comma separated ids, e.g. gqr,par")
    p.add_argument("--adaptive", action="store_true")
    p.set_defaults(func=cmd_rewrite)

    p = sub.add_parser("ask", parents=[common], help="answer one question end to end")
    p.add_argument("query")
    p.set_defaults(func=cmd_ask)

    p = sub.add_parser("eval", parents=[common], help="run an evaluation and write a report")
    p.add_argument("dataset")
    p.add_argument("--out")
    p.add_argument("--judge", choices=("auto", "gold", "llm"))
    p.add_argument("--workers", type=int)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("cache", parents=[common], help="inspect or clear the search cache")
    p.add_argument("action", choices=("stats", "clear"))
    p.set_defaults(func=cmd_cache)
    return parser


def main(argv: Sequence[str] | None = None, env: Mapping[str, str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.ERROR, stream=sys.stderr)
    try:
        cfg = resolve_config(vars(args), os.environ if env is None else env, args.config)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    if args.show_config:
        print(json.dumps(redacted(cfg), indent=2, sort_keys=True))
        return 0
    if not getattr(args, "func", None):
        parser.print_help(sys.stderr)
        return 2
    try:
        return args.func(args, cfg)
    except DmqrError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
