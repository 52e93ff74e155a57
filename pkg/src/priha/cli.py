"""Operator entry points: ingest, one-shot query, terminal chat, serve, eval.

Exit codes: 0 success, 1 user error (usage, bad config, bad inputs), 2
internal error. Evaluation scores are data, not errors; a low-scoring run
still exits 0.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys

from .config import MODES, load_config, validate_startup
from .corpus import ingest_directory
from .errors import PrihaError
from .evaluate import run_eval, write_report
from .indexing import build_indexes, save_index
from .optimizer import (
    SIMPLE,
    STATUS_DONE,
    ClarificationState,
    UserInput,
    finalize_intent,
    generalize,
)
from .pipeline import (
    KIND_CLARIFYING,
    KIND_FINAL,
    AssistantService,
    build_runtime,
    run_pipeline,
)
from .providers import build_provider_set


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits the process on errors; raise instead so main() owns codes.
    def error(self, message):
        raise _UsageError(message)


def _build_parser() -> _Parser:
    parser = _Parser(prog="priha", description="Primary-healthcare assistant pipeline")
    parser.add_argument("--config", help="config file path (default: $PRIHA_CONFIG)")
    sub = parser.add_subparsers(dest="command")

    p_ingest = sub.add_parser("ingest", help="parse and chunk a corpus directory")
    p_ingest.add_argument("--corpus", required=True, help="corpus directory")
    p_ingest.add_argument("--out", help="write the built index to this file")

    p_query = sub.add_parser("query", help="answer one question and exit")
    p_query.add_argument("text", help="the question")
    p_query.add_argument("--mode", choices=MODES, help="pipeline mode (default: config)")
    p_query.add_argument("--json", action="store_true", help="machine-readable output")

    sub.add_parser("chat", help="interactive terminal chat")

    p_serve = sub.add_parser("serve", help="run the HTTP service")
    p_serve.add_argument("--addr", default="127.0.0.1:8240", help="HOST:PORT to bind")

    p_eval = sub.add_parser("eval", help="run the judged evaluation harness")
    p_eval.add_argument("--dataset", required=True, help="JSONL dataset path")
    p_eval.add_argument("--mode", choices=MODES, help="pipeline mode (default: config)")
    p_eval.add_argument("--out", required=True, help="report base path (.json/.md added)")
    return parser


def _cmd_ingest(args, cfg) -> int:
    cfg = dataclasses.replace(cfg, corpus_path=args.corpus)
    snapshot = ingest_directory(args.corpus, cfg.chunking)
    providers = build_provider_set(cfg)
    kw, vec = build_indexes(snapshot, providers.embedder)
    stats = snapshot.stats
    print(f"documents: {stats['documents']}")
    print(f"parents: {stats['parents']}")
    print(f"children: {stats['children']}")
    print(f"errors: {stats['errors']}")
    for err in snapshot.errors:
        print(f"  {err.path}: {err.error}", file=sys.stderr)
    if args.out:
        save_index(args.out, kw, vec)
        print(f"index written to {args.out}")
    return 0


def _one_shot_intent(text: str, rt):
    inp = UserInput(
        text=text, timestamp=rt.providers.clock.now(), session_id="cli-query"
    )
    intent = finalize_intent(
        inp, ClarificationState(status=STATUS_DONE), SIMPLE, rt.providers.chat, rt.cfg
    )
    if rt.cfg.mode != "zeroshot":
        intent = generalize(intent, rt.providers.chat, rt.cfg)
    return intent


def _cmd_query(args, cfg) -> int:
    if args.mode:
        cfg = dataclasses.replace(cfg, mode=args.mode)
    validate_startup(cfg)
    rt = build_runtime(cfg)
    intent = _one_shot_intent(args.text, rt)
    response, trace = run_pipeline(intent, cfg.mode, rt)
    if args.json:
        payload = {
            "answer": response.answer,
            "references": [
                {
                    "n": c.eid,
                    "title": c.title,
                    "locator": c.locator,
                    "kind": c.kind,
                    "date": c.date.isoformat(),
                }
                for c in response.references
            ],
            "disclaimers": list(response.disclaimers),
            "trace_id": trace["trace_id"],
        }
        print(json.dumps(payload, sort_keys=True, ensure_ascii=False))
        return 0
    print(response.answer)
    if response.references:
        print("\nReferences:")
        for c in response.references:
            print(f"  [{c.eid}] {c.title} ({c.kind}, {c.date.isoformat()}) {c.locator}")
    for line in response.disclaimers:
        print(f"\n{line}")
    return 0


def _cmd_chat(cfg) -> int:
    validate_startup(cfg)
    service = AssistantService(build_runtime(cfg))
    session = service.create_session()
    print(f"session {session.session_id}; empty line or Ctrl-D exits")
    while True:
        try:
            line = input("> ").strip()
        except EOFError:
            print()
            return 0
        if not line:
            return 0
        reply = service.handle_message(session.session_id, line)
        if reply.kind == KIND_CLARIFYING:
            print(f"? {reply.text}")
            if reply.options:
                print(f"  options: {', '.join(reply.options)}")
        elif reply.kind == KIND_FINAL:
            print(reply.text)
            for ref in reply.references:
                print(f"  [{ref['n']}] {ref['title']} {ref['locator']}")
        else:
            print(f"error: {reply.text}", file=sys.stderr)


def _cmd_serve(args, cfg) -> int:
    import uvicorn

    from .server import create_app

    host, _, port_text = args.addr.rpartition(":")
    if not host or not port_text.isdigit():
        raise _UsageError(f"--addr must be HOST:PORT, got {args.addr!r}")
    validate_startup(cfg)
    app = create_app(AssistantService(build_runtime(cfg)))
    uvicorn.run(app, host=host, port=int(port_text), log_level="warning")
    return 0


def _cmd_eval(args, cfg) -> int:
    if args.mode:
        cfg = dataclasses.replace(cfg, mode=args.mode)
    validate_startup(cfg)
    rt = build_runtime(cfg)
    report = run_eval(args.dataset, cfg.mode, rt)
    json_path, md_path = write_report(report, args.out)
    from .evaluate import report_to_markdown

    print(report_to_markdown(report))
    print(f"\nreport: {json_path} and {md_path}")
    return 0


def main(argv: list[str] | None = None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            raise _UsageError("a subcommand is required")
        cfg = load_config(args.config)
        if args.command == "ingest":
            return _cmd_ingest(args, cfg)
        if args.command == "query":
            return _cmd_query(args, cfg)
        if args.command == "chat":
            return _cmd_chat(cfg)
        if args.command == "serve":
            return _cmd_serve(args, cfg)
        if args.command == "eval":
            return _cmd_eval(args, cfg)
        raise _UsageError(f"unknown subcommand {args.command!r}")
    except _UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        parser.print_usage(sys.stderr)
        return 1
    except (PrihaError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except KeyboardInterrupt:
        return 1
    except Exception as exc:  # internal fault, distinct exit code
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
