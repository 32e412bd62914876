"""Command-line surface for the engine.

Global flags select the workspace, clock and approval mode; subcommands map
one-to-one onto the pipeline stages plus the evaluation and serving tools.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
from pathlib import Path

from . import evaluation, fidelity, pipeline
from .clock import parse_clock
from .evaluation import split_dataset
from .planning import Mode
from .prd import rule_based_extract, PrdDocument
from .server import CapabilityServer, Engine, parse_bind, serve_stdio
from .workspace import ArtifactKind

WORKSPACE_ENV = "FORGELINE_WORKSPACE"


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="forgeline")
    parser.add_argument(
        "--workspace",
        default=None,
        help=f"workspace root (default: ${WORKSPACE_ENV} or ./workspace)",
    )
    parser.add_argument("--auto-approve", action="store_true", help="approve all checkpoints")
    parser.add_argument("--clock", default=None, help="system (default) or fixed:<epoch>")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("canonicalize", help="canonicalize a design document")
    p.add_argument("design", type=Path)
    p.add_argument("--node", default=None, help="node id to use as the IR root")
    p.add_argument("--run-id", default=None)

    p = sub.add_parser("decompose", help="decompose a PRD into logic units")
    p.add_argument("prd", type=Path)
    p.add_argument("--backend", default="rule", help="rule | replay:<file>")
    p.add_argument("--run-id", default=None)

    p = sub.add_parser("plan", help="show the planning status of a run")
    p.add_argument("run_id")

    p = sub.add_parser("run", help="run the full pipeline")
    p.add_argument("--prd", type=Path, required=True)
    p.add_argument("--design", type=Path, default=None)
    p.add_argument("--mode", choices=[m.value for m in Mode], default=None)
    p.add_argument("--backend", default="rule")
    p.add_argument("--run-id", default=None)

    p = sub.add_parser("resume", help="resume a persisted run")
    p.add_argument("run_id")
    p.add_argument("--backend", default="rule")

    p = sub.add_parser("evaluate", help="evaluate the rule backend on a dataset")
    p.add_argument("dataset", type=Path)
    p.add_argument("--format", choices=["alpaca", "sharegpt"], default="alpaca")
    p.add_argument("--split", type=float, default=0.8)
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("fidelity", help="score a fidelity checklist")
    p.add_argument("checklist", type=Path)

    p = sub.add_parser("ingest", help="add a guideline document to the knowledge base")
    p.add_argument("document", type=Path)
    p.add_argument("--doc-id", default=None)

    p = sub.add_parser("serve", help="serve the capability server")
    group = p.add_mutually_exclusive_group(required=True)
    group.add_argument("--stdio", action="store_true")
    group.add_argument("--http", metavar="ADDR", default=None, help="host:port")

    return parser


def _workspace_root(args) -> Path:
    root = args.workspace or os.environ.get(WORKSPACE_ENV) or "workspace"
    return Path(root)


def _hash_id(prefix: str, path: Path) -> str:
    return f"{prefix}-{hashlib.sha256(path.read_bytes()).hexdigest()[:12]}"


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    clock = parse_clock(args.clock)
    root = _workspace_root(args)

    if args.command == "canonicalize":
        engine = Engine(root, clock=clock)
        run_id = args.run_id or _hash_id("design", args.design)
        result = engine.rpc_canonicalize_design(
            {"run_id": run_id, "document_path": str(args.design), "node_id": args.node}
        )
        tokens = result["design_ir"]["token_space"]
        print(f"run {run_id}: design IR written ({len(tokens)} tokens)")
        for entry in result["component_set"]["entries"]:
            print(f"  {entry['name']} ({entry['kind']}): {entry['count']}")
        return 0

    if args.command == "decompose":
        engine = Engine(root, clock=clock)
        run_id = args.run_id or _hash_id("prd", args.prd)
        result = engine.rpc_decompose_prd(
            {
                "run_id": run_id,
                "prd": {"id": args.prd.stem, "body": args.prd.read_text(encoding="utf-8")},
                "backend": args.backend,
            }
        )
        understanding = result["requirement_understanding"]
        print(f"run {run_id}: {len(understanding['units'])} logic unit(s), status {understanding['status']}")
        for unit in understanding["units"]:
            print(f"  {unit['unit_id']} [{unit['category']}] {unit['entity_name']}")
        return 0

    if args.command == "plan":
        engine = Engine(root, clock=clock)
        status = engine.rpc_run_status({"run_id": args.run_id})
        print(json.dumps(status, indent=2, sort_keys=True))
        return 0

    if args.command == "run":
        result = pipeline.run_pipeline(
            root,
            prd_path=args.prd,
            design_path=args.design,
            mode=args.mode,
            backend=args.backend,
            auto_approve=args.auto_approve,
            clock=clock,
            run_id=args.run_id,
        )
        if result.paused_at:
            print(f"run {result.run_id} paused at {result.paused_at}; resume with: forgeline resume {result.run_id}")
        else:
            print(f"run {result.run_id} complete")
        return 0

    if args.command == "resume":
        result = pipeline.resume(
            root,
            args.run_id,
            auto_approve=args.auto_approve,
            backend=args.backend,
            clock=clock,
        )
        if result.paused_at:
            print(f"run {result.run_id} still paused at {result.paused_at}")
        else:
            print(f"run {result.run_id} complete")
        return 0

    if args.command == "evaluate":
        samples = evaluation.load_dataset(str(args.dataset), args.format)
        _, test = split_dataset(samples, args.split, args.seed)
        if not test:
            print("test split is empty; nothing to evaluate", file=sys.stderr)
            return 1
        predicted, gold = [], []
        for sample in test:
            units = rule_based_extract(PrdDocument(id="eval", body=sample.input or "(empty)"))
            predicted.append([u.category for u in units])
            gold.append([e.category for e in sample.output])
        report = evaluation.evaluate_predictions(predicted, gold)
        print(report.to_table())
        engine = Engine(root, clock=clock)
        run_id = _hash_id("eval", args.dataset)
        engine.write_json_artifact(run_id, ArtifactKind.METRICS_REPORT, report.to_dict())
        print(f"metrics report written for run {run_id}")
        return 0

    if args.command == "fidelity":
        items = fidelity.load_checklist(str(args.checklist))
        report = fidelity.failure_report(items)
        print(report.to_table())
        engine = Engine(root, clock=clock)
        run_id = _hash_id("fidelity", args.checklist)
        engine.write_json_artifact(run_id, ArtifactKind.FIDELITY_REPORT, report.to_dict())
        print(f"fidelity report written for run {run_id}")
        return 0

    if args.command == "ingest":
        engine = Engine(root, clock=clock)
        doc_id = args.doc_id or args.document.stem
        chunk_ids = engine.ingest_knowledge(doc_id, args.document.read_text(encoding="utf-8"))
        print(f"ingested {doc_id}: {len(chunk_ids)} chunk(s)")
        return 0

    if args.command == "serve":
        engine = Engine(root, clock=clock)
        if args.stdio:
            serve_stdio(engine, sys.stdin, sys.stdout)
            return 0
        host, port = parse_bind(args.http)
        server = CapabilityServer(engine, host, port)
        print(f"serving on http://{server.address[0]}:{server.address[1]}", file=sys.stderr)
        try:
            server.serve_forever()
        except KeyboardInterrupt:
            server.stop()
        return 0

    raise AssertionError(f"unhandled command {args.command!r}")


if __name__ == "__main__":
    sys.exit(main())
