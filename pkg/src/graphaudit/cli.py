"""Operator command line.

Subcommands mirror the audit phases: ``ingest`` -> ``graph build`` ->
``audit`` (plan + run investigations) -> ``finalize`` -> ``report``, plus
``coverage``, ``hypotheses list``, ``inbox add``, and ``serve`` for the
steering console.  Exit codes: 0 success, 1 domain error, 2 usage error.

Model calls need a provider.  Real adapters are deliberately out of the
acceptance path; pass ``--mock-script FILE`` (JSONL of
``{"schema_id", "response"}`` lines) to drive any pipeline deterministically.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

from . import agent, graph_builder, ingest, report, service
from .agent import AuditStores, RunBudgets, run_investigation
from .errors import AuditError
from .planning import (
    CoverageConfig,
    CoverageStore,
    build_graphs_view,
    coverage,
    per_graph_visited_fraction,
    plan_next,
    select_phase,
)
from .project import ProjectLayout
from .provider import MockProvider, load_profiles
from .schemas import GraphSpec

log = logging.getLogger(__name__)


def _project(args) -> ProjectLayout:
    return ProjectLayout(Path(args.project)).ensure()


def _provider_from_args(args) -> MockProvider:
    if getattr(args, "mock_script", None):
        return MockProvider.from_jsonl(Path(args.mock_script))
    raise AuditError(
        "no provider configured: pass --mock-script FILE (real provider "
        "adapters are not part of this build)"
    )


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="graphaudit",
        description="Relation-first graph audit engine",
    )
    parser.add_argument("--project", default=os.environ.get("GRAPHAUDIT_PROJECT", "./project"),
                        help="project directory (default ./project)")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="slice a repository into cards")
    p.add_argument("repo")
    p.add_argument("--max-card-bytes", type=int, default=ingest.DEFAULT_MAX_CARD_BYTES)
    p.add_argument("--include", action="append", default=None, metavar="GLOB")
    p.add_argument("--exclude", action="append", default=None, metavar="GLOB")

    graph = sub.add_parser("graph", help="graph operations")
    graph_sub = graph.add_subparsers(dest="graph_command", required=True)
    p = graph_sub.add_parser("build", help="discover and refine knowledge graphs")
    p.add_argument("--graphs", type=int, default=2, metavar="K")
    p.add_argument("--iterations", type=int, default=12, metavar="N")
    p.add_argument("--refine-only", action="store_true")
    p.add_argument("--force-graph", metavar="NAME:FOCUS",
                   help="skip discovery and build exactly this graph")
    p.add_argument("--context-budget", type=int, default=24_000, metavar="TOKENS")
    p.add_argument("--mock-script", metavar="FILE")

    p = sub.add_parser("audit", help="plan and run investigations")
    p.add_argument("--phase", choices=["coverage", "intuition", "auto"], default="auto")
    p.add_argument("--n", type=int, default=3, help="max investigations to plan")
    p.add_argument("--max-steps", type=int, default=30)
    p.add_argument("--session", default=None, help="session id (random when omitted)")
    p.add_argument("--mock-script", metavar="FILE")

    p = sub.add_parser("finalize", help="QA verdicts over open hypotheses")
    p.add_argument("--file-cap", type=int, default=10)
    p.add_argument("--mock-script", metavar="FILE")

    p = sub.add_parser("report", help="write report/report.md and findings.json")
    p.add_argument("--include-open", action="store_true")

    sub.add_parser("coverage", help="print the coverage summary")

    hyp = sub.add_parser("hypotheses", help="hypothesis store operations")
    hyp_sub = hyp.add_subparsers(dest="hyp_command", required=True)
    hyp_sub.add_parser("list", help="list hypotheses")

    inbox = sub.add_parser("inbox", help="steering inbox")
    inbox_sub = inbox.add_subparsers(dest="inbox_command", required=True)
    p = inbox_sub.add_parser("add", help="add a steering note")
    p.add_argument("text", nargs="+")

    p = sub.add_parser("serve", help="serve the project stores over HTTP")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8734)

    return parser


# --- commands ---------------------------------------------------------------


def _cmd_ingest(args) -> int:
    project = _project(args)
    config = ingest.IngestConfig(
        max_card_bytes=args.max_card_bytes,
        include_globs=tuple(args.include) if args.include else ("*",),
        exclude_globs=tuple(args.exclude) if args.exclude is not None
        else tuple(ingest.DEFAULT_EXCLUDE_GLOBS),
    )
    manifest, cards = ingest.ingest_repo(Path(args.repo), config)
    ingest.write_ingest_artifacts(project, manifest, cards)
    print(f"ingested {len(manifest.files)} files into {len(cards)} cards")
    for w in manifest.warnings:
        print(f"warning: {w}", file=sys.stderr)
    return 0


def _cmd_graph_build(args) -> int:
    project = _project(args)
    provider = _provider_from_args(args)
    profiles = load_profiles(project.models_path)
    forced = None
    if args.force_graph:
        name, _, focus = args.force_graph.partition(":")
        forced = GraphSpec(name=name, focus=focus)
    config = graph_builder.BuildConfig(
        k=args.graphs,
        max_iterations=args.iterations,
        refine_only=args.refine_only,
        forced_spec=forced,
        context_budget_tokens=args.context_budget,
    )
    graphs = graph_builder.build(project, config, provider, profiles["graph"])
    for g in graphs:
        print(f"graph {g.name}: {len(g.nodes)} nodes, {len(g.edges)} edges")
    return 0


def _cmd_audit(args) -> int:
    project = _project(args)
    provider = _provider_from_args(args)
    profiles = load_profiles(project.models_path)
    session_id = args.session or ("sess-" + os.urandom(4).hex())
    stores = AuditStores.open(project, session_id)
    cfg = CoverageConfig()
    budgets = RunBudgets(max_steps=args.max_steps, q_star=cfg.q_star)
    phase_override = None if args.phase == "auto" else args.phase

    remaining = args.n
    for round_no in range(2):  # one replan round after a preemption
        view = build_graphs_view(stores.graphs.values(), stores.total_cards)
        try:
            p = coverage(stores.coverage.read(), stores.total_nodes, stores.total_cards, cfg)
        except AuditError:
            p = 0.0
        phase = phase_override or select_phase(p, cfg)
        # On a replan the preempting note is already consumed; recent notes
        # (consumed or not) carry the lead's current guidance.
        steering = [n.text for n in agent.list_notes(project)][-5:] if round_no else []
        investigations = plan_next(
            view, cfg, stores.coverage.read(),
            stores.hypotheses.summarize_for_context(),
            stores.plan_store, stores.ledger, remaining, provider,
            profile=profiles["strategist"], session_id=session_id,
            phase_override=phase, steering_notes=steering,
        )
        if not investigations:
            print("no new investigations planned")
            return 0
        preempted = False
        for inv in investigations:
            outcome = run_investigation(inv, budgets, stores, provider,
                                        profiles["scout"], phase=phase, cfg=cfg)
            print(f"investigation {inv.goal!r}: {outcome}")
            if outcome == agent.OUTCOME_PREEMPTED:
                preempted = True
                break
        if not preempted:
            return 0
        print("steering note received; replanning")
    return 0


def _cmd_finalize(args) -> int:
    project = _project(args)
    provider = _provider_from_args(args)
    profiles = load_profiles(project.models_path)
    stores = AuditStores.open(project, "finalize")
    results = agent.finalize_session(
        stores.hypotheses, stores.manifest, provider,
        profiles["finalizer"], file_cap=args.file_cap,
    )
    for hyp_id, verdict in results:
        print(f"{hyp_id}: {verdict}")
    if not results:
        print("nothing to finalize")
    return 0


def _cmd_report(args) -> int:
    project = _project(args)
    md_path, json_path = report.write_report(project, include_open=args.include_open)
    print(f"wrote {md_path} and {json_path}")
    return 0


def _cmd_coverage(args) -> int:
    project = _project(args)
    from .graph_store import load_all_graphs
    from .ingest import load_cards

    graphs = load_all_graphs(project)
    idx = CoverageStore(project.coverage_path).read()
    total_nodes = sum(len(g.nodes) for g in graphs.values())
    total_cards = len(load_cards(project))
    if total_nodes and total_cards:
        p = coverage(idx, total_nodes, total_cards, CoverageConfig())
        print(f"coverage p = {p:.3f}")
    else:
        print("coverage p = n/a (no graphs or no cards yet)")
    print(f"nodes visited: {idx.visited_nodes()}/{total_nodes}")
    print(f"cards visited: {idx.visited_cards()}/{total_cards}")
    for name, frac in sorted(per_graph_visited_fraction(idx, graphs.values()).items()):
        print(f"  {name}: {frac:.2%} of nodes")
    return 0


def _cmd_hypotheses_list(args) -> int:
    project = _project(args)
    from .beliefs import HypothesisStore

    store = HypothesisStore(project.hypotheses_path)
    items = store.all()
    if not items:
        print("(no hypotheses)")
        return 0
    for h in items:
        print(f"{h.id}  [{h.severity:8s}] q={h.confidence:.2f} {h.status:13s} {h.title}")
    return 0


def _cmd_inbox_add(args) -> int:
    project = _project(args)
    path = agent.add_steering_note(project, " ".join(args.text))
    print(f"queued steering note {path.name}")
    return 0


def _cmd_serve(args) -> int:
    project = _project(args)
    server = service.make_server(project, host=args.host, port=args.port)
    print(f"serving {project.root} on http://{args.host}:{server.port}", flush=True)
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        server.server_close()
    return 0


def dispatch(argv: list[str] | None = None) -> int:
    """Parse and execute one command; maps errors to exit codes (1/2)."""
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        if args.command == "ingest":
            return _cmd_ingest(args)
        if args.command == "graph":
            return _cmd_graph_build(args)
        if args.command == "audit":
            return _cmd_audit(args)
        if args.command == "finalize":
            return _cmd_finalize(args)
        if args.command == "report":
            return _cmd_report(args)
        if args.command == "coverage":
            return _cmd_coverage(args)
        if args.command == "hypotheses":
            return _cmd_hypotheses_list(args)
        if args.command == "inbox":
            return _cmd_inbox_add(args)
        if args.command == "serve":
            return _cmd_serve(args)
        parser.error(f"unknown command {args.command}")
        return 2
    except AuditError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(dispatch())


if __name__ == "__main__":
    main()
