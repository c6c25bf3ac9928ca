"""graphaudit: relation-first code knowledge graphs for security audits.

The engine ingests a repository into byte-exact cards, lets a model design
and refine typed knowledge graphs whose nodes and edges reference those
cards, retrieves code exclusively through such references, and maintains a
persistent store of vulnerability hypotheses driven by a coverage-then-
intuition planner.  All model calls go through a pluggable provider; the
shipped provider is a deterministic scripted mock.
"""

from .agent import (
    AuditStores,
    ContextState,
    RunBudgets,
    add_steering_note,
    build_context,
    compress_memory,
    consume_note,
    finalize_session,
    run_investigation,
    step,
    unconsumed_notes,
)
from .beliefs import Hypothesis, HypothesisStore, normalize_title
from .graph_builder import BuildConfig, build, discover_graphs, sample_cards_for_context
from .graph_store import (
    ApplyStats,
    EdgeRecord,
    GraphRecord,
    NodeRecord,
    annotate_node,
    apply_update,
    orphan_nodes,
    referenced_cards,
)
from .ingest import Card, IngestConfig, Manifest, card_content, ingest_repo, reconstruct_span
from .planning import (
    CoverageConfig,
    CoverageIndex,
    CoverageStore,
    GraphsView,
    PlanFrame,
    PlanLedger,
    PlanStore,
    build_graphs_view,
    coverage,
    deep_think,
    mixing,
    normalize_frame,
    plan_next,
    record_visit,
    select_phase,
)
from .project import ProjectLayout
from .provider import (
    MockProvider,
    ModelProfile,
    StructuredRequest,
    complete_structured,
    estimate_tokens,
)
from .retrieval import CodeContext, render_context, resolve_node_cards
from .schemas import (
    AgentAction,
    GraphSpec,
    GraphUpdate,
    HypothesisCandidate,
    Investigation,
)

__all__ = [name for name in dir() if not name.startswith("_")]
__version__ = "0.1.0"
