import type { ApiClient } from "./api";
import type {
  HypothesesDoc,
  HypothesisLine,
  InboxDoc,
  SessionStatus,
  SessionView,
} from "./types";

export const POLL_INTERVAL_MS = 2000;

const STATUS_ORDER = [
  "confirmed",
  "supported",
  "investigating",
  "proposed",
  "refuted",
  "rejected",
];

// Pure assembly of the view from store payloads. Values pass through as the
// service reported them; the only transformation is display formatting
// (confidence to 2 decimals).
export function assembleSessionView(
  status: SessionStatus,
  hypotheses: HypothesesDoc,
  inbox: InboxDoc,
): SessionView {
  const byStatus: Record<string, HypothesisLine[]> = {};
  for (const id of Object.keys(hypotheses).sort()) {
    const h = hypotheses[id];
    const line: HypothesisLine = {
      title: h.title,
      severity: h.severity,
      q: h.confidence.toFixed(2),
    };
    (byStatus[h.status] ??= []).push(line);
  }
  const ordered: Record<string, HypothesisLine[]> = {};
  for (const status_ of STATUS_ORDER) {
    if (byStatus[status_]) ordered[status_] = byStatus[status_];
  }
  for (const other of Object.keys(byStatus).sort()) {
    if (!(other in ordered)) ordered[other] = byStatus[other];
  }

  return {
    investigation: {
      goal: status.goal ?? "(idle)",
      phase: status.phase ?? "",
      stepCount: status.step_count ?? 0,
      outcome: status.outcome ?? null,
    },
    coverageP: typeof status.coverage_p === "number" ? status.coverage_p : null,
    perGraphVisited: status.per_graph_visited ?? {},
    hypothesesByStatus: ordered,
    recentActions: status.recent_actions ?? [],
    pendingNotes: (inbox.notes ?? []).filter((n) => !n.consumed),
  };
}

// Polls all panels at a fixed cadence; a failed poll marks the view stale
// (banner) and backs off until the service answers again.
export class ConsolePoller {
  view: SessionView | null = null;
  failedPolls = 0;
  lastError: string | null = null;

  constructor(private readonly api: ApiClient) {}

  get stale(): boolean {
    return this.failedPolls > 0;
  }

  nextDelayMs(base: number = POLL_INTERVAL_MS): number {
    return base * Math.min(2 ** this.failedPolls, 8);
  }

  async poll(): Promise<SessionView | null> {
    try {
      const [status, hypotheses, inbox] = await Promise.all([
        this.api.status(),
        this.api.hypotheses(),
        this.api.inbox(),
      ]);
      this.view = assembleSessionView(status, hypotheses, inbox);
      this.failedPolls = 0;
      this.lastError = null;
    } catch (err) {
      this.failedPolls += 1;
      this.lastError = err instanceof Error ? err.message : String(err);
    }
    return this.view;
  }
}
