// Store payload shapes as served by the engine's HTTP mirror.
// The console displays these values; it never derives new ones.

export type SessionStatus = {
  session_id?: string;
  goal?: string;
  phase?: string;
  step_count?: number;
  outcome?: string | null;
  coverage_p?: number;
  per_graph_visited?: Record<string, number>;
  recent_actions?: string[];
  updated_at?: string;
};

export type HypothesisRecord = {
  id: string;
  title: string;
  vuln_type: string;
  severity: string;
  confidence: number;
  status: string;
};

export type HypothesesDoc = Record<string, HypothesisRecord>;

export type InboxNote = {
  file?: string;
  text: string;
  created_at?: string;
  consumed: boolean;
};

export type InboxDoc = { notes: InboxNote[] };

export type HypothesisLine = {
  title: string;
  severity: string;
  q: string; // preformatted to 2 decimals, straight from the store value
};

export type SessionView = {
  investigation: {
    goal: string;
    phase: string;
    stepCount: number;
    outcome: string | null;
  };
  coverageP: number | null;
  perGraphVisited: Record<string, number>;
  hypothesesByStatus: Record<string, HypothesisLine[]>;
  recentActions: string[];
  pendingNotes: InboxNote[];
};
