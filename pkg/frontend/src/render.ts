import type { SessionView } from "./types";

export function formatCoverage(p: number | null): string {
  return p === null ? "—" : `${(p * 100).toFixed(1)}%`;
}

function el(id: string): HTMLElement {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing element #${id}`);
  return node;
}

function list(items: string[]): string {
  return items.map((i) => `<li>${escapeHtml(i)}</li>`).join("");
}

export function escapeHtml(text: string): string {
  return text
    .replaceAll("&", "&amp;")
    .replaceAll("<", "&lt;")
    .replaceAll(">", "&gt;")
    .replaceAll('"', "&quot;");
}

export function renderView(view: SessionView | null, stale: boolean): void {
  el("stale-banner").style.display = stale ? "block" : "none";
  if (!view) return;

  el("goal").textContent = view.investigation.goal;
  el("phase").textContent = view.investigation.phase || "—";
  el("steps").textContent = String(view.investigation.stepCount);
  el("outcome").textContent = view.investigation.outcome ?? "running";

  el("coverage-gauge").textContent = formatCoverage(view.coverageP);
  el("per-graph").innerHTML = list(
    Object.entries(view.perGraphVisited)
      .sort(([a], [b]) => a.localeCompare(b))
      .map(([name, frac]) => `${name}: ${(frac * 100).toFixed(0)}% of nodes`),
  );

  const groups = Object.entries(view.hypothesesByStatus)
    .map(([status, lines]) => {
      const rows = lines
        .map((l) => `<li>[${escapeHtml(l.severity)}] ${escapeHtml(l.title)} (q=${l.q})</li>`)
        .join("");
      return `<h3>${escapeHtml(status)} (${lines.length})</h3><ul>${rows}</ul>`;
    })
    .join("");
  el("hypotheses").innerHTML = groups || "<p>(no hypotheses yet)</p>";

  el("actions").innerHTML = list(view.recentActions);
  el("pending-notes").innerHTML =
    list(view.pendingNotes.map((n) => n.text)) || "<li>(none pending)</li>";
}
