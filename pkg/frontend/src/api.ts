import type { HypothesesDoc, InboxDoc, SessionStatus } from "./types";

export type FetchLike = (url: string, init?: RequestInit) => Promise<Response>;

// Thin typed client over the engine's HTTP mirror. The only write this
// console ever performs is POST /inbox.
export class ApiClient {
  constructor(
    private readonly base: string,
    private readonly fetchImpl: FetchLike = (...args) => fetch(...args),
  ) {}

  private async getJson<T>(path: string): Promise<T> {
    const res = await this.fetchImpl(`${this.base}${path}`, { cache: "no-store" });
    if (!res.ok) throw new Error(`GET ${path} failed: ${res.status}`);
    return (await res.json()) as T;
  }

  status(): Promise<SessionStatus> {
    return this.getJson<SessionStatus>("/session/status");
  }

  hypotheses(): Promise<HypothesesDoc> {
    return this.getJson<HypothesesDoc>("/hypotheses");
  }

  inbox(): Promise<InboxDoc> {
    return this.getJson<InboxDoc>("/inbox");
  }

  async submitSteering(text: string): Promise<{ ok: boolean; file: string }> {
    if (!text.trim()) {
      throw new Error("steering note text must be non-empty");
    }
    const res = await this.fetchImpl(`${this.base}/inbox`, {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify({ text }),
    });
    if (!res.ok) {
      const body = await res.text();
      throw new Error(`POST /inbox failed: ${res.status} ${body}`);
    }
    return (await res.json()) as { ok: boolean; file: string };
  }
}
