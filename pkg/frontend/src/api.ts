// Thin typed client over the recommendation service endpoints.

import type {
  QueryResponse,
  SessionExport,
  Vocabulary,
  WirePattern,
} from "./types";

export class ApiError extends Error {
  constructor(
    public status: number,
    public detail: unknown,
  ) {
    super(`service error ${status}: ${JSON.stringify(detail)}`);
  }
}

async function asJson<T>(resp: Response): Promise<T> {
  const body = await resp.json().catch(() => null);
  if (!resp.ok) {
    throw new ApiError(resp.status, body && (body as any).detail !== undefined
      ? (body as any).detail
      : body);
  }
  return body as T;
}

export class ServiceClient {
  constructor(private baseUrl: string) {}

  async health(): Promise<{ status: string; ready: boolean }> {
    return asJson(await fetch(`${this.baseUrl}/healthz`));
  }

  async vocabulary(): Promise<Vocabulary> {
    return asJson(await fetch(`${this.baseUrl}/ontology`));
  }

  async createSession(): Promise<string> {
    const doc = await asJson<{ id: string }>(
      await fetch(`${this.baseUrl}/sessions`, { method: "POST" }),
    );
    return doc.id;
  }

  async submitQuery(sessionId: string, pattern: WirePattern): Promise<QueryResponse> {
    return asJson(
      await fetch(`${this.baseUrl}/sessions/${sessionId}/queries`, {
        method: "POST",
        headers: { "content-type": "application/json" },
        body: JSON.stringify({ pattern }),
      }),
    );
  }

  async sendFeedback(sessionId: string, selectedRanks: number[]): Promise<void> {
    await asJson(
      await fetch(`${this.baseUrl}/sessions/${sessionId}/feedback`, {
        method: "POST",
        headers: { "content-type": "application/json" },
        body: JSON.stringify({ selected_ranks: selectedRanks }),
      }),
    );
  }

  async exportSession(sessionId: string): Promise<SessionExport> {
    return asJson(await fetch(`${this.baseUrl}/sessions/${sessionId}`));
  }
}
