// Thin client for the review service; all state lives server-side.

import type { Decision, DecisionResponse, PendingResponse, TemplateResponse } from './types';

export class ConflictError extends Error {
  constructor(detail: string) {
    super(detail);
    this.name = 'ConflictError';
  }
}

export type FetchLike = (input: string, init?: RequestInit) => Promise<Response>;

export class ReviewApi {
  constructor(
    private readonly baseUrl: string,
    private readonly fetchImpl: FetchLike = (input, init) => fetch(input, init),
  ) {}

  private async get<T>(path: string): Promise<T> {
    const response = await this.fetchImpl(`${this.baseUrl}${path}`);
    if (!response.ok) {
      throw new Error(`GET ${path} failed: ${response.status} ${await response.text()}`);
    }
    return (await response.json()) as T;
  }

  fetchPending(sessionId: string): Promise<PendingResponse> {
    return this.get<PendingResponse>(`/sessions/${encodeURIComponent(sessionId)}/pending`);
  }

  fetchTemplate(sessionId: string): Promise<TemplateResponse> {
    return this.get<TemplateResponse>(`/sessions/${encodeURIComponent(sessionId)}/template`);
  }

  async submitDecision(
    sessionId: string,
    proposalId: string,
    decision: Decision,
    reviewer: string,
  ): Promise<DecisionResponse> {
    const response = await this.fetchImpl(
      `${this.baseUrl}/sessions/${encodeURIComponent(sessionId)}/decisions`,
      {
        method: 'POST',
        headers: { 'Content-Type': 'application/json' },
        body: JSON.stringify({ proposal_id: proposalId, decision, reviewer }),
      },
    );
    if (response.status === 409) {
      throw new ConflictError(await response.text());
    }
    if (!response.ok) {
      throw new Error(`decision failed: ${response.status} ${await response.text()}`);
    }
    return (await response.json()) as DecisionResponse;
  }
}
