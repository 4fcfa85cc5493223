import type { Position, SessionInfo, StudyResult, SubmitAck, TrialView } from './types.js';

export class ApiError extends Error {
  constructor(
    readonly status: number,
    message: string,
  ) {
    super(message);
  }
}

const RETRIES = 5;
const RETRY_DELAY_MS = 400;

function sleep(ms: number): Promise<void> {
  return new Promise((resolve) => setTimeout(resolve, ms));
}

/**
 * Client for the study service /v1 API.
 *
 * Transport failures are retried with a short backoff; the backend
 * records responses idempotently, so resubmitting after a lost ack is
 * safe by design. HTTP error statuses are not retried - they signal
 * state, not flakiness.
 */
export class StudyApi {
  constructor(readonly baseUrl: string = '') {}

  imageUrl(path: string): string {
    return this.baseUrl + path;
  }

  private async request<T>(method: string, path: string, body?: unknown): Promise<T> {
    let lastError: unknown;
    for (let attempt = 0; attempt < RETRIES; attempt++) {
      let response: Response;
      try {
        response = await fetch(this.baseUrl + path, {
          method,
          headers: body === undefined ? undefined : { 'content-type': 'application/json' },
          body: body === undefined ? undefined : JSON.stringify(body),
        });
      } catch (err) {
        lastError = err;
        await sleep(RETRY_DELAY_MS * (attempt + 1));
        continue;
      }
      const payload = await response.json().catch(() => ({}));
      if (!response.ok) {
        const detail = (payload as { error?: string }).error ?? response.statusText;
        throw new ApiError(response.status, detail);
      }
      return payload as T;
    }
    throw new ApiError(0, `network failure after ${RETRIES} attempts: ${String(lastError)}`);
  }

  async createSession(observerId: string): Promise<SessionInfo> {
    const raw = await this.request<{ session_id: string; n_trials: number; n_responses: number }>(
      'POST',
      '/v1/sessions',
      { observer_id: observerId },
    );
    return {
      sessionId: raw.session_id,
      nTrials: raw.n_trials,
      nResponses: raw.n_responses,
      state: 'in_progress',
    };
  }

  async getSession(sessionId: string): Promise<SessionInfo> {
    const raw = await this.request<{
      session_id: string;
      n_trials: number;
      n_responses: number;
      state: 'in_progress' | 'complete';
    }>('GET', `/v1/sessions/${sessionId}`);
    return {
      sessionId: raw.session_id,
      nTrials: raw.n_trials,
      nResponses: raw.n_responses,
      state: raw.state,
    };
  }

  async getTrial(sessionId: string, index: number): Promise<TrialView> {
    const raw = await this.request<{
      pair_id: string;
      index: number;
      total: number;
      left_image: string;
      right_image: string;
    }>('GET', `/v1/sessions/${sessionId}/trials/${index}`);
    return {
      pairId: raw.pair_id,
      index: raw.index,
      total: raw.total,
      leftImage: raw.left_image,
      rightImage: raw.right_image,
    };
  }

  async submitResponse(sessionId: string, pairId: string, chosen: Position): Promise<SubmitAck> {
    const raw = await this.request<{
      recorded: boolean;
      replayed: boolean;
      n_responses: number;
      next_index: number | null;
      completed: boolean;
    }>('POST', `/v1/sessions/${sessionId}/responses`, {
      pair_id: pairId,
      chosen_position: chosen,
    });
    return {
      recorded: raw.recorded,
      replayed: raw.replayed,
      nResponses: raw.n_responses,
      nextIndex: raw.next_index,
      completed: raw.completed,
    };
  }

  async getSessionResults(sessionId: string): Promise<StudyResult> {
    const raw = await this.request<{
      per_model: Record<string, ModelAccuracyRaw>;
      overall: ModelAccuracyRaw;
    }>('GET', `/v1/sessions/${sessionId}/results`);
    return { perModel: raw.per_model, overall: raw.overall };
  }
}

interface ModelAccuracyRaw {
  n: number;
  accuracy: number;
}
