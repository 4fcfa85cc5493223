import { ApiError, StudyApi } from './api.js';
import type { Position, StudyResult, TrialView } from './types.js';

export type Phase = 'loading' | 'trial' | 'submitting' | 'complete' | 'terminal';

export interface SessionState {
  phase: Phase;
  trial: TrialView | null;
  selection: Position | null;
  results: StudyResult | null;
  message: string;
}

type Listener = (state: SessionState) => void;

/**
 * Drives one observer through a session: strictly sequential trials, a
 * forced choice per trial (select, then an explicit confirm - no skip,
 * no back), and the backend-computed results at the end. Resuming is
 * just reading how many responses the server already has and continuing
 * from there, which is also what a mid-session page refresh does.
 */
export class SessionController {
  private state: SessionState = {
    phase: 'loading',
    trial: null,
    selection: null,
    results: null,
    message: '',
  };
  private listeners: Listener[] = [];
  private index = 0;
  private total = 0;

  constructor(
    private readonly api: StudyApi,
    readonly sessionId: string,
  ) {}

  subscribe(listener: Listener): void {
    this.listeners.push(listener);
    listener(this.state);
  }

  snapshot(): SessionState {
    return { ...this.state };
  }

  get trialIndex(): number {
    return this.index;
  }

  private setState(patch: Partial<SessionState>): void {
    this.state = { ...this.state, ...patch };
    for (const listener of this.listeners) listener(this.state);
  }

  /** Entry point: sync with the server and show the first unanswered trial. */
  async resume(): Promise<void> {
    const info = await this.api.getSession(this.sessionId);
    this.index = info.nResponses;
    this.total = info.nTrials;
    if (info.state === 'complete') {
      await this.finish();
      return;
    }
    await this.loadTrial();
  }

  private async loadTrial(): Promise<void> {
    try {
      const trial = await this.api.getTrial(this.sessionId, this.index);
      this.setState({ phase: 'trial', trial, selection: null, message: '' });
    } catch (err) {
      if (err instanceof ApiError && err.status === 409) {
        // answered or completed elsewhere: re-sync once, else terminal
        const info = await this.api.getSession(this.sessionId);
        if (info.state === 'complete') {
          await this.finish();
          return;
        }
        if (info.nResponses !== this.index) {
          this.index = info.nResponses;
          await this.loadTrial();
          return;
        }
        this.setState({ phase: 'terminal', message: err.message });
        return;
      }
      throw err;
    }
  }

  /** Select a side; the choice is not sent until confirm(). */
  select(position: Position): void {
    if (this.state.phase !== 'trial') return;
    this.setState({ selection: position });
  }

  /** Commit the forced choice; advancing requires exactly this. */
  async confirm(): Promise<void> {
    const { trial, selection } = this.state;
    if (this.state.phase !== 'trial' || trial === null || selection === null) return;
    this.setState({ phase: 'submitting' });
    try {
      const ack = await this.api.submitResponse(this.sessionId, trial.pairId, selection);
      this.index = ack.nResponses;
      if (ack.completed) {
        await this.finish();
      } else {
        await this.loadTrial();
      }
    } catch (err) {
      if (err instanceof ApiError && err.status === 409) {
        this.setState({ phase: 'terminal', message: err.message });
        return;
      }
      throw err;
    }
  }

  private async finish(): Promise<void> {
    const results = await this.api.getSessionResults(this.sessionId);
    this.setState({ phase: 'complete', results, trial: null, selection: null });
  }

  get progressLabel(): string {
    return `Trial ${Math.min(this.index + 1, this.total)} of ${this.total}`;
  }
}

const STORAGE_KEY = 'xrayinpaint-study-session';

/**
 * Create or resume the session bound to this browser. The stored id is
 * what lets a refreshed page land on its first unanswered trial.
 */
export async function attachSession(
  api: StudyApi,
  storage: Pick<Storage, 'getItem' | 'setItem' | 'removeItem'>,
  observerId: string,
): Promise<SessionController> {
  const stored = storage.getItem(STORAGE_KEY);
  if (stored !== null) {
    try {
      const controller = new SessionController(api, stored);
      await controller.resume();
      return controller;
    } catch {
      storage.removeItem(STORAGE_KEY); // stale or server was rebuilt
    }
  }
  const info = await api.createSession(observerId);
  storage.setItem(STORAGE_KEY, info.sessionId);
  const controller = new SessionController(api, info.sessionId);
  await controller.resume();
  return controller;
}
