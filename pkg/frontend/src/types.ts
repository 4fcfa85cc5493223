export type Position = 'left' | 'right';

/** Mirrors the trial payload exactly: no ground truth ever reaches the client. */
export interface TrialView {
  pairId: string;
  index: number;
  total: number;
  leftImage: string;
  rightImage: string;
}

export interface SessionInfo {
  sessionId: string;
  nTrials: number;
  nResponses: number;
  state: 'in_progress' | 'complete';
}

export interface SubmitAck {
  recorded: boolean;
  replayed: boolean;
  nResponses: number;
  nextIndex: number | null;
  completed: boolean;
}

export interface ModelAccuracy {
  n: number;
  accuracy: number;
}

export interface StudyResult {
  perModel: Record<string, ModelAccuracy>;
  overall: ModelAccuracy;
}
