// Review queue state: one card at a time, server responses are the only
// source of truth.  The UI never mutates templates locally and never
// shows optimistic results.

import type { PendingResponse, ProposalView } from './types';

export interface QueueState {
  sessionId: string;
  templateVersion: number | null;
  proposals: ProposalView[];
  cursor: number;
  submitting: boolean;
  submitted: Set<string>;
  banner: string | null;
}

export function initialState(sessionId: string): QueueState {
  return {
    sessionId,
    templateVersion: null,
    proposals: [],
    cursor: 0,
    submitting: false,
    submitted: new Set(),
    banner: null,
  };
}

/** Replace local queue contents with a fresh server snapshot. */
export function applyPending(state: QueueState, response: PendingResponse): QueueState {
  const staleView =
    state.templateVersion !== null && response.template_version !== state.templateVersion;
  return {
    ...state,
    templateVersion: response.template_version,
    proposals: response.proposals,
    cursor: response.proposals.length === 0 ? 0 : Math.min(state.cursor, response.proposals.length - 1),
    banner: staleView ? `template advanced to version ${response.template_version}` : null,
  };
}

export function currentProposal(state: QueueState): ProposalView | null {
  return state.proposals.length > 0 ? state.proposals[state.cursor] : null;
}

/** Rotate to the next card without deciding (the "skip" hotkey). */
export function skip(state: QueueState): QueueState {
  if (state.proposals.length === 0) {
    return state;
  }
  return { ...state, cursor: (state.cursor + 1) % state.proposals.length };
}

export function canSubmit(state: QueueState, proposalId: string): boolean {
  return !state.submitting && !state.submitted.has(proposalId);
}

export function beginSubmit(state: QueueState, proposalId: string): QueueState {
  const submitted = new Set(state.submitted);
  submitted.add(proposalId);
  return { ...state, submitting: true, submitted };
}

export function finishSubmit(state: QueueState, banner: string | null = null): QueueState {
  return { ...state, submitting: false, banner };
}

/** Exact template version the queue expects after an acknowledged decision. */
export function expectVersion(state: QueueState, version: number): QueueState {
  return { ...state, templateVersion: version };
}

export function isComplete(state: QueueState): boolean {
  return state.proposals.length === 0;
}
