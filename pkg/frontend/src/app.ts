// Keyboard-first review loop: a = approve, r = reject, s = skip.
// Every decision round-trips through the service; the queue and the
// template panel re-render only from what the server returns.

import { ConflictError, ReviewApi } from './api';
import {
  QueueState,
  applyPending,
  beginSubmit,
  canSubmit,
  currentProposal,
  expectVersion,
  finishSubmit,
  initialState,
  isComplete,
  skip,
} from './queue';
import type { Decision, ItemView, TemplateResponse } from './types';

interface AppContext {
  api: ReviewApi;
  reviewer: string;
  root: HTMLElement;
  state: QueueState;
  template: TemplateResponse | null;
}

function el(tag: string, className: string, text?: string): HTMLElement {
  const node = document.createElement(tag);
  node.className = className;
  if (text !== undefined) {
    node.textContent = text;
  }
  return node;
}

function renderItem(view: ItemView, role: string): HTMLElement {
  const card = el('div', `item item-${role}`);
  card.appendChild(el('h3', 'item-label', `${role}: ${view.label}`));
  card.appendChild(el('div', 'item-aliases', `aliases: ${view.aliases.join(', ')}`));
  const examples = el('ul', 'item-examples');
  for (const example of view.examples) {
    examples.appendChild(el('li', 'example', `${example.doc_id}: ${example.value}`));
  }
  card.appendChild(examples);
  return card;
}

function render(ctx: AppContext): void {
  const { root, state } = ctx;
  root.replaceChildren();

  const header = el('header', 'header');
  const itemCount = ctx.template ? ctx.template.template.items.length : 0;
  header.appendChild(
    el(
      'div',
      'status',
      `session ${state.sessionId} · template v${state.templateVersion ?? '?'} · ` +
        `${itemCount} items · ${state.proposals.length} pending`,
    ),
  );
  if (state.banner) {
    header.appendChild(el('div', 'banner', state.banner));
  }
  root.appendChild(header);

  const proposal = currentProposal(state);
  if (proposal === null) {
    root.appendChild(el('div', 'done', 'revision complete — no pending proposals'));
    return;
  }

  const card = el('section', 'proposal');
  card.appendChild(el('h2', 'proposal-id', `${proposal.proposal_id}`));
  card.appendChild(el('p', 'justification', proposal.justification));
  card.appendChild(renderItem(proposal.source, 'source'));
  card.appendChild(renderItem(proposal.target, 'target'));

  const controls = el('div', 'controls');
  for (const [label, decision] of [
    ['approve (a)', 'APPROVED'],
    ['reject (r)', 'REJECTED'],
  ] as [string, Decision][]) {
    const button = el('button', `button-${decision.toLowerCase()}`, label) as HTMLButtonElement;
    button.disabled = state.submitting || !canSubmit(state, proposal.proposal_id);
    button.addEventListener('click', () => void decide(ctx, decision));
    controls.appendChild(button);
  }
  const skipButton = el('button', 'button-skip', 'skip (s)') as HTMLButtonElement;
  skipButton.disabled = state.submitting;
  skipButton.addEventListener('click', () => {
    ctx.state = skip(ctx.state);
    render(ctx);
  });
  controls.appendChild(skipButton);
  card.appendChild(controls);
  root.appendChild(card);
}

async function refresh(ctx: AppContext): Promise<void> {
  const pending = await ctx.api.fetchPending(ctx.state.sessionId);
  ctx.template = await ctx.api.fetchTemplate(ctx.state.sessionId);
  ctx.state = applyPending(ctx.state, pending);
  render(ctx);
}

export async function decide(ctx: AppContext, decision: Decision): Promise<void> {
  const proposal = currentProposal(ctx.state);
  if (proposal === null || !canSubmit(ctx.state, proposal.proposal_id)) {
    return;
  }
  ctx.state = beginSubmit(ctx.state, proposal.proposal_id);
  render(ctx);
  try {
    const ack = await ctx.api.submitDecision(
      ctx.state.sessionId,
      proposal.proposal_id,
      decision,
      ctx.reviewer,
    );
    ctx.state = finishSubmit(expectVersion(ctx.state, ack.template_version));
  } catch (error) {
    if (error instanceof ConflictError) {
      ctx.state = finishSubmit(ctx.state, 'proposal was already decided or went stale');
    } else {
      ctx.state = finishSubmit(ctx.state, `request failed: ${String(error)} — retry`);
      render(ctx);
      return; // keep local queue; the reviewer can retry via refresh
    }
  }
  // approvals can stale other proposals: always re-pull server truth
  await refresh(ctx);
}

export async function startApp(
  root: HTMLElement,
  baseUrl: string,
  sessionId: string,
  reviewer: string,
): Promise<AppContext> {
  const ctx: AppContext = {
    api: new ReviewApi(baseUrl),
    reviewer,
    root,
    state: initialState(sessionId),
    template: null,
  };
  document.addEventListener('keydown', (event) => {
    if (ctx.state.submitting) {
      return;
    }
    if (event.key === 'a') {
      void decide(ctx, 'APPROVED');
    } else if (event.key === 'r') {
      void decide(ctx, 'REJECTED');
    } else if (event.key === 's') {
      ctx.state = skip(ctx.state);
      render(ctx);
    }
  });
  await refresh(ctx);
  return ctx;
}

export { isComplete };
