import { createBank, health } from './api.js';
import { setBaseUrl } from './config.js';
import { SessionFlow } from './flow.js';
import {
  renderErrorBanner,
  renderHistory,
  renderItemCard,
  renderPosteriorPanel,
  renderSummaryCard,
} from './render.js';
import type { SessionView } from './view.js';

// small demo bank so the page works against an empty data directory:
// six 1-factor items, steepest first
const DEMO_BANK = {
  loadings: [[2.6], [2.3], [2.0], [1.7], [1.4], [1.1]],
  intercepts: [0.0, 0.3, -0.3, 0.5, -0.5, 0.0],
  names: ['pattern-1', 'pattern-2', 'recall-1', 'recall-2',
    'speed-1', 'speed-2'],
};

const $ = (sel: string) => document.querySelector(sel) as HTMLElement;

let flow: SessionFlow | null = null;

function show(view: SessionView): void {
  $('#posterior').innerHTML = renderPosteriorPanel(view);
  $('#history').innerHTML = renderHistory(view);
  if (view.status === 'active' && view.item) {
    $('#item').innerHTML = renderItemCard(view);
    wireAnswers();
  } else if (view.status === 'terminated') {
    $('#item').innerHTML = renderSummaryCard(view);
  }
  $('#status').textContent =
    `session ${view.sessionId} · ${view.status} · ${view.stepsTaken} answered`;
}

function showError(message: string, retriable: boolean): void {
  $('#banner').innerHTML = renderErrorBanner(message,
    retriable ? 'retry-btn' : undefined);
  const retry = document.getElementById('retry-btn');
  if (retry) {
    retry.addEventListener('click', () => {
      $('#banner').innerHTML = '';
      void flow?.refresh();
    });
  }
}

function wireAnswers(): void {
  const yes = document.getElementById('answer-yes');
  const no = document.getElementById('answer-no');
  yes?.addEventListener('click', () => { void flow?.answer(1); });
  no?.addEventListener('click', () => { void flow?.answer(0); });
}

async function startSession(): Promise<void> {
  $('#banner').innerHTML = '';
  setBaseUrl(($('#base-url') as HTMLInputElement).value);
  try {
    await health();
  } catch {
    showError('cannot reach the service at that address', false);
    return;
  }
  let bankId = ($('#bank-id') as HTMLInputElement).value.trim();
  if (!bankId) {
    const made = await createBank(DEMO_BANK);
    bankId = made.bank_id;
    ($('#bank-id') as HTMLInputElement).value = bankId;
  }
  flow?.stopPolling();
  flow = new SessionFlow({
    bankId,
    selector: ($('#selector') as HTMLSelectElement).value,
    tau2: Number(($('#tau2') as HTMLInputElement).value),
    factors: [0],
    horizon: 6,
    pollMs: 4000,
  }, { onView: show, onError: showError });
  await flow.start();
}

export function boot(): void {
  ($('#base-url') as HTMLInputElement).value = window.location.origin;
  $('#start-btn').addEventListener('click', () => { void startSession(); });
}

if (typeof document !== 'undefined' && document.getElementById('start-btn')) {
  boot();
}
