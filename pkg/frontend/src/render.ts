// DOM rendering. Every numeric node carries data-field (the service field
// path) and data-value (the exact payload number) so tests can trace each
// displayed figure back to the payload that produced it.

import { fmt } from './view.js';
import type { SessionView } from './view.js';

function esc(v: string): string {
  return v
    .replace(/&/g, '&amp;')
    .replace(/</g, '&lt;')
    .replace(/>/g, '&gt;')
    .replace(/"/g, '&quot;');
}

function num(field: string, value: number, text?: string): string {
  return `<span data-field="${esc(field)}" data-value="${String(value)}">`
    + `${esc(text ?? fmt(value))}</span>`;
}

export function renderPosteriorPanel(view: SessionView): string {
  const rows = view.factors.map((f) => {
    // interval bar on a fixed [-4, 4] axis
    const left = ((f.lo + 4) / 8) * 100;
    const width = Math.max(0.5, ((f.hi - f.lo) / 8) * 100);
    const center = ((f.mean + 4) / 8) * 100;
    const tag = f.prioritized ? ' <em class="prio">target</em>' : '';
    return `<div class="factor-row">
      <div class="factor-label">factor ${f.index}${tag}</div>
      <div class="belief-axis">
        <div class="belief-band" style="left:${left.toFixed(2)}%;width:${width.toFixed(2)}%"></div>
        <div class="belief-center" style="left:${center.toFixed(2)}%"></div>
      </div>
      <div class="belief-numbers">
        mean ${num(`mean.${f.index}`, f.mean)}
        &middot; var ${num(`variance.${f.index}`, f.variance)}
        &middot; 90% [${num(`interval90.${f.index}.0`, f.lo)},
        ${num(`interval90.${f.index}.1`, f.hi)}]
      </div>
    </div>`;
  }).join('');

  const pct = Math.min(100, (view.gauge.ratio / 2) * 100);
  const gaugeClass = view.gauge.met ? 'gauge-fill met' : 'gauge-fill';
  const gauge = `<div class="gauge">
    <div class="gauge-title">max target variance vs threshold</div>
    <div class="gauge-track">
      <div class="${gaugeClass}" style="width:${pct.toFixed(2)}%"></div>
      <div class="gauge-mark" style="left:50%"></div>
    </div>
    <div class="gauge-numbers">
      ${num('max_prioritized_variance', view.gauge.value)}
      / ${num('tau2', view.gauge.threshold)}
      ${view.gauge.met ? '<b class="ok">below threshold</b>' : ''}
    </div>
  </div>`;

  return `<div class="posterior-panel">${rows}${gauge}</div>`;
}

export function renderItemCard(view: SessionView): string {
  if (!view.item) return '';
  return `<div class="item-card">
    <div class="item-step">item ${view.stepsTaken + 1}
      &middot; budget left ${num('remaining_budget', view.remainingBudget,
        String(view.remainingBudget))}</div>
    <h3 data-field="item.name">${esc(view.item.name)}</h3>
    <div class="answer-row">
      <button id="answer-yes" data-item="${view.item.index}">Correct (1)</button>
      <button id="answer-no" data-item="${view.item.index}">Incorrect (0)</button>
    </div>
  </div>`;
}

export function renderSummaryCard(view: SessionView): string {
  const steps = view.terminationStep ?? view.stepsTaken;
  return `<div class="summary-card">
    <h3>Test complete</h3>
    <div>terminated after ${num('termination_step', steps, String(steps))}
      items (${esc(view.reason ?? '')})</div>
    <div class="muted">final factor estimates above are the report of record</div>
  </div>`;
}

export function renderHistory(view: SessionView): string {
  if (view.history.length === 0) {
    return '<div class="muted">no responses yet</div>';
  }
  return view.history.map(({ item, value }, t) =>
    `<span class="chip ${value ? 'chip-right' : 'chip-wrong'}"
      data-field="administered.${t}">#${item}:${value}</span>`).join(' ');
}

export function renderErrorBanner(message: string, retryId?: string): string {
  const retry = retryId ? ` <button id="${esc(retryId)}">retry</button>` : '';
  return `<div class="error-banner">${esc(message)}${retry}</div>`;
}
