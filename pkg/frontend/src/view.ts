// Pure payload-to-view transforms. No DOM, no fetch; the service is the
// single source of truth and these functions only rearrange its fields.

import type { ItemRef, StateDoc } from './types.js';

export interface FactorBelief {
  index: number;
  prioritized: boolean;
  mean: number;
  variance: number;
  lo: number;
  hi: number;
}

export interface Gauge {
  /** max posterior variance over the prioritized factors, verbatim. */
  value: number;
  threshold: number;
  /** value/threshold clipped to [0, 2] for bar width; 1 means "at target". */
  ratio: number;
  met: boolean;
}

export interface SessionView {
  sessionId: string;
  status: string;
  item: ItemRef | null;
  stepsTaken: number;
  remainingBudget: number;
  factors: FactorBelief[];
  gauge: Gauge;
  history: { item: number; value: number }[];
  reason: string | null;
  terminationStep: number | null;
}

export type ParseResult =
  | { ok: true; doc: StateDoc }
  | { ok: false; error: string };

function isNumberArray(v: unknown, n?: number): v is number[] {
  return Array.isArray(v) && (n === undefined || v.length === n)
    && v.every((x) => typeof x === 'number' && Number.isFinite(x));
}

/** Validate a raw /state payload before rendering anything from it. */
export function parseStateDoc(raw: unknown): ParseResult {
  if (typeof raw !== 'object' || raw === null) {
    return { ok: false, error: 'state payload is not an object' };
  }
  const doc = raw as Record<string, unknown>;
  if (!isNumberArray(doc.mean) || doc.mean.length === 0) {
    return { ok: false, error: 'missing factor means' };
  }
  const k = doc.mean.length;
  if (!isNumberArray(doc.variance, k)) {
    return { ok: false, error: 'variance length does not match mean' };
  }
  const iv = doc.interval90;
  if (!Array.isArray(iv) || iv.length !== k
    || !iv.every((p) => isNumberArray(p, 2))) {
    return { ok: false, error: 'malformed credible intervals' };
  }
  if (typeof doc.steps_taken !== 'number' || typeof doc.tau2 !== 'number'
    || doc.tau2 <= 0) {
    return { ok: false, error: 'missing progress fields' };
  }
  if (!isNumberArray(doc.factors)
    || (doc.factors as number[]).some((f) => f < 0 || f >= k)) {
    return { ok: false, error: 'prioritized factors out of range' };
  }
  if (typeof doc.max_prioritized_variance !== 'number') {
    return { ok: false, error: 'missing max prioritized variance' };
  }
  if (!Array.isArray(doc.administered)
    || !(doc.administered as unknown[]).every((p) => isNumberArray(p, 2))) {
    return { ok: false, error: 'malformed response history' };
  }
  return { ok: true, doc: raw as StateDoc };
}

export function buildSessionView(doc: StateDoc): SessionView {
  const prioritized = new Set(doc.factors);
  const factors: FactorBelief[] = doc.mean.map((m, i) => ({
    index: i,
    prioritized: prioritized.has(i),
    mean: m,
    variance: doc.variance[i],
    lo: doc.interval90[i][0],
    hi: doc.interval90[i][1],
  }));
  const met = doc.max_prioritized_variance <= doc.tau2;
  return {
    sessionId: doc.session_id ?? '',
    status: doc.status ?? 'active',
    item: doc.item ?? null,
    stepsTaken: doc.steps_taken,
    remainingBudget: doc.remaining_budget,
    factors,
    gauge: {
      value: doc.max_prioritized_variance,
      threshold: doc.tau2,
      ratio: Math.min(2, doc.max_prioritized_variance / doc.tau2),
      met,
    },
    history: doc.administered.map(([item, value]) => ({ item, value })),
    reason: doc.reason ?? null,
    terminationStep: doc.termination_step ?? null,
  };
}

/** Display rounding used everywhere; exact values ride along separately. */
export function fmt(x: number): string {
  return x.toFixed(3);
}
