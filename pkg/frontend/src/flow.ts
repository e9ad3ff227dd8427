// Session driver: create, answer, poll. Holds the only mutable client
// state (session id, sequence cursor, busy flag); everything shown to the
// user is re-derived from fresh service payloads.

import * as api from './api.js';
import { buildSessionView, parseStateDoc } from './view.js';
import type { SessionView } from './view.js';
import type { ItemRef, StateDoc } from './types.js';

export interface FlowOptions {
  bankId: string;
  selector: string;
  tau2: number;
  factors: number[];
  horizon: number;
  sampleCount?: number;
  seed?: number;
  /** state refresh period; 0 disables polling (tests drive manually). */
  pollMs?: number;
}

export interface FlowCallbacks {
  onView: (view: SessionView) => void;
  onError: (message: string, retriable: boolean) => void;
}

export class SessionFlow {
  private readonly opts: FlowOptions;
  private readonly cb: FlowCallbacks;
  private sessionId: string | null = null;
  private sequence = 0;
  private item: ItemRef | null = null;
  private busy = false;
  private timer: ReturnType<typeof setInterval> | null = null;

  constructor(opts: FlowOptions, cb: FlowCallbacks) {
    this.opts = opts;
    this.cb = cb;
  }

  get currentItem(): ItemRef | null {
    return this.item;
  }

  get active(): boolean {
    return this.sessionId !== null && this.item !== null;
  }

  get id(): string | null {
    return this.sessionId;
  }

  async start(): Promise<void> {
    const created = await this.guard(() => api.createSession({
      bank_id: this.opts.bankId,
      selector: this.opts.selector,
      tau2: this.opts.tau2,
      factors: this.opts.factors,
      horizon: this.opts.horizon,
      sample_count: this.opts.sampleCount,
      seed: this.opts.seed,
    }));
    if (!created) return;
    this.sessionId = created.session_id;
    this.sequence = created.sequence;
    this.item = created.item;
    await this.refresh();
    if (created.terminated) {
      this.stopPolling();
    } else if (this.opts.pollMs) {
      this.timer = setInterval(() => { void this.refresh(); }, this.opts.pollMs);
    }
  }

  /** Submit an answer for the pending item. No-op while a call is in flight. */
  async answer(value: 0 | 1): Promise<void> {
    if (!this.sessionId || !this.item || this.busy) return;
    const result = await this.guard(() => api.submitResponse(
      this.sessionId as string, (this.item as ItemRef).index, value,
      this.sequence));
    if (!result) return;
    if (result.terminated) {
      this.item = null;
      this.stopPolling();
    } else {
      this.item = result.item;
      this.sequence = result.sequence_next as number;
    }
    await this.refresh();
  }

  /** Re-fetch state and push a fresh view; never computes anything locally. */
  async refresh(): Promise<void> {
    if (!this.sessionId) return;
    let raw: StateDoc;
    try {
      raw = await api.getState(this.sessionId);
    } catch (err) {
      this.reportError(err);
      return;
    }
    const parsed = parseStateDoc(raw);
    if (!parsed.ok) {
      this.cb.onError(`service returned a malformed state: ${parsed.error}`,
        false);
      return;
    }
    this.cb.onView(buildSessionView(parsed.doc));
  }

  stopPolling(): void {
    if (this.timer !== null) {
      clearInterval(this.timer);
      this.timer = null;
    }
  }

  private async guard<T>(op: () => Promise<T>): Promise<T | null> {
    this.busy = true;
    try {
      return await op();
    } catch (err) {
      this.reportError(err);
      return null;
    } finally {
      this.busy = false;
    }
  }

  private reportError(err: unknown): void {
    if (err instanceof api.ApiError) {
      // duplicate submits are absorbed by service idempotency; anything
      // else the operator needs to read
      this.cb.onError(`${err.code}: ${err.message}`, false);
    } else {
      this.cb.onError('network failure, the service may be unreachable',
        true);
    }
  }
}
