import { getBaseUrl } from './config.js';
import type {
  BankCreated,
  CreateSessionResponse,
  SessionDoc,
  StateDoc,
  SubmitResponseResult,
} from './types.js';

export class ApiError extends Error {
  readonly code: string;
  readonly status: number;

  constructor(status: number, code: string, message: string) {
    super(message);
    this.code = code;
    this.status = status;
  }
}

async function call<T>(path: string, options?: RequestInit): Promise<T> {
  const res = await fetch(getBaseUrl() + path, {
    headers: { 'content-type': 'application/json' },
    ...options,
  });
  const text = await res.text();
  let doc: unknown = null;
  try {
    doc = text ? JSON.parse(text) : null;
  } catch {
    doc = null;
  }
  if (!res.ok) {
    const err = doc as { code?: string; message?: string } | null;
    throw new ApiError(res.status, err?.code ?? 'http_error',
      err?.message ?? `HTTP ${res.status}`);
  }
  return doc as T;
}

export function health(): Promise<{ status: string }> {
  return call('/healthz');
}

export function createBank(payload: unknown): Promise<BankCreated> {
  return call('/banks', { method: 'POST', body: JSON.stringify(payload) });
}

export function createSession(payload: {
  bank_id: string;
  selector: string;
  tau2: number;
  factors: number[];
  horizon: number;
  sample_count?: number;
  seed?: number;
}): Promise<CreateSessionResponse> {
  // session settings travel under a nested config object
  const { bank_id, selector, ...config } = payload;
  return call('/sessions', {
    method: 'POST',
    body: JSON.stringify({ bank_id, selector, config }),
  });
}

export function getSession(sessionId: string): Promise<SessionDoc> {
  return call(`/sessions/${sessionId}`);
}

export function getState(sessionId: string): Promise<StateDoc> {
  return call(`/sessions/${sessionId}/state`);
}

export function submitResponse(
  sessionId: string,
  item: number,
  value: 0 | 1,
  sequence: number,
): Promise<SubmitResponseResult> {
  return call(`/sessions/${sessionId}/responses`, {
    method: 'POST',
    body: JSON.stringify({ item, value, sequence }),
  });
}
