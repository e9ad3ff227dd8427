// Payload shapes returned by the testing service. The UI renders these
// verbatim; it never derives posterior quantities on its own.

export interface ItemRef {
  index: number;
  name: string;
}

export interface SessionConfig {
  tau2: number;
  factors: number[];
  horizon: number;
  sample_count: number;
}

/** GET /sessions/{id}/state, and the `summary` block of terminal responses. */
export interface StateDoc {
  mean: number[];
  variance: number[];
  interval90: [number, number][];
  psi: number[][];
  administered: [number, number][];
  steps_taken: number;
  remaining_budget: number;
  tau2: number;
  factors: number[];
  max_prioritized_variance: number;
  session_id?: string;
  status?: string;
  item?: ItemRef | null;
  reason?: string;
  termination_step?: number;
}

export interface CreateSessionResponse {
  session_id: string;
  terminated: boolean;
  item: ItemRef | null;
  sequence: number;
  summary?: StateDoc;
}

export interface SubmitResponseResult {
  session_id: string;
  sequence: number;
  item_answered: number;
  steps_taken: number;
  terminated: boolean;
  item: ItemRef | null;
  sequence_next?: number;
  reason?: string;
  summary?: StateDoc;
}

export interface SessionDoc {
  session_id: string;
  bank_id: string;
  selector: string;
  status: 'active' | 'terminated';
  sequence: number;
  created_at: string;
  updated_at: string;
  config: SessionConfig;
  item?: ItemRef;
  reason?: string;
  termination_step?: number;
}

export interface BankCreated {
  bank_id: string;
  num_items: number;
  num_factors: number;
}

export interface ServiceError {
  code: string;
  message: string;
}
