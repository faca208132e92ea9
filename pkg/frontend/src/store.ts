import type {
  AssessmentDraft, AssessmentResult, Catalog, PrescreenOutcome, QuestionGroupId, Selections
} from './types.js';
import { emptySelections } from './types.js';

export type Step = 'prescreen' | 'assessment' | 'result';

export interface WizardState {
  step: Step;
  catalog: Catalog | null;
  selections: Selections;
  gpai: boolean;
  outcome: PrescreenOutcome | null;
  gateToken: string | null;
  draft: AssessmentDraft; // mutable scratch buffer; edited in place to keep input focus
  result: AssessmentResult | null;
  pending: boolean;
  error: string | null;
  notice: string | null;
}

export function initialState(): WizardState {
  return {
    step: 'prescreen',
    catalog: null,
    selections: emptySelections(),
    gpai: false,
    outcome: null,
    gateToken: null,
    draft: { role: 'provider', domain: '', system_type: '', input_data: '', intended_use: '' },
    result: null,
    pending: false,
    error: null,
    notice: null
  };
}

// Pure transitions. Outcomes and risk levels always come from the server;
// the client only decides which screen the state allows.

export function toggleOption(state: WizardState, group: QuestionGroupId,
                             id: string, checked: boolean): WizardState {
  const current = new Set(state.selections[group]);
  if (checked) current.add(id); else current.delete(id);
  // A new answer configuration invalidates any earlier outcome and token.
  return {
    ...state,
    selections: { ...state.selections, [group]: [...current].sort() },
    outcome: null,
    gateToken: null
  };
}

export function withOutcome(state: WizardState, outcome: PrescreenOutcome): WizardState {
  return {
    ...state,
    outcome,
    gateToken: outcome.may_proceed && outcome.gate_token ? outcome.gate_token : null,
    error: null,
    notice: null
  };
}

export function canProceed(state: WizardState): boolean {
  return state.outcome?.may_proceed === true && state.gateToken !== null;
}

export function goToAssessment(state: WizardState): WizardState {
  if (!canProceed(state)) return state; // gate invariant: unreachable without a token
  return { ...state, step: 'assessment', error: null };
}

export function withResult(state: WizardState, result: AssessmentResult): WizardState {
  return { ...state, result, step: 'result', pending: false, error: null };
}

export function gateRejected(state: WizardState, message: string): WizardState {
  // Token expired or invalid: back to pre-screening with an explanation.
  return {
    ...state,
    step: 'prescreen',
    outcome: null,
    gateToken: null,
    pending: false,
    notice: message
  };
}

export function restart(state: WizardState): WizardState {
  return { ...initialState(), catalog: state.catalog };
}

export class Store {
  private listeners: (() => void)[] = [];

  constructor(private state: WizardState = initialState()) {}

  get(): WizardState {
    return this.state;
  }

  set(next: WizardState): void {
    this.state = next;
    for (const listener of this.listeners) listener();
  }

  update(fn: (state: WizardState) => WizardState): void {
    this.set(fn(this.state));
  }

  subscribe(listener: () => void): () => void {
    this.listeners.push(listener);
    return () => {
      this.listeners = this.listeners.filter(l => l !== listener);
    };
  }
}
