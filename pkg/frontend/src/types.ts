// DTOs mirroring the service JSON bodies (lower_snake_case fields).

export type QuestionGroupId =
  | 'ai_criteria'
  | 'prohibited'
  | 'harmonisation'
  | 'highrisk_app'
  | 'exemption';

export const QUESTION_GROUPS: QuestionGroupId[] = [
  'ai_criteria', 'prohibited', 'harmonisation', 'highrisk_app', 'exemption'
];

export interface CatalogOption {
  id: string;
  text: string;
  citations: string[];
}

export interface Catalog {
  version: string;
  groups: Record<QuestionGroupId, { question: string; options: CatalogOption[] }>;
  gpai: { question: string; text: string; citations: string[] };
}

export interface RuleFire {
  rule: string;
  options: string[];
}

export interface PrescreenOutcome {
  classification: string;
  risk: string;
  gpai: string;
  may_proceed: boolean;
  triggered_rules: RuleFire[];
  display: { classification: string; risk: string; gpai: string };
  gate_token?: string;
  audit_id?: number;
}

export type RiskLevel = 'Low-Risk' | 'Medium-Risk' | 'High-Risk' | 'Prohibited';

export interface AssessmentResult {
  risk_level: RiskLevel;
  articles: string[];
  recitals: string[];
  annexes: string[];
  article_groups: Record<string, string>;
  retrieved_context: { ref: string; score: number }[];
  rewritten_query: string;
  raw_generation: string;
  prompt_version: string;
  warnings: string[];
  audit_id?: number;
}

export interface CorpusUnit {
  ref: string;
  kind: string;
  number: string;
  title: string | null;
  body: string;
  paragraphs: { label: string; text: string }[];
}

export interface AssessmentDraft {
  role: 'provider' | 'deployer';
  domain: string;
  system_type: string;
  input_data: string;
  intended_use: string;
}

export type Selections = Record<QuestionGroupId, string[]>;

export function emptySelections(): Selections {
  return {
    ai_criteria: [], prohibited: [], harmonisation: [], highrisk_app: [], exemption: []
  };
}
