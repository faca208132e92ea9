import type {
  AssessmentDraft, AssessmentResult, Catalog, CorpusUnit, PrescreenOutcome, Selections
} from './types.js';

export class ApiError extends Error {
  constructor(
    public status: number,
    public code: string,
    public detail: unknown
  ) {
    super(`HTTP ${status}: ${code}`);
  }
}

async function parseJson(response: Response): Promise<any> {
  const text = await response.text();
  try {
    return text ? JSON.parse(text) : {};
  } catch {
    return { error: 'bad_response', detail: text.slice(0, 200) };
  }
}

export class ApiClient {
  constructor(public baseUrl: string = '') {}

  private async request(path: string, init?: RequestInit): Promise<any> {
    const response = await fetch(this.baseUrl + path, init);
    const body = await parseJson(response);
    if (!response.ok) {
      throw new ApiError(response.status, body.error ?? 'error', body.detail ?? body);
    }
    return body;
  }

  private post(path: string, payload: unknown): Promise<any> {
    return this.request(path, {
      method: 'POST',
      headers: { 'Content-Type': 'application/json' },
      body: JSON.stringify(payload)
    });
  }

  getCatalog(): Promise<Catalog> {
    return this.request('/api/v1/prescreen/options');
  }

  postPrescreen(selections: Selections, gpai: boolean): Promise<PrescreenOutcome> {
    return this.post('/api/v1/prescreen', { ...selections, gpai });
  }

  postAssess(draft: AssessmentDraft, gateToken: string): Promise<AssessmentResult> {
    return this.post('/api/v1/assess', { ...draft, gate_token: gateToken });
  }

  getUnit(ref: string): Promise<CorpusUnit> {
    return this.request(`/api/v1/corpus/units/${encodeURIComponent(ref)}`);
  }
}
