// Typed client for the edit service HTTP API.

export interface CatalogFeature {
  id: number;
  name: string;
  category: string;
  lo: number;
  hi: number;
}

export interface Catalog {
  features: CatalogFeature[];
  image: { height: number; width: number };
  n_styles: number;
  style_dim: number;
  trained_steps: number;
}

export interface FeatureView {
  id: number;
  name: string;
  value: number;   // normalized units
  slider: number;  // [0, 1]
  lo: number;
  hi: number;
}

export interface SessionSummary {
  id: string;
  seed: number | null;
  history_depth: number;
  features: FeatureView[];
  image_url: string;
}

export interface EditRequest {
  feature: number;
  target: number;
  unit: 'slider' | 'normalized';
  rounds?: number;
}

export interface EditResponse {
  session: SessionSummary;
  feature: number;
  rounds: number;
  target_normalized: number;
  measured: number;
  delta: number;
}

export type ImageKind = 'current' | 'original' | 'diff';

// Transport seam: the UI talks HTTP in production and a fake in tests.
export interface Transport {
  request(method: string, path: string, body?: unknown): Promise<unknown>;
}

export class ApiError extends Error {
  constructor(
    readonly status: number,
    readonly code: string,
    message: string,
  ) {
    super(message);
    this.name = 'ApiError';
  }
}

export class HttpTransport implements Transport {
  constructor(private readonly baseUrl: string) {}

  async request(method: string, path: string, body?: unknown): Promise<unknown> {
    const init: RequestInit = { method, headers: {} };
    if (body !== undefined) {
      init.headers = { 'Content-Type': 'application/json' };
      init.body = JSON.stringify(body);
    }
    const resp = await fetch(this.baseUrl + path, init);
    let data: unknown = null;
    try {
      data = await resp.json();
    } catch {
      data = null;
    }
    if (!resp.ok) {
      const err = (data as { error?: { code?: string; message?: string } } | null)?.error;
      throw new ApiError(resp.status, err?.code ?? 'http_error', err?.message ?? resp.statusText);
    }
    return data;
  }
}

export class ApiClient {
  constructor(
    private readonly transport: Transport,
    readonly baseUrl = '',
  ) {}

  getCatalog(): Promise<Catalog> {
    return this.transport.request('GET', '/catalog') as Promise<Catalog>;
  }

  createSession(seed: number): Promise<SessionSummary> {
    return this.transport.request('POST', '/sessions', { seed }) as Promise<SessionSummary>;
  }

  getFeatures(sessionId: string): Promise<SessionSummary> {
    return this.transport.request('GET', `/sessions/${sessionId}/features`) as Promise<SessionSummary>;
  }

  applyEdit(sessionId: string, edit: EditRequest): Promise<EditResponse> {
    return this.transport.request('POST', `/sessions/${sessionId}/edits`, edit) as Promise<EditResponse>;
  }

  undo(sessionId: string): Promise<SessionSummary> {
    return this.transport.request('POST', `/sessions/${sessionId}/undo`) as Promise<SessionSummary>;
  }

  // Version query defeats browser caching after each state change.
  imageUrl(sessionId: string, kind: ImageKind, version: number): string {
    return `${this.baseUrl}/sessions/${sessionId}/image?kind=${kind}&v=${version}`;
  }
}
