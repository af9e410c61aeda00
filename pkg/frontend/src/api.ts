// Typed client for the /v1 HTTP API.  All truth lives server-side: this
// module never computes or reformats scores -- it keeps the raw score
// tokens from the response body so the views can display them verbatim.

import type {
  CorpusStats,
  ModelRecord,
  RelatedResponse,
  SearchFilters,
  SearchMode,
  SearchResponse,
} from './types.js';

export class ApiError extends Error {
  constructor(
    public status: number,
    public code: string,
    message: string,
  ) {
    super(message);
  }
}

async function raise(response: Response): Promise<never> {
  let code = `http-${response.status}`;
  let message = response.statusText;
  try {
    const body = await response.json();
    if (body?.error) {
      code = body.error.code ?? code;
      message = body.error.message ?? message;
    }
  } catch {
    // non-JSON error body; keep the status text
  }
  throw new ApiError(response.status, code, message);
}

// Pull the raw `"score": <number>` tokens out of a response body in
// order, so each parsed result can carry its score exactly as the API
// serialized it.
export function extractScoreTokens(body: string): string[] {
  const tokens: string[] = [];
  const pattern = /"score":\s*(-?[0-9.eE+-]+)/g;
  let match;
  while ((match = pattern.exec(body)) !== null) {
    tokens.push(match[1]);
  }
  return tokens;
}

function filterParams(filters: SearchFilters): Record<string, string> {
  const params: Record<string, string> = {};
  if (filters.watertight !== null) params.watertight = String(filters.watertight);
  if (filters.normals !== null) params.normals = String(filters.normals);
  if (filters.filetype) params.filetype = filters.filetype;
  if (filters.source) params.source = filters.source;
  return params;
}

export class MeshSearchApi {
  constructor(private base: string = '') {}

  private url(path: string): string {
    return `${this.base}${path}`;
  }

  async health(): Promise<boolean> {
    try {
      const response = await fetch(this.url('/v1/healthz'));
      return response.ok;
    } catch {
      return false;
    }
  }

  async uploadModel(
    file: Blob,
    fileName: string,
    meta: { name?: string; description?: string; tags?: string; sourceDomain?: string } = {},
  ): Promise<ModelRecord> {
    const form = new FormData();
    form.append('file', file, fileName);
    if (meta.name) form.append('name', meta.name);
    if (meta.description) form.append('description', meta.description);
    if (meta.tags) form.append('tags', meta.tags);
    if (meta.sourceDomain) form.append('source_domain', meta.sourceDomain);
    const response = await fetch(this.url('/v1/models'), { method: 'POST', body: form });
    if (!response.ok) await raise(response);
    return (await response.json()) as ModelRecord;
  }

  async search(
    file: Blob,
    fileName: string,
    mode: SearchMode,
    k: number,
    filters: SearchFilters,
  ): Promise<SearchResponse> {
    const form = new FormData();
    form.append('file', file, fileName);
    form.append('k', String(k));
    for (const [key, value] of Object.entries(filterParams(filters))) {
      form.append(key, value);
    }
    const response = await fetch(this.url(`/v1/search/${mode}`), { method: 'POST', body: form });
    if (!response.ok) await raise(response);
    const body = await response.text();
    const parsed = JSON.parse(body) as { results: Omit<SearchResponse['results'][number], 'scoreText'>[] };
    const tokens = extractScoreTokens(body);
    return {
      results: parsed.results.map((r, i) => ({ ...r, scoreText: tokens[i] ?? String(r.score) })),
    };
  }

  async textSearch(query: string, k: number, filters: SearchFilters): Promise<SearchResponse> {
    const params = new URLSearchParams({ q: query, k: String(k), ...filterParams(filters) });
    const response = await fetch(this.url(`/v1/search/text?${params}`));
    if (!response.ok) await raise(response);
    const body = await response.text();
    const parsed = JSON.parse(body) as { results: Omit<SearchResponse['results'][number], 'scoreText'>[] };
    const tokens = extractScoreTokens(body);
    return {
      results: parsed.results.map((r, i) => ({ ...r, scoreText: tokens[i] ?? String(r.score) })),
    };
  }

  async getModel(modelId: string): Promise<ModelRecord> {
    const response = await fetch(this.url(`/v1/models/${encodeURIComponent(modelId)}`));
    if (!response.ok) await raise(response);
    return (await response.json()) as ModelRecord;
  }

  async getRelated(modelId: string): Promise<RelatedResponse> {
    const response = await fetch(this.url(`/v1/models/${encodeURIComponent(modelId)}/related`));
    if (!response.ok) await raise(response);
    const body = await response.text();
    const parsed = JSON.parse(body) as { model_id: string; related: { model_id: string; score: number }[] };
    const tokens = extractScoreTokens(body);
    return {
      model_id: parsed.model_id,
      related: parsed.related.map((r, i) => ({ ...r, scoreText: tokens[i] ?? String(r.score) })),
    };
  }

  async deleteModel(modelId: string): Promise<void> {
    const response = await fetch(this.url(`/v1/models/${encodeURIComponent(modelId)}`), {
      method: 'DELETE',
    });
    if (!response.ok) await raise(response);
  }

  async stats(): Promise<CorpusStats> {
    const response = await fetch(this.url('/v1/stats'));
    if (!response.ok) await raise(response);
    return (await response.json()) as CorpusStats;
  }
}
