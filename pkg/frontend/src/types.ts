// Shapes of the /v1 API responses the UI consumes.

export type SearchMode = 'similar' | 'pip';

export interface MatchedWord {
  word: string;
  query_count: number;
  target_count: number;
  weight: number;
}

export interface ApiSearchResult {
  model_id: string;
  score: number;
  provenance: 'internal' | 'external';
  matched: MatchedWord[];
}

export interface SearchResult extends ApiSearchResult {
  // the score exactly as serialized by the API, so the UI can display it
  // without any client-side number formatting
  scoreText: string;
}

export interface SearchResponse {
  results: SearchResult[];
}

export interface MeshStats {
  triangle_count: number;
  vertex_count: number;
  surface_area: number;
  watertight: boolean;
  consistent_normals: boolean;
  degenerate_facets: number[];
  volume: number | null;
}

export interface VersionEntry {
  number: number;
  content_hash: string;
  timestamp: number;
  note: string;
}

export interface ModelRecord {
  model_id: string;
  name: string;
  description: string;
  tags: string[];
  sources: { domain: string; url: string }[];
  original_format: string;
  converter_version: string;
  content_hash: string;
  stats: MeshStats | null;
  state: 'active' | 'taken_down';
  provenance: 'internal' | 'external';
  versions?: VersionEntry[];
}

export interface RelatedEntry {
  model_id: string;
  score: number;
  scoreText: string;
}

export interface RelatedResponse {
  model_id: string;
  related: RelatedEntry[];
}

export interface CorpusStats {
  models: number;
  records: number;
  taken_down: number;
  words: number;
  generic_words: number;
  df_histogram: Record<string, number>;
}

export interface SearchFilters {
  watertight: boolean | null;
  normals: boolean | null;
  filetype: string | null;
  source: string | null;
}

export const EMPTY_FILTERS: SearchFilters = {
  watertight: null,
  normals: null,
  filetype: null,
  source: null,
};

export interface ViewState {
  queryFileName: string | null;
  mode: SearchMode;
  k: number;
  filters: SearchFilters;
  results: SearchResult[] | null;
  selected: SearchResult | null;
}
