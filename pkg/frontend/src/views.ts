// Pure render functions: API data in, HTML strings out.  No state, no
// DOM access, no score arithmetic -- which is what makes a refresh
// reproduce identical content from API responses alone, and what lets
// the tests run without a browser.

import type {
  CorpusStats,
  ModelRecord,
  RelatedEntry,
  SearchFilters,
  SearchResult,
  ViewState,
} from './types.js';
import { ApiError } from './api.js';

export function escapeHtml(text: string): string {
  return text
    .replace(/&/g, '&amp;')
    .replace(/</g, '&lt;')
    .replace(/>/g, '&gt;')
    .replace(/"/g, '&quot;');
}

function badge(provenance: string): string {
  const cls = provenance === 'internal' ? 'badge badge-internal' : 'badge badge-external';
  return `<span class="${cls}">${escapeHtml(provenance)}</span>`;
}

export function filterChips(filters: SearchFilters): string {
  const chips: string[] = [];
  if (filters.watertight !== null) chips.push(`watertight: ${filters.watertight}`);
  if (filters.normals !== null) chips.push(`consistent normals: ${filters.normals}`);
  if (filters.filetype) chips.push(`filetype: ${filters.filetype}`);
  if (filters.source) chips.push(`source: ${filters.source}`);
  if (chips.length === 0) return '';
  return `<div class="chips">${chips
    .map((c) => `<span class="chip">${escapeHtml(c)}</span>`)
    .join('')}</div>`;
}

export function resultsView(state: ViewState): string {
  if (state.results === null) {
    return '<p class="hint">Upload a model to search.</p>';
  }
  const header = `<p class="summary">${state.results.length} result(s) for
    <code>${escapeHtml(state.queryFileName ?? 'query')}</code> in <b>${state.mode}</b> mode</p>`;
  if (state.results.length === 0) {
    return `${header}${filterChips(state.filters)}<p class="hint">No matches.</p>`;
  }
  const rows = state.results
    .map(
      (r, i) => `<tr data-model-id="${escapeHtml(r.model_id)}">
        <td>${i + 1}</td>
        <td><a href="#/model/${encodeURIComponent(r.model_id)}">${escapeHtml(r.model_id)}</a></td>
        <td class="score">${escapeHtml(r.scoreText)}</td>
        <td>${badge(r.provenance)}</td>
        <td>${r.matched.length} matched word(s)</td>
      </tr>`,
    )
    .join('\n');
  return `${header}
${filterChips(state.filters)}
<table class="results">
  <thead><tr><th>#</th><th>model</th><th>score</th><th>origin</th><th>match</th></tr></thead>
  <tbody>${rows}</tbody>
</table>`;
}

export function matchBreakdownView(result: SearchResult): string {
  if (result.matched.length === 0) {
    return '<p class="hint">No per-word breakdown.</p>';
  }
  const rows = result.matched
    .map(
      (m) => `<tr><td><code>${escapeHtml(m.word)}</code></td>
      <td>${m.query_count}</td><td>${m.target_count}</td><td>${m.weight}</td></tr>`,
    )
    .join('\n');
  return `<table class="breakdown">
  <thead><tr><th>word</th><th>query</th><th>target</th><th>weight</th></tr></thead>
  <tbody>${rows}</tbody>
</table>`;
}

export function statsRows(record: ModelRecord): string {
  const stats = record.stats;
  if (!stats) return '';
  return `<tr><th>triangles</th><td>${stats.triangle_count}</td></tr>
<tr><th>vertices</th><td>${stats.vertex_count}</td></tr>
<tr><th>surface area</th><td>${stats.surface_area}</td></tr>
<tr><th>watertight</th><td>${stats.watertight}</td></tr>
<tr><th>consistent normals</th><td>${stats.consistent_normals}</td></tr>
<tr><th>volume</th><td>${stats.volume === null ? 'undefined (open or inconsistent)' : stats.volume}</td></tr>
<tr><th>degenerate facets</th><td>${stats.degenerate_facets.length}</td></tr>`;
}

export function modelPageView(record: ModelRecord, related: RelatedEntry[]): string {
  const sources = record.sources
    .map((s) => `<li>${escapeHtml(s.domain)} &mdash; <code>${escapeHtml(s.url)}</code></li>`)
    .join('\n');
  const versions = (record.versions ?? [])
    .map(
      (v) => `<tr><td>${v.number}</td><td><code>${escapeHtml(v.content_hash.slice(0, 16))}</code></td>
      <td>${v.timestamp}</td><td>${escapeHtml(v.note)}</td></tr>`,
    )
    .join('\n');
  const relatedRows =
    related.length === 0
      ? '<p class="hint">No related models.</p>'
      : `<ul class="related">${related
          .map(
            (r) => `<li><a href="#/model/${encodeURIComponent(r.model_id)}">${escapeHtml(
              r.model_id,
            )}</a> <span class="score">${escapeHtml(r.scoreText)}</span></li>`,
          )
          .join('\n')}</ul>`;
  return `<article class="model-page">
<h2>${escapeHtml(record.name || record.model_id)} ${badge(record.provenance)}</h2>
<p><code>${escapeHtml(record.model_id)}</code> &middot; ${escapeHtml(record.original_format)}
 &middot; converter ${escapeHtml(record.converter_version)}</p>
<p>${escapeHtml(record.description)}</p>
<p>${record.tags.map((t) => `<span class="chip">${escapeHtml(t)}</span>`).join(' ')}</p>
<h3>Stats</h3>
<table class="stats">${statsRows(record)}</table>
<h3>Sources</h3>
<ul>${sources}</ul>
<h3>Versions</h3>
<table class="versions"><thead><tr><th>#</th><th>content hash</th><th>timestamp</th><th>note</th></tr></thead>
<tbody>${versions}</tbody></table>
<h3>Related models</h3>
${relatedRows}
<p><button class="danger" data-takedown="${escapeHtml(record.model_id)}">Take down</button></p>
</article>`;
}

export function gonePage(modelId: string): string {
  return `<article class="gone">
<h2>Model gone</h2>
<p><code>${escapeHtml(modelId)}</code> has been taken down and is no longer available
in search results or listings.</p>
</article>`;
}

export function notFoundPage(modelId: string): string {
  return `<article class="not-found">
<h2>Not found</h2>
<p>No model <code>${escapeHtml(modelId)}</code>.</p>
</article>`;
}

export function errorBanner(error: unknown): string {
  if (error instanceof ApiError) {
    return `<div class="error" data-code="${escapeHtml(error.code)}">
      <b>${escapeHtml(error.code)}</b> (HTTP ${error.status}): ${escapeHtml(error.message)}</div>`;
  }
  const message = error instanceof Error ? error.message : String(error);
  return `<div class="error"><b>error</b>: ${escapeHtml(message)}</div>`;
}

export function statsPanel(stats: CorpusStats): string {
  return `<dl class="corpus-stats">
<dt>indexed models</dt><dd>${stats.models}</dd>
<dt>records</dt><dd>${stats.records}</dd>
<dt>taken down</dt><dd>${stats.taken_down}</dd>
<dt>distinct words</dt><dd>${stats.words}</dd>
<dt>generic words</dt><dd>${stats.generic_words}</dd>
</dl>`;
}

export function routeFor(hash: string): { page: 'search' } | { page: 'model'; id: string } {
  const match = /^#\/model\/(.+)$/.exec(hash);
  if (match) {
    return { page: 'model', id: decodeURIComponent(match[1]) };
  }
  return { page: 'search' };
}
