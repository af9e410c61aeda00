import { describe, expect, it } from 'vitest';

import { ApiError } from '../src/api.js';
import {
  errorBanner,
  escapeHtml,
  filterChips,
  gonePage,
  matchBreakdownView,
  modelPageView,
  notFoundPage,
  resultsView,
  routeFor,
  statsPanel,
} from '../src/views.js';
import { EMPTY_FILTERS, type ModelRecord, type SearchResult, type ViewState } from '../src/types.js';

const RESULT: SearchResult = {
  model_id: 'm-000007',
  score: 0.7071067811865475,
  scoreText: '0.7071067811865475',
  provenance: 'internal',
  matched: [{ word: '00ff00ff00ff00ff', query_count: 1, target_count: 2, weight: 0.6931471805599453 }],
};

const RECORD: ModelRecord = {
  model_id: 'm-000007',
  name: 'calibration cube',
  description: 'a 20mm test cube',
  tags: ['cube', 'test'],
  sources: [{ domain: 'local', url: 'internal-upload' }],
  original_format: 'stl-binary',
  converter_version: '0.1.0',
  content_hash: 'abc123def4567890',
  stats: {
    triangle_count: 12,
    vertex_count: 8,
    surface_area: 6.0,
    watertight: true,
    consistent_normals: true,
    degenerate_facets: [],
    volume: 1.0,
  },
  state: 'active',
  provenance: 'internal',
  versions: [{ number: 1, content_hash: 'abc123def4567890', timestamp: 1e6, note: 'initial ingest' }],
};

function stateWith(results: SearchResult[] | null): ViewState {
  return {
    queryFileName: 'query.stl',
    mode: 'similar',
    k: 10,
    filters: { ...EMPTY_FILTERS },
    results,
    selected: null,
  };
}

describe('resultsView', () => {
  it('renders the score text verbatim', () => {
    const html = resultsView(stateWith([RESULT]));
    expect(html).toContain('0.7071067811865475');
    expect(html).toContain('m-000007');
    expect(html).toContain('badge-internal');
  });

  it('renders external badge for crawled entries', () => {
    const html = resultsView(stateWith([{ ...RESULT, provenance: 'external' }]));
    expect(html).toContain('badge-external');
  });

  it('renders empty and initial states distinctly', () => {
    expect(resultsView(stateWith(null))).toContain('Upload a model');
    expect(resultsView(stateWith([]))).toContain('No matches');
  });

  it('shows active filter chips', () => {
    const state = stateWith([RESULT]);
    state.filters = { ...EMPTY_FILTERS, watertight: true, source: 'thingiverse.com' };
    const html = resultsView(state);
    expect(html).toContain('watertight: true');
    expect(html).toContain('source: thingiverse.com');
  });
});

describe('model page', () => {
  it('renders record, stats, versions, and related entries', () => {
    const html = modelPageView(RECORD, [
      { model_id: 'm-000009', score: 0.5, scoreText: '0.5' },
    ]);
    expect(html).toContain('calibration cube');
    expect(html).toContain('stl-binary');
    expect(html).toContain('>12<'); // triangle count
    expect(html).toContain('m-000009');
    expect(html).toContain('0.5');
    expect(html).toContain('initial ingest');
    expect(html).toContain('data-takedown');
  });

  it('renders version chains in order', () => {
    const record = {
      ...RECORD,
      versions: [1, 2, 3].map((n) => ({ number: n, content_hash: `h${n}`, timestamp: n, note: '' })),
    };
    const html = modelPageView(record, []);
    const positions = [1, 2, 3].map((n) => html.indexOf(`<td>${n}</td>`));
    expect(positions[0]).toBeLessThan(positions[1]);
    expect(positions[1]).toBeLessThan(positions[2]);
  });

  it('gone and not-found pages are distinct', () => {
    expect(gonePage('m-1')).toContain('taken down');
    expect(notFoundPage('m-1')).toContain('Not found');
  });
});

describe('error rendering', () => {
  it('surfaces the machine-readable code from the API', () => {
    const html = errorBanner(new ApiError(413, 'too-large', 'upload of 9 bytes exceeds cap'));
    expect(html).toContain('too-large');
    expect(html).toContain('413');
    expect(html).toContain('exceeds cap');
  });

  it('escapes HTML in messages', () => {
    const html = errorBanner(new Error('<script>alert(1)</script>'));
    expect(html).not.toContain('<script>');
    expect(html).toContain('&lt;script&gt;');
  });
});

describe('helpers', () => {
  it('escapeHtml covers the metacharacters', () => {
    expect(escapeHtml('<a b="c" & d>')).toBe('&lt;a b=&quot;c&quot; &amp; d&gt;');
  });

  it('filterChips is empty with no filters', () => {
    expect(filterChips({ ...EMPTY_FILTERS })).toBe('');
  });

  it('routeFor parses model routes', () => {
    expect(routeFor('#/model/m-000003')).toEqual({ page: 'model', id: 'm-000003' });
    expect(routeFor('')).toEqual({ page: 'search' });
    expect(routeFor('#other')).toEqual({ page: 'search' });
  });

  it('statsPanel renders corpus numbers', () => {
    const html = statsPanel({
      models: 5, records: 6, taken_down: 1, words: 44, generic_words: 2, df_histogram: {},
    });
    expect(html).toContain('>5<');
    expect(html).toContain('>44<');
  });

  it('match breakdown lists words', () => {
    const html = matchBreakdownView(RESULT);
    expect(html).toContain('00ff00ff00ff00ff');
    expect(html).toContain('0.6931471805599453');
  });
});
