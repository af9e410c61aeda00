// Browser shell: wires the upload form, filter toggles, and hash routing
// to the API client and the pure views.  All displayed data comes from
// the last API response; navigating or refreshing re-fetches it.

import { ApiError, MeshSearchApi } from './api.js';
import {
  errorBanner,
  gonePage,
  matchBreakdownView,
  modelPageView,
  notFoundPage,
  resultsView,
  routeFor,
  statsPanel,
} from './views.js';
import { EMPTY_FILTERS, type SearchMode, type ViewState } from './types.js';

const api = new MeshSearchApi('');

const state: ViewState = {
  queryFileName: null,
  mode: 'similar',
  k: 10,
  filters: { ...EMPTY_FILTERS },
  results: null,
  selected: null,
};

let lastQueryFile: File | null = null;

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing element #${id}`);
  return node as T;
}

function readFilters(): void {
  const tri = (id: string): boolean | null => {
    const value = el<HTMLSelectElement>(id).value;
    return value === '' ? null : value === 'true';
  };
  state.filters = {
    watertight: tri('filter-watertight'),
    normals: tri('filter-normals'),
    filetype: el<HTMLInputElement>('filter-filetype').value || null,
    source: el<HTMLInputElement>('filter-source').value || null,
  };
}

async function runSearch(): Promise<void> {
  const output = el('results');
  if (!lastQueryFile) {
    output.innerHTML = '<p class="hint">Choose a query file first.</p>';
    return;
  }
  readFilters();
  state.mode = el<HTMLSelectElement>('mode').value as SearchMode;
  state.k = parseInt(el<HTMLInputElement>('k').value, 10) || 10;
  state.queryFileName = lastQueryFile.name;
  output.innerHTML = '<p class="hint">Searching&hellip;</p>';
  try {
    const response = await api.search(lastQueryFile, lastQueryFile.name, state.mode, state.k, state.filters);
    state.results = response.results;
    state.selected = null;
    output.innerHTML = resultsView(state);
    bindResultRows();
  } catch (error) {
    state.results = null;
    output.innerHTML = errorBanner(error);
  }
}

function bindResultRows(): void {
  document.querySelectorAll('tr[data-model-id]').forEach((row) => {
    row.addEventListener('click', (event) => {
      if ((event.target as HTMLElement).tagName === 'A') return;
      const id = (row as HTMLElement).dataset.modelId!;
      const selected = state.results?.find((r) => r.model_id === id) ?? null;
      state.selected = selected;
      el('breakdown').innerHTML = selected
        ? `<h3>${selected.model_id}</h3>${matchBreakdownView(selected)}`
        : '';
    });
  });
}

async function renderModelPage(id: string): Promise<void> {
  const output = el('results');
  try {
    const record = await api.getModel(id);
    const related = await api.getRelated(id);
    output.innerHTML = modelPageView(record, related.related);
    const button = output.querySelector('[data-takedown]');
    button?.addEventListener('click', async () => {
      try {
        await api.deleteModel(id);
        output.innerHTML = gonePage(id);
      } catch (error) {
        output.innerHTML = errorBanner(error) + output.innerHTML;
      }
    });
  } catch (error) {
    if (error instanceof ApiError && error.status === 410) {
      output.innerHTML = gonePage(id);
    } else if (error instanceof ApiError && error.status === 404) {
      output.innerHTML = notFoundPage(id);
    } else {
      output.innerHTML = errorBanner(error);
    }
  }
}

async function refreshStats(): Promise<void> {
  try {
    el('corpus').innerHTML = statsPanel(await api.stats());
  } catch {
    el('corpus').innerHTML = '<p class="hint">service unavailable</p>';
  }
}

async function route(): Promise<void> {
  const target = routeFor(window.location.hash);
  if (target.page === 'model') {
    await renderModelPage(target.id);
  } else {
    el('results').innerHTML = resultsView(state);
    bindResultRows();
  }
  await refreshStats();
}

export function start(): void {
  el<HTMLInputElement>('query-file').addEventListener('change', (event) => {
    const files = (event.target as HTMLInputElement).files;
    lastQueryFile = files && files.length ? files[0] : null;
  });
  el('search-button').addEventListener('click', () => {
    window.location.hash = '';
    void runSearch();
  });
  ['filter-watertight', 'filter-normals'].forEach((id) => {
    el(id).addEventListener('change', () => {
      if (state.results !== null) void runSearch();
    });
  });
  window.addEventListener('hashchange', () => void route());
  void route();
}

if (typeof document !== 'undefined') {
  if (document.readyState === 'loading') {
    document.addEventListener('DOMContentLoaded', start);
  } else {
    start();
  }
}
