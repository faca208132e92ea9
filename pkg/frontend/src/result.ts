import { ApiClient } from './api.js';
import { Store, restart } from './store.js';
import type { AssessmentResult } from './types.js';

export interface GroupedReferences {
  horizontal: string[];
  classification: string[];
  scenario: string[];
}

const GROUP_TITLES: { key: keyof GroupedReferences; title: string; wire: string }[] = [
  { key: 'horizontal', title: 'Horizontal obligations', wire: 'horizontal_obligation' },
  { key: 'classification', title: 'Classification resources', wire: 'classification_resource' },
  { key: 'scenario', title: 'Scenario-specific obligations', wire: 'scenario_specific_obligation' }
];

function articleNumber(ref: string): number {
  return parseInt(ref.split(':')[1], 10);
}

/** Sort the server's article_groups into the three displayed sections. */
export function groupReferences(result: AssessmentResult): GroupedReferences {
  const grouped: GroupedReferences = { horizontal: [], classification: [], scenario: [] };
  for (const [ref, group] of Object.entries(result.article_groups)) {
    const section = GROUP_TITLES.find(g => g.wire === group);
    if (section) grouped[section.key].push(ref);
  }
  for (const section of GROUP_TITLES) {
    grouped[section.key].sort((a, b) => articleNumber(a) - articleNumber(b));
  }
  return grouped;
}

export function badgeClass(result: AssessmentResult): string {
  return `badge badge-${result.risk_level.toLowerCase().replace('-', '')}`;
}

function referenceLink(ref: string, api: ApiClient, detail: HTMLElement): HTMLElement {
  const item = document.createElement('li');
  const link = document.createElement('a');
  link.href = `#${ref}`;
  link.className = 'ref-link';
  link.dataset.ref = ref;
  link.textContent = ref;
  link.addEventListener('click', async event => {
    event.preventDefault();
    try {
      const unit = await api.getUnit(ref);
      detail.innerHTML = '';
      const title = document.createElement('h4');
      title.textContent = unit.title ? `${ref}: ${unit.title}` : ref;
      const body = document.createElement('pre');
      body.textContent = unit.body;
      detail.append(title, body);
    } catch (err) {
      detail.textContent = `Could not load ${ref}: ${String(err)}`;
    }
  });
  item.appendChild(link);
  return item;
}

export function renderResult(container: HTMLElement, store: Store, api: ApiClient): void {
  const state = store.get();
  const result = state.result;
  container.innerHTML = '';
  if (!result) return;

  const heading = document.createElement('h2');
  heading.textContent = 'Step 3: Assessment result';
  container.appendChild(heading);

  const badge = document.createElement('div');
  badge.id = 'risk-badge';
  badge.className = badgeClass(result);
  badge.textContent = result.risk_level;
  container.appendChild(badge);

  const detail = document.createElement('aside');
  detail.id = 'unit-detail';
  detail.textContent = 'Click a reference to read it.';

  const grouped = groupReferences(result);
  const groups = document.createElement('div');
  groups.className = 'reference-groups';
  for (const section of GROUP_TITLES) {
    const block = document.createElement('section');
    block.className = 'reference-group';
    const title = document.createElement('h3');
    title.textContent = section.title;
    block.appendChild(title);
    const list = document.createElement('ul');
    for (const ref of grouped[section.key]) {
      list.appendChild(referenceLink(ref, api, detail));
    }
    block.appendChild(list);
    groups.appendChild(block);
  }
  container.appendChild(groups);

  if (result.recitals.length || result.annexes.length) {
    const extra = document.createElement('section');
    extra.className = 'reference-group';
    const title = document.createElement('h3');
    title.textContent = 'Recitals and annexes';
    extra.appendChild(title);
    const list = document.createElement('ul');
    for (const ref of [...result.recitals, ...result.annexes]) {
      list.appendChild(referenceLink(ref, api, detail));
    }
    extra.appendChild(list);
    container.appendChild(extra);
  }

  container.appendChild(detail);

  const provenance = document.createElement('details');
  provenance.id = 'provenance';
  const summary = document.createElement('summary');
  summary.textContent = 'Retrieval provenance';
  provenance.appendChild(summary);
  const rewritten = document.createElement('p');
  rewritten.textContent = `Rewritten query: ${result.rewritten_query}`;
  provenance.appendChild(rewritten);
  const contextList = document.createElement('ol');
  for (const hit of result.retrieved_context) {
    const item = document.createElement('li');
    item.textContent = `${hit.ref} (similarity ${hit.score.toFixed(3)})`;
    contextList.appendChild(item);
  }
  provenance.appendChild(contextList);
  const version = document.createElement('p');
  version.textContent = `Prompt version: ${result.prompt_version}`;
  provenance.appendChild(version);
  container.appendChild(provenance);

  const again = document.createElement('button');
  again.id = 'start-over';
  again.textContent = 'Start a new assessment';
  again.addEventListener('click', () => store.update(restart));
  container.appendChild(again);
}
