import { ApiClient, ApiError } from './api.js';
import { Store, canProceed, goToAssessment, toggleOption, withOutcome } from './store.js';
import type { PrescreenOutcome, Selections } from './types.js';
import { QUESTION_GROUPS } from './types.js';

export function buildPrescreenPayload(selections: Selections, gpai: boolean) {
  return { ...selections, gpai };
}

/** Option ids that contributed to the outcome, for highlighting. */
export function triggeredOptionIds(outcome: PrescreenOutcome): Set<string> {
  const ids = new Set<string>();
  for (const fire of outcome.triggered_rules) {
    for (const id of fire.options) ids.add(id);
  }
  return ids;
}

/** Outcome banner severity used for styling. */
export function outcomeSeverity(outcome: PrescreenOutcome): 'blocked' | 'ok' {
  return outcome.may_proceed ? 'ok' : 'blocked';
}

export function renderPrescreen(container: HTMLElement, store: Store, api: ApiClient): void {
  const state = store.get();
  const catalog = state.catalog;
  container.innerHTML = '';
  if (!catalog) return;

  const heading = document.createElement('h2');
  heading.textContent = 'Step 1: Pre-screening';
  container.appendChild(heading);

  if (state.notice) {
    const notice = document.createElement('div');
    notice.className = 'notice';
    notice.textContent = state.notice;
    container.appendChild(notice);
  }

  const highlighted = state.outcome ? triggeredOptionIds(state.outcome) : new Set<string>();

  for (const group of QUESTION_GROUPS) {
    const spec = catalog.groups[group];
    const fieldset = document.createElement('fieldset');
    fieldset.dataset.group = group;
    const legend = document.createElement('legend');
    legend.textContent = spec.question;
    fieldset.appendChild(legend);

    for (const option of spec.options) {
      const row = document.createElement('label');
      row.className = 'option';
      if (highlighted.has(option.id)) row.classList.add('triggered');
      const box = document.createElement('input');
      box.type = 'checkbox';
      box.value = option.id;
      box.checked = state.selections[group].includes(option.id);
      box.addEventListener('change', () => {
        store.update(s => toggleOption(s, group, option.id, box.checked));
      });
      const text = document.createElement('span');
      text.textContent = option.text;
      const cites = document.createElement('small');
      cites.textContent = option.citations.join(', ');
      row.append(box, text, cites);
      fieldset.appendChild(row);
    }
    container.appendChild(fieldset);
  }

  const gpaiFieldset = document.createElement('fieldset');
  gpaiFieldset.dataset.group = 'gpai';
  const gpaiLegend = document.createElement('legend');
  gpaiLegend.textContent = catalog.gpai.question;
  const gpaiRow = document.createElement('label');
  gpaiRow.className = 'option';
  const gpaiBox = document.createElement('input');
  gpaiBox.type = 'checkbox';
  gpaiBox.checked = state.gpai;
  gpaiBox.addEventListener('change', () => {
    store.update(s => ({ ...s, gpai: gpaiBox.checked, outcome: null, gateToken: null }));
  });
  const gpaiText = document.createElement('span');
  gpaiText.textContent = catalog.gpai.text;
  gpaiRow.append(gpaiBox, gpaiText);
  gpaiFieldset.append(gpaiLegend, gpaiRow);
  container.appendChild(gpaiFieldset);

  const actions = document.createElement('div');
  actions.className = 'actions';

  const evaluate = document.createElement('button');
  evaluate.id = 'evaluate';
  evaluate.textContent = 'Evaluate answers';
  evaluate.addEventListener('click', async () => {
    evaluate.disabled = true;
    try {
      const current = store.get();
      const outcome = await api.postPrescreen(current.selections, current.gpai);
      store.update(s => withOutcome(s, outcome));
    } catch (err) {
      const detail = err instanceof ApiError ? JSON.stringify(err.detail) : String(err);
      store.update(s => ({ ...s, error: `Pre-screening failed: ${detail}` }));
    } finally {
      evaluate.disabled = false;
    }
  });
  actions.appendChild(evaluate);

  const proceed = document.createElement('button');
  proceed.id = 'proceed';
  proceed.textContent = 'Proceed to assessment';
  proceed.disabled = !canProceed(state);
  proceed.addEventListener('click', () => store.update(goToAssessment));
  actions.appendChild(proceed);

  container.appendChild(actions);

  if (state.error) {
    const error = document.createElement('div');
    error.className = 'error';
    error.textContent = state.error;
    container.appendChild(error);
  }

  if (state.outcome) {
    const banner = document.createElement('div');
    banner.id = 'outcome-banner';
    banner.className = `banner ${outcomeSeverity(state.outcome)}`;
    const lines = [
      `Classification: ${state.outcome.display.classification}`,
      `Risk level: ${state.outcome.display.risk}`,
      `GPAI: ${state.outcome.display.gpai}`
    ];
    for (const line of lines) {
      const p = document.createElement('p');
      p.textContent = line;
      banner.appendChild(p);
    }
    container.appendChild(banner);
  }
}
