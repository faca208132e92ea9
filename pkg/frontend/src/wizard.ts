import { ApiClient } from './api.js';
import { renderAssessment } from './assessment.js';
import { renderPrescreen } from './prescreen.js';
import { renderResult } from './result.js';
import { Store, Step } from './store.js';

const STEPS: { id: Step; title: string }[] = [
  { id: 'prescreen', title: '1. Pre-screening' },
  { id: 'assessment', title: '2. Assessment' },
  { id: 'result', title: '3. Result' }
];

export function renderWizard(root: HTMLElement, store: Store, api: ApiClient): void {
  root.innerHTML = '';
  const nav = document.createElement('nav');
  nav.className = 'wizard-nav';
  const content = document.createElement('section');
  content.className = 'wizard-content';
  root.append(nav, content);

  function sync(): void {
    const state = store.get();
    nav.innerHTML = '';
    for (const step of STEPS) {
      const marker = document.createElement('span');
      marker.className = 'step';
      if (step.id === state.step) marker.classList.add('active');
      marker.textContent = step.title;
      nav.appendChild(marker);
    }
    if (state.step === 'prescreen') {
      renderPrescreen(content, store, api);
    } else if (state.step === 'assessment') {
      renderAssessment(content, store, api);
    } else {
      renderResult(content, store, api);
    }
  }

  sync();
  store.subscribe(sync);
}
