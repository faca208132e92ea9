import { ApiClient } from './api.js';
import { Store } from './store.js';
import { renderWizard } from './wizard.js';

function apiBase(): string {
  // Same-origin by default; override with ?api=http://host:port for dev.
  const override = new URLSearchParams(window.location.search).get('api');
  return override ?? '';
}

export async function boot(root: HTMLElement): Promise<void> {
  const api = new ApiClient(apiBase());
  const store = new Store();
  try {
    const catalog = await api.getCatalog();
    store.update(s => ({ ...s, catalog }));
  } catch (err) {
    root.innerHTML = '';
    const error = document.createElement('div');
    error.className = 'error';
    error.textContent = `Cannot reach the assessment service: ${String(err)}`;
    const retry = document.createElement('button');
    retry.textContent = 'Retry';
    retry.addEventListener('click', () => boot(root));
    root.append(error, retry);
    return;
  }
  renderWizard(root, store, api);
}

const root = document.getElementById('app');
if (root) {
  void boot(root);
}
