import { ApiClient, ApiError } from './api.js';
import { Store, gateRejected, withResult } from './store.js';
import type { AssessmentDraft } from './types.js';

const FIELDS: { name: keyof AssessmentDraft; label: string }[] = [
  { name: 'domain', label: 'Domain of application' },
  { name: 'system_type', label: 'Type of AI system' },
  { name: 'input_data', label: 'Type of input data' },
  { name: 'intended_use', label: 'Intended use' }
];

export function validateDraft(draft: AssessmentDraft): string[] {
  const errors: string[] = [];
  if (draft.role !== 'provider' && draft.role !== 'deployer') {
    errors.push('role: choose provider or deployer');
  }
  for (const field of FIELDS) {
    if (!String(draft[field.name]).trim()) {
      errors.push(`${field.name}: must not be empty`);
    }
  }
  return errors;
}

export function renderAssessment(container: HTMLElement, store: Store, api: ApiClient): void {
  const state = store.get();
  container.innerHTML = '';

  const heading = document.createElement('h2');
  heading.textContent = 'Step 2: TAI assessment';
  container.appendChild(heading);

  const form = document.createElement('form');
  form.id = 'assessment-form';

  const roleLabel = document.createElement('label');
  roleLabel.textContent = 'Role';
  const role = document.createElement('select');
  role.name = 'role';
  for (const value of ['provider', 'deployer']) {
    const option = document.createElement('option');
    option.value = value;
    option.textContent = value[0].toUpperCase() + value.slice(1);
    option.selected = state.draft.role === value;
    role.appendChild(option);
  }
  role.addEventListener('change', () => {
    store.get().draft.role = role.value as AssessmentDraft['role'];
  });
  roleLabel.appendChild(role);
  form.appendChild(roleLabel);

  for (const field of FIELDS) {
    const label = document.createElement('label');
    label.textContent = field.label;
    const input = document.createElement('textarea');
    input.name = field.name;
    input.rows = 2;
    input.value = state.draft[field.name];
    input.addEventListener('input', () => {
      store.get().draft[field.name] = input.value as never;
    });
    label.appendChild(input);
    form.appendChild(label);
  }

  const errorBox = document.createElement('div');
  errorBox.className = 'error';
  errorBox.id = 'assessment-errors';

  const submit = document.createElement('button');
  submit.id = 'submit-assessment';
  submit.type = 'submit';
  submit.textContent = 'Run assessment';
  submit.disabled = state.pending; // at most one in-flight request

  form.addEventListener('submit', async event => {
    event.preventDefault();
    const current = store.get();
    const problems = validateDraft(current.draft);
    if (problems.length) {
      errorBox.textContent = problems.join('; ');
      return;
    }
    if (current.pending || !current.gateToken) return;
    store.update(s => ({ ...s, pending: true, error: null }));
    submit.disabled = true;
    try {
      const result = await api.postAssess(current.draft, current.gateToken);
      store.update(s => withResult(s, result));
    } catch (err) {
      if (err instanceof ApiError && err.status === 409) {
        store.update(s => gateRejected(
          s, 'The pre-screening gate expired or was rejected; please evaluate your answers again.'));
      } else if (err instanceof ApiError && err.status === 502) {
        store.update(s => ({ ...s, pending: false }));
        errorBox.textContent = 'The model backend is unavailable; try again shortly.';
        submit.disabled = false;
      } else {
        store.update(s => ({ ...s, pending: false }));
        errorBox.textContent = `Assessment failed: ${String(err)}`;
        submit.disabled = false;
      }
    }
  });

  form.appendChild(submit);
  container.appendChild(form);
  container.appendChild(errorBox);
}
