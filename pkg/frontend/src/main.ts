// Entry point: wires the service URL + seed form to the controller and
// the rendered slider UI.

import { ApiClient, HttpTransport } from './api';
import { SessionController } from './controller';
import { renderApp } from './view';

function bootstrap(): void {
  const form = document.getElementById('connect-form') as HTMLFormElement | null;
  const urlInput = document.getElementById('service-url') as HTMLInputElement | null;
  const seedInput = document.getElementById('seed-input') as HTMLInputElement | null;
  const root = document.getElementById('app');
  const exportButton = document.getElementById('export-log') as HTMLButtonElement | null;
  if (!form || !urlInput || !seedInput || !root) return;

  let controller: SessionController | null = null;

  form.addEventListener('submit', (event) => {
    event.preventDefault();
    const baseUrl = urlInput.value.replace(/\/$/, '');
    const seed = Number(seedInput.value);
    if (!Number.isInteger(seed)) return;

    const client = new ApiClient(new HttpTransport(baseUrl), baseUrl);
    controller = new SessionController(client);
    renderApp(root, controller);
    controller.start(seed).catch((err) => {
      root.insertAdjacentHTML(
        'afterbegin',
        `<div class="error-banner">service unreachable: ${String(err)} — check the URL and retry</div>`,
      );
    });
  });

  exportButton?.addEventListener('click', () => {
    if (!controller || controller.state.seed === null) return;
    const log = JSON.stringify(controller.exportActionLog(), null, 2);
    const blob = new Blob([log], { type: 'application/json' });
    const link = document.createElement('a');
    link.href = URL.createObjectURL(blob);
    link.download = 'faceshape-actions.json';
    link.click();
    URL.revokeObjectURL(link.href);
  });
}

document.addEventListener('DOMContentLoaded', bootstrap);
