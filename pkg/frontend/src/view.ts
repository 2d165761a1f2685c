// DOM rendering: slider rows grouped by face region, image panel with
// diff toggle, undo and history.  Commits fire on slider release.

import { SessionController } from './controller';
import { SliderRow } from './state';

const REGION_GROUPS: Array<[string, number[]]> = [
  ['Eyes', [0, 1, 2, 3, 4]],
  ['Brows', [5, 6, 7, 8]],
  ['Nose', [9, 10, 11]],
  ['Mouth', [12, 13, 14, 15, 16, 17]],
  ['Chin & jaw', [18, 19, 20, 21, 22]],
];

export function renderApp(root: HTMLElement, controller: SessionController): void {
  root.innerHTML = '';
  root.appendChild(buildImagePanel(controller));
  root.appendChild(buildSliderPanel(controller));
  controller.onChange(() => update(root, controller));
  update(root, controller);
}

function buildImagePanel(controller: SessionController): HTMLElement {
  const panel = document.createElement('section');
  panel.className = 'image-panel';

  const img = document.createElement('img');
  img.id = 'face-image';
  img.alt = 'face preview';
  panel.appendChild(img);

  const controls = document.createElement('div');
  controls.className = 'image-controls';

  const diffButton = document.createElement('button');
  diffButton.id = 'diff-toggle';
  diffButton.textContent = 'Show diff';
  diffButton.addEventListener('click', () => controller.toggleDiff());
  controls.appendChild(diffButton);

  const undoButton = document.createElement('button');
  undoButton.id = 'undo-button';
  undoButton.textContent = 'Undo';
  undoButton.addEventListener('click', () => {
    controller.undo().catch(() => undefined);
  });
  controls.appendChild(undoButton);

  panel.appendChild(controls);

  const error = document.createElement('div');
  error.id = 'error-banner';
  error.className = 'error-banner';
  panel.appendChild(error);

  const history = document.createElement('ol');
  history.id = 'history-list';
  panel.appendChild(history);

  return panel;
}

function buildSliderPanel(controller: SessionController): HTMLElement {
  const panel = document.createElement('section');
  panel.className = 'slider-panel';
  panel.id = 'slider-panel';
  void controller;
  return panel;
}

function update(root: HTMLElement, controller: SessionController): void {
  const state = controller.state;

  const img = root.querySelector<HTMLImageElement>('#face-image');
  const url = controller.imageUrl();
  if (img && url && img.getAttribute('src') !== url) {
    img.src = url;
  }

  const diffButton = root.querySelector<HTMLButtonElement>('#diff-toggle');
  if (diffButton) {
    diffButton.textContent = state.diffMode ? 'Show image' : 'Show diff';
    diffButton.disabled = state.sessionId === null;
  }

  const undoButton = root.querySelector<HTMLButtonElement>('#undo-button');
  if (undoButton) {
    undoButton.disabled = !controller.canUndo() || state.busy;
  }

  const banner = root.querySelector<HTMLElement>('#error-banner');
  if (banner) {
    banner.textContent = state.error ?? '';
    banner.style.display = state.error ? 'block' : 'none';
  }

  const history = root.querySelector<HTMLOListElement>('#history-list');
  if (history) {
    history.innerHTML = '';
    for (const action of state.actionLog) {
      const item = document.createElement('li');
      item.textContent =
        action.type === 'edit'
          ? `set feature ${action.feature} to ${action.target.toFixed(3)} (slider)`
          : 'undo';
      history.appendChild(item);
    }
  }

  const panel = root.querySelector<HTMLElement>('#slider-panel');
  if (panel) {
    renderSliders(panel, controller);
  }
}

function renderSliders(panel: HTMLElement, controller: SessionController): void {
  const state = controller.state;
  panel.innerHTML = '';
  if (state.rows.length === 0) return;

  const byId = new Map<number, SliderRow>(state.rows.map((r) => [r.id, r]));
  for (const [label, ids] of REGION_GROUPS) {
    const group = document.createElement('fieldset');
    group.className = 'region-group';
    const legend = document.createElement('legend');
    legend.textContent = label;
    group.appendChild(legend);
    for (const id of ids) {
      const row = byId.get(id);
      if (row) group.appendChild(buildSliderRow(row, controller));
    }
    panel.appendChild(group);
  }
}

function buildSliderRow(row: SliderRow, controller: SessionController): HTMLElement {
  const wrap = document.createElement('div');
  wrap.className = 'slider-row';
  wrap.dataset.feature = String(row.id);

  const label = document.createElement('label');
  label.textContent = row.name;
  wrap.appendChild(label);

  const slider = document.createElement('input');
  slider.type = 'range';
  slider.min = '0';
  slider.max = '1';
  slider.step = '0.001';
  slider.value = String(row.slider);
  slider.disabled = controller.state.busy;

  const readout = document.createElement('span');
  readout.className = 'readout';
  readout.textContent = formatReadout(row.slider, row.value);

  slider.addEventListener('input', () => {
    readout.textContent = `${Number(slider.value).toFixed(3)} (pending)`;
  });
  // commit on release, one request per commit
  slider.addEventListener('change', () => {
    controller.commitSlider(row.id, Number(slider.value)).catch(() => undefined);
  });

  wrap.appendChild(slider);
  wrap.appendChild(readout);
  return wrap;
}

function formatReadout(slider: number, value: number): string {
  return `${slider.toFixed(3)} | ${value.toFixed(3)} norm`;
}
