// UI session state and the pure update helpers that keep it in sync
// with service responses.  All displayed numbers come from the service;
// the UI never computes feature values on its own.

import { FeatureView } from './api';

export interface SliderRow {
  id: number;
  name: string;
  lo: number;
  hi: number;
  value: number;         // normalized, service-reported
  slider: number;        // [0,1], service-reported
  pendingTarget: number | null;  // slider units while the user drags
}

export type UiAction =
  | { type: 'edit'; feature: number; target: number; unit: 'slider' }
  | { type: 'undo' };

export interface UiSessionState {
  sessionId: string | null;
  seed: number | null;
  rows: SliderRow[];
  historyDepth: number;
  diffMode: boolean;
  busy: boolean;
  error: string | null;
  actionLog: UiAction[];
  imageVersion: number;
}

export function initialState(): UiSessionState {
  return {
    sessionId: null,
    seed: null,
    rows: [],
    historyDepth: 0,
    diffMode: false,
    busy: false,
    error: null,
    actionLog: [],
    imageVersion: 0,
  };
}

export function rowsFromViews(views: FeatureView[]): SliderRow[] {
  return views.map((v) => ({
    id: v.id,
    name: v.name,
    lo: v.lo,
    hi: v.hi,
    value: v.value,
    slider: v.slider,
    pendingTarget: null,
  }));
}

// Replaces every row's numbers with the service-reported view, clearing
// any pending drag targets: no stale optimistic values after a response.
export function syncRows(state: UiSessionState, views: FeatureView[]): void {
  state.rows = rowsFromViews(views);
}

export function editCount(state: UiSessionState): number {
  let n = 0;
  for (const action of state.actionLog) {
    n += action.type === 'edit' ? 1 : -1;
  }
  return n;
}
