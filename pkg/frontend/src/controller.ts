// Session controller: owns UiSessionState, serializes requests per
// session, and exposes the action log for deterministic replay.

import { ApiClient, FeatureView, ImageKind, SessionSummary } from './api';
import { UiAction, UiSessionState, initialState, syncRows } from './state';

export interface ActionLogExport {
  seed: number;
  actions: UiAction[];
}

export class SessionController {
  readonly state: UiSessionState = initialState();
  private queue: Promise<unknown> = Promise.resolve();
  private listeners: Array<() => void> = [];

  constructor(private readonly client: ApiClient) {}

  onChange(listener: () => void): void {
    this.listeners.push(listener);
  }

  private notify(): void {
    for (const listener of this.listeners) listener();
  }

  // Serializes mutations: a commit issued while another request is in
  // flight waits for it instead of racing the service.
  private enqueue<T>(work: () => Promise<T>): Promise<T> {
    const next = this.queue.then(async () => {
      this.state.busy = true;
      this.notify();
      try {
        return await work();
      } finally {
        this.state.busy = false;
        this.notify();
      }
    });
    this.queue = next.catch(() => undefined);
    return next;
  }

  async start(seed: number): Promise<void> {
    await this.enqueue(async () => {
      const summary = await this.client.createSession(seed);
      this.state.sessionId = summary.id;
      this.state.seed = seed;
      this.state.historyDepth = summary.history_depth;
      this.state.actionLog = [];
      this.state.error = null;
      this.state.diffMode = false;
      this.state.imageVersion += 1;
      syncRows(this.state, summary.features);
      this.notify();
    });
  }

  // One slider commit = exactly one edit request, in slider units; the
  // service answers with measured values for every feature and those are
  // what the sliders show afterwards.
  commitSlider(feature: number, target: number): Promise<void> {
    return this.enqueue(async () => {
      const sessionId = this.requireSession();
      try {
        const resp = await this.client.applyEdit(sessionId, {
          feature,
          target,
          unit: 'slider',
        });
        this.state.actionLog.push({ type: 'edit', feature, target, unit: 'slider' });
        this.applySummary(resp.session);
      } catch (err) {
        this.surfaceError(err);
        throw err;
      }
    });
  }

  undo(): Promise<void> {
    return this.enqueue(async () => {
      const sessionId = this.requireSession();
      try {
        const summary = await this.client.undo(sessionId);
        this.state.actionLog.push({ type: 'undo' });
        this.applySummary(summary);
      } catch (err) {
        this.surfaceError(err);
        throw err;
      }
    });
  }

  toggleDiff(): void {
    this.state.diffMode = !this.state.diffMode;
    this.notify();
  }

  imageKind(): ImageKind {
    return this.state.diffMode ? 'diff' : 'current';
  }

  imageUrl(): string | null {
    if (this.state.sessionId === null) return null;
    return this.client.imageUrl(this.state.sessionId, this.imageKind(), this.state.imageVersion);
  }

  canUndo(): boolean {
    return this.state.historyDepth > 1;
  }

  exportActionLog(): ActionLogExport {
    if (this.state.seed === null) {
      throw new Error('no active session to export');
    }
    return { seed: this.state.seed, actions: [...this.state.actionLog] };
  }

  private applySummary(summary: SessionSummary): void {
    this.state.historyDepth = summary.history_depth;
    this.state.error = null;
    this.state.imageVersion += 1;
    syncRows(this.state, summary.features);
    this.notify();
  }

  private requireSession(): string {
    if (this.state.sessionId === null) {
      throw new Error('no active session');
    }
    return this.state.sessionId;
  }

  private surfaceError(err: unknown): void {
    this.state.error = err instanceof Error ? err.message : String(err);
    this.notify();
  }
}

// Replays an exported action log against a fresh session and returns the
// final feature views; with a deterministic service this reproduces the
// editing state the log was exported from.
export async function replayActionLog(
  client: ApiClient,
  log: ActionLogExport,
): Promise<FeatureView[]> {
  const session = await client.createSession(log.seed);
  let views = session.features;
  for (const action of log.actions) {
    if (action.type === 'edit') {
      const resp = await client.applyEdit(session.id, {
        feature: action.feature,
        target: action.target,
        unit: action.unit,
      });
      views = resp.session.features;
    } else {
      const summary = await client.undo(session.id);
      views = summary.features;
    }
  }
  return views;
}
