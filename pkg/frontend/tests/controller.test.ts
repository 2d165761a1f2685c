import { describe, expect, it } from 'vitest';

import { ApiClient } from '../src/api';
import { SessionController, replayActionLog } from '../src/controller';
import { editCount } from '../src/state';
import { FakeServiceTransport, sliderHi, sliderLo } from './fake_service';

function makeController() {
  const fake = new FakeServiceTransport();
  const controller = new SessionController(new ApiClient(fake));
  return { fake, controller };
}

describe('session start', () => {
  it('renders 23 rows whose positions equal the FeatureView sliders', async () => {
    const { fake, controller } = makeController();
    await controller.start(7);
    expect(controller.state.rows).toHaveLength(23);
    const creation = fake.requests.find((r) => r.path === '/sessions');
    expect(creation?.body).toEqual({ seed: 7 });
    for (const row of controller.state.rows) {
      const span = row.hi - row.lo;
      const expected = Math.min(1, Math.max(0, (row.value - row.lo) / span));
      expect(row.slider).toBe(expected);
    }
  });

  it('same seed twice gives identical initial render data', async () => {
    const a = makeController();
    const b = makeController();
    await a.controller.start(11);
    await b.controller.start(11);
    expect(a.controller.state.rows).toEqual(b.controller.state.rows);
  });
});

describe('slider commits', () => {
  it('issues exactly one edit request with the slider target', async () => {
    const { fake, controller } = makeController();
    await controller.start(3);
    await controller.commitSlider(2, 0.7);
    const edits = fake.editRequests();
    expect(edits).toHaveLength(1);
    expect(edits[0].body).toEqual({ feature: 2, target: 0.7, unit: 'slider' });
  });

  it('the slider commit maps to the correct normalized target', async () => {
    const { fake, controller } = makeController();
    await controller.start(3);
    const row = controller.state.rows[4];
    await controller.commitSlider(4, 0.25);
    const echo = fake.responses[fake.responses.length - 1] as {
      target_normalized: number;
    };
    // bounds came to the UI via the service; the service must resolve the
    // slider commit to exactly lo + v*(hi - lo) in normalized units
    expect(echo.target_normalized).toBe(row.lo + 0.25 * (row.hi - row.lo));
  });

  it('after the response every slider shows the measured value, not the request', async () => {
    const { controller } = makeController();
    await controller.start(5);
    const before = controller.state.rows.map((r) => r.value);
    await controller.commitSlider(8, 0.9);
    const row = controller.state.rows[8];
    const lo = sliderLo(8);
    const hi = sliderHi(8);
    const requested = lo + 0.9 * (hi - lo);
    expect(row.value).not.toBe(requested);           // imperfect editor
    expect(row.value).not.toBe(before[8]);           // but it moved
    // the correlated neighbor moved too and the UI picked it up
    expect(controller.state.rows[9].value).not.toBe(before[9]);
    // slider positions recomputed from the service view
    expect(row.slider).toBe(
      Math.min(1, Math.max(0, (row.value - lo) / (hi - lo))),
    );
  });

  it('a commit at the current value still issues a request and re-syncs', async () => {
    const { fake, controller } = makeController();
    await controller.start(5);
    const current = controller.state.rows[1].slider;
    await controller.commitSlider(1, current);
    expect(fake.editRequests()).toHaveLength(1);
  });

  it('serializes rapid double-commits client-side', async () => {
    const { fake, controller } = makeController();
    await controller.start(6);
    fake.holdNextRequests();
    const first = controller.commitSlider(0, 0.2);
    const second = controller.commitSlider(1, 0.8);
    // only the first request may be in flight while the gate is closed
    await new Promise((resolve) => setTimeout(resolve, 0));
    expect(fake.editRequests()).toHaveLength(1);
    fake.releaseGate();
    await Promise.all([first, second]);
    const edits = fake.editRequests();
    expect(edits).toHaveLength(2);
    expect((edits[0].body as { feature: number }).feature).toBe(0);
    expect((edits[1].body as { feature: number }).feature).toBe(1);
    expect(fake.maxInFlight).toBe(1);
  });

  it('a service error leaves state unchanged and surfaces the message', async () => {
    const { fake, controller } = makeController();
    await controller.start(9);
    const rowsBefore = JSON.stringify(controller.state.rows);
    const depthBefore = controller.state.historyDepth;
    fake.failNextEdit = true;
    await expect(controller.commitSlider(3, 0.4)).rejects.toThrow('injected failure');
    expect(JSON.stringify(controller.state.rows)).toBe(rowsBefore);
    expect(controller.state.historyDepth).toBe(depthBefore);
    expect(controller.state.error).toContain('injected failure');
    expect(editCount(controller.state)).toBe(0);
    // recovery: the next commit goes through and clears the error
    await controller.commitSlider(3, 0.4);
    expect(controller.state.error).toBeNull();
    expect(editCount(controller.state)).toBe(1);
  });
});

describe('undo and history', () => {
  it('undo restores the previous slider vector', async () => {
    const { controller } = makeController();
    await controller.start(4);
    await controller.commitSlider(2, 0.6);
    const afterFirst = JSON.stringify(controller.state.rows);
    await controller.commitSlider(7, 0.1);
    await controller.undo();
    expect(JSON.stringify(controller.state.rows)).toBe(afterFirst);
    expect(controller.state.historyDepth).toBe(2);
    expect(editCount(controller.state)).toBe(1);
  });

  it('undo is refused on a fresh session', async () => {
    const { controller } = makeController();
    await controller.start(4);
    expect(controller.canUndo()).toBe(false);
    await expect(controller.undo()).rejects.toThrow('no edits to undo');
    expect(controller.state.error).toContain('no edits to undo');
  });

  it('history length tracks edits minus undos', async () => {
    const { controller } = makeController();
    await controller.start(4);
    await controller.commitSlider(0, 0.3);
    await controller.commitSlider(1, 0.4);
    await controller.commitSlider(2, 0.5);
    await controller.undo();
    expect(editCount(controller.state)).toBe(2);
    expect(controller.state.historyDepth).toBe(3);
  });
});

describe('diff view', () => {
  it('toggle switches the image kind and back', async () => {
    const { controller } = makeController();
    await controller.start(2);
    expect(controller.imageKind()).toBe('current');
    expect(controller.imageUrl()).toContain('kind=current');
    controller.toggleDiff();
    expect(controller.imageKind()).toBe('diff');
    expect(controller.imageUrl()).toContain('kind=diff');
    controller.toggleDiff();
    expect(controller.imageKind()).toBe('current');
  });

  it('fresh session diff is an all-zero image', async () => {
    const { fake, controller } = makeController();
    await controller.start(2);
    controller.toggleDiff();
    const pixels = fake.imageArray(controller.state.sessionId as string, 'diff');
    expect(pixels.every((p) => p === 0)).toBe(true);
  });

  it('diff becomes nonzero after an edit', async () => {
    const { fake, controller } = makeController();
    await controller.start(2);
    await controller.commitSlider(0, 0.95);
    const pixels = fake.imageArray(controller.state.sessionId as string, 'diff');
    expect(pixels.some((p) => p !== 0)).toBe(true);
  });
});

describe('action log replay', () => {
  it('replaying the exported log reproduces the final FeatureView', async () => {
    const { controller } = makeController();
    await controller.start(19);
    await controller.commitSlider(0, 0.8);
    await controller.commitSlider(5, 0.2);
    await controller.commitSlider(12, 0.9);
    await controller.undo();
    await controller.commitSlider(3, 0.4);
    const log = controller.exportActionLog();
    expect(log.seed).toBe(19);
    expect(log.actions).toHaveLength(5);

    const freshFake = new FakeServiceTransport();
    const views = await replayActionLog(new ApiClient(freshFake), log);
    expect(views.map((v) => v.value)).toEqual(
      controller.state.rows.map((r) => r.value),
    );
    expect(views.map((v) => v.slider)).toEqual(
      controller.state.rows.map((r) => r.slider),
    );
  });
});
