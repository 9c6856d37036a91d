import { afterEach, beforeEach, describe, expect, it, vi } from "vitest";

import { DeltaBatcher, FixedRateSampler } from "../src/throttle.js";

describe("FixedRateSampler", () => {
  beforeEach(() => vi.useFakeTimers());
  afterEach(() => vi.useRealTimers());

  it("emits at most once per interval, always the latest value", () => {
    const emitted: number[] = [];
    const sampler = new FixedRateSampler<number>(100, (v) => emitted.push(v));
    sampler.start();
    for (let i = 0; i < 50; i++) {
      sampler.push(i);
      vi.advanceTimersByTime(10); // 50 pushes over 500 ms
    }
    sampler.stop();
    expect(emitted.length).toBeLessThanOrEqual(6);
    expect(emitted[emitted.length - 1]).toBe(49); // trailing flush on stop
  });

  it("does not emit without new input", () => {
    const emitted: number[] = [];
    const sampler = new FixedRateSampler<number>(100, (v) => emitted.push(v));
    sampler.start();
    sampler.push(1);
    vi.advanceTimersByTime(500);
    sampler.stop();
    expect(emitted).toEqual([1]);
  });

  it("is idempotent across start/stop", () => {
    const sampler = new FixedRateSampler<number>(100, () => {});
    sampler.start();
    sampler.start();
    expect(sampler.running).toBe(true);
    sampler.stop();
    expect(sampler.running).toBe(false);
  });
});

describe("DeltaBatcher", () => {
  beforeEach(() => vi.useFakeTimers());
  afterEach(() => vi.useRealTimers());

  it("caps the dispatch rate while preserving the net delta", () => {
    const dispatched: number[] = [];
    const batcher = new DeltaBatcher(50, (d) => dispatched.push(d));
    for (let i = 0; i < 50; i++) {
      batcher.add(1);
    }
    vi.advanceTimersByTime(100);
    expect(dispatched.length).toBeLessThanOrEqual(2);
    expect(dispatched.reduce((a, b) => a + b, 0)).toBe(50);
  });

  it("dispatches immediately when idle", () => {
    const dispatched: number[] = [];
    const batcher = new DeltaBatcher(50, (d) => dispatched.push(d));
    batcher.add(1);
    expect(dispatched).toEqual([1]);
    vi.advanceTimersByTime(60);
    batcher.add(-1);
    expect(dispatched).toEqual([1, -1]);
  });

  it("stays at or under 20 requests per second", () => {
    const dispatched: number[] = [];
    const batcher = new DeltaBatcher(50, (d) => dispatched.push(d));
    for (let i = 0; i < 50; i++) {
      batcher.add(i % 2 === 0 ? 1 : -1);
      vi.advanceTimersByTime(20); // one second of frantic scrolling
    }
    vi.advanceTimersByTime(50);
    expect(dispatched.length).toBeLessThanOrEqual(21);
  });
});
