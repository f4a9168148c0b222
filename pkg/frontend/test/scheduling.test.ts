import { afterEach, beforeEach, describe, expect, it, vi } from "vitest";

import { Debouncer, SequenceGate } from "../src/scheduling.js";

describe("Debouncer", () => {
  beforeEach(() => vi.useFakeTimers());
  afterEach(() => vi.useRealTimers());

  it("coalesces rapid calls into one trailing call", () => {
    const debouncer = new Debouncer(200);
    const calls: number[] = [];
    for (let i = 0; i < 25; i++) {
      debouncer.schedule(() => calls.push(i));
      vi.advanceTimersByTime(20); // 25 moves over 500 ms
    }
    vi.advanceTimersByTime(300);
    expect(calls).toEqual([24]); // only the last wins
  });

  it("limits request rate to <= 5/s for continuous movement", () => {
    const debouncer = new Debouncer(200);
    let fired = 0;
    // one slider event every 250 ms for 2 s: each settles after 200 ms
    for (let t = 0; t < 8; t++) {
      debouncer.schedule(() => fired++);
      vi.advanceTimersByTime(250);
    }
    expect(fired).toBeLessThanOrEqual(10); // 8 fires over 2 s = 4/s
    expect(fired).toBe(8);
  });

  it("cancel drops the pending call", () => {
    const debouncer = new Debouncer(100);
    let fired = 0;
    debouncer.schedule(() => fired++);
    debouncer.cancel();
    vi.advanceTimersByTime(500);
    expect(fired).toBe(0);
  });
});

describe("SequenceGate", () => {
  it("discards stale responses", () => {
    const gate = new SequenceGate();
    const first = gate.next();
    const second = gate.next();
    // second's response arrives first
    expect(gate.accept(second)).toBe(true);
    expect(gate.accept(first)).toBe(false);
  });

  it("accepts strictly increasing sequences", () => {
    const gate = new SequenceGate();
    const a = gate.next();
    expect(gate.accept(a)).toBe(true);
    const b = gate.next();
    expect(gate.accept(b)).toBe(true);
    expect(gate.accept(b)).toBe(false); // duplicate delivery
  });
});
