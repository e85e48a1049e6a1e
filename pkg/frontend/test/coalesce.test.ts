import { describe, expect, it } from "vitest";
import { Coalescer, debounce } from "../src/coalesce";

const tick = (ms = 0) => new Promise((r) => setTimeout(r, ms));

describe("Coalescer", () => {
  it("keeps at most one job in flight and one pending", async () => {
    let running = 0;
    let maxRunning = 0;
    let completed = 0;
    const co = new Coalescer();
    const job = (ms: number) => async () => {
      running++;
      maxRunning = Math.max(maxRunning, running);
      await tick(ms);
      running--;
      completed++;
    };
    for (let i = 0; i < 10; i++) co.submit(job(5));
    await co.drain();
    expect(maxRunning).toBe(1);
    // first job plus the last queued one; intermediates were replaced
    expect(completed).toBe(2);
  });

  it("latest submission wins", async () => {
    const seen: number[] = [];
    const co = new Coalescer();
    const job = (n: number) => async () => {
      await tick(5);
      seen.push(n);
    };
    co.submit(job(1));
    co.submit(job(2));
    co.submit(job(3));
    await co.drain();
    expect(seen).toEqual([1, 3]);
  });

  it("reports errors and keeps going", async () => {
    const errors: unknown[] = [];
    const co = new Coalescer((e) => errors.push(e));
    co.submit(async () => {
      throw new Error("boom");
    });
    await co.drain();
    co.submit(async () => {});
    await co.drain();
    expect(errors).toHaveLength(1);
  });
});

describe("debounce", () => {
  it("fires once with the last arguments", async () => {
    const calls: number[] = [];
    const fn = debounce((x: number) => calls.push(x), 20);
    fn(1);
    fn(2);
    fn(3);
    await tick(40);
    expect(calls).toEqual([3]);
  });
});
