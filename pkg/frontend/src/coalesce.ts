// Serializes a stream of async jobs: at most one in flight, at most one
// pending, and a newly submitted job replaces the pending one (latest wins).
// Rapid drag events therefore cost at most two outstanding round trips.

export class Coalescer {
  private inFlight = false;
  private pending: (() => Promise<void>) | null = null;
  private onError: (err: unknown) => void;

  constructor(onError: (err: unknown) => void = () => {}) {
    this.onError = onError;
  }

  submit(job: () => Promise<void>): void {
    if (this.inFlight) {
      this.pending = job;
      return;
    }
    this.run(job);
  }

  get busy(): boolean {
    return this.inFlight;
  }

  private run(job: () => Promise<void>): void {
    this.inFlight = true;
    job()
      .catch((err) => this.onError(err))
      .finally(() => {
        this.inFlight = false;
        const next = this.pending;
        this.pending = null;
        if (next) this.run(next);
      });
  }

  // resolves once everything submitted so far has settled
  async drain(): Promise<void> {
    while (this.inFlight || this.pending) {
      await new Promise((r) => setTimeout(r, 4));
    }
  }
}

export function debounce<A extends unknown[]>(
  fn: (...args: A) => void, ms: number,
): (...args: A) => void {
  let timer: ReturnType<typeof setTimeout> | null = null;
  return (...args: A) => {
    if (timer !== null) clearTimeout(timer);
    timer = setTimeout(() => {
      timer = null;
      fn(...args);
    }, ms);
  };
}
