/** Rate control for interactive streams.
 *
 * FixedRateSampler drives box-mode drags: pointer positions arrive at input
 * rate but are sampled at a fixed cadence (10 Hz by default), always taking
 * the latest position. DeltaBatcher drives scroll-to-reseed: wheel deltas
 * accumulate and flush at most once per interval, so a 50-event burst
 * produces a handful of requests whose deltas sum to the same net seed
 * movement. */

export class FixedRateSampler<T> {
  private latest: T | undefined;
  private dirty = false;
  private timer: ReturnType<typeof setInterval> | null = null;

  constructor(
    private readonly intervalMs: number,
    private readonly emit: (value: T) => void,
  ) {}

  start(): void {
    if (this.timer !== null) return;
    this.timer = setInterval(() => this.flush(), this.intervalMs);
  }

  push(value: T): void {
    this.latest = value;
    this.dirty = true;
  }

  /** Emit the latest value if one arrived since the previous tick. */
  private flush(): void {
    if (this.dirty && this.latest !== undefined) {
      this.dirty = false;
      this.emit(this.latest);
    }
  }

  /** Stop sampling; emits a final pending value so the drag end lands. */
  stop(): void {
    if (this.timer !== null) {
      clearInterval(this.timer);
      this.timer = null;
    }
    this.flush();
  }

  get running(): boolean {
    return this.timer !== null;
  }
}

export class DeltaBatcher {
  private pending = 0;
  private lastFlush = -Infinity;
  private timer: ReturnType<typeof setTimeout> | null = null;

  constructor(
    private readonly minIntervalMs: number,
    private readonly dispatch: (delta: number) => void,
    private readonly now: () => number = () => Date.now(),
  ) {}

  add(delta: number): void {
    this.pending += delta;
    const elapsed = this.now() - this.lastFlush;
    if (elapsed >= this.minIntervalMs) {
      this.flush();
    } else if (this.timer === null) {
      this.timer = setTimeout(() => {
        this.timer = null;
        this.flush();
      }, this.minIntervalMs - elapsed);
    }
  }

  private flush(): void {
    if (this.pending === 0) return;
    const delta = this.pending;
    this.pending = 0;
    this.lastFlush = this.now();
    this.dispatch(delta);
  }
}
