/** Custom-mask mode: wheel gestures move the seed up or down, rapidly
 * exploring variations on the painted region. Wheel events are batched so
 * at most one request per 50 ms is dispatched (<= 20/s), with accumulated
 * deltas preserving the net seed movement. */

import { LatestWins } from "./seq.js";
import { DeltaBatcher } from "./throttle.js";
import type { PreviewRequestBody, PreviewResponse } from "./types.js";
import type { PreviewPort } from "./boxmode.js";

export interface ScrollModeEvents {
  onPreview(result: PreviewResponse): void;
  onError(err: unknown): void;
}

const MIN_REQUEST_INTERVAL_MS = 50; // <= 20 requests per second

export class ScrollModeController {
  private readonly seq = new LatestWins();
  private readonly batcher: DeltaBatcher;
  private maskEmpty = true;
  requestCount = 0;

  constructor(
    private readonly port: PreviewPort,
    private readonly events: ScrollModeEvents,
    now?: () => number,
  ) {
    this.batcher = new DeltaBatcher(
      MIN_REQUEST_INTERVAL_MS,
      (delta) => this.fire({ seed_delta: delta }),
      now,
    );
  }

  /** The scroll control is disabled while the painted mask is empty. */
  setMaskEmpty(empty: boolean): void {
    this.maskEmpty = empty;
  }

  get enabled(): boolean {
    return !this.maskEmpty;
  }

  wheel(direction: 1 | -1): void {
    if (this.maskEmpty) return;
    this.batcher.add(direction);
  }

  /** Jump straight to an explicit seed (randomize / reuse buttons). */
  jumpTo(seed: number): void {
    this.fire({ seed });
  }

  private fire(body: PreviewRequestBody): void {
    const seq = this.seq.issue();
    this.requestCount++;
    this.port
      .preview(body)
      .then((result) => {
        if (this.seq.accept(seq)) {
          this.events.onPreview(result);
        }
      })
      .catch((err) => this.events.onError(err));
  }
}
