/** Box mode: drag a square mask around the canvas; each sampled position
 * fires a preview whose seed the server auto-increments, giving a
 * continuous stream of variations until the pointer is released. */

import { LatestWins } from "./seq.js";
import { FixedRateSampler } from "./throttle.js";
import type { PreviewRequestBody, PreviewResponse } from "./types.js";

export interface PreviewPort {
  preview(body: PreviewRequestBody): Promise<PreviewResponse>;
}

export interface BoxModeEvents {
  onPreview(result: PreviewResponse): void;
  onRelease(last: PreviewResponse | null): void;
  onError(err: unknown): void;
}

const BOX_SAMPLE_MS = 100; // 10 Hz pointer sampling during a drag

export class BoxModeController {
  private readonly seq = new LatestWins();
  private readonly sampler: FixedRateSampler<{ x: number; y: number }>;
  private lastGood: PreviewResponse | null = null;
  private dragging = false;
  requestCount = 0;

  constructor(
    private readonly port: PreviewPort,
    private readonly events: BoxModeEvents,
    private boxSize: number,
    sampleMs: number = BOX_SAMPLE_MS,
  ) {
    this.sampler = new FixedRateSampler(sampleMs, (pos) => this.fire(pos));
  }

  setBoxSize(size: number): void {
    this.boxSize = size;
  }

  pointerDown(x: number, y: number): void {
    this.dragging = true;
    this.sampler.start();
    this.sampler.push({ x, y });
  }

  pointerMove(x: number, y: number): void {
    if (!this.dragging) return;
    this.sampler.push({ x, y });
  }

  /** Drag end: flush the final position, then surface the last preview for
   * the commit decision. */
  pointerUp(): void {
    if (!this.dragging) return;
    this.dragging = false;
    this.sampler.stop();
    this.events.onRelease(this.lastGood);
  }

  private fire(pos: { x: number; y: number }): void {
    const seq = this.seq.issue();
    this.requestCount++;
    this.port
      .preview({ center_x: pos.x, center_y: pos.y, size: this.boxSize })
      .then((result) => {
        // stale responses (superseded sequence numbers) are dropped
        if (this.seq.accept(seq)) {
          this.lastGood = result;
          this.events.onPreview(result);
        }
      })
      .catch((err) => this.events.onError(err));
  }
}
