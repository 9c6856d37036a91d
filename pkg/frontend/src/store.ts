/** Canvas-side state: active tool, brush size, painted mask, preview seed.
 * The composition bitmap itself always originates from a server response. */

import { MaskBuffer } from "./mask.js";

export type Tool = "box" | "brush";

export class CanvasState {
  tool: Tool = "box";
  brushSize = 24;
  boxCenter: { x: number; y: number } | null = null;
  previewSeed: number | null = null;
  compositionHash: string | null = null;
  readonly mask: MaskBuffer;

  constructor(
    readonly sessionId: string,
    readonly height: number,
    readonly width: number,
  ) {
    this.mask = new MaskBuffer(height, width);
  }

  /** Painted mask dimensions always match the session image. */
  matchesCanvas(h: number, w: number): boolean {
    return this.mask.height === h && this.mask.width === w;
  }
}
