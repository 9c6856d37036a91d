/** Per-layer parameter history. Undo replays an earlier parameter set as a
 * PATCH instead of storing images, so the server stays the single source of
 * truth for pixels. */

import type { LayerPatchBody } from "./types.js";

export class ParamHistory {
  private readonly stacks = new Map<number, LayerPatchBody[]>();

  record(layer: number, params: LayerPatchBody): void {
    const stack = this.stacks.get(layer) ?? [];
    stack.push({ ...params });
    this.stacks.set(layer, stack);
  }

  /** Pop the current state and return the one to replay, if any. */
  undo(layer: number): LayerPatchBody | null {
    const stack = this.stacks.get(layer);
    if (stack === undefined || stack.length < 2) {
      return null;
    }
    stack.pop();
    return { ...stack[stack.length - 1] };
  }

  depth(layer: number): number {
    return this.stacks.get(layer)?.length ?? 0;
  }

  drop(layer: number): void {
    this.stacks.delete(layer);
  }
}
