/** Client-side mask painting: circular stamps composited into an alpha
 * buffer that always matches the session canvas dimensions. */

export class MaskBuffer {
  readonly data: Float32Array;

  constructor(
    readonly height: number,
    readonly width: number,
  ) {
    if (height < 1 || width < 1) {
      throw new Error(`invalid mask dimensions ${height}x${width}`);
    }
    this.data = new Float32Array(height * width);
  }

  /** Composite a filled circle of radius d; erase subtracts instead. */
  stamp(centerX: number, centerY: number, radius: number, erase = false): void {
    const r2 = radius * radius;
    const y0 = Math.max(0, Math.floor(centerY - radius));
    const y1 = Math.min(this.height - 1, Math.ceil(centerY + radius));
    const x0 = Math.max(0, Math.floor(centerX - radius));
    const x1 = Math.min(this.width - 1, Math.ceil(centerX + radius));
    for (let y = y0; y <= y1; y++) {
      for (let x = x0; x <= x1; x++) {
        const dx = x - centerX;
        const dy = y - centerY;
        if (dx * dx + dy * dy <= r2) {
          this.data[y * this.width + x] = erase ? 0 : 1;
        }
      }
    }
  }

  clear(): void {
    this.data.fill(0);
  }

  /** Count of strictly positive cells. */
  coverage(): number {
    let count = 0;
    for (let i = 0; i < this.data.length; i++) {
      if (this.data[i] > 0) count++;
    }
    return count;
  }

  isEmpty(): boolean {
    return this.coverage() === 0;
  }

  /** 8-bit grayscale plane, row-major, for PNG encoding. */
  toGrayscaleBytes(): Uint8Array {
    const out = new Uint8Array(this.data.length);
    for (let i = 0; i < this.data.length; i++) {
      out[i] = Math.round(Math.min(1, Math.max(0, this.data[i])) * 255);
    }
    return out;
  }
}
