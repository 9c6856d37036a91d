/** Layer panel: one row per layer mirroring the server manifest order,
 * with visibility toggles, deletion, selection, and recompute spinners.
 * Mutations render optimistically and roll back on error; a conflict
 * refetches the manifest and replays the panel state from it. */

import type { LayerPatchBody, MutationReport, SessionManifest } from "./types.js";
import { ApiError } from "./api.js";

export interface LayerRow {
  index: number;
  prompt: string;
  visible: boolean;
  alphaStar: number;
  n: number;
  thumbnailHash: string | null;
  stale: boolean;
  busy: boolean; // recompute spinner
}

export interface PanelPort {
  patchLayer(k: number, body: LayerPatchBody): Promise<MutationReport>;
  deleteLayer(k: number): Promise<MutationReport>;
  getManifest(): Promise<SessionManifest>;
}

export interface PanelEvents {
  onRows(rows: LayerRow[]): void;
  onComposition(imageHash: string): void;
  onError(err: unknown): void;
}

export class LayerPanelController {
  rows: LayerRow[] = [];
  selected: number | null = null;

  constructor(
    private readonly port: PanelPort,
    private readonly events: PanelEvents,
  ) {}

  load(manifest: SessionManifest): void {
    this.rows = manifest.layers.map((entry) => ({
      index: entry.index,
      prompt: entry.prompt,
      visible: entry.visible,
      alphaStar: entry.alpha_star,
      n: entry.n,
      thumbnailHash: entry.image_hash ?? null,
      stale: entry.stale,
      busy: false,
    }));
    if (this.selected !== null && this.selected >= this.rows.length) {
      this.selected = this.rows.length ? this.rows.length - 1 : null;
    }
    this.events.onRows(this.rows);
  }

  select(k: number): void {
    this.selected = k;
    this.events.onRows(this.rows);
  }

  /** Rows k..top show spinners until the recompute report arrives. */
  private markBusyFrom(k: number): void {
    for (const row of this.rows) {
      if (row.index >= k) row.busy = true;
    }
    this.events.onRows(this.rows);
  }

  private clearBusy(): void {
    for (const row of this.rows) {
      row.busy = false;
    }
  }

  async toggle(k: number): Promise<void> {
    const row = this.rows[k];
    if (row === undefined) return;
    const previous = row.visible;
    row.visible = !previous; // optimistic
    this.markBusyFrom(k);
    try {
      const report = await this.port.patchLayer(k, { visible: row.visible });
      this.clearBusy();
      this.events.onRows(this.rows);
      this.events.onComposition(report.image_hash);
    } catch (err) {
      row.visible = previous; // rollback
      this.clearBusy();
      await this.recoverFrom(err);
    }
  }

  async remove(k: number): Promise<void> {
    const removed = this.rows.splice(k, 1);
    if (removed.length === 0) return;
    this.rows.forEach((row, idx) => (row.index = idx));
    this.markBusyFrom(k);
    try {
      const report = await this.port.deleteLayer(k);
      this.clearBusy();
      this.events.onRows(this.rows);
      this.events.onComposition(report.image_hash);
    } catch (err) {
      this.clearBusy();
      await this.recoverFrom(err); // refetch rebuilds the rows
    }
  }

  async editParams(k: number, body: LayerPatchBody): Promise<void> {
    this.markBusyFrom(k);
    try {
      const report = await this.port.patchLayer(k, body);
      this.clearBusy();
      const manifest = await this.port.getManifest();
      this.load(manifest);
      this.events.onComposition(report.image_hash);
    } catch (err) {
      this.clearBusy();
      await this.recoverFrom(err);
    }
  }

  /** Conflicts resync from the server; other errors surface as toasts. */
  private async recoverFrom(err: unknown): Promise<void> {
    if (err instanceof ApiError && err.code === "conflict") {
      try {
        this.load(await this.port.getManifest());
      } catch (refetchErr) {
        this.events.onError(refetchErr);
        return;
      }
    } else {
      this.events.onRows(this.rows);
    }
    this.events.onError(err);
  }
}
