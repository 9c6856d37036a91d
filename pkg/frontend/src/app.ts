/** Browser shell: wires the canvas, tool controls, and layer panel to the
 * service. All logic lives in the DOM-free modules; this file only touches
 * elements. */

import { ApiClient, ApiError } from "./api.js";
import { BoxModeController } from "./boxmode.js";
import { LayerPanelController, type LayerRow } from "./panel.js";
import { ScrollModeController } from "./scrollmode.js";
import { CanvasState, type Tool } from "./store.js";
import { ParamHistory } from "./undo.js";
import type { PreviewResponse, SessionManifest } from "./types.js";

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing element #${id}`);
  return node as T;
}

function toast(message: string): void {
  const box = el<HTMLDivElement>("toast");
  box.textContent = message;
  box.classList.add("visible");
  setTimeout(() => box.classList.remove("visible"), 2500);
}

class App {
  private api: ApiClient;
  private state: CanvasState | null = null;
  private panel: LayerPanelController | null = null;
  private box: BoxModeController | null = null;
  private scroll: ScrollModeController | null = null;
  private history = new ParamHistory();
  private painting = false;
  private erasing = false;

  constructor(baseUrl: string) {
    this.api = new ApiClient(baseUrl);
  }

  bind(): void {
    el<HTMLButtonElement>("generate").addEventListener("click", () => void this.createFromPrompt());
    el<HTMLInputElement>("upload").addEventListener("change", (ev) => void this.createFromUpload(ev));
    el<HTMLButtonElement>("add-layer").addEventListener("click", () => void this.addLayer());
    el<HTMLButtonElement>("undo").addEventListener("click", () => void this.undoSelected());
    for (const tool of ["box", "brush"] as Tool[]) {
      el<HTMLInputElement>(`tool-${tool}`).addEventListener("change", () => {
        if (this.state) this.state.tool = tool;
      });
    }
    const canvas = el<HTMLCanvasElement>("canvas");
    canvas.addEventListener("pointerdown", (ev) => this.pointerDown(ev));
    canvas.addEventListener("pointermove", (ev) => this.pointerMove(ev));
    canvas.addEventListener("pointerup", () => this.pointerUp());
    canvas.addEventListener("wheel", (ev) => {
      ev.preventDefault();
      this.scroll?.wheel(ev.deltaY < 0 ? 1 : -1);
    });
  }

  private selectedLayer(): number | null {
    return this.panel?.selected ?? null;
  }

  private async createFromPrompt(): Promise<void> {
    const prompt = el<HTMLInputElement>("prompt").value;
    const seed = Number(el<HTMLInputElement>("seed").value || "0");
    try {
      const created = await this.api.createSession({ prompt, seed });
      this.attachSession(created.session, created.image_png_base64);
    } catch (err) {
      toast(`session failed: ${describe(err)}`);
    }
  }

  private async createFromUpload(ev: Event): Promise<void> {
    const input = ev.target as HTMLInputElement;
    const file = input.files?.[0];
    if (!file) return;
    const bytes = new Uint8Array(await file.arrayBuffer());
    try {
      const created = await this.api.createSession({
        image_png_base64: b64encode(bytes),
      });
      this.attachSession(created.session, created.image_png_base64);
    } catch (err) {
      toast(`upload failed: ${describe(err)}`);
    }
  }

  private attachSession(manifest: SessionManifest, imageB64: string): void {
    const { height, width } = manifest.canvas;
    this.state = new CanvasState(manifest.id, height, width);
    this.drawBase64(imageB64);
    this.panel = new LayerPanelController(
      {
        patchLayer: (k, body) => this.api.patchLayer(manifest.id, k, body),
        deleteLayer: (k) => this.api.deleteLayer(manifest.id, k),
        getManifest: () => this.api.getManifest(manifest.id),
      },
      {
        onRows: (rows) => this.renderRows(rows),
        onComposition: () => this.refreshComposition(),
        onError: (err) => toast(describe(err)),
      },
    );
    this.panel.load(manifest);
    el<HTMLSpanElement>("session-id").textContent = manifest.id;
  }

  private previewPortFor(k: number) {
    return { preview: (body: object) => this.api.preview(this.state!.sessionId, k, body) };
  }

  private bindControllers(k: number): void {
    if (!this.state) return;
    const events = {
      onPreview: (result: PreviewResponse) => {
        this.state!.previewSeed = result.seed;
        el<HTMLSpanElement>("preview-seed").textContent = String(result.seed);
        this.drawBase64(result.image_png_base64);
      },
      onRelease: (last: PreviewResponse | null) => {
        if (last) this.offerCommit(k);
      },
      onError: (err: unknown) => toast(describe(err)),
    };
    this.box = new BoxModeController(this.previewPortFor(k), events, this.brushSize());
    this.scroll = new ScrollModeController(this.previewPortFor(k), events);
    this.scroll.setMaskEmpty(this.state.mask.isEmpty());
  }

  private brushSize(): number {
    return Number(el<HTMLInputElement>("brush-size").value || "24");
  }

  private async addLayer(): Promise<void> {
    if (!this.state) return;
    const k = this.panel?.rows.length ?? 0;
    const body = {
      prompt: el<HTMLInputElement>("edit-prompt").value,
      seed: Number(el<HTMLInputElement>("edit-seed").value || "1"),
      alpha_star: Number(el<HTMLInputElement>("alpha").value || "50"),
      n: Number(el<HTMLInputElement>("steps").value || "8"),
      ...(this.state.tool === "brush" && !this.state.mask.isEmpty()
        ? { mask_png_base64: await this.maskPngBase64() }
        : {
            box: {
              center_x: this.state.boxCenter?.x ?? Math.floor(this.state.width / 2),
              center_y: this.state.boxCenter?.y ?? Math.floor(this.state.height / 2),
              size: this.brushSize(),
            },
          }),
    };
    try {
      const created = await this.api.addLayer(this.state.sessionId, body);
      this.history.record(created.layer_index, body);
      this.panel?.load(await this.api.getManifest(this.state.sessionId));
      this.panel?.select(created.layer_index);
      this.bindControllers(created.layer_index);
      this.drawBase64(created.image_png_base64);
    } catch (err) {
      toast(`add layer failed: ${describe(err)}`);
    }
  }

  private async undoSelected(): Promise<void> {
    const k = this.selectedLayer();
    if (k === null || !this.state) return;
    const params = this.history.undo(k);
    if (!params) {
      toast("nothing to undo");
      return;
    }
    await this.panel?.editParams(k, params);
  }

  private offerCommit(k: number): void {
    const dialog = el<HTMLDialogElement>("commit-dialog");
    dialog.showModal();
    el<HTMLButtonElement>("commit-yes").onclick = () => {
      dialog.close();
      void this.api
        .commit(this.state!.sessionId, k)
        .then(() => this.refreshComposition())
        .catch((err) => toast(describe(err)));
    };
    el<HTMLButtonElement>("commit-no").onclick = () => dialog.close();
  }

  private pointerDown(ev: PointerEvent): void {
    if (!this.state) return;
    const pos = this.canvasPosition(ev);
    const k = this.selectedLayer();
    if (this.state.tool === "box") {
      this.state.boxCenter = pos;
      if (k !== null) this.box?.pointerDown(pos.x, pos.y);
    } else {
      this.painting = true;
      this.erasing = ev.shiftKey;
      this.state.mask.stamp(pos.x, pos.y, this.brushSize(), this.erasing);
      this.scroll?.setMaskEmpty(this.state.mask.isEmpty());
    }
  }

  private pointerMove(ev: PointerEvent): void {
    if (!this.state) return;
    const pos = this.canvasPosition(ev);
    if (this.state.tool === "box") {
      this.state.boxCenter = pos;
      this.box?.pointerMove(pos.x, pos.y);
    } else if (this.painting) {
      this.state.mask.stamp(pos.x, pos.y, this.brushSize(), this.erasing);
    }
  }

  private pointerUp(): void {
    if (!this.state) return;
    if (this.state.tool === "box") {
      this.box?.pointerUp();
    } else if (this.painting) {
      this.painting = false;
      this.scroll?.setMaskEmpty(this.state.mask.isEmpty());
      const k = this.selectedLayer();
      if (k !== null && !this.state.mask.isEmpty()) {
        // upload the stroke result on release
        void this.maskPngBase64().then((png) =>
          this.panel?.editParams(k, { mask_png_base64: png }),
        );
      }
    }
  }

  private canvasPosition(ev: PointerEvent): { x: number; y: number } {
    const canvas = el<HTMLCanvasElement>("canvas");
    const rect = canvas.getBoundingClientRect();
    const x = Math.floor(((ev.clientX - rect.left) / rect.width) * this.state!.width);
    const y = Math.floor(((ev.clientY - rect.top) / rect.height) * this.state!.height);
    return { x, y };
  }

  private async maskPngBase64(): Promise<string> {
    // Encode the alpha buffer as a grayscale PNG through an offscreen canvas.
    const { height, width } = this.state!;
    const gray = this.state!.mask.toGrayscaleBytes();
    const rgba = new Uint8ClampedArray(height * width * 4);
    for (let i = 0; i < gray.length; i++) {
      rgba[4 * i] = rgba[4 * i + 1] = rgba[4 * i + 2] = gray[i];
      rgba[4 * i + 3] = 255;
    }
    const off = new OffscreenCanvas(width, height);
    const ctx = off.getContext("2d")!;
    ctx.putImageData(new ImageData(rgba, width, height), 0, 0);
    const blob = await off.convertToBlob({ type: "image/png" });
    return b64encode(new Uint8Array(await blob.arrayBuffer()));
  }

  private drawBase64(pngB64: string): void {
    const canvas = el<HTMLCanvasElement>("canvas");
    const img = new Image();
    img.onload = () => {
      canvas.width = img.width;
      canvas.height = img.height;
      canvas.getContext("2d")!.drawImage(img, 0, 0);
    };
    img.src = `data:image/png;base64,${pngB64}`;
  }

  private refreshComposition(): void {
    if (!this.state) return;
    const canvas = el<HTMLCanvasElement>("canvas");
    const img = new Image();
    img.onload = () => {
      canvas.width = img.width;
      canvas.height = img.height;
      canvas.getContext("2d")!.drawImage(img, 0, 0);
    };
    img.src = `${this.api.imageUrl(this.state.sessionId)}?t=${Date.now()}`;
  }

  private renderRows(rows: LayerRow[]): void {
    const list = el<HTMLUListElement>("layers");
    list.innerHTML = "";
    for (const row of rows) {
      const item = document.createElement("li");
      item.className = row.index === this.panel?.selected ? "selected" : "";
      const toggle = document.createElement("button");
      toggle.textContent = row.visible ? "👁" : "–";
      toggle.onclick = () => void this.panel?.toggle(row.index);
      const label = document.createElement("span");
      label.textContent = `${row.index}: ${row.prompt}${row.busy ? " ⟳" : ""}`;
      label.onclick = () => {
        this.panel?.select(row.index);
        this.bindControllers(row.index);
      };
      const del = document.createElement("button");
      del.textContent = "✕";
      del.onclick = () => void this.panel?.remove(row.index);
      item.append(toggle, label, del);
      list.append(item);
    }
  }
}

function b64encode(bytes: Uint8Array): string {
  let binary = "";
  for (const byte of bytes) binary += String.fromCharCode(byte);
  return btoa(binary);
}

function describe(err: unknown): string {
  if (err instanceof ApiError) return `${err.code}: ${err.message}`;
  return err instanceof Error ? err.message : String(err);
}

const app = new App(
  new URLSearchParams(location.search).get("service") ?? "http://127.0.0.1:8600",
);
app.bind();
